#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>

#include "velokin/io.hpp"
#include "velokin/sampler.hpp"
#include "velokin/simulate.hpp"

using namespace velokin;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "velokin_test_io" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void put(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

DatasetErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const DatasetError& e) {
    return e.kind();
  }
  FAIL("expected a DatasetError");
  return DatasetErrorKind::kMalformed;
}

}  // namespace

TEST_CASE("a 2x2 CSV with labels ingests") {
  const fs::path d = scratch("tiny");
  put(d / "s.csv", "3,0\n1,2\n");
  put(d / "u.csv", "1,1\n0,4\n");
  put(d / "labels.csv", "cell,group\nA,1\nB,1\n");
  const Dataset data = io::ingest(d / "s.csv", d / "u.csv", d / "labels.csv");
  CHECK(data.cells() == 2);
  CHECK(data.genes() == 2);
  CHECK(data.spliced(0, 0) == 3);
  CHECK(data.spliced(1, 1) == 2);
  CHECK(data.unspliced(1, 1) == 4);
  CHECK(data.n_groups == 1);
  CHECK(data.n_subgroups == 1);
}

TEST_CASE("header and row names are skipped in dense CSV") {
  const fs::path d = scratch("header");
  put(d / "a.csv", "cell,g1,g2,g3\nc1,1,2,3\nc2,4,5,6\n");
  put(d / "b.csv", "1,2,3\r\n4,5,6\r\n");
  put(d / "c.csv", "c1,1,2,3\nc2,4,5,6\n");
  const CountMatrix a = io::read_counts(d / "a.csv");
  CHECK(a == io::read_counts(d / "b.csv"));
  CHECK(a == io::read_counts(d / "c.csv"));
  CHECK(a.rows() == 2);
  CHECK(a(1, 2) == 6);
}

TEST_CASE("Matrix Market and CSV give the same dataset") {
  ScenarioSpec spec;
  spec.genes = 7;
  spec.cells = 40;
  spec.subgroups = 4;
  spec.seed = 3;
  const SimulationTruth truth = gen_parameters(spec);
  const Dataset sim = gen_counts_nb(truth, 9);
  const fs::path d = scratch("mtx");
  io::write_matrix_market(d / "s.mtx", sim.spliced);
  io::write_matrix_market(d / "u.mtx", sim.unspliced);
  io::write_dense_csv(d / "s.csv", sim.spliced);
  io::write_dense_csv(d / "u.csv", sim.unspliced);
  io::write_labels(d / "labels.csv", io::make_labels(sim.group_of_cell, sim.subgroup_of_cell));
  const Dataset a = io::ingest(d / "s.mtx", d / "u.mtx", d / "labels.csv");
  const Dataset b = io::ingest(d / "s.csv", d / "u.csv", d / "labels.csv");
  CHECK(a.spliced == sim.spliced);
  CHECK(a.unspliced == sim.unspliced);
  CHECK(a.spliced == b.spliced);
  CHECK(a.unspliced == b.unspliced);
  CHECK(a.subgroup_of_cell == sim.subgroup_of_cell);
  CHECK(a.group_of_subgroup == b.group_of_subgroup);
}

TEST_CASE("Matrix Market details") {
  const fs::path d = scratch("mm");
  put(d / "ok.mtx", "%%MatrixMarket matrix coordinate real general\n% comment\n2 3 2\n1 3 4.0\n2 1 7\n");
  const CountMatrix m = io::read_counts(d / "ok.mtx");
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m(0, 2) == 4);
  CHECK(m(1, 0) == 7);
  CHECK(m.sum() == 11);
  put(d / "frac.mtx", "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 0.5\n");
  CHECK(kind_of([&] { io::read_counts(d / "frac.mtx"); }) == DatasetErrorKind::kNonIntegerEntry);
  put(d / "neg.mtx", "%%MatrixMarket matrix coordinate integer general\n2 2 1\n1 1 -2\n");
  CHECK(kind_of([&] { io::read_counts(d / "neg.mtx"); }) == DatasetErrorKind::kNegativeCount);
  put(d / "range.mtx", "%%MatrixMarket matrix coordinate integer general\n2 2 1\n3 1 2\n");
  CHECK(kind_of([&] { io::read_counts(d / "range.mtx"); }) == DatasetErrorKind::kMalformed);
  put(d / "short.mtx", "%%MatrixMarket matrix coordinate integer general\n2 2 3\n1 1 2\n");
  CHECK(kind_of([&] { io::read_counts(d / "short.mtx"); }) == DatasetErrorKind::kMalformed);
}

TEST_CASE("ingest errors are distinguishable") {
  const fs::path d = scratch("errors");
  put(d / "s.csv", "3,0\n1,2\n");
  put(d / "u.csv", "1,1\n0,4\n");
  put(d / "u3.csv", "1,1,1\n0,4,1\n");
  put(d / "frac.csv", "1,1.5\n0,4\n");
  put(d / "text.csv", "1,1\n0,x\n");
  put(d / "neg.csv", "1,-1\n0,4\n");
  put(d / "ragged.csv", "1,1\n0\n");
  put(d / "labels.csv", "A,1\nB,1\n");
  put(d / "labels3.csv", "A,1\nB,1\nC,1\n");
  put(d / "crossing.csv", "cell,group,subgroup\nA,1,x\nB,2,x\n");
  put(d / "bad_labels.csv", "A,1,2,3\nB,1,2,3\n");
  put(d / "dup.csv", "A,1\nA,1\n");

  CHECK(kind_of([&] { io::ingest(d / "s.csv", d / "u3.csv", d / "labels.csv"); }) ==
        DatasetErrorKind::kDimensionMismatch);
  CHECK(kind_of([&] { io::ingest(d / "s.csv", d / "u.csv", d / "labels3.csv"); }) ==
        DatasetErrorKind::kDimensionMismatch);
  CHECK(kind_of([&] { io::ingest(d / "s.csv", d / "frac.csv", d / "labels.csv"); }) ==
        DatasetErrorKind::kNonIntegerEntry);
  CHECK(kind_of([&] { io::ingest(d / "s.csv", d / "text.csv", d / "labels.csv"); }) ==
        DatasetErrorKind::kNonIntegerEntry);
  CHECK(kind_of([&] { io::ingest(d / "s.csv", d / "neg.csv", d / "labels.csv"); }) ==
        DatasetErrorKind::kNegativeCount);
  CHECK(kind_of([&] { io::read_counts(d / "ragged.csv"); }) == DatasetErrorKind::kDimensionMismatch);
  CHECK(kind_of([&] { io::ingest(d / "s.csv", d / "u.csv", d / "crossing.csv"); }) ==
        DatasetErrorKind::kSubgroupCrossesGroups);
  CHECK(kind_of([&] { io::read_labels(d / "bad_labels.csv"); }) == DatasetErrorKind::kMalformed);
  CHECK(kind_of([&] { io::read_labels(d / "dup.csv"); }) == DatasetErrorKind::kMalformed);
  put(d / "empty.csv", "\n\n");
  CHECK(kind_of([&] { io::read_counts(d / "empty.csv"); }) == DatasetErrorKind::kEmpty);
}

TEST_CASE("label tokens map in sorted order") {
  const fs::path d = scratch("labels");
  put(d / "num.csv", "a,10\nb,2\nc,10\nd,1\n");
  const io::Labels n = io::read_labels(d / "num.csv");
  CHECK(n.group_names == std::vector<std::string>{"1", "2", "10"});
  CHECK(n.group == std::vector<int>{2, 1, 2, 0});
  CHECK_FALSE(n.has_subgroups);
  CHECK(n.subgroup == n.group);
  put(d / "text.csv", "cell_id,type,cluster\na,beta,y\nb,alpha,x\nc,beta,z\n");
  const io::Labels t = io::read_labels(d / "text.csv");
  CHECK(t.group == std::vector<int>{1, 0, 1});
  CHECK(t.subgroup == std::vector<int>{1, 0, 2});
  CHECK(t.cell_ids == std::vector<std::string>{"a", "b", "c"});
  io::write_labels(d / "again.csv", t);
  const io::Labels back = io::read_labels(d / "again.csv");
  CHECK(back.group == t.group);
  CHECK(back.subgroup == t.subgroup);
  CHECK(back.group_names == t.group_names);
}

TEST_CASE("columnar files round-trip bitwise and reject corruption") {
  const fs::path d = scratch("columnar");
  Eigen::MatrixXd m(3, 4);
  m << 1.0, -2.5, 1e-300, std::nextafter(1.0, 2.0),
       0.1, 0.2, 0.3, std::numeric_limits<double>::infinity(),
       7.0, 8.0, 9.0, -0.0;
  io::write_columnar(d / "m.bin", m);
  const Eigen::MatrixXd r = io::read_columnar(d / "m.bin");
  REQUIRE(r.rows() == 3);
  REQUIRE(r.cols() == 4);
  CHECK(std::memcmp(r.data(), m.data(), sizeof(double) * 12) == 0);
  fs::resize_file(d / "m.bin", fs::file_size(d / "m.bin") - 8);
  CHECK_THROWS(io::read_columnar(d / "m.bin"));
  put(d / "junk.bin", "not a draws file at all");
  CHECK_THROWS(io::read_columnar(d / "junk.bin"));
}

TEST_CASE("posterior directory round-trips") {
  ScenarioSpec spec;
  spec.genes = 5;
  spec.cells = 24;
  spec.groups = 2;
  spec.subgroups = 4;
  spec.seed = 11;
  const SimulationTruth truth = gen_parameters(spec);
  const Dataset data = gen_counts_nb(truth, 12);
  ChainConfig cfg;
  cfg.n_iter = 600;
  cfg.n_burnin = 400;
  cfg.thin = 20;
  cfg.seed = 5;
  const PosteriorDraws post = run_chain(data, cfg);
  const fs::path d = scratch("posterior");
  io::write_posterior(d / "a", post, data);
  io::write_posterior(d / "b", post, data);
  for (const char* f : {"meta.json", "u_off.bin", "phi.bin", "u_switch.bin", "log_posterior.bin"}) {
    std::ifstream x(d / "a" / f, std::ios::binary);
    std::ifstream y(d / "b" / f, std::ios::binary);
    const std::string sx((std::istreambuf_iterator<char>(x)), {});
    const std::string sy((std::istreambuf_iterator<char>(y)), {});
    CHECK(sx == sy);
  }
  const io::StoredPosterior back = io::read_posterior(d / "a");
  REQUIRE(back.draws.size() == post.draws.size());
  for (std::size_t i = 0; i < post.draws.size(); ++i) {
    CHECK(identical(back.draws[i], post.draws[i]));
    CHECK(back.log_posterior[i] == post.log_posterior[i]);
  }
  CHECK(back.group_of_subgroup == data.group_of_subgroup);
  CHECK(back.subgroup_of_cell == data.subgroup_of_cell);
  CHECK(back.waic.waic == post.pointwise.result().waic);
  io::export_posterior_csv(d / "a", back);
  {
    std::ifstream csv(d / "a" / "lambda.csv");
    std::size_t lines = 0;
    for (std::string line; std::getline(csv, line);) ++lines;
    CHECK(lines == post.draws.size());
  }
  fs::remove(d / "a" / "eta.bin");
  CHECK_THROWS(io::read_posterior(d / "a"));
}

TEST_CASE("truth round-trips including infinite elapsed times") {
  ScenarioSpec spec;
  spec.genes = 30;
  spec.cells = 20;
  spec.subgroups = 5;
  spec.seed = 21;
  const SimulationTruth t = gen_parameters(spec);
  const fs::path d = scratch("truth");
  io::write_truth(d / "truth.json", t);
  const SimulationTruth r = io::read_truth(d / "truth.json");
  CHECK(identical(r.state, t.state));
  CHECK(r.spec.genes == 30);
  CHECK(r.spec.seed == 21);
  CHECK(r.group_of_subgroup == t.group_of_subgroup);
  CHECK(r.subgroup_of_cell == t.subgroup_of_cell);
  REQUIRE(r.elapsed.rows() == t.elapsed.rows());
  bool any_inf = false;
  for (Eigen::Index i = 0; i < t.elapsed.size(); ++i) {
    if (std::isinf(t.elapsed.data()[i])) {
      any_inf = true;
      CHECK(std::isinf(r.elapsed.data()[i]));
    } else {
      CHECK(r.elapsed.data()[i] == t.elapsed.data()[i]);
    }
  }
  CHECK(any_inf);
  CHECK(r.omega == t.omega);
}

TEST_CASE("settings files") {
  const fs::path d = scratch("settings");
  put(d / "run.cfg", "# run\niters = 500\n\nseed=3   # inline\n  out = /tmp/x y \n");
  const io::Settings s = io::read_settings(d / "run.cfg");
  CHECK(s.at("iters") == "500");
  CHECK(s.at("seed") == "3");
  CHECK(s.at("out") == "/tmp/x y");
  io::write_settings(d / "again.cfg", s);
  CHECK(io::read_settings(d / "again.cfg") == s);
  put(d / "bad.cfg", "iters 500\n");
  CHECK_THROWS(io::read_settings(d / "bad.cfg"));
}
