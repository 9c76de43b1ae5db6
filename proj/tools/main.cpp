// velokin command-line tool: simulate, fit, summarize, project, subgroups.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "velokin/evaluate.hpp"
#include "velokin/io.hpp"
#include "velokin/sampler.hpp"
#include "velokin/simulate.hpp"
#include "velokin/text.hpp"

namespace fs = std::filesystem;
using namespace velokin;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OptionSpec {
  std::string key;
  std::string help;
  std::string fallback;  ///< empty: no default
  bool flag = false;
};

using Specs = std::vector<OptionSpec>;

std::string normalize_key(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

/// Resolved key/value parameters of one command with typed accessors.
class Params {
 public:
  explicit Params(io::Settings s) : s_(std::move(s)) {}

  bool has(const std::string& key) const { return s_.count(key) > 0 && !s_.at(key).empty(); }

  std::string str(const std::string& key) const {
    if (!has(key)) throw UsageError("missing required setting '" + key + "' (flag --" + key + ")");
    return s_.at(key);
  }

  std::int64_t i64(const std::string& key) const {
    const std::string v = str(key);
    std::int64_t x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "an integer");
    return x;
  }

  std::uint64_t u64(const std::string& key) const {
    const std::string v = str(key);
    std::uint64_t x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "a non-negative integer");
    return x;
  }

  int i32(const std::string& key) const {
    const std::int64_t x = i64(key);
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) bad(key, str(key), "an int");
    return static_cast<int>(x);
  }

  double dbl(const std::string& key) const {
    const std::string v = str(key);
    double x = 0.0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "a number");
    return x;
  }

  bool boolean(const std::string& key) const {
    if (!has(key)) return false;
    const std::string v = s_.at(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    bad(key, v, "true or false");
    return false;
  }

  /// Path setting that must name an existing file or directory.
  std::string input(const std::string& key) const {
    const std::string v = str(key);
    if (!fs::exists(v)) throw std::runtime_error(key + " input not found: " + v);
    return v;
  }

  void set(const std::string& key, const std::string& value) { s_[key] = value; }
  const io::Settings& all() const { return s_; }

 private:
  [[noreturn]] static void bad(const std::string& key, const std::string& v, const std::string& what) {
    throw UsageError("setting '" + key + "' = '" + v + "' is not " + what);
  }

  io::Settings s_;
};

/// Flags registered on one subcommand; values are collected after parsing.
struct Command {
  CLI::App* app = nullptr;
  Specs specs;
  std::map<std::string, std::string> values;
  std::map<std::string, bool> flags;
  std::string config;

  Command(CLI::App& parent, const std::string& name, const std::string& help, Specs s)
      : app(parent.add_subcommand(name, help)), specs(std::move(s)) {
    app->add_option("--config", config, "key = value settings file; flags take precedence");
    for (const auto& o : specs) {
      std::string help_text = o.help;
      if (!o.fallback.empty()) help_text += " [" + o.fallback + "]";
      if (o.flag) {
        app->add_flag("--" + o.key, flags[o.key], help_text);
      } else {
        app->add_option("--" + o.key, values[o.key], help_text);
      }
    }
  }

  Params resolve() const {
    io::Settings s;
    if (!config.empty()) {
      for (const auto& [k, v] : io::read_settings(config)) {
        const std::string key = normalize_key(k);
        const bool known = std::any_of(specs.begin(), specs.end(), [&](const OptionSpec& o) { return o.key == key; });
        if (!known) throw UsageError(config + ": unknown setting '" + k + "' for command " + app->get_name());
        s[key] = v;
      }
    }
    for (const auto& o : specs) {
      const std::string flag = "--" + o.key;
      if (app->count(flag) == 0) continue;
      s[o.key] = o.flag ? "true" : values.at(o.key);
    }
    for (const auto& o : specs) {
      if (!s.count(o.key) && !o.fallback.empty()) s[o.key] = o.fallback;
    }
    return Params(std::move(s));
  }
};

void echo_config(const fs::path& out, const std::string& command, const Params& p) {
  io::Settings s = p.all();
  std::ofstream f(out / "config.txt");
  f << "# velokin " << command << "\n";
  for (const auto& [k, v] : s) f << k << " = " << v << '\n';
  if (!f) throw std::runtime_error("cannot write " + (out / "config.txt").string());
}

std::vector<std::string> pc_header(Eigen::Index d, const std::string& prefix = "PC") {
  std::vector<std::string> h;
  for (Eigen::Index i = 0; i < d; ++i) h.push_back(prefix + std::to_string(i + 1));
  return h;
}

// ---------------------------------------------------------------- simulate

const Specs kSimulateSpecs = {
    {"out", "output directory", ""},
    {"seed", "seed for the scenario parameters", "1"},
    {"data-seed", "seed for the observation noise (default: seed + 1)", ""},
    {"genes", "number of genes G", "100"},
    {"cells", "number of cells C", "300"},
    {"groups", "number of cell types K", "1"},
    {"subgroups", "number of subgroups R", "5"},
    {"hierarchy-means", "number of shared time means (0: automatic)", "0"},
    {"time-variance", "variance of subgroup times around their mean", "0.5"},
    {"sector-p", "steady-state sector amplitude p", "1.5707963267948966"},
    {"bound-a", "upper bound a for the steady-state coordinates", "100"},
    {"noise", "observation model: nb, in or deming", "nb"},
    {"deming-variance", "residual variance for deming data (negative: IN mean)", "-1"},
    {"format", "count file format: csv or mtx", "csv"},
};

int cmd_simulate(Params p) {
  const fs::path out = p.str("out");
  ScenarioSpec spec;
  spec.seed = p.u64("seed");
  spec.genes = p.i32("genes");
  spec.cells = p.i32("cells");
  spec.groups = p.i32("groups");
  spec.subgroups = p.i32("subgroups");
  spec.hierarchy_means = p.i32("hierarchy-means");
  spec.time_variance = p.dbl("time-variance");
  spec.hyper.sector_p = p.dbl("sector-p");
  spec.hyper.bound_a = p.dbl("bound-a");
  if (!p.has("data-seed")) p.set("data-seed", std::to_string(spec.seed + 1));
  const std::uint64_t data_seed = p.u64("data-seed");
  const std::string noise = p.str("noise");
  const std::string format = p.str("format");
  if (noise != "nb" && noise != "in" && noise != "deming") throw UsageError("noise must be nb, in or deming");
  if (format != "csv" && format != "mtx") throw UsageError("format must be csv or mtx");
  if (noise != "nb" && format == "mtx") throw UsageError("continuous data are written as csv only");
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const SimulationTruth truth = gen_parameters(spec);
  fs::create_directories(out);
  if (noise == "nb") {
    const Dataset data = gen_counts_nb(truth, data_seed);
    if (format == "mtx") {
      io::write_matrix_market(out / "spliced.mtx", data.spliced);
      io::write_matrix_market(out / "unspliced.mtx", data.unspliced);
    } else {
      io::write_dense_csv(out / "spliced.csv", data.spliced);
      io::write_dense_csv(out / "unspliced.csv", data.unspliced);
    }
  } else {
    const ContinuousData data = noise == "in" ? gen_in_data(truth, data_seed)
                                              : gen_deming_data(truth, data_seed, p.dbl("deming-variance"));
    io::write_dense_csv(out / "spliced.csv", data.spliced);
    io::write_dense_csv(out / "unspliced.csv", data.unspliced);
  }
  io::write_labels(out / "labels.csv", io::make_labels(truth.group_of_cell, truth.subgroup_of_cell));
  io::write_truth(out / "truth.json", truth);
  echo_config(out, "simulate", p);
  return 0;
}

// ---------------------------------------------------------------- fit

const Specs kFitSpecs = {
    {"spliced", "spliced counts (Matrix Market or CSV, cells x genes)", ""},
    {"unspliced", "unspliced counts (Matrix Market or CSV, cells x genes)", ""},
    {"labels", "cell labels CSV: cell, group[, subgroup]", ""},
    {"out", "output directory", ""},
    {"seed", "chain seed", "1"},
    {"iters", "total iterations", "250000"},
    {"burnin", "burn-in iterations", "200000"},
    {"thin", "keep every n-th post burn-in draw", "25"},
    {"sector-p", "steady-state sector amplitude p", "1.5707963267948966"},
    {"bound-a", "upper bound a (default: twice the largest count)", ""},
    {"threads", "worker threads (results do not depend on it)", "1"},
    {"checkpoint-every", "checkpoint interval in iterations (0: only at the end)", "10000"},
    {"adapt-start", "first adaptation iteration", "100"},
    {"target-accept", "target acceptance rate", "0.25"},
    {"gamma-c1", "adaptation step numerator", "2500"},
    {"gamma-c2", "adaptation step offset", "20000"},
    {"one-subgroup", "ignore the subgroup column: one subgroup per group", "", true},
    {"resume", "continue from the checkpoint in the output directory", "", true},
    {"csv", "also export the draws as CSV", "", true},
    {"quiet", "no progress output", "", true},
};

int cmd_fit(Params p) {
  const fs::path out = p.str("out");
  CountMatrix spliced = io::read_counts(p.input("spliced"));
  CountMatrix unspliced = io::read_counts(p.input("unspliced"));
  io::Labels labels = io::read_labels(p.input("labels"));
  if (p.boolean("one-subgroup")) {
    labels.subgroup = labels.group;
    labels.subgroup_names = labels.group_names;
    labels.has_subgroups = false;
  }
  const Dataset data = io::ingest(std::move(spliced), std::move(unspliced), labels);

  Hyperparameters hyper;
  hyper.sector_p = p.dbl("sector-p");
  if (!p.has("bound-a")) p.set("bound-a", format_double(default_bound(data)));
  hyper.bound_a = p.dbl("bound-a");

  ChainConfig cfg;
  cfg.seed = p.u64("seed");
  cfg.n_iter = p.i64("iters");
  cfg.n_burnin = p.i64("burnin");
  cfg.thin = p.i64("thin");
  cfg.threads = p.i32("threads");
  cfg.adapt_start = p.i64("adapt-start");
  cfg.target_accept = p.dbl("target-accept");
  cfg.gamma_c1 = p.dbl("gamma-c1");
  cfg.gamma_c2 = p.dbl("gamma-c2");
  cfg.checkpoint_every = p.i64("checkpoint-every");
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (!(hyper.bound_a > 0.0) || !(hyper.sector_p >= 0.0 && hyper.sector_p < 2.0 * std::numbers::pi)) {
    throw UsageError("bound-a must be positive and sector-p in [0, 2 pi)");
  }

  fs::create_directories(out);
  const fs::path ckpt = out / "checkpoint.bin";
  cfg.checkpoint_path = ckpt.string();
  echo_config(out, "fit", p);

  ProgressFn progress;
  if (!p.boolean("quiet")) {
    const std::int64_t step = std::max<std::int64_t>(1000, cfg.n_iter / 20 / 1000 * 1000);
    progress = [step, n = cfg.n_iter](std::int64_t k, double lp) {
      if (k % step == 0 || k == n) std::cerr << "iteration " << k << "/" << n << "  log posterior " << lp << '\n';
    };
  }
  PosteriorDraws post;
  if (p.boolean("resume")) {
    if (!fs::exists(ckpt)) throw std::runtime_error("no checkpoint to resume from at " + ckpt.string());
    post = resume_chain(data, ckpt.string(), -1, progress);
  } else {
    post = run_chain(data, cfg, initial_state(data, hyper), progress);
  }
  const fs::path dir = out / "posterior";
  io::write_posterior(dir, post, data);
  io::write_waic(out / "waic.json", post.pointwise.result());
  if (p.boolean("csv")) io::export_posterior_csv(dir, io::read_posterior(dir));
  return 0;
}

// ---------------------------------------------------------------- summarize

const Specs kSummarizeSpecs = {
    {"posterior", "posterior directory written by fit", ""},
    {"truth", "optional truth.json from simulate", ""},
    {"level", "credible level", "0.95"},
    {"out", "output directory", ""},
};

int cmd_summarize(Params p) {
  const fs::path out = p.str("out");
  const io::StoredPosterior post = io::read_posterior(p.input("posterior"));
  const double level = p.dbl("level");
  if (!(level > 0.0 && level < 1.0)) throw UsageError("level must lie in (0, 1)");
  std::optional<SimulationTruth> truth;
  if (p.has("truth")) {
    truth = io::read_truth(p.input("truth"));
    const ModelState& a = truth->state;
    const ModelState& b = post.draws.front();
    if (a.genes() != b.genes() || a.groups() != b.groups() || a.subgroups() != b.subgroups() ||
        a.lambda.size() != b.lambda.size()) {
      throw std::runtime_error("truth dimensions do not match the posterior");
    }
  }
  const SummaryTable table =
      summarize(post.draws, post.group_of_subgroup, truth ? &truth->state : nullptr, level);
  fs::create_directories(out);
  std::ofstream csv(out / "summary.csv");
  table.write_csv(csv);
  if (!csv) throw std::runtime_error("cannot write summary.csv");
  io::write_waic(out / "waic.json", post.waic);

  // Point estimates and intervals per parameter.
  const std::size_t map = map_index(post.log_posterior);
  std::ofstream est(out / "estimates.csv");
  est << "family,index,map,median,lower,upper";
  if (truth) est << ",truth";
  est << '\n';
  for (Family f : kFamilies) {
    const Eigen::MatrixXd m = family_draws(post.draws, f, post.group_of_subgroup);
    const auto cis = credible_intervals(m, level);
    const Eigen::VectorXd at_map = family_values(post.draws[map], f, post.group_of_subgroup);
    Eigen::VectorXd tv;
    if (truth) tv = family_values(truth->state, f, post.group_of_subgroup);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::vector<double> col(m.col(j).data(), m.col(j).data() + m.rows());
      est << family_name(f) << ',' << j << ',' << format_double(at_map[j]) << ','
          << format_double(median(col)) << ',' << format_double(cis[static_cast<std::size_t>(j)].lo) << ','
          << format_double(cis[static_cast<std::size_t>(j)].hi);
      if (truth) est << ',' << format_double(tv[j]);
      est << '\n';
    }
  }
  if (!est) throw std::runtime_error("cannot write estimates.csv");
  echo_config(out, "summarize", p);
  return 0;
}

// ---------------------------------------------------------------- project

const Specs kProjectSpecs = {
    {"posterior", "posterior directory written by fit", ""},
    {"spliced", "spliced counts used for the fit", ""},
    {"components", "number of principal components", "2"},
    {"dt", "time step for the future state", "0.001"},
    {"estimate", "point estimate: map or median", "map"},
    {"out", "output directory", ""},
};

int cmd_project(Params p) {
  const fs::path out = p.str("out");
  const io::StoredPosterior post = io::read_posterior(p.input("posterior"));
  const CountMatrix counts = io::read_counts(p.input("spliced"));
  if (counts.rows() != static_cast<Eigen::Index>(post.subgroup_of_cell.size()) ||
      counts.cols() != post.draws.front().genes()) {
    throw DatasetError(DatasetErrorKind::kDimensionMismatch, "spliced counts do not match the posterior");
  }
  const std::string which = p.str("estimate");
  ModelState est;
  if (which == "map") {
    est = post.draws[map_index(post.log_posterior)];
  } else if (which == "median") {
    est = posterior_median(post.draws);
  } else {
    throw UsageError("estimate must be map or median");
  }
  const int d = p.i32("components");
  const double dt = p.dbl("dt");
  if (!(dt > 0.0)) throw UsageError("dt must be positive");
  ProjectionResult res;
  try {
    res = project(counts.cast<double>(), est, post.subgroup_of_cell, post.group_of_subgroup, d, dt);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  fs::create_directories(out);
  const auto h = pc_header(d);
  io::write_dense_csv(out / "scores.csv", res.scores, h);
  io::write_dense_csv(out / "estimates.csv", res.estimates, h);
  io::write_dense_csv(out / "future.csv", res.future, h);
  io::write_dense_csv(out / "arrows.csv", res.arrows, h);
  io::write_dense_csv(out / "loadings.csv", res.pca.loadings, h);
  Eigen::MatrixXd var(d, 2);
  var.col(0) = res.pca.singular_values;
  var.col(1) = res.pca.explained_ratio;
  io::write_dense_csv(out / "components.csv", var, {"singular_value", "explained_ratio"});
  echo_config(out, "project", p);
  return 0;
}

// ---------------------------------------------------------------- subgroups

const Specs kSubgroupSpecs = {
    {"spliced", "spliced counts (cells x genes)", ""},
    {"labels", "cell labels CSV: cell, type", ""},
    {"min-size", "smallest allowed subgroup", "30"},
    {"out", "output directory", ""},
};

int cmd_subgroups(Params p) {
  const fs::path out = p.str("out");
  const CountMatrix counts = io::read_counts(p.input("spliced"));
  io::Labels labels = io::read_labels(p.input("labels"));
  if (static_cast<Eigen::Index>(labels.group.size()) != counts.rows()) {
    throw DatasetError(DatasetErrorKind::kDimensionMismatch, "label table and counts differ in cell count");
  }
  const int min_size = p.i32("min-size");
  if (min_size < 1) throw UsageError("min-size must be at least 1");
  labels.subgroup = derive_subgroups(counts.cast<double>(), labels.group, min_size);
  const int r = *std::max_element(labels.subgroup.begin(), labels.subgroup.end()) + 1;
  labels.subgroup_names.clear();
  for (int i = 0; i < r; ++i) labels.subgroup_names.push_back(std::to_string(i + 1));
  labels.has_subgroups = true;
  fs::create_directories(out);
  io::write_labels(out / "labels.csv", labels);
  echo_config(out, "subgroups", p);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian inference of transcriptional kinetics and RNA velocity"};
  app.require_subcommand(1);
  Command simulate(app, "simulate", "simulate a scenario: counts, labels and truth", kSimulateSpecs);
  Command fit(app, "fit", "sample the posterior for a dataset", kFitSpecs);
  Command summarize_cmd(app, "summarize", "credible intervals, errors and WAIC", kSummarizeSpecs);
  Command project_cmd(app, "project", "PCA projection of estimates and velocity arrows", kProjectSpecs);
  Command subgroups(app, "subgroups", "derive subgroups by clustering within cell types", kSubgroupSpecs);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    if (*simulate.app) return cmd_simulate(simulate.resolve());
    if (*fit.app) return cmd_fit(fit.resolve());
    if (*summarize_cmd.app) return cmd_summarize(summarize_cmd.resolve());
    if (*project_cmd.app) return cmd_project(project_cmd.resolve());
    if (*subgroups.app) return cmd_subgroups(subgroups.resolve());
  } catch (const UsageError& e) {
    std::cerr << "velokin: " << e.what() << '\n';
    return 2;
  } catch (const DatasetError& e) {
    std::cerr << "velokin: invalid data: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "velokin: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
