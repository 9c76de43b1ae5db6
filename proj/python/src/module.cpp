#include <optional>
#include <string>

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "velokin/evaluate.hpp"
#include "velokin/io.hpp"
#include "velokin/kinetics.hpp"
#include "velokin/sampler.hpp"
#include "velokin/simulate.hpp"

namespace py = pybind11;
using namespace velokin;

namespace {

Family family_by_name(const std::string& name) {
  for (Family f : kFamilies) {
    if (family_name(f) == name) return f;
  }
  throw py::value_error("unknown parameter family '" + name + "'");
}

py::dict waic_dict(const WaicResult& w) {
  py::dict d;
  d["waic"] = w.waic;
  d["lppd"] = w.lppd;
  d["p_waic"] = w.p_waic;
  d["draws"] = w.draws;
  d["points"] = w.points;
  return d;
}

py::dict acceptance_dict(const BlockAcceptance& a) {
  py::dict d;
  d["block"] = a.block.rate();
  d["eta"] = a.eta.rate();
  d["u_switch"] = a.u_sw.rate();
  d["phi"] = a.phi.rate();
  d["lambda"] = a.lambda.rate();
  return d;
}

/// Draws and labels as seen from Python.
struct Posterior {
  std::vector<ModelState> draws;
  std::vector<double> log_posterior;
  std::vector<std::int64_t> iteration;
  std::vector<int> group_of_subgroup;
  std::vector<int> subgroup_of_cell;
  WaicResult waic;
  BlockAcceptance acceptance;
  BlockAcceptance acceptance_frozen;

  Eigen::MatrixXd family(const std::string& name) const {
    return family_draws(draws, family_by_name(name), group_of_subgroup);
  }
};

Dataset make_dataset(const CountMatrix& spliced, const CountMatrix& unspliced, const std::vector<int>& group,
                     const std::optional<std::vector<int>>& subgroup) {
  io::Labels labels;
  labels.group = group;
  labels.subgroup = subgroup ? *subgroup : group;
  return io::ingest(spliced, unspliced, labels);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bayesian transcriptional kinetics and RNA velocity";

  py::register_exception<DatasetError>(m, "DatasetError", PyExc_ValueError);

  py::class_<RateParams>(m, "RateParams")
      .def(py::init([](double alpha_off, double alpha_on, double beta, double gamma) {
             return RateParams{alpha_off, alpha_on, beta, gamma};
           }),
           py::arg("alpha_off"), py::arg("alpha_on"), py::arg("beta"), py::arg("gamma"))
      .def_readwrite("alpha_off", &RateParams::alpha_off)
      .def_readwrite("alpha_on", &RateParams::alpha_on)
      .def_readwrite("beta", &RateParams::beta)
      .def_readwrite("gamma", &RateParams::gamma);

  m.def(
      "solve",
      [](double t, double t0_on, double omega, const RateParams& theta) {
        const Position p = velokin::solve(t, t0_on, omega, theta);
        return py::make_tuple(p.s, p.u);
      },
      py::arg("t"), py::arg("t0_on"), py::arg("omega"), py::arg("theta"),
      "Mean spliced and unspliced abundance (s, u) at time t.");

  m.def(
      "gillespie",
      [](const RateParams& theta, double t0_on, double omega, double T, std::uint64_t seed) {
        const MoleculeCounts c = velokin::gillespie(theta, t0_on, omega, T, seed);
        return py::make_tuple(c.s, c.u);
      },
      py::arg("theta"), py::arg("t0_on"), py::arg("omega"), py::arg("T"), py::arg("seed"),
      "Exact stochastic simulation; returns molecule counts (s, u) at T.");

  py::class_<Hyperparameters>(m, "Hyperparameters")
      .def(py::init<>())
      .def_readwrite("bound_a", &Hyperparameters::bound_a)
      .def_readwrite("sector_p", &Hyperparameters::sector_p)
      .def_readwrite("beta", &Hyperparameters::beta);

  py::class_<ModelState>(m, "ModelState")
      .def_readonly("u_off", &ModelState::u_off)
      .def_readonly("u_on", &ModelState::u_on)
      .def_readonly("s_on", &ModelState::s_on)
      .def_readonly("eta", &ModelState::eta)
      .def_readonly("u_switch", &ModelState::u_sw)
      .def_readonly("phi", &ModelState::phi)
      .def_readonly("lambda_", &ModelState::lambda)
      .def_readonly("hyper", &ModelState::hyper)
      .def("family", [](const ModelState& s, const std::string& name, const std::vector<int>& gos) {
        return family_values(s, family_by_name(name), gos);
      }, py::arg("name"), py::arg("group_of_subgroup"));

  m.def(
      "simulate",
      [](int genes, int cells, int groups, int subgroups, std::uint64_t seed,
         std::optional<std::uint64_t> data_seed, const std::string& noise) {
        ScenarioSpec spec;
        spec.genes = genes;
        spec.cells = cells;
        spec.groups = groups;
        spec.subgroups = subgroups;
        spec.seed = seed;
        const SimulationTruth truth = gen_parameters(spec);
        const std::uint64_t ds = data_seed ? *data_seed : seed + 1;
        py::dict out;
        if (noise == "nb") {
          const Dataset d = gen_counts_nb(truth, ds);
          out["spliced"] = d.spliced;
          out["unspliced"] = d.unspliced;
        } else if (noise == "in" || noise == "deming") {
          const ContinuousData d = noise == "in" ? gen_in_data(truth, ds) : gen_deming_data(truth, ds);
          out["spliced"] = d.spliced;
          out["unspliced"] = d.unspliced;
        } else {
          throw py::value_error("noise must be 'nb', 'in' or 'deming'");
        }
        out["group_of_cell"] = truth.group_of_cell;
        out["subgroup_of_cell"] = truth.subgroup_of_cell;
        out["group_of_subgroup"] = truth.group_of_subgroup;
        out["truth"] = truth.state;
        out["velocities"] = truth.velocities();
        return out;
      },
      py::arg("genes") = 100, py::arg("cells") = 300, py::arg("groups") = 1, py::arg("subgroups") = 5,
      py::arg("seed") = 1, py::arg("data_seed") = py::none(), py::arg("noise") = "nb");

  py::class_<Posterior>(m, "Posterior")
      .def_readonly("draws", &Posterior::draws)
      .def_readonly("log_posterior", &Posterior::log_posterior)
      .def_readonly("iteration", &Posterior::iteration)
      .def_readonly("group_of_subgroup", &Posterior::group_of_subgroup)
      .def_readonly("subgroup_of_cell", &Posterior::subgroup_of_cell)
      .def_property_readonly("waic", [](const Posterior& p) { return waic_dict(p.waic); })
      .def_property_readonly("acceptance", [](const Posterior& p) { return acceptance_dict(p.acceptance_frozen); })
      .def("family", &Posterior::family, py::arg("name"), "Draws x parameters matrix of one family.")
      .def("map_estimate", [](const Posterior& p) { return p.draws[map_index(p.log_posterior)]; })
      .def("median_estimate", [](const Posterior& p) { return posterior_median(p.draws); })
      .def("__len__", [](const Posterior& p) { return p.draws.size(); });

  m.def(
      "fit",
      [](const CountMatrix& spliced, const CountMatrix& unspliced, const std::vector<int>& group_of_cell,
         const std::optional<std::vector<int>>& subgroup_of_cell, std::int64_t iters, std::int64_t burnin,
         std::int64_t thin, std::uint64_t seed, std::optional<double> bound_a, double sector_p, int threads) {
        const Dataset data = make_dataset(spliced, unspliced, group_of_cell, subgroup_of_cell);
        Hyperparameters hyper;
        hyper.bound_a = bound_a ? *bound_a : default_bound(data);
        hyper.sector_p = sector_p;
        ChainConfig cfg;
        cfg.n_iter = iters;
        cfg.n_burnin = burnin;
        cfg.thin = thin;
        cfg.seed = seed;
        cfg.threads = threads;
        PosteriorDraws post;
        {
          py::gil_scoped_release release;
          post = run_chain(data, cfg, initial_state(data, hyper));
        }
        Posterior out{std::move(post.draws), std::move(post.log_posterior), std::move(post.iteration),
                      data.group_of_subgroup, data.subgroup_of_cell, post.pointwise.result(),
                      post.acceptance, post.acceptance_frozen};
        return out;
      },
      py::arg("spliced"), py::arg("unspliced"), py::arg("group_of_cell"), py::arg("subgroup_of_cell") = py::none(),
      py::arg("iters") = 250000, py::arg("burnin") = 200000, py::arg("thin") = 25, py::arg("seed") = 1,
      py::arg("bound_a") = py::none(), py::arg("sector_p") = std::numbers::pi / 2.0, py::arg("threads") = 1);

  m.def(
      "read_posterior",
      [](const std::filesystem::path& dir) {
        io::StoredPosterior s = io::read_posterior(dir);
        Posterior p;
        p.draws = std::move(s.draws);
        p.log_posterior = std::move(s.log_posterior);
        p.group_of_subgroup = std::move(s.group_of_subgroup);
        p.subgroup_of_cell = std::move(s.subgroup_of_cell);
        p.waic = s.waic;
        return p;
      },
      py::arg("directory"), "Loads a posterior directory written by `velokin fit`.");

  m.def(
      "summarize",
      [](const Posterior& post, const ModelState* truth, double level) {
        const SummaryTable t = velokin::summarize(post.draws, post.group_of_subgroup, truth, level);
        py::list rows;
        for (const auto& r : t.rows) {
          py::dict d;
          d["family"] = family_name(r.family);
          d["parameters"] = r.parameters;
          d["median_ci_length"] = r.median_ci_length;
          if (r.has_truth) {
            d["median_relative_error"] = r.errors.median_relative;
            d["median_absolute_error"] = r.errors.median_absolute;
            d["zero_truth_excluded"] = r.errors.zero_truth_excluded;
            d["coverage"] = r.coverage;
          }
          rows.append(d);
        }
        return rows;
      },
      py::arg("posterior"), py::arg("truth") = nullptr, py::arg("level") = 0.95);

  m.def("waic", [](const Eigen::MatrixXd& loglik) { return waic_dict(velokin::waic(loglik)); },
        py::arg("loglik"), "WAIC from a draws x points log-likelihood matrix.");

  m.def(
      "project",
      [](const Eigen::MatrixXd& spliced, const ModelState& estimate, const std::vector<int>& subgroup_of_cell,
         const std::vector<int>& group_of_subgroup, int components, double dt) {
        const ProjectionResult r =
            velokin::project(spliced, estimate, subgroup_of_cell, group_of_subgroup, components, dt);
        py::dict d;
        d["scores"] = r.scores;
        d["estimates"] = r.estimates;
        d["future"] = r.future;
        d["arrows"] = r.arrows;
        d["loadings"] = r.pca.loadings;
        d["explained_ratio"] = r.pca.explained_ratio;
        return d;
      },
      py::arg("spliced"), py::arg("estimate"), py::arg("subgroup_of_cell"), py::arg("group_of_subgroup"),
      py::arg("components") = 2, py::arg("dt") = 0.001);

  m.def("derive_subgroups", &velokin::derive_subgroups, py::arg("counts"), py::arg("type_of_cell"),
        py::arg("min_size") = 30);
}
