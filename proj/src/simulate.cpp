#include "velokin/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace velokin {

namespace {

constexpr std::uint64_t kParamTag = 0x70617261;
constexpr std::uint64_t kCaptureTag = 0x63617074;
constexpr std::uint64_t kCountTag = 0x636e7473;
constexpr std::uint64_t kNormalTag = 0x6e6f726d;
constexpr std::uint64_t kDemingTag = 0x64656d69;

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(id),
                    static_cast<std::uint32_t>(id >> 32)};
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double normal(std::mt19937_64& rng, double mean, double sd) {
  return std::normal_distribution<double>(mean, sd)(rng);
}

std::int32_t poisson(std::mt19937_64& rng, double mean) {
  if (mean <= 0.0) return 0;
  return std::poisson_distribution<std::int32_t>(mean)(rng);
}

std::int32_t negative_binomial(std::mt19937_64& rng, double mean, double eta) {
  if (mean <= 0.0) return 0;
  if (eta < kPoissonEtaThreshold) return poisson(rng, mean);
  const double rate = std::gamma_distribution<double>(1.0 / eta, mean * eta)(rng);
  return poisson(rng, rate);
}

double quantile99(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const double pos = 0.99 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

int ScenarioSpec::resolved_hierarchy_means() const {
  if (groups > 1) return groups;
  return hierarchy_means > 0 ? hierarchy_means : std::min(10, subgroups);
}

void ScenarioSpec::validate() const {
  if (genes < 1 || cells < 1) throw std::invalid_argument("scenario needs G >= 1 and C >= 1");
  if (groups < 1 || subgroups < groups || subgroups > cells) {
    throw std::invalid_argument("scenario needs 1 <= K <= R <= C");
  }
  if (subgroups % groups != 0) throw std::invalid_argument("K must divide R");
  if (resolved_hierarchy_means() > subgroups) {
    throw std::invalid_argument("more hierarchy means than subgroups");
  }
  if (!(time_variance >= 0.0)) throw std::invalid_argument("time variance must be >= 0");
  if (!(hyper.sector_p > 0.0 && hyper.sector_p < kTwoPi)) {
    throw std::invalid_argument("sector amplitude must lie in (0, 2 pi)");
  }
}

PositionTable SimulationTruth::positions() const {
  const int G = state.genes();
  const int R = state.subgroups();
  PositionTable t{Eigen::MatrixXd(R, G), Eigen::MatrixXd(R, G)};
  for (int g = 0; g < G; ++g) {
    for (int r = 0; r < R; ++r) {
      const Position p = subgroup_position(state, g, r, group_of_subgroup[static_cast<std::size_t>(r)]);
      t.s(r, g) = p.s;
      t.u(r, g) = p.u;
    }
  }
  return t;
}

Eigen::MatrixXd SimulationTruth::velocities() const {
  const PositionTable p = positions();
  Eigen::MatrixXd v(p.s.rows(), p.s.cols());
  for (Eigen::Index g = 0; g < v.cols(); ++g) {
    const double gamma = state.hyper.beta * state.u_on[g] / state.s_on[g];
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      v(r, g) = velocity({p.s(r, g), p.u(r, g)}, state.hyper.beta, gamma);
    }
  }
  return v;
}

std::vector<double> omega_grid(const AlmondCoords& c, double beta) {
  const double w1 = -std::log(1.0 - 0.3);
  const double limit = c.u_on - 0.005 * (c.u_on - c.u_off);
  std::vector<double> grid;
  for (int i = 1; i <= 20; ++i) {
    const double w = i * w1;
    if (omega_to_switching_u(w, c, beta) < limit) grid.push_back(w);
  }
  return grid;
}

SimulationTruth gen_parameters(const ScenarioSpec& spec) {
  spec.validate();
  const int G = spec.genes;
  const int C = spec.cells;
  const int K = spec.groups;
  const int R = spec.subgroups;
  const int L = spec.resolved_hierarchy_means();
  const double beta = spec.hyper.beta;
  const double p = spec.hyper.sector_p;

  SimulationTruth t;
  t.spec = spec;
  t.state = ModelState::zeros(G, K, R, C, spec.hyper);
  t.omega.resize(K, G);
  t.elapsed.resize(R, G);
  t.hierarchy_mean.resize(L, G);
  t.group_of_subgroup.resize(static_cast<std::size_t>(R));
  t.mean_of_subgroup.resize(static_cast<std::size_t>(R));
  for (int r = 0; r < R; ++r) {
    t.group_of_subgroup[static_cast<std::size_t>(r)] = static_cast<int>(std::int64_t{r} * K / R);
    t.mean_of_subgroup[static_cast<std::size_t>(r)] =
        K > 1 ? t.group_of_subgroup[static_cast<std::size_t>(r)]
              : static_cast<int>(std::int64_t{r} * L / R);
  }
  t.subgroup_of_cell.resize(static_cast<std::size_t>(C));
  t.group_of_cell.resize(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    const int r = static_cast<int>(std::int64_t{c} * R / C);
    t.subgroup_of_cell[static_cast<std::size_t>(c)] = r;
    t.group_of_cell[static_cast<std::size_t>(c)] = t.group_of_subgroup[static_cast<std::size_t>(r)];
  }

  ModelState& st = t.state;
  for (int g = 0; g < G; ++g) {
    std::mt19937_64 rng = stream(spec.seed, kParamTag, static_cast<std::uint64_t>(g));
    const double alpha_off = uniform(rng, 1.0, 5.0);
    const double alpha_on = uniform(rng, 6.0, 10.0);
    const double gamma = uniform(rng, 0.5, 1.5);
    const AlmondCoords co = rates_to_coords({alpha_off, alpha_on, beta, gamma}, spec.hyper.bound_a);
    st.u_off[g] = co.u_off;
    st.u_on[g] = co.u_on;
    st.s_on[g] = co.s_on;
    const std::vector<double> grid = omega_grid(co, beta);
    if (grid.empty()) throw std::logic_error("empty ON-duration grid");
    std::uniform_int_distribution<std::size_t> pick(0, grid.size() - 1);
    for (int k = 0; k < K; ++k) {
      t.omega(k, g) = grid[pick(rng)];
      st.u_sw(k, g) = omega_to_switching_u(t.omega(k, g), co, beta);
    }
    for (int l = 0; l < L; ++l) {
      const int k = K > 1 ? l : 0;
      const double phi = uniform(rng, 0.0, kTwoPi);
      t.hierarchy_mean(l, g) = position_to_time({phi, p}, st.u_sw(k, g), co, beta);
    }
    for (int r = 0; r < R; ++r) {
      const int k = t.group_of_subgroup[static_cast<std::size_t>(r)];
      const double mu = t.hierarchy_mean(t.mean_of_subgroup[static_cast<std::size_t>(r)], g);
      double elapsed = kInfinity;
      if (std::isfinite(mu)) {
        elapsed = std::max(0.0, normal(rng, mu, std::sqrt(spec.time_variance)));
      }
      t.elapsed(r, g) = elapsed;
      st.phi(r, g) = time_to_phi(elapsed, p, st.u_sw(k, g), co, beta);
    }
    st.eta[g] = uniform(rng, 0.5, 1.0);
  }

  std::mt19937_64 rng = stream(spec.seed, kCaptureTag, 0);
  for (int c = 0; c < C; ++c) st.lambda[c] = uniform(rng, 0.5, 1.0);
  const double m = st.lambda.mean();
  st.lambda /= m;
  st.u_off *= m;
  st.u_on *= m;
  st.s_on *= m;
  st.u_sw *= m;
  return t;
}

Dataset gen_counts_nb(const SimulationTruth& truth, std::uint64_t seed) {
  const ModelState& st = truth.state;
  const int C = st.cells();
  const int G = st.genes();
  const PositionTable pos = truth.positions();
  CountMatrix s(C, G);
  CountMatrix u(C, G);
  for (int g = 0; g < G; ++g) {
    std::mt19937_64 rng = stream(seed, kCountTag, static_cast<std::uint64_t>(g));
    for (int c = 0; c < C; ++c) {
      const int r = truth.subgroup_of_cell[static_cast<std::size_t>(c)];
      s(c, g) = negative_binomial(rng, st.lambda[c] * pos.s(r, g), st.eta[g]);
      u(c, g) = negative_binomial(rng, st.lambda[c] * pos.u(r, g), st.eta[g]);
    }
  }
  return Dataset::from_labels(std::move(s), std::move(u), truth.group_of_cell,
                              truth.subgroup_of_cell);
}

std::pair<double, double> in_variances(const SimulationTruth& truth) {
  const PositionTable pos = truth.positions();
  const int C = truth.state.cells();
  const int G = truth.state.genes();
  std::vector<double> ss, us;
  ss.reserve(static_cast<std::size_t>(C) * G);
  us.reserve(static_cast<std::size_t>(C) * G);
  for (int g = 0; g < G; ++g) {
    for (int c = 0; c < C; ++c) {
      const int r = truth.subgroup_of_cell[static_cast<std::size_t>(c)];
      ss.push_back(pos.s(r, g));
      us.push_back(pos.u(r, g));
    }
  }
  return {0.8 / 10.0 * quantile99(ss), 0.8 / 10.0 * quantile99(us)};
}

ContinuousData gen_in_data(const SimulationTruth& truth, std::uint64_t seed) {
  const PositionTable pos = truth.positions();
  const int C = truth.state.cells();
  const int G = truth.state.genes();
  ContinuousData out;
  std::tie(out.variance_s, out.variance_u) = in_variances(truth);
  out.spliced.resize(C, G);
  out.unspliced.resize(C, G);
  const double sd_s = std::sqrt(out.variance_s);
  const double sd_u = std::sqrt(out.variance_u);
  for (int g = 0; g < G; ++g) {
    std::mt19937_64 rng = stream(seed, kNormalTag, static_cast<std::uint64_t>(g));
    for (int c = 0; c < C; ++c) {
      const int r = truth.subgroup_of_cell[static_cast<std::size_t>(c)];
      out.spliced(c, g) = pos.s(r, g) + (sd_s > 0.0 ? normal(rng, 0.0, sd_s) : 0.0);
      out.unspliced(c, g) = pos.u(r, g) + (sd_u > 0.0 ? normal(rng, 0.0, sd_u) : 0.0);
    }
  }
  return out;
}

ContinuousData gen_deming_data(const SimulationTruth& truth, std::uint64_t seed, double sigma2) {
  const PositionTable pos = truth.positions();
  const int C = truth.state.cells();
  const int G = truth.state.genes();
  ContinuousData out;
  std::tie(out.variance_s, out.variance_u) = in_variances(truth);
  if (sigma2 < 0.0) sigma2 = 0.5 * (out.variance_s + out.variance_u);
  out.variance_s = sigma2;
  out.variance_u = sigma2;
  out.spliced.resize(C, G);
  out.unspliced.resize(C, G);
  const double sd = std::sqrt(sigma2);
  for (int g = 0; g < G; ++g) {
    std::mt19937_64 rng = stream(seed, kDemingTag, static_cast<std::uint64_t>(g));
    for (int c = 0; c < C; ++c) {
      const int r = truth.subgroup_of_cell[static_cast<std::size_t>(c)];
      const double psi = uniform(rng, std::numbers::pi / 2.0, 3.0 * std::numbers::pi / 2.0);
      const double rho = sd > 0.0 ? normal(rng, 0.0, sd) : 0.0;
      out.spliced(c, g) = rho * std::cos(psi) + pos.s(r, g);
      out.unspliced(c, g) = rho * std::sin(psi) + pos.u(r, g);
    }
  }
  return out;
}

MoleculeCounts gillespie(const RateParams& theta, double t0_on, double omega, double T,
                         std::mt19937_64& rng, std::optional<MoleculeCounts> init) {
  theta.validate();
  if (!std::isfinite(T) || T < 0.0) throw std::invalid_argument("T must be finite and >= 0");
  if (std::isnan(omega) || !(omega > 0.0)) throw std::invalid_argument("omega must be > 0");
  if (!std::isfinite(t0_on)) throw std::invalid_argument("t0_on must be finite");
  MoleculeCounts x;
  if (init) {
    x = *init;
  } else {
    x.s = poisson(rng, theta.alpha_off / theta.gamma);
    x.u = poisson(rng, theta.alpha_off / theta.beta);
  }
  const double on_end = t0_on + omega;
  double t = 0.0;
  while (t < T) {
    double seg_end = t < t0_on ? t0_on : (t < on_end ? on_end : kInfinity);
    seg_end = std::min(seg_end, T);
    const double alpha = (t >= t0_on && t < on_end) ? theta.alpha_on : theta.alpha_off;
    while (true) {
      const double splice = theta.beta * static_cast<double>(x.u);
      const double decay = theta.gamma * static_cast<double>(x.s);
      const double total = alpha + splice + decay;
      if (total <= 0.0) {
        t = seg_end;
        break;
      }
      const double dt = std::exponential_distribution<double>(total)(rng);
      if (t + dt >= seg_end) {
        t = seg_end;  // rates change at the boundary; the exponential clock restarts
        break;
      }
      t += dt;
      const double pick = std::uniform_real_distribution<double>(0.0, total)(rng);
      if (pick < alpha) {
        ++x.u;
      } else if (pick < alpha + splice) {
        --x.u;
        ++x.s;
      } else {
        --x.s;
      }
    }
  }
  return x;
}

MoleculeCounts gillespie(const RateParams& theta, double t0_on, double omega, double T,
                         std::uint64_t seed, std::optional<MoleculeCounts> init) {
  std::mt19937_64 rng = stream(seed, 0x67696c6c, 0);
  return gillespie(theta, t0_on, omega, T, rng, init);
}

}  // namespace velokin
