#pragma once

// Synthetic data: ground-truth parameters drawn as in the reference
// simulation study, Negative-Binomial counts, two continuous benchmark
// layouts, and an exact stochastic simulation of the reaction network.

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "velokin/model.hpp"

namespace velokin {

struct ScenarioSpec {
  int genes = 100;
  int cells = 300;
  int groups = 1;
  int subgroups = 5;
  /// Number of hierarchy means per gene when groups == 1; 0 means min(10, subgroups).
  /// With several groups the group means are used instead.
  int hierarchy_means = 0;
  std::uint64_t seed = 1;
  double time_variance = 0.5;  ///< variance of subgroup times around their mean
  Hyperparameters hyper;

  int resolved_hierarchy_means() const;
  /// Throws std::invalid_argument unless 1 <= K <= R <= C with K dividing R.
  void validate() const;
};

struct SimulationTruth {
  ScenarioSpec spec;
  ModelState state;              ///< working parameters, mean(lambda) = 1
  Eigen::MatrixXd omega;         ///< K x G ON durations
  Eigen::MatrixXd elapsed;       ///< R x G times since ON onset (inf = lower steady state)
  Eigen::MatrixXd hierarchy_mean;  ///< L x G
  std::vector<int> mean_of_subgroup;  ///< length R, index into hierarchy_mean rows
  std::vector<int> group_of_cell;
  std::vector<int> subgroup_of_cell;
  std::vector<int> group_of_subgroup;

  /// Subgroup positions (s~, u~), R x G each.
  PositionTable positions() const;
  /// Velocity beta u~ - gamma s~ per subgroup, R x G.
  Eigen::MatrixXd velocities() const;
};

/// Grid of ON durations i w1, w1 = -log 0.7, i = 1..20, keeping those whose
/// switching point stays below u_on - 0.005 (u_on - u_off).
std::vector<double> omega_grid(const AlmondCoords& c, double beta = 1.0);

SimulationTruth gen_parameters(const ScenarioSpec& spec);

/// Independent NB draws with means lambda_c (s~, u~) and overdispersion eta_g.
Dataset gen_counts_nb(const SimulationTruth& truth, std::uint64_t seed);

struct ContinuousData {
  Eigen::MatrixXd spliced;    ///< C x G
  Eigen::MatrixXd unspliced;  ///< C x G
  double variance_s = 0.0;
  double variance_u = 0.0;
};

/// Variances 0.08 q_0.99 of the cell-level means (capture efficiency not applied).
std::pair<double, double> in_variances(const SimulationTruth& truth);

/// Independent Normal noise around (s~, u~) with the variances above.
ContinuousData gen_in_data(const SimulationTruth& truth, std::uint64_t seed);

/// Points at signed distance rho ~ N(0, sigma2) from (s~, u~) along an angle
/// psi ~ U(pi/2, 3 pi/2). sigma2 < 0 selects the mean of the IN variances.
ContinuousData gen_deming_data(const SimulationTruth& truth, std::uint64_t seed,
                               double sigma2 = -1.0);

struct MoleculeCounts {
  std::int64_t s = 0;
  std::int64_t u = 0;
};

/// Exact simulation of
///   0 -> U at rate alpha(t),  U -> S at rate beta U,  S -> 0 at rate gamma S,
/// from time 0 to T, alpha(t) = alpha_on on [t0_on, t0_on + omega) and
/// alpha_off elsewhere. Without init the start is drawn from the product
/// Poisson law at the lower steady state.
MoleculeCounts gillespie(const RateParams& theta, double t0_on, double omega, double T,
                         std::mt19937_64& rng, std::optional<MoleculeCounts> init = std::nullopt);

MoleculeCounts gillespie(const RateParams& theta, double t0_on, double omega, double T,
                         std::uint64_t seed, std::optional<MoleculeCounts> init = std::nullopt);

}  // namespace velokin
