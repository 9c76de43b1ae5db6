#pragma once

// Adaptive Metropolis-within-Gibbs sampler for the hierarchical model.
//
// One sweep updates, per gene: the steady-state block (u_off, u_on, s_on)
// jointly, eta, every switching coordinate, every angle; then every capture
// efficiency. The block proposal is a Gaussian random walk on an
// unconstrained scale whose covariance is learnt with a Robbins-Monro
// schedule; all other parameters use scalar random walks with an adapted
// log standard deviation. Adaptation stops at adapt_end.
//
// Each gene and each cell owns a random stream derived from the seed, so the
// output does not depend on the number of threads.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "velokin/model.hpp"
#include "velokin/waic.hpp"

namespace velokin {

struct ChainConfig {
  std::int64_t n_iter = 250000;
  std::int64_t n_burnin = 200000;
  std::int64_t thin = 25;
  std::uint64_t seed = 1;
  double target_accept = 0.25;
  std::int64_t adapt_start = 100;
  std::int64_t adapt_end = -1;  ///< negative means floor(0.9 n_burnin)
  double gamma_c1 = 2500.0;
  double gamma_c2 = 20000.0;
  std::int64_t univariate_adapt_interval = 100;
  bool adapt = true;

  /// Which parameter families are updated; the others stay at their initial value.
  bool update_block = true;
  bool update_eta = true;
  bool update_switch = true;
  bool update_phi = true;
  bool update_lambda = true;

  /// Keep the draws x (cell, gene) log-likelihood matrix; the streaming WAIC
  /// accumulator is always filled.
  bool store_pointwise = false;

  int threads = 1;
  std::int64_t checkpoint_every = 0;  ///< 0: only when the run ends (if a path is set)
  std::string checkpoint_path;
  std::int64_t stop_after = -1;  ///< stop early after this iteration (checkpoint first)

  std::int64_t resolved_adapt_end() const;
  std::int64_t expected_draws() const;
  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
};

/// Robbins-Monro step c1 / (k + c2).
inline double adaptation_step(std::int64_t k, double c1, double c2) {
  return c1 / (static_cast<double>(k) + c2);
}

/// Andrieu-Thoms adaptive Metropolis for a three-dimensional block.
class JointBlockAdapter {
 public:
  JointBlockAdapter() = default;
  JointBlockAdapter(const Eigen::Vector3d& start, double initial_variance);

  /// Draws x + L e with L L^T = exp(log_scale) cov + 1e-10 I.
  Eigen::Vector3d propose(const Eigen::Vector3d& x, std::mt19937_64& rng) const;

  /// Records the state after iteration k and the acceptance probability of
  /// its proposal. Does nothing outside [adapt_start, adapt_end].
  void update(std::int64_t k, const Eigen::Vector3d& x, double accept_prob,
              const ChainConfig& cfg);

  Eigen::Matrix3d proposal_covariance() const;

  Eigen::Vector3d mean;
  Eigen::Matrix3d cov;
  double log_scale = 0.0;

  void refresh();

 private:
  Eigen::Matrix3d chol_;
};

/// Scalar random walk with log-sd adapted every interval iterations.
struct UnivariateAdapter {
  double log_sd = 0.0;
  std::int64_t window_accepts = 0;

  void record(bool accepted) { window_accepts += accepted ? 1 : 0; }
  /// Call once per iteration k after record(). Applies
  /// log_sd += Gamma_k (window rate - target) at multiples of the interval
  /// inside the adaptation window, and resets the window counter at every
  /// multiple of the interval.
  void end_iteration(std::int64_t k, const ChainConfig& cfg);
};

/// One Robbins-Monro update of a log-sd from an observed window acceptance rate.
double adapt_log_sd(double log_sd, double window_accept_rate, std::int64_t k,
                    const ChainConfig& cfg);

struct AcceptanceStats {
  std::int64_t proposed = 0;
  std::int64_t accepted = 0;
  double rate() const {
    return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
  }
};

struct BlockAcceptance {
  AcceptanceStats block;
  AcceptanceStats eta;
  AcceptanceStats u_sw;
  AcceptanceStats phi;
  AcceptanceStats lambda;
};

struct PosteriorDraws {
  ChainConfig config;
  std::vector<ModelState> draws;       ///< capture-rescaled
  std::vector<double> log_posterior;   ///< of the state before rescaling
  std::vector<std::int64_t> iteration;
  PointwiseAccumulator pointwise;      ///< (cell, gene) terms, gene-major
  Eigen::MatrixXd pointwise_matrix;    ///< draws x (C G), only with store_pointwise
  BlockAcceptance acceptance;          ///< whole run
  BlockAcceptance acceptance_frozen;   ///< iterations after adapt_end
  std::vector<Eigen::Matrix3d> block_covariance;  ///< final proposal covariance per gene
  std::int64_t completed_iterations = 0;
};

/// Moment-matched starting point: lambda from library sizes, steady states
/// from low and high quantiles of the scaled counts, switching points at the
/// midpoint, angles mid-ON, eta = 0.5.
ModelState initial_state(const Dataset& data, const Hyperparameters& hyper);

using ProgressFn = std::function<void(std::int64_t iteration, double log_posterior)>;

/// Runs a chain from init (or initial_state). Throws std::invalid_argument
/// naming the offending block when the start has zero posterior density.
PosteriorDraws run_chain(const Dataset& data, const ChainConfig& cfg,
                         const std::optional<ModelState>& init = std::nullopt,
                         const ProgressFn& progress = {});

/// Continues a chain from a checkpoint written by run_chain. The result is
/// bitwise identical to an uninterrupted run. stop_after in the stored
/// configuration can be overridden (negative runs to the end).
PosteriorDraws resume_chain(const Dataset& data, const std::string& checkpoint_path,
                            std::int64_t stop_after = -1, const ProgressFn& progress = {});

/// Scalar adaptive random-walk Metropolis on an arbitrary log-density, using
/// the same schedule as the chain. Used for calibration checks.
struct ScalarChainResult {
  std::vector<double> samples;
  std::vector<double> log_sd_trace;  ///< log-sd after every iteration
  AcceptanceStats overall;
  AcceptanceStats frozen;
};

ScalarChainResult run_scalar_chain(const std::function<double(double)>& log_density, double x0,
                                   double initial_log_sd, const ChainConfig& cfg);

}  // namespace velokin
