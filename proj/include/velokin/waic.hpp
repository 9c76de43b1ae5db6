#pragma once

// Widely applicable information criterion with the variance penalty:
//   WAIC = -2 (lppd - p_waic),
//   lppd   = sum_i log mean_d exp(ll_di),
//   p_waic = sum_i var_d(ll_di)   (sample variance, n - 1 denominator).

#include <cstdint>

#include <Eigen/Core>

namespace velokin {

struct WaicResult {
  double waic = 0.0;
  double lppd = 0.0;
  double p_waic = 0.0;
  std::int64_t draws = 0;
  std::int64_t points = 0;
};

/// Rows are draws, columns are pointwise terms. Throws std::invalid_argument
/// with fewer than two draws or non-finite entries.
WaicResult waic(const Eigen::MatrixXd& loglik);

/// Streams draws one at a time so the full matrix never has to be held.
/// Gives the same result as waic() on the stacked rows up to rounding.
class PointwiseAccumulator {
 public:
  PointwiseAccumulator() = default;
  explicit PointwiseAccumulator(Eigen::Index points);

  void add(const Eigen::Ref<const Eigen::VectorXd>& row);

  std::int64_t draws() const { return draws_; }
  Eigen::Index points() const { return max_.size(); }
  WaicResult result() const;

  // Raw state, exposed for checkpointing.
  Eigen::VectorXd max_;
  Eigen::VectorXd sum_exp_;
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
  std::int64_t draws_ = 0;
};

}  // namespace velokin
