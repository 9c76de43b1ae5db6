#include "velokin/waic.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace velokin {

WaicResult waic(const Eigen::MatrixXd& loglik) {
  if (loglik.rows() < 2) throw std::invalid_argument("WAIC needs at least two draws");
  if (!loglik.allFinite()) throw std::invalid_argument("WAIC needs finite log-likelihoods");
  WaicResult out;
  out.draws = loglik.rows();
  out.points = loglik.cols();
  const double n = static_cast<double>(loglik.rows());
  for (Eigen::Index i = 0; i < loglik.cols(); ++i) {
    const auto col = loglik.col(i);
    const double m = col.maxCoeff();
    out.lppd += m + std::log((col.array() - m).exp().sum() / n);
    const double mean = col.mean();
    out.p_waic += (col.array() - mean).square().sum() / (n - 1.0);
  }
  out.waic = -2.0 * (out.lppd - out.p_waic);
  return out;
}

PointwiseAccumulator::PointwiseAccumulator(Eigen::Index points)
    : max_(Eigen::VectorXd::Constant(points, -std::numeric_limits<double>::infinity())),
      sum_exp_(Eigen::VectorXd::Zero(points)),
      mean_(Eigen::VectorXd::Zero(points)),
      m2_(Eigen::VectorXd::Zero(points)) {}

void PointwiseAccumulator::add(const Eigen::Ref<const Eigen::VectorXd>& row) {
  if (row.size() != max_.size()) throw std::invalid_argument("pointwise row has wrong length");
  if (!row.allFinite()) throw std::invalid_argument("WAIC needs finite log-likelihoods");
  ++draws_;
  const double n = static_cast<double>(draws_);
  for (Eigen::Index i = 0; i < row.size(); ++i) {
    const double x = row[i];
    if (x > max_[i]) {
      sum_exp_[i] = sum_exp_[i] * std::exp(max_[i] - x) + 1.0;
      max_[i] = x;
    } else {
      sum_exp_[i] += std::exp(x - max_[i]);
    }
    const double delta = x - mean_[i];
    mean_[i] += delta / n;
    m2_[i] += delta * (x - mean_[i]);
  }
}

WaicResult PointwiseAccumulator::result() const {
  if (draws_ < 2) throw std::invalid_argument("WAIC needs at least two draws");
  WaicResult out;
  out.draws = draws_;
  out.points = points();
  const double n = static_cast<double>(draws_);
  for (Eigen::Index i = 0; i < points(); ++i) {
    out.lppd += max_[i] + std::log(sum_exp_[i] / n);
    out.p_waic += m2_[i] / (n - 1.0);
  }
  out.waic = -2.0 * (out.lppd - out.p_waic);
  return out;
}

}  // namespace velokin
