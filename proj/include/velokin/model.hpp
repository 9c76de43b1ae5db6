#pragma once

// Hierarchical Negative-Binomial model for paired spliced/unspliced counts.
//
// Every cell c belongs to a group k and a subgroup r (subgroups nest inside
// groups). For gene g the expected counts of cell c are lambda_c times the
// subgroup position (s~_rg, u~_rg), obtained from the gene's almond
// coordinates, the group switching point u_sw_kg and the subgroup angle
// phi_rg. Counts are independent NB(mean, eta_g) with Var = mu + mu^2 eta.

#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "velokin/geometry.hpp"

namespace velokin {

/// Cells x genes, column-major so that one gene is contiguous.
using CountMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic>;

enum class DatasetErrorKind {
  kDimensionMismatch,
  kNegativeCount,
  kNonIntegerEntry,
  kSubgroupCrossesGroups,
  kLabelOutOfRange,
  kEmpty,
  kMalformed,
};

class DatasetError : public std::runtime_error {
 public:
  DatasetError(DatasetErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  DatasetErrorKind kind() const { return kind_; }

 private:
  DatasetErrorKind kind_;
};

struct Dataset {
  CountMatrix spliced;
  CountMatrix unspliced;
  std::vector<int> group_of_cell;      ///< 0-based, length C
  std::vector<int> subgroup_of_cell;   ///< 0-based, length C
  std::vector<int> group_of_subgroup;  ///< 0-based, length R
  int n_groups = 0;
  int n_subgroups = 0;

  int cells() const { return static_cast<int>(spliced.rows()); }
  int genes() const { return static_cast<int>(spliced.cols()); }

  /// Builds the dataset and derives group_of_subgroup from the cell labels.
  /// Labels are 0-based and must cover 0..K-1 and 0..R-1.
  static Dataset from_labels(CountMatrix spliced, CountMatrix unspliced,
                             std::vector<int> group_of_cell,
                             std::vector<int> subgroup_of_cell);

  /// Throws DatasetError when any structural invariant is violated.
  void validate() const;

  /// Cell indices per subgroup / per group, in ascending order.
  std::vector<std::vector<int>> cells_by_subgroup() const;
  std::vector<std::vector<int>> cells_by_group() const;

  /// Largest single count across both matrices.
  std::int32_t max_count() const;
};

struct Hyperparameters {
  double bound_a = 100.0;                     ///< upper bound for steady-state coordinates
  double sector_p = std::numbers::pi / 2.0;   ///< amplitude of the steady-state sector
  double beta = 1.0;
};

/// Default bound a: twice the largest observed count (at least 1).
double default_bound(const Dataset& data);

struct ModelState {
  Hyperparameters hyper;
  Eigen::VectorXd u_off;   ///< G
  Eigen::VectorXd u_on;    ///< G
  Eigen::VectorXd s_on;    ///< G
  Eigen::VectorXd eta;     ///< G
  Eigen::MatrixXd u_sw;    ///< K x G
  Eigen::MatrixXd phi;     ///< R x G
  Eigen::VectorXd lambda;  ///< C

  static ModelState zeros(int genes, int groups, int subgroups, int cells,
                          const Hyperparameters& hyper);

  int genes() const { return static_cast<int>(u_off.size()); }
  int groups() const { return static_cast<int>(u_sw.rows()); }
  int subgroups() const { return static_cast<int>(phi.rows()); }
  int cells() const { return static_cast<int>(lambda.size()); }

  AlmondCoords coords(int g) const { return {u_off[g], u_on[g], s_on[g], hyper.bound_a}; }

  /// Throws std::invalid_argument if the dimensions disagree with data.
  void check_shape(const Dataset& data) const;
};

/// Bitwise equality of every field (shapes included).
bool identical(const ModelState& a, const ModelState& b);

/// Subgroup positions (s~, u~) per (r, g), as R x G matrices.
struct PositionTable {
  Eigen::MatrixXd s;
  Eigen::MatrixXd u;
};

/// Position of subgroup r (in group k) for gene g.
Position subgroup_position(const ModelState& state, int g, int r, int k);

PositionTable subgroup_positions(const ModelState& state, const Dataset& data);

/// Poisson limit is used below this overdispersion.
inline constexpr double kPoissonEtaThreshold = 1e-10;

/// log P(Y = y) for Y ~ NB with mean mu and Var = mu + mu^2 eta.
/// Throws std::domain_error for negative y.
double nb_logpmf(std::int64_t y, double mu, double eta);

/// Mean-dependent part of nb_logpmf: y log(mu/(r+mu)) + r log(r/(r+mu)), r = 1/eta.
double nb_mean_term(std::int64_t y, double mu, double eta);

/// Mean-free part of nb_logpmf: lgamma(y+r) - lgamma(r) - lgamma(y+1).
double nb_count_term(std::int64_t y, double eta);

double log_likelihood(const ModelState& state, const Dataset& data);

/// Per-(cell, gene) log-likelihood (spliced + unspliced), C x G.
Eigen::MatrixXd pointwise_log_likelihood(const ModelState& state, const Dataset& data);

// Prior components. All return -inf outside their support.

/// Dirichlet(1,1,1) on (u_off, u_on - u_off, a - u_on)/a plus Beta(2,1) on s_on/a.
double log_prior_coords(double u_off, double u_on, double s_on, double bound);
/// U(u_off, u_on), boundary excluded.
double log_prior_switch(double u_sw, double u_off, double u_on);
/// U(0, 2 pi).
double log_prior_phi(double phi);
/// Half-normal(0, 10000^2), unnormalised.
double log_prior_eta(double eta);
/// U(0, 1].
double log_prior_lambda(double lambda);

double log_prior(const ModelState& state);

double log_posterior(const ModelState& state, const Dataset& data);

/// Divides lambda by its mean and multiplies (u_off, u_on, s_on, u_sw) by it,
/// fixing the average capture efficiency at one.
ModelState rescale_capture(const ModelState& state);

}  // namespace velokin
