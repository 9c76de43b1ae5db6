#pragma once

// Posterior summaries and evaluation metrics: point estimates, error and
// coverage tables per parameter family, PCA projections with velocity arrows,
// and data-driven subgroup derivation.

#include <array>
#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "velokin/model.hpp"
#include "velokin/sampler.hpp"
#include "velokin/waic.hpp"

namespace velokin {

/// |(estimate - truth) / truth|; NaN when truth is zero.
double relative_error(double estimate, double truth);

struct ErrorSummary {
  double median_relative = 0.0;  ///< NaN when every truth is zero
  double median_absolute = 0.0;
  std::size_t count = 0;
  std::size_t zero_truth_excluded = 0;
};

ErrorSummary summarize_errors(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth);

struct CredibleInterval {
  double lo = 0.0;
  double hi = 0.0;
  double length() const { return hi - lo; }
  bool contains(double x) const { return lo <= x && x <= hi; }
};

/// Type-7 quantile of an ascending sample.
double quantile_sorted(const std::vector<double>& sorted, double q);

/// Equal-tailed interval from at least two draws.
CredibleInterval credible_interval(std::vector<double> draws, double level = 0.95);

/// One interval per column of a draws x parameters matrix.
std::vector<CredibleInterval> credible_intervals(const Eigen::MatrixXd& draws, double level = 0.95);

/// Fraction of truths inside their interval.
double coverage(const std::vector<CredibleInterval>& intervals, const Eigen::VectorXd& truth);

double median_length(const std::vector<CredibleInterval>& intervals);

double median(std::vector<double> values);

/// Retained draw with the highest stored log-posterior; the first one on ties.
ModelState map_estimate(const PosteriorDraws& posterior);
std::size_t map_index(const std::vector<double>& log_posterior);

/// Componentwise median over draws.
ModelState posterior_median(const std::vector<ModelState>& draws);

enum class Family {
  kUOff,
  kSOff,
  kUOn,
  kSOn,
  kUSwitch,
  kSSwitch,
  kUTilde,
  kSTilde,
  kVelocity,
  kEta,
  kLambda,
};

inline constexpr std::array<Family, 11> kFamilies = {
    Family::kUOff,    Family::kSOff,   Family::kUOn,   Family::kSOn,
    Family::kUSwitch, Family::kSSwitch, Family::kUTilde, Family::kSTilde,
    Family::kVelocity, Family::kEta,   Family::kLambda};

std::string family_name(Family f);

/// Flattened values of one family. Matrix families (K x G, R x G) are
/// flattened column-major; subgroup families need the group of each subgroup.
Eigen::VectorXd family_values(const ModelState& state, Family f,
                              const std::vector<int>& group_of_subgroup);

/// draws x parameters.
Eigen::MatrixXd family_draws(const std::vector<ModelState>& draws, Family f,
                             const std::vector<int>& group_of_subgroup);

/// Subgroup velocities beta u~ - gamma s~ with gamma = beta u_on / s_on, R x G.
Eigen::MatrixXd subgroup_velocities(const ModelState& state,
                                    const std::vector<int>& group_of_subgroup);

struct SummaryRow {
  Family family = Family::kUOff;
  std::size_t parameters = 0;
  double median_ci_length = 0.0;
  bool has_truth = false;
  ErrorSummary errors;  ///< of the posterior median, only with truth
  double coverage = 0.0;
};

struct SummaryTable {
  std::vector<SummaryRow> rows;
  double level = 0.95;

  const SummaryRow& row(Family f) const;
  /// Error and coverage columns are omitted when no truth was supplied.
  void write_csv(std::ostream& out) const;
};

/// Summaries per family. truth may be null; it must be on the same capture
/// scale as the draws (mean lambda equal to one).
SummaryTable summarize(const std::vector<ModelState>& draws,
                       const std::vector<int>& group_of_subgroup, const ModelState* truth,
                       double level = 0.95);

struct Pca {
  Eigen::RowVectorXd center;         ///< column means
  Eigen::MatrixXd loadings;          ///< G x d, orthonormal columns
  Eigen::VectorXd singular_values;   ///< top d
  Eigen::VectorXd explained_ratio;   ///< share of total variance per component
  int rank = 0;

  Eigen::MatrixXd transform(const Eigen::MatrixXd& x) const;
  /// Projection of a displacement (no centering).
  Eigen::MatrixXd transform_delta(const Eigen::MatrixXd& dx) const;
};

/// Centred (not scaled) PCA of a rows x columns matrix through a thin SVD.
/// Throws std::invalid_argument when d < 1 or d exceeds the numerical rank.
Pca pca_fit(const Eigen::MatrixXd& x, int d);

/// s + v dt.
Eigen::MatrixXd future_state(const Eigen::MatrixXd& s, const Eigen::MatrixXd& v, double dt);

/// Rows scaled to unit Euclidean norm; zero rows stay zero.
Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m);

/// Expected spliced abundance lambda_c s~ per cell, C x G.
Eigen::MatrixXd expected_spliced(const ModelState& state, const std::vector<int>& subgroup_of_cell,
                                 const std::vector<int>& group_of_subgroup);

struct ProjectionResult {
  Pca pca;
  Eigen::MatrixXd scores;     ///< projected counts, C x d
  Eigen::MatrixXd estimates;  ///< projected lambda_c s~, C x d
  Eigen::MatrixXd future;     ///< projected lambda_c (s~ + v dt), C x d
  Eigen::MatrixXd arrows;     ///< future - estimates, rows normalised
};

/// PCA fitted on the raw spliced counts; the point estimate and its future
/// state are projected with the same centring and loadings.
ProjectionResult project(const Eigen::MatrixXd& spliced_counts, const ModelState& estimate,
                         const std::vector<int>& subgroup_of_cell,
                         const std::vector<int>& group_of_subgroup, int d, double dt = 0.001);

struct Linkage {
  struct Merge {
    int left = 0;   ///< node ids: leaves are 0..n-1, merge i creates node n+i
    int right = 0;
    double height = 0.0;
    int size = 0;
  };
  int leaves = 0;
  std::vector<Merge> merges;  ///< by non-decreasing height
};

/// Ward agglomerative clustering of the rows (Euclidean).
Linkage ward_linkage(const Eigen::MatrixXd& points);

/// Cuts the hierarchy from the top, stopping before the first split that
/// would leave a cluster smaller than min_size. Labels are numbered by their
/// first member.
std::vector<int> cut_min_size(const Linkage& linkage, int min_size);

/// Subgroups per cell type from Ward clustering on the type's first two
/// principal components. Subgroup ids are contiguous and ordered by type.
std::vector<int> derive_subgroups(const Eigen::MatrixXd& counts, const std::vector<int>& type_of_cell,
                                  int min_size = 30);

}  // namespace velokin
