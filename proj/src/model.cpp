#include "velokin/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace velokin {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kEtaPriorVariance = 10000.0 * 10000.0;

template <typename Derived>
bool same_bits(const Eigen::MatrixBase<Derived>& a, const Eigen::MatrixBase<Derived>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      if (std::memcmp(&a(i, j), &b(i, j), sizeof(double)) != 0) return false;
    }
  }
  return true;
}

}  // namespace

Dataset Dataset::from_labels(CountMatrix spliced, CountMatrix unspliced,
                             std::vector<int> group_of_cell,
                             std::vector<int> subgroup_of_cell) {
  Dataset d;
  d.spliced = std::move(spliced);
  d.unspliced = std::move(unspliced);
  d.group_of_cell = std::move(group_of_cell);
  d.subgroup_of_cell = std::move(subgroup_of_cell);
  if (d.group_of_cell.size() != d.subgroup_of_cell.size()) {
    throw DatasetError(DatasetErrorKind::kDimensionMismatch,
                       "group and subgroup label vectors differ in length");
  }
  int max_group = -1;
  int max_subgroup = -1;
  for (std::size_t c = 0; c < d.group_of_cell.size(); ++c) {
    if (d.group_of_cell[c] < 0 || d.subgroup_of_cell[c] < 0) {
      throw DatasetError(DatasetErrorKind::kLabelOutOfRange, "labels must be nonnegative");
    }
    max_group = std::max(max_group, d.group_of_cell[c]);
    max_subgroup = std::max(max_subgroup, d.subgroup_of_cell[c]);
  }
  d.n_groups = max_group + 1;
  d.n_subgroups = max_subgroup + 1;
  d.group_of_subgroup.assign(static_cast<std::size_t>(d.n_subgroups), -1);
  for (std::size_t c = 0; c < d.group_of_cell.size(); ++c) {
    int& owner = d.group_of_subgroup[static_cast<std::size_t>(d.subgroup_of_cell[c])];
    if (owner == -1) {
      owner = d.group_of_cell[c];
    } else if (owner != d.group_of_cell[c]) {
      std::ostringstream msg;
      msg << "subgroup " << d.subgroup_of_cell[c] << " contains cells of groups " << owner
          << " and " << d.group_of_cell[c]
          << "; cells of different groups cannot share a subgroup";
      throw DatasetError(DatasetErrorKind::kSubgroupCrossesGroups, msg.str());
    }
  }
  d.validate();
  return d;
}

void Dataset::validate() const {
  if (spliced.rows() == 0 || spliced.cols() == 0) {
    throw DatasetError(DatasetErrorKind::kEmpty, "count matrices must be non-empty");
  }
  if (spliced.rows() != unspliced.rows() || spliced.cols() != unspliced.cols()) {
    std::ostringstream msg;
    msg << "spliced matrix is " << spliced.rows() << "x" << spliced.cols()
        << " but unspliced matrix is " << unspliced.rows() << "x" << unspliced.cols();
    throw DatasetError(DatasetErrorKind::kDimensionMismatch, msg.str());
  }
  if (static_cast<int>(group_of_cell.size()) != cells() ||
      static_cast<int>(subgroup_of_cell.size()) != cells()) {
    std::ostringstream msg;
    msg << "label count " << group_of_cell.size() << " does not match " << cells() << " cells";
    throw DatasetError(DatasetErrorKind::kDimensionMismatch, msg.str());
  }
  if (spliced.minCoeff() < 0 || unspliced.minCoeff() < 0) {
    throw DatasetError(DatasetErrorKind::kNegativeCount, "counts must be nonnegative");
  }
  if (n_groups < 1 || n_subgroups < n_groups || n_subgroups > cells()) {
    throw DatasetError(DatasetErrorKind::kLabelOutOfRange,
                       "label counts must satisfy 1 <= K <= R <= C");
  }
  if (static_cast<int>(group_of_subgroup.size()) != n_subgroups) {
    throw DatasetError(DatasetErrorKind::kDimensionMismatch,
                       "group_of_subgroup must have one entry per subgroup");
  }
  std::vector<int> group_seen(static_cast<std::size_t>(n_groups), 0);
  std::vector<int> subgroup_seen(static_cast<std::size_t>(n_subgroups), 0);
  for (int c = 0; c < cells(); ++c) {
    const int k = group_of_cell[static_cast<std::size_t>(c)];
    const int r = subgroup_of_cell[static_cast<std::size_t>(c)];
    if (k < 0 || k >= n_groups || r < 0 || r >= n_subgroups) {
      throw DatasetError(DatasetErrorKind::kLabelOutOfRange, "cell label out of range");
    }
    if (group_of_subgroup[static_cast<std::size_t>(r)] != k) {
      throw DatasetError(DatasetErrorKind::kSubgroupCrossesGroups,
                         "cell's subgroup does not belong to its group");
    }
    group_seen[static_cast<std::size_t>(k)] = 1;
    subgroup_seen[static_cast<std::size_t>(r)] = 1;
  }
  if (std::find(group_seen.begin(), group_seen.end(), 0) != group_seen.end() ||
      std::find(subgroup_seen.begin(), subgroup_seen.end(), 0) != subgroup_seen.end()) {
    throw DatasetError(DatasetErrorKind::kLabelOutOfRange,
                       "every group and subgroup label must contain at least one cell");
  }
}

std::vector<std::vector<int>> Dataset::cells_by_subgroup() const {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(n_subgroups));
  for (int c = 0; c < cells(); ++c) {
    out[static_cast<std::size_t>(subgroup_of_cell[static_cast<std::size_t>(c)])].push_back(c);
  }
  return out;
}

std::vector<std::vector<int>> Dataset::cells_by_group() const {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(n_groups));
  for (int c = 0; c < cells(); ++c) {
    out[static_cast<std::size_t>(group_of_cell[static_cast<std::size_t>(c)])].push_back(c);
  }
  return out;
}

std::int32_t Dataset::max_count() const {
  return std::max(spliced.maxCoeff(), unspliced.maxCoeff());
}

double default_bound(const Dataset& data) {
  return std::max(1.0, 2.0 * static_cast<double>(data.max_count()));
}

ModelState ModelState::zeros(int genes, int groups, int subgroups, int cells,
                             const Hyperparameters& hyper) {
  ModelState st;
  st.hyper = hyper;
  st.u_off = Eigen::VectorXd::Zero(genes);
  st.u_on = Eigen::VectorXd::Zero(genes);
  st.s_on = Eigen::VectorXd::Zero(genes);
  st.eta = Eigen::VectorXd::Zero(genes);
  st.u_sw = Eigen::MatrixXd::Zero(groups, genes);
  st.phi = Eigen::MatrixXd::Zero(subgroups, genes);
  st.lambda = Eigen::VectorXd::Zero(cells);
  return st;
}

void ModelState::check_shape(const Dataset& data) const {
  const int g = genes();
  if (g != data.genes() || groups() != data.n_groups || subgroups() != data.n_subgroups ||
      cells() != data.cells() || u_on.size() != g || s_on.size() != g || eta.size() != g ||
      u_sw.cols() != g || phi.cols() != g) {
    throw std::invalid_argument("model state dimensions do not match the dataset");
  }
}

bool identical(const ModelState& a, const ModelState& b) {
  return std::memcmp(&a.hyper, &b.hyper, sizeof(Hyperparameters)) == 0 &&
         same_bits(a.u_off, b.u_off) && same_bits(a.u_on, b.u_on) &&
         same_bits(a.s_on, b.s_on) && same_bits(a.eta, b.eta) && same_bits(a.u_sw, b.u_sw) &&
         same_bits(a.phi, b.phi) && same_bits(a.lambda, b.lambda);
}

Position subgroup_position(const ModelState& state, int g, int r, int k) {
  return phi_to_position({state.phi(r, g), state.hyper.sector_p}, state.u_sw(k, g),
                         state.coords(g), state.hyper.beta);
}

PositionTable subgroup_positions(const ModelState& state, const Dataset& data) {
  state.check_shape(data);
  PositionTable table{Eigen::MatrixXd(state.subgroups(), state.genes()),
                      Eigen::MatrixXd(state.subgroups(), state.genes())};
  for (int g = 0; g < state.genes(); ++g) {
    for (int r = 0; r < state.subgroups(); ++r) {
      const Position pos =
          subgroup_position(state, g, r, data.group_of_subgroup[static_cast<std::size_t>(r)]);
      table.s(r, g) = pos.s;
      table.u(r, g) = pos.u;
    }
  }
  return table;
}

double nb_mean_term(std::int64_t y, double mu, double eta) {
  if (y < 0) throw std::domain_error("counts must be nonnegative");
  if (mu == 0.0) return y == 0 ? 0.0 : kNegInf;
  const double yd = static_cast<double>(y);
  if (eta < kPoissonEtaThreshold) return yd * std::log(mu) - mu;
  const double size = 1.0 / eta;
  const double prob = mu / (size + mu);
  return (y == 0 ? 0.0 : yd * std::log(prob)) + size * std::log1p(-prob);
}

double nb_count_term(std::int64_t y, double eta) {
  if (y < 0) throw std::domain_error("counts must be nonnegative");
  const double yd = static_cast<double>(y);
  if (eta < kPoissonEtaThreshold) return -std::lgamma(yd + 1.0);
  const double size = 1.0 / eta;
  return std::lgamma(yd + size) - std::lgamma(size) - std::lgamma(yd + 1.0);
}

double nb_logpmf(std::int64_t y, double mu, double eta) {
  if (y < 0) throw std::domain_error("counts must be nonnegative");
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw std::domain_error("mean must be finite and >= 0");
  if (!(eta >= 0.0)) throw std::domain_error("overdispersion must be >= 0");
  if (mu == 0.0) return y == 0 ? 0.0 : kNegInf;
  const double yd = static_cast<double>(y);
  if (eta < kPoissonEtaThreshold) return yd * std::log(mu) - mu - std::lgamma(yd + 1.0);
  const double size = 1.0 / eta;
  // lgamma(y+r) - lgamma(r) - y log(r+mu) written as a sum of small logs for
  // moderate y so that large sizes do not cancel catastrophically.
  double rising;
  if (y <= 512) {
    rising = 0.0;
    for (std::int64_t j = 0; j < y; ++j) {
      rising += std::log1p((static_cast<double>(j) - mu) / (size + mu));
    }
  } else {
    rising = std::lgamma(yd + size) - std::lgamma(size) - yd * std::log(size + mu);
  }
  return rising + yd * std::log(mu) - std::lgamma(yd + 1.0) - size * std::log1p(mu / size);
}

Eigen::MatrixXd pointwise_log_likelihood(const ModelState& state, const Dataset& data) {
  const PositionTable pos = subgroup_positions(state, data);
  Eigen::MatrixXd out(data.cells(), data.genes());
  for (int g = 0; g < data.genes(); ++g) {
    const double eta = state.eta[g];
    for (int c = 0; c < data.cells(); ++c) {
      const int r = data.subgroup_of_cell[static_cast<std::size_t>(c)];
      const double lam = state.lambda[c];
      const double ms = lam * pos.s(r, g);
      const double mu = lam * pos.u(r, g);
      if (!std::isfinite(ms) || !std::isfinite(mu)) {
        throw std::logic_error("non-finite mean from geometry");
      }
      out(c, g) = nb_logpmf(data.spliced(c, g), ms, eta) + nb_logpmf(data.unspliced(c, g), mu, eta);
    }
  }
  return out;
}

double log_likelihood(const ModelState& state, const Dataset& data) {
  return pointwise_log_likelihood(state, data).sum();
}

double log_prior_coords(double u_off, double u_on, double s_on, double bound) {
  if (!(u_off >= 0.0 && u_off < u_on && u_on <= bound)) return kNegInf;
  if (!(s_on > 0.0 && s_on <= bound)) return kNegInf;
  const double a2 = bound * bound;
  // Dirichlet(1,1,1) on the scaled simplex has density 2 / a^2 in (u_off, u_on);
  // Beta(2,1) on s_on / a has density 2 s_on / a^2.
  return std::log(2.0 / a2) + std::log(2.0 * s_on / a2);
}

double log_prior_switch(double u_sw, double u_off, double u_on) {
  if (!(u_sw > u_off && u_sw < u_on)) return kNegInf;
  return -std::log(u_on - u_off);
}

double log_prior_phi(double phi) {
  if (!(phi >= 0.0 && phi <= kTwoPi)) return kNegInf;
  return -std::log(kTwoPi);
}

double log_prior_eta(double eta) {
  if (!(eta >= 0.0) || !std::isfinite(eta)) return kNegInf;
  return -eta * eta / (2.0 * kEtaPriorVariance);
}

double log_prior_lambda(double lambda) {
  if (!(lambda > 0.0 && lambda <= 1.0)) return kNegInf;
  return 0.0;
}

double log_prior(const ModelState& state) {
  double total = 0.0;
  for (int g = 0; g < state.genes(); ++g) {
    total += log_prior_coords(state.u_off[g], state.u_on[g], state.s_on[g], state.hyper.bound_a);
    total += log_prior_eta(state.eta[g]);
    for (int k = 0; k < state.groups(); ++k) {
      total += log_prior_switch(state.u_sw(k, g), state.u_off[g], state.u_on[g]);
    }
    for (int r = 0; r < state.subgroups(); ++r) total += log_prior_phi(state.phi(r, g));
  }
  for (int c = 0; c < state.cells(); ++c) total += log_prior_lambda(state.lambda[c]);
  return total;
}

double log_posterior(const ModelState& state, const Dataset& data) {
  const double prior = log_prior(state);
  if (prior == kNegInf) return kNegInf;
  return prior + log_likelihood(state, data);
}

ModelState rescale_capture(const ModelState& state) {
  const double m = state.lambda.mean();
  if (!(m > 0.0)) throw std::invalid_argument("capture efficiencies must have positive mean");
  ModelState out = state;
  out.lambda /= m;
  out.u_off *= m;
  out.u_on *= m;
  out.s_on *= m;
  out.u_sw *= m;
  return out;
}

}  // namespace velokin
