#include "velokin/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <Eigen/SVD>

#include "velokin/text.hpp"

namespace velokin {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double median_of(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.5);
}

void require_draws(const std::vector<ModelState>& draws) {
  if (draws.empty()) throw std::invalid_argument("no posterior draws");
}

}  // namespace

double relative_error(double estimate, double truth) {
  if (truth == 0.0) return kNaN;
  return std::abs((estimate - truth) / truth);
}

ErrorSummary summarize_errors(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth) {
  if (estimate.size() != truth.size()) {
    throw std::invalid_argument("estimate and truth differ in length");
  }
  ErrorSummary out;
  out.count = static_cast<std::size_t>(truth.size());
  std::vector<double> rel;
  std::vector<double> abs;
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    abs.push_back(std::abs(estimate[i] - truth[i]));
    if (truth[i] == 0.0) {
      ++out.zero_truth_excluded;
    } else {
      rel.push_back(relative_error(estimate[i], truth[i]));
    }
  }
  out.median_relative = median_of(std::move(rel));
  out.median_absolute = median_of(std::move(abs));
  return out;
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0) return sorted[lo];
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

CredibleInterval credible_interval(std::vector<double> draws, double level) {
  if (draws.size() < 2) throw std::invalid_argument("credible interval needs at least two draws");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("level must lie in (0, 1)");
  std::sort(draws.begin(), draws.end());
  const double tail = (1.0 - level) / 2.0;
  return {quantile_sorted(draws, tail), quantile_sorted(draws, 1.0 - tail)};
}

std::vector<CredibleInterval> credible_intervals(const Eigen::MatrixXd& draws, double level) {
  std::vector<CredibleInterval> out;
  out.reserve(static_cast<std::size_t>(draws.cols()));
  for (Eigen::Index j = 0; j < draws.cols(); ++j) {
    std::vector<double> col(draws.col(j).data(), draws.col(j).data() + draws.rows());
    out.push_back(credible_interval(std::move(col), level));
  }
  return out;
}

double coverage(const std::vector<CredibleInterval>& intervals, const Eigen::VectorXd& truth) {
  if (static_cast<Eigen::Index>(intervals.size()) != truth.size()) {
    throw std::invalid_argument("intervals and truth differ in length");
  }
  if (intervals.empty()) return kNaN;
  std::size_t inside = 0;
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    inside += intervals[i].contains(truth[static_cast<Eigen::Index>(i)]) ? 1 : 0;
  }
  return static_cast<double>(inside) / static_cast<double>(intervals.size());
}

double median_length(const std::vector<CredibleInterval>& intervals) {
  std::vector<double> len;
  len.reserve(intervals.size());
  for (const auto& ci : intervals) len.push_back(ci.length());
  return median_of(std::move(len));
}

double median(std::vector<double> values) { return median_of(std::move(values)); }

std::size_t map_index(const std::vector<double>& log_posterior) {
  if (log_posterior.empty()) throw std::invalid_argument("no posterior draws");
  std::size_t best = 0;
  for (std::size_t i = 1; i < log_posterior.size(); ++i) {
    if (log_posterior[i] > log_posterior[best]) best = i;
  }
  return best;
}

ModelState map_estimate(const PosteriorDraws& posterior) {
  require_draws(posterior.draws);
  if (posterior.log_posterior.size() != posterior.draws.size()) {
    throw std::invalid_argument("log-posterior trace does not match the draws");
  }
  return posterior.draws[map_index(posterior.log_posterior)];
}

ModelState posterior_median(const std::vector<ModelState>& draws) {
  require_draws(draws);
  ModelState out = draws.front();
  std::vector<double> buf(draws.size());
  auto fill = [&](auto member) {
    auto& target = out.*member;
    for (Eigen::Index i = 0; i < target.size(); ++i) {
      for (std::size_t d = 0; d < draws.size(); ++d) buf[d] = (draws[d].*member).data()[i];
      std::vector<double> copy = buf;
      target.data()[i] = median_of(std::move(copy));
    }
  };
  fill(&ModelState::u_off);
  fill(&ModelState::u_on);
  fill(&ModelState::s_on);
  fill(&ModelState::eta);
  fill(&ModelState::u_sw);
  fill(&ModelState::phi);
  fill(&ModelState::lambda);
  return out;
}

std::string family_name(Family f) {
  switch (f) {
    case Family::kUOff: return "u_off";
    case Family::kSOff: return "s_off";
    case Family::kUOn: return "u_on";
    case Family::kSOn: return "s_on";
    case Family::kUSwitch: return "u_switch";
    case Family::kSSwitch: return "s_switch";
    case Family::kUTilde: return "u_tilde";
    case Family::kSTilde: return "s_tilde";
    case Family::kVelocity: return "velocity";
    case Family::kEta: return "eta";
    case Family::kLambda: return "lambda";
  }
  throw std::invalid_argument("unknown family");
}

Eigen::MatrixXd subgroup_velocities(const ModelState& state,
                                    const std::vector<int>& group_of_subgroup) {
  const int R = state.subgroups();
  const int G = state.genes();
  const double beta = state.hyper.beta;
  Eigen::MatrixXd v(R, G);
  for (int g = 0; g < G; ++g) {
    const double gamma = beta * state.u_on[g] / state.s_on[g];
    for (int r = 0; r < R; ++r) {
      const Position p =
          subgroup_position(state, g, r, group_of_subgroup[static_cast<std::size_t>(r)]);
      v(r, g) = velocity(p, beta, gamma);
    }
  }
  return v;
}

Eigen::VectorXd family_values(const ModelState& state, Family f,
                              const std::vector<int>& group_of_subgroup) {
  const int G = state.genes();
  const int K = state.groups();
  const int R = state.subgroups();
  if (static_cast<int>(group_of_subgroup.size()) != R) {
    throw std::invalid_argument("group_of_subgroup does not match the state");
  }
  auto flat = [](const Eigen::MatrixXd& m) {
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()));
  };
  switch (f) {
    case Family::kUOff: return state.u_off;
    case Family::kUOn: return state.u_on;
    case Family::kSOn: return state.s_on;
    case Family::kEta: return state.eta;
    case Family::kLambda: return state.lambda;
    case Family::kSOff: {
      Eigen::VectorXd out(G);
      for (int g = 0; g < G; ++g) out[g] = state.coords(g).s_off();
      return out;
    }
    case Family::kUSwitch: return flat(state.u_sw);
    case Family::kSSwitch: {
      Eigen::MatrixXd s(K, G);
      for (int g = 0; g < G; ++g) {
        for (int k = 0; k < K; ++k) {
          s(k, g) = switching_position(state.u_sw(k, g), state.coords(g), state.hyper.beta).s;
        }
      }
      return flat(s);
    }
    case Family::kUTilde:
    case Family::kSTilde: {
      Eigen::MatrixXd m(R, G);
      for (int g = 0; g < G; ++g) {
        for (int r = 0; r < R; ++r) {
          const Position p =
              subgroup_position(state, g, r, group_of_subgroup[static_cast<std::size_t>(r)]);
          m(r, g) = f == Family::kUTilde ? p.u : p.s;
        }
      }
      return flat(m);
    }
    case Family::kVelocity: return flat(subgroup_velocities(state, group_of_subgroup));
  }
  throw std::invalid_argument("unknown family");
}

Eigen::MatrixXd family_draws(const std::vector<ModelState>& draws, Family f,
                             const std::vector<int>& group_of_subgroup) {
  require_draws(draws);
  const Eigen::VectorXd first = family_values(draws.front(), f, group_of_subgroup);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(draws.size()), first.size());
  out.row(0) = first.transpose();
  for (std::size_t d = 1; d < draws.size(); ++d) {
    out.row(static_cast<Eigen::Index>(d)) = family_values(draws[d], f, group_of_subgroup).transpose();
  }
  return out;
}

const SummaryRow& SummaryTable::row(Family f) const {
  for (const auto& r : rows) {
    if (r.family == f) return r;
  }
  throw std::out_of_range("family not summarised: " + family_name(f));
}

void SummaryTable::write_csv(std::ostream& out) const {
  const bool truth = !rows.empty() && rows.front().has_truth;
  out << "family,parameters,median_ci_length";
  if (truth) out << ",median_relative_error,median_absolute_error,zero_truth_excluded,coverage";
  out << '\n';
  for (const auto& r : rows) {
    out << family_name(r.family) << ',' << r.parameters << ',' << format_double(r.median_ci_length);
    if (truth) {
      out << ',' << format_double(r.errors.median_relative) << ','
          << format_double(r.errors.median_absolute) << ',' << r.errors.zero_truth_excluded << ','
          << format_double(r.coverage);
    }
    out << '\n';
  }
}

SummaryTable summarize(const std::vector<ModelState>& draws,
                       const std::vector<int>& group_of_subgroup, const ModelState* truth,
                       double level) {
  if (draws.size() < 2) throw std::invalid_argument("summaries need at least two draws");
  SummaryTable table;
  table.level = level;
  for (Family f : kFamilies) {
    const Eigen::MatrixXd m = family_draws(draws, f, group_of_subgroup);
    const auto cis = credible_intervals(m, level);
    SummaryRow row;
    row.family = f;
    row.parameters = static_cast<std::size_t>(m.cols());
    row.median_ci_length = median_length(cis);
    if (truth != nullptr) {
      const Eigen::VectorXd t = family_values(*truth, f, group_of_subgroup);
      Eigen::VectorXd med(m.cols());
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        med[j] = median_of(std::vector<double>(m.col(j).data(), m.col(j).data() + m.rows()));
      }
      row.has_truth = true;
      row.errors = summarize_errors(med, t);
      row.coverage = coverage(cis, t);
    }
    table.rows.push_back(row);
  }
  return table;
}

Eigen::MatrixXd Pca::transform(const Eigen::MatrixXd& x) const {
  if (x.cols() != loadings.rows()) throw std::invalid_argument("projection width mismatch");
  return (x.rowwise() - center) * loadings;
}

Eigen::MatrixXd Pca::transform_delta(const Eigen::MatrixXd& dx) const {
  if (dx.cols() != loadings.rows()) throw std::invalid_argument("projection width mismatch");
  return dx * loadings;
}

namespace {

// Keeps min(d, rank) components.
Pca pca_fit_at_most(const Eigen::MatrixXd& x, int d, bool strict) {
  if (d < 1) throw std::invalid_argument("number of components must be at least 1");
  if (x.rows() < 1 || x.cols() < 1) throw std::invalid_argument("empty matrix");
  Pca pca;
  pca.center = x.colwise().mean();
  const Eigen::MatrixXd centred = x.rowwise() - pca.center;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double tol = static_cast<double>(std::max(x.rows(), x.cols())) *
                     std::numeric_limits<double>::epsilon() * (sv.size() > 0 ? sv[0] : 0.0);
  pca.rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) pca.rank += sv[i] > tol ? 1 : 0;
  if (!strict) d = std::min(d, pca.rank);
  if (d > pca.rank) {
    throw std::invalid_argument("requested " + std::to_string(d) +
                                " components but the centred matrix has rank " +
                                std::to_string(pca.rank));
  }
  pca.loadings = svd.matrixV().leftCols(d);
  // Fix the sign so the largest-magnitude loading of each component is positive.
  for (int j = 0; j < d; ++j) {
    Eigen::Index arg = 0;
    pca.loadings.col(j).cwiseAbs().maxCoeff(&arg);
    if (pca.loadings(arg, j) < 0) pca.loadings.col(j) *= -1.0;
  }
  pca.singular_values = sv.head(d);
  const double total = sv.squaredNorm();
  pca.explained_ratio = sv.head(d).array().square() / total;
  return pca;
}

}  // namespace

Pca pca_fit(const Eigen::MatrixXd& x, int d) { return pca_fit_at_most(x, d, true); }

Eigen::MatrixXd future_state(const Eigen::MatrixXd& s, const Eigen::MatrixXd& v, double dt) {
  if (s.rows() != v.rows() || s.cols() != v.cols()) {
    throw std::invalid_argument("state and velocity differ in shape");
  }
  return s + dt * v;
}

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n > 0) out.row(i) /= n;
  }
  return out;
}

Eigen::MatrixXd expected_spliced(const ModelState& state, const std::vector<int>& subgroup_of_cell,
                                 const std::vector<int>& group_of_subgroup) {
  const Eigen::VectorXd s = family_values(state, Family::kSTilde, group_of_subgroup);
  const int R = state.subgroups();
  const int C = state.cells();
  if (static_cast<int>(subgroup_of_cell.size()) != C) {
    throw std::invalid_argument("subgroup labels do not match the state");
  }
  Eigen::MatrixXd out(C, state.genes());
  for (int c = 0; c < C; ++c) {
    const int r = subgroup_of_cell[static_cast<std::size_t>(c)];
    for (int g = 0; g < state.genes(); ++g) out(c, g) = state.lambda[c] * s[g * R + r];
  }
  return out;
}

ProjectionResult project(const Eigen::MatrixXd& spliced_counts, const ModelState& estimate,
                         const std::vector<int>& subgroup_of_cell,
                         const std::vector<int>& group_of_subgroup, int d, double dt) {
  if (spliced_counts.rows() != estimate.cells() || spliced_counts.cols() != estimate.genes()) {
    throw std::invalid_argument("count matrix does not match the estimate");
  }
  ProjectionResult out;
  out.pca = pca_fit(spliced_counts, d);
  out.scores = out.pca.transform(spliced_counts);
  const Eigen::MatrixXd s = expected_spliced(estimate, subgroup_of_cell, group_of_subgroup);
  out.estimates = out.pca.transform(s);

  const Eigen::MatrixXd v = subgroup_velocities(estimate, group_of_subgroup);
  Eigen::MatrixXd step(s.rows(), s.cols());
  for (Eigen::Index c = 0; c < s.rows(); ++c) {
    const int r = subgroup_of_cell[static_cast<std::size_t>(c)];
    step.row(c) = estimate.lambda[c] * v.row(r);
  }
  // The displacement is projected directly: the centring cancels, and this
  // avoids subtracting two nearly equal projections.
  const Eigen::MatrixXd delta = out.pca.transform_delta(dt * step);
  out.future = out.estimates + delta;
  out.arrows = normalize_rows(delta);
  return out;
}

Linkage ward_linkage(const Eigen::MatrixXd& points) {
  const int n = static_cast<int>(points.rows());
  Linkage link;
  link.leaves = n;
  if (n < 2) return link;

  // Lance-Williams on squared distances; heights are reported as sqrt.
  std::vector<double> dist(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0.0);
  auto at = [&](int i, int j) -> double& {
    return dist[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) + static_cast<std::size_t>(j)];
  };
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d2 = (points.row(i) - points.row(j)).squaredNorm();
      at(i, j) = d2;
      at(j, i) = d2;
    }
  }
  std::vector<int> size(static_cast<std::size_t>(n), 1);
  std::vector<int> node(static_cast<std::size_t>(n));
  std::iota(node.begin(), node.end(), 0);
  std::vector<char> active(static_cast<std::size_t>(n), 1);
  std::vector<int> chain;

  struct Raw {
    int a;
    int b;
    double d2;
    int size;
    int order;
  };
  std::vector<Raw> raw;
  int remaining = n;
  int next_start = 0;
  while (remaining > 1) {
    if (chain.empty()) {
      while (!active[static_cast<std::size_t>(next_start)]) ++next_start;
      chain.push_back(next_start);
    }
    const int a = chain.back();
    const int prev = chain.size() > 1 ? chain[chain.size() - 2] : -1;
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    if (prev >= 0) {
      best = prev;
      best_d = at(a, prev);
    }
    for (int k = 0; k < n; ++k) {
      if (k == a || !active[static_cast<std::size_t>(k)]) continue;
      if (at(a, k) < best_d) {
        best_d = at(a, k);
        best = k;
      }
    }
    if (best != prev) {
      chain.push_back(best);
      continue;
    }
    chain.pop_back();
    chain.pop_back();
    const int b = prev;
    const auto sa = static_cast<double>(size[static_cast<std::size_t>(a)]);
    const auto sb = static_cast<double>(size[static_cast<std::size_t>(b)]);
    raw.push_back({node[static_cast<std::size_t>(a)], node[static_cast<std::size_t>(b)], best_d,
                   size[static_cast<std::size_t>(a)] + size[static_cast<std::size_t>(b)],
                   static_cast<int>(raw.size())});
    for (int k = 0; k < n; ++k) {
      if (k == a || k == b || !active[static_cast<std::size_t>(k)]) continue;
      const auto sk = static_cast<double>(size[static_cast<std::size_t>(k)]);
      const double d = ((sa + sk) * at(a, k) + (sb + sk) * at(b, k) - sk * best_d) / (sa + sb + sk);
      at(a, k) = d;
      at(k, a) = d;
    }
    size[static_cast<std::size_t>(a)] += size[static_cast<std::size_t>(b)];
    active[static_cast<std::size_t>(b)] = 0;
    node[static_cast<std::size_t>(a)] = n + static_cast<int>(raw.size()) - 1;  // provisional id
    --remaining;
  }

  // Sort by height (creation order breaks ties, keeping children first) and
  // renumber the internal nodes accordingly.
  std::vector<Raw> sorted = raw;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const Raw& x, const Raw& y) { return x.d2 < y.d2; });
  std::vector<int> renumber(raw.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    renumber[static_cast<std::size_t>(sorted[i].order)] = n + static_cast<int>(i);
  }
  auto fix = [&](int id) { return id < n ? id : renumber[static_cast<std::size_t>(id - n)]; };
  for (const Raw& m : sorted) {
    int l = fix(m.a);
    int r = fix(m.b);
    if (l > r) std::swap(l, r);
    link.merges.push_back({l, r, std::sqrt(std::max(0.0, m.d2)), m.size});
  }
  return link;
}

std::vector<int> cut_min_size(const Linkage& linkage, int min_size) {
  const int n = linkage.leaves;
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  if (n == 0) return labels;
  auto size_of = [&](int id) {
    return id < n ? 1 : linkage.merges[static_cast<std::size_t>(id - n)].size;
  };
  std::vector<int> clusters;
  if (linkage.merges.empty()) {
    clusters.push_back(0);
  } else {
    clusters.push_back(n + static_cast<int>(linkage.merges.size()) - 1);
    for (auto i = static_cast<int>(linkage.merges.size()) - 1; i >= 0; --i) {
      const auto& m = linkage.merges[static_cast<std::size_t>(i)];
      if (size_of(m.left) < min_size || size_of(m.right) < min_size) break;
      const auto it = std::find(clusters.begin(), clusters.end(), n + i);
      *it = m.left;
      clusters.push_back(m.right);
    }
  }
  // Assign leaves, then renumber clusters by their smallest member.
  std::vector<int> raw_label(static_cast<std::size_t>(n), -1);
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    std::vector<int> stack{clusters[c]};
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      if (id < n) {
        raw_label[static_cast<std::size_t>(id)] = static_cast<int>(c);
      } else {
        const auto& m = linkage.merges[static_cast<std::size_t>(id - n)];
        stack.push_back(m.left);
        stack.push_back(m.right);
      }
    }
  }
  std::map<int, int> order;
  for (int i = 0; i < n; ++i) {
    const int c = raw_label[static_cast<std::size_t>(i)];
    if (!order.contains(c)) {
      const int next = static_cast<int>(order.size());
      order[c] = next;
    }
    labels[static_cast<std::size_t>(i)] = order[c];
  }
  return labels;
}

std::vector<int> derive_subgroups(const Eigen::MatrixXd& counts, const std::vector<int>& type_of_cell,
                                  int min_size) {
  const auto C = static_cast<int>(counts.rows());
  if (static_cast<int>(type_of_cell.size()) != C) {
    throw std::invalid_argument("type labels do not match the count matrix");
  }
  if (min_size < 1) throw std::invalid_argument("min_size must be positive");
  int types = 0;
  for (int t : type_of_cell) {
    if (t < 0) throw std::invalid_argument("negative type label");
    types = std::max(types, t + 1);
  }
  std::vector<std::vector<int>> members(static_cast<std::size_t>(types));
  for (int c = 0; c < C; ++c) members[static_cast<std::size_t>(type_of_cell[static_cast<std::size_t>(c)])].push_back(c);

  std::vector<int> out(static_cast<std::size_t>(C), -1);
  int next = 0;
  for (const auto& cells : members) {
    if (cells.empty()) continue;
    const auto n = static_cast<int>(cells.size());
    std::vector<int> local(static_cast<std::size_t>(n), 0);
    if (n >= min_size && n >= 2) {
      Eigen::MatrixXd sub(n, counts.cols());
      for (int i = 0; i < n; ++i) sub.row(i) = counts.row(cells[static_cast<std::size_t>(i)]);
      const Pca pca = pca_fit_at_most(sub, 2, false);
      if (pca.loadings.cols() >= 1) {
        local = cut_min_size(ward_linkage(pca.transform(sub)), min_size);
      }
    }
    int used = 0;
    for (int i = 0; i < n; ++i) {
      out[static_cast<std::size_t>(cells[static_cast<std::size_t>(i)])] = next + local[static_cast<std::size_t>(i)];
      used = std::max(used, local[static_cast<std::size_t>(i)] + 1);
    }
    next += used;
  }
  return out;
}

}  // namespace velokin
