#include "velokin/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <Eigen/Cholesky>

#include "velokin/binary_io.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace velokin {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kCovJitter = 1e-10;
constexpr std::uint64_t kGeneStreamTag = 0x67656e65;
constexpr std::uint64_t kCellStreamTag = 0x63656c6c;
constexpr char kCheckpointMagic[8] = {'V', 'K', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::int64_t kProgressEvery = 1000;

std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(id),
                    static_cast<std::uint32_t>(id >> 32)};
  return std::mt19937_64(seq);
}

double std_normal(std::mt19937_64& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

double unit_uniform(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

// Consumes one uniform whether or not the proposal was in the support.
bool metropolis_accept(double log_ratio, std::mt19937_64& rng) {
  const double u = unit_uniform(rng);
  if (!(log_ratio > kNegInf)) return false;
  return std::log(u) < log_ratio;
}

double accept_probability(double log_ratio) {
  if (!(log_ratio > kNegInf)) return 0.0;
  return log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
}

// Mean-dependent part of the NB log-pmf without the y log(size) piece:
// y log(mu) - (y + size) log1p(mu / size). Poisson form below the threshold.
inline double mean_term(std::int32_t y, double mu, double log_mu, double eta, double size) {
  if (mu == 0.0) return y == 0 ? 0.0 : kNegInf;
  const double yd = static_cast<double>(y);
  if (eta < kPoissonEtaThreshold) return yd * log_mu - mu;
  return yd * log_mu - (yd + size) * std::log1p(mu / size);
}

// Count part matching mean_term: lgamma(v + size) - lgamma(size) - v log(size).
double count_term(std::int32_t v, double eta) {
  if (v == 0 || eta < kPoissonEtaThreshold) return 0.0;
  const double size = 1.0 / eta;
  if (size > 1e4 && v <= 256) {
    double acc = 0.0;
    for (std::int32_t j = 1; j < v; ++j) acc += std::log1p(static_cast<double>(j) / size);
    return acc;
  }
  const double vd = static_cast<double>(v);
  return std::lgamma(vd + size) - std::lgamma(size) - vd * std::log(size);
}

double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

Eigen::Vector3d to_unconstrained(double u_off, double u_on, double s_on, double a) {
  const double rest = std::log(a - u_on);
  return {std::log(u_off) - rest, std::log(u_on - u_off) - rest, std::log(s_on) - std::log(a - s_on)};
}

void from_unconstrained(const Eigen::Vector3d& z, double a, double& u_off, double& u_on,
                        double& s_on) {
  const double m = std::max({0.0, z[0], z[1]});
  const double e0 = std::exp(-m);
  const double e1 = std::exp(z[0] - m);
  const double e2 = std::exp(z[1] - m);
  const double den = e0 + e1 + e2;
  u_off = a * (e1 / den);
  u_on = a * ((e1 + e2) / den);
  s_on = a / (1.0 + std::exp(-z[2]));
}

// log |d(u_off, u_on, s_on) / dz|
double log_jacobian(double u_off, double u_on, double s_on, double a) {
  return safe_log(u_off) + safe_log(u_on - u_off) + safe_log(a - u_on) + safe_log(s_on) +
         safe_log(a - s_on) - 2.0 * std::log(a);
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::uint64_t fingerprint(const Dataset& d) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](std::uint64_t x) {
    h ^= x;
    h *= 1099511628211ULL;
  };
  mix(static_cast<std::uint64_t>(d.cells()));
  mix(static_cast<std::uint64_t>(d.genes()));
  mix(static_cast<std::uint64_t>(d.n_groups));
  mix(static_cast<std::uint64_t>(d.n_subgroups));
  for (Eigen::Index i = 0; i < d.spliced.size(); ++i) {
    mix(static_cast<std::uint32_t>(d.spliced.data()[i]));
    mix(static_cast<std::uint32_t>(d.unspliced.data()[i]));
  }
  for (int c = 0; c < d.cells(); ++c) {
    mix(static_cast<std::uint64_t>(d.group_of_cell[static_cast<std::size_t>(c)]));
    mix(static_cast<std::uint64_t>(d.subgroup_of_cell[static_cast<std::size_t>(c)]));
  }
  return h;
}

struct GeneCounters {
  AcceptanceStats block, eta, u_sw, phi;
  AcceptanceStats block_f, eta_f, u_sw_f, phi_f;
};

struct CellCounters {
  AcceptanceStats lambda, lambda_f;
};

void count(AcceptanceStats& all, AcceptanceStats& frozen, bool is_frozen, bool accepted) {
  ++all.proposed;
  all.accepted += accepted ? 1 : 0;
  if (is_frozen) {
    ++frozen.proposed;
    frozen.accepted += accepted ? 1 : 0;
  }
}

void put_state(binary::Writer& w, const ModelState& s) {
  w.put(s.hyper);
  w.put_matrix(s.u_off);
  w.put_matrix(s.u_on);
  w.put_matrix(s.s_on);
  w.put_matrix(s.eta);
  w.put_matrix(s.u_sw);
  w.put_matrix(s.phi);
  w.put_matrix(s.lambda);
}

ModelState get_state(binary::Reader& r) {
  ModelState s;
  s.hyper = r.get<Hyperparameters>();
  s.u_off = r.get_matrix<Eigen::VectorXd>();
  s.u_on = r.get_matrix<Eigen::VectorXd>();
  s.s_on = r.get_matrix<Eigen::VectorXd>();
  s.eta = r.get_matrix<Eigen::VectorXd>();
  s.u_sw = r.get_matrix<Eigen::MatrixXd>();
  s.phi = r.get_matrix<Eigen::MatrixXd>();
  s.lambda = r.get_matrix<Eigen::VectorXd>();
  return s;
}

void put_config(binary::Writer& w, const ChainConfig& c) {
  w.put(c.n_iter);
  w.put(c.n_burnin);
  w.put(c.thin);
  w.put(c.seed);
  w.put(c.target_accept);
  w.put(c.adapt_start);
  w.put(c.adapt_end);
  w.put(c.gamma_c1);
  w.put(c.gamma_c2);
  w.put(c.univariate_adapt_interval);
  w.put(c.adapt);
  w.put(c.update_block);
  w.put(c.update_eta);
  w.put(c.update_switch);
  w.put(c.update_phi);
  w.put(c.update_lambda);
  w.put(c.store_pointwise);
  w.put(c.threads);
  w.put(c.checkpoint_every);
  w.put_string(c.checkpoint_path);
  w.put(c.stop_after);
}

ChainConfig get_config(binary::Reader& r) {
  ChainConfig c;
  c.n_iter = r.get<std::int64_t>();
  c.n_burnin = r.get<std::int64_t>();
  c.thin = r.get<std::int64_t>();
  c.seed = r.get<std::uint64_t>();
  c.target_accept = r.get<double>();
  c.adapt_start = r.get<std::int64_t>();
  c.adapt_end = r.get<std::int64_t>();
  c.gamma_c1 = r.get<double>();
  c.gamma_c2 = r.get<double>();
  c.univariate_adapt_interval = r.get<std::int64_t>();
  c.adapt = r.get<bool>();
  c.update_block = r.get<bool>();
  c.update_eta = r.get<bool>();
  c.update_switch = r.get<bool>();
  c.update_phi = r.get<bool>();
  c.update_lambda = r.get<bool>();
  c.store_pointwise = r.get<bool>();
  c.threads = r.get<int>();
  c.checkpoint_every = r.get<std::int64_t>();
  c.checkpoint_path = r.get_string();
  c.stop_after = r.get<std::int64_t>();
  return c;
}

template <typename Engine>
std::string engine_text(const Engine& e) {
  std::ostringstream os;
  os << e;
  return os.str();
}

template <typename Engine>
void engine_from_text(Engine& e, const std::string& text) {
  std::istringstream is(text);
  is >> e;
  if (is.fail()) throw std::runtime_error("corrupt checkpoint: random stream state");
}

class Chain {
 public:
  Chain(const Dataset& data, const ChainConfig& cfg) : d_(data), cfg_(cfg) {
    cfg_.validate();
    data.validate();
    C_ = data.cells();
    G_ = data.genes();
    K_ = data.n_groups;
    R_ = data.n_subgroups;
    adapt_end_ = cfg_.resolved_adapt_end();
    cells_of_sub_ = data.cells_by_subgroup();
    cells_of_group_ = data.cells_by_group();
    subs_of_group_.assign(static_cast<std::size_t>(K_), {});
    for (int r = 0; r < R_; ++r) {
      subs_of_group_[static_cast<std::size_t>(data.group_of_subgroup[static_cast<std::size_t>(r)])]
          .push_back(r);
    }
    build_count_tables();
  }

  void start(const ModelState& init) {
    init.check_shape(d_);
    st_ = init;
    check_start();
    gene_rng_.clear();
    cell_rng_.clear();
    for (int g = 0; g < G_; ++g) {
      gene_rng_.push_back(make_stream(cfg_.seed, kGeneStreamTag, static_cast<std::uint64_t>(g)));
    }
    for (int c = 0; c < C_; ++c) {
      cell_rng_.push_back(make_stream(cfg_.seed, kCellStreamTag, static_cast<std::uint64_t>(c)));
    }
    blocks_.clear();
    const double a = st_.hyper.bound_a;
    for (int g = 0; g < G_; ++g) {
      blocks_.emplace_back(to_unconstrained(st_.u_off[g], st_.u_on[g], st_.s_on[g], a), 0.01);
    }
    eta_ad_.assign(static_cast<std::size_t>(G_), {std::log(0.1), 0});
    sw_ad_.assign(static_cast<std::size_t>(K_ * G_), {});
    for (int g = 0; g < G_; ++g) {
      for (int k = 0; k < K_; ++k) {
        sw_ad_[idx_sw(k, g)].log_sd = std::log(0.05 * (st_.u_on[g] - st_.u_off[g]));
      }
    }
    phi_ad_.assign(static_cast<std::size_t>(R_ * G_), {std::log(0.1), 0});
    lambda_ad_.assign(static_cast<std::size_t>(C_), {std::log(0.02), 0});
    gene_counts_.assign(static_cast<std::size_t>(G_), {});
    cell_counts_.assign(static_cast<std::size_t>(C_), {});
    out_ = PosteriorDraws{};
    out_.config = cfg_;
    out_.pointwise = PointwiseAccumulator(static_cast<Eigen::Index>(C_) * G_);
    k_done_ = 0;
    rebuild_caches();
  }

  void run(const ProgressFn& progress) {
    const std::int64_t last =
        cfg_.stop_after > 0 ? std::min(cfg_.stop_after, cfg_.n_iter) : cfg_.n_iter;
    for (std::int64_t k = k_done_ + 1; k <= last; ++k) {
      sweep(k);
      k_done_ = k;
      if (k > cfg_.n_burnin && (k - cfg_.n_burnin) % cfg_.thin == 0) retain(k);
      const bool periodic = cfg_.checkpoint_every > 0 && k % cfg_.checkpoint_every == 0;
      const bool stopping = k == last;
      if (!cfg_.checkpoint_path.empty() && (periodic || stopping)) save(cfg_.checkpoint_path);
      if (progress && (k % kProgressEvery == 0 || k == last)) progress(k, current_log_posterior());
    }
  }

  PosteriorDraws finish() {
    out_.completed_iterations = k_done_;
    for (int g = 0; g < G_; ++g) {
      const GeneCounters& gc = gene_counts_[static_cast<std::size_t>(g)];
      add(out_.acceptance.block, gc.block);
      add(out_.acceptance.eta, gc.eta);
      add(out_.acceptance.u_sw, gc.u_sw);
      add(out_.acceptance.phi, gc.phi);
      add(out_.acceptance_frozen.block, gc.block_f);
      add(out_.acceptance_frozen.eta, gc.eta_f);
      add(out_.acceptance_frozen.u_sw, gc.u_sw_f);
      add(out_.acceptance_frozen.phi, gc.phi_f);
    }
    for (const CellCounters& cc : cell_counts_) {
      add(out_.acceptance.lambda, cc.lambda);
      add(out_.acceptance_frozen.lambda, cc.lambda_f);
    }
    out_.block_covariance.clear();
    for (const auto& b : blocks_) out_.block_covariance.push_back(b.proposal_covariance());
    return std::move(out_);
  }

  void save(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
      std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
      if (!os) throw std::runtime_error("cannot write checkpoint " + tmp);
      binary::Writer w(os);
      for (char ch : kCheckpointMagic) w.put(ch);
      put_config(w, cfg_);
      w.put(fingerprint(d_));
      w.put(k_done_);
      put_state(w, st_);
      for (const auto& b : blocks_) {
        w.put_matrix(Eigen::VectorXd(b.mean));
        w.put_matrix(Eigen::MatrixXd(b.cov));
        w.put(b.log_scale);
      }
      w.put_vector(eta_ad_);
      w.put_vector(sw_ad_);
      w.put_vector(phi_ad_);
      w.put_vector(lambda_ad_);
      w.put_vector(gene_counts_);
      w.put_vector(cell_counts_);
      for (const auto& e : gene_rng_) w.put_string(engine_text(e));
      for (const auto& e : cell_rng_) w.put_string(engine_text(e));
      w.put<std::uint64_t>(out_.draws.size());
      for (std::size_t i = 0; i < out_.draws.size(); ++i) {
        put_state(w, out_.draws[i]);
        w.put(out_.log_posterior[i]);
        w.put(out_.iteration[i]);
      }
      const PointwiseAccumulator& acc = out_.pointwise;
      w.put_matrix(acc.max_);
      w.put_matrix(acc.sum_exp_);
      w.put_matrix(acc.mean_);
      w.put_matrix(acc.m2_);
      w.put(acc.draws_);
      w.put_matrix(out_.pointwise_matrix);
      if (!os) throw std::runtime_error("failed writing checkpoint " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
      throw std::runtime_error("cannot move checkpoint into place at " + path);
    }
  }

  static ChainConfig read_config(const std::string& path, std::ifstream& is) {
    if (!is) throw std::runtime_error("cannot open checkpoint " + path);
    binary::Reader r(is);
    for (char ch : kCheckpointMagic) {
      if (r.get<char>() != ch) throw std::runtime_error(path + " is not a checkpoint file");
    }
    return get_config(r);
  }

  void load_rest(std::ifstream& is) {
    binary::Reader r(is);
    if (r.get<std::uint64_t>() != fingerprint(d_)) {
      throw std::runtime_error("checkpoint was written for a different dataset");
    }
    k_done_ = r.get<std::int64_t>();
    st_ = get_state(r);
    st_.check_shape(d_);
    blocks_.assign(static_cast<std::size_t>(G_), {});
    for (auto& b : blocks_) {
      b.mean = r.get_matrix<Eigen::VectorXd>();
      b.cov = r.get_matrix<Eigen::MatrixXd>();
      b.log_scale = r.get<double>();
      b.refresh();
    }
    eta_ad_ = r.get_vector<UnivariateAdapter>();
    sw_ad_ = r.get_vector<UnivariateAdapter>();
    phi_ad_ = r.get_vector<UnivariateAdapter>();
    lambda_ad_ = r.get_vector<UnivariateAdapter>();
    gene_counts_ = r.get_vector<GeneCounters>();
    cell_counts_ = r.get_vector<CellCounters>();
    if (eta_ad_.size() != static_cast<std::size_t>(G_) ||
        sw_ad_.size() != static_cast<std::size_t>(K_ * G_) ||
        phi_ad_.size() != static_cast<std::size_t>(R_ * G_) ||
        lambda_ad_.size() != static_cast<std::size_t>(C_) ||
        gene_counts_.size() != static_cast<std::size_t>(G_) ||
        cell_counts_.size() != static_cast<std::size_t>(C_)) {
      throw std::runtime_error("corrupt checkpoint: adapter sizes");
    }
    gene_rng_.assign(static_cast<std::size_t>(G_), {});
    cell_rng_.assign(static_cast<std::size_t>(C_), {});
    for (auto& e : gene_rng_) engine_from_text(e, r.get_string());
    for (auto& e : cell_rng_) engine_from_text(e, r.get_string());
    out_ = PosteriorDraws{};
    out_.config = cfg_;
    const auto n = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
      out_.draws.push_back(get_state(r));
      out_.log_posterior.push_back(r.get<double>());
      out_.iteration.push_back(r.get<std::int64_t>());
    }
    PointwiseAccumulator& acc = out_.pointwise;
    acc.max_ = r.get_matrix<Eigen::VectorXd>();
    acc.sum_exp_ = r.get_matrix<Eigen::VectorXd>();
    acc.mean_ = r.get_matrix<Eigen::VectorXd>();
    acc.m2_ = r.get_matrix<Eigen::VectorXd>();
    acc.draws_ = r.get<std::int64_t>();
    out_.pointwise_matrix = r.get_matrix<Eigen::MatrixXd>();
    rebuild_caches();
  }

  void set_stop_after(std::int64_t s) { cfg_.stop_after = s; }

 private:
  static void add(AcceptanceStats& into, const AcceptanceStats& from) {
    into.proposed += from.proposed;
    into.accepted += from.accepted;
  }

  std::size_t idx_sw(int k, int g) const { return static_cast<std::size_t>(k + K_ * g); }
  std::size_t idx_phi(int r, int g) const { return static_cast<std::size_t>(r + R_ * g); }
  int group_of_sub(int r) const { return d_.group_of_subgroup[static_cast<std::size_t>(r)]; }
  int sub_of_cell(int c) const { return d_.subgroup_of_cell[static_cast<std::size_t>(c)]; }

  void build_count_tables() {
    // Distinct values per gene (both matrices) and their multiplicities.
    values_.assign(static_cast<std::size_t>(G_), {});
    mult_.assign(static_cast<std::size_t>(G_), {});
    vidx_s_.resize(C_, G_);
    vidx_u_.resize(C_, G_);
    log_factorial_ = 0.0;
    for (int g = 0; g < G_; ++g) {
      std::map<std::int32_t, std::int64_t> hist;
      for (int c = 0; c < C_; ++c) {
        ++hist[d_.spliced(c, g)];
        ++hist[d_.unspliced(c, g)];
      }
      std::map<std::int32_t, std::int32_t> where;
      for (const auto& [v, m] : hist) {
        where[v] = static_cast<std::int32_t>(values_[static_cast<std::size_t>(g)].size());
        values_[static_cast<std::size_t>(g)].push_back(v);
        mult_[static_cast<std::size_t>(g)].push_back(m);
        log_factorial_ -= static_cast<double>(m) * std::lgamma(static_cast<double>(v) + 1.0);
      }
      for (int c = 0; c < C_; ++c) {
        vidx_s_(c, g) = where[d_.spliced(c, g)];
        vidx_u_(c, g) = where[d_.unspliced(c, g)];
      }
    }
  }

  double gene_count_term(int g, double eta) const {
    const auto& vals = values_[static_cast<std::size_t>(g)];
    const auto& mult = mult_[static_cast<std::size_t>(g)];
    double acc = 0.0;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      acc += static_cast<double>(mult[i]) * count_term(vals[i], eta);
    }
    return acc;
  }

  double entry(int c, int g, double ps, double pu, double lps, double lpu, double lam,
               double log_lam, double eta, double size) const {
    return mean_term(d_.spliced(c, g), lam * ps, log_lam + lps, eta, size) +
           mean_term(d_.unspliced(c, g), lam * pu, log_lam + lpu, eta, size);
  }

  double entry_cached(int c, int g, double eta, double size) const {
    const int r = sub_of_cell(c);
    return entry(c, g, pos_s_(r, g), pos_u_(r, g), lpos_s_(r, g), lpos_u_(r, g),
                 st_.lambda[c], log_lambda_[c], eta, size);
  }

  static double size_of(double eta) { return eta < kPoissonEtaThreshold ? 0.0 : 1.0 / eta; }

  Position position(int r, int g, double u_sw, const AlmondCoords& c) const {
    return phi_to_position({st_.phi(r, g), st_.hyper.sector_p}, u_sw, c, st_.hyper.beta);
  }

  void rebuild_caches() {
    pos_s_.resize(R_, G_);
    pos_u_.resize(R_, G_);
    lpos_s_.resize(R_, G_);
    lpos_u_.resize(R_, G_);
    for (int g = 0; g < G_; ++g) {
      const AlmondCoords co = st_.coords(g);
      for (int r = 0; r < R_; ++r) {
        const Position p = position(r, g, st_.u_sw(group_of_sub(r), g), co);
        pos_s_(r, g) = p.s;
        pos_u_(r, g) = p.u;
        lpos_s_(r, g) = safe_log(p.s);
        lpos_u_(r, g) = safe_log(p.u);
      }
    }
    log_lambda_.resize(C_);
    for (int c = 0; c < C_; ++c) log_lambda_[c] = safe_log(st_.lambda[c]);
    ll_.resize(C_, G_);
    count_.resize(G_);
    for (int g = 0; g < G_; ++g) {
      const double eta = st_.eta[g];
      const double size = size_of(eta);
      for (int c = 0; c < C_; ++c) ll_(c, g) = entry_cached(c, g, eta, size);
      count_[g] = gene_count_term(g, eta);
    }
  }

  double log_prior_gene(int g) const {
    double p = log_prior_coords(st_.u_off[g], st_.u_on[g], st_.s_on[g], st_.hyper.bound_a) +
               log_prior_eta(st_.eta[g]);
    for (int k = 0; k < K_; ++k) p += log_prior_switch(st_.u_sw(k, g), st_.u_off[g], st_.u_on[g]);
    for (int r = 0; r < R_; ++r) p += log_prior_phi(st_.phi(r, g));
    return p;
  }

  double current_log_posterior() const {
    double lp = log_factorial_;
    for (int g = 0; g < G_; ++g) lp += ll_.col(g).sum() + count_[g] + log_prior_gene(g);
    for (int c = 0; c < C_; ++c) lp += log_prior_lambda(st_.lambda[c]);
    return lp;
  }

  void check_start() const {
    const auto fail = [](const std::string& block, const std::string& why) {
      throw std::invalid_argument("initial state has zero posterior density in block '" + block +
                                  "': " + why);
    };
    for (int g = 0; g < G_; ++g) {
      if (log_prior_coords(st_.u_off[g], st_.u_on[g], st_.s_on[g], st_.hyper.bound_a) == kNegInf ||
          !(st_.u_off[g] > 0.0) || !(st_.s_on[g] < st_.hyper.bound_a)) {
        fail("steady-state coordinates",
             "gene " + std::to_string(g) + " needs 0 < u_off < u_on < a and 0 < s_on < a");
      }
      if (log_prior_eta(st_.eta[g]) == kNegInf) fail("eta", "gene " + std::to_string(g));
      for (int k = 0; k < K_; ++k) {
        if (log_prior_switch(st_.u_sw(k, g), st_.u_off[g], st_.u_on[g]) == kNegInf) {
          fail("switching coordinate", "group " + std::to_string(k) + ", gene " + std::to_string(g));
        }
      }
      for (int r = 0; r < R_; ++r) {
        if (log_prior_phi(st_.phi(r, g)) == kNegInf) {
          fail("angle", "subgroup " + std::to_string(r) + ", gene " + std::to_string(g));
        }
      }
    }
    for (int c = 0; c < C_; ++c) {
      if (log_prior_lambda(st_.lambda[c]) == kNegInf) {
        fail("capture efficiency", "cell " + std::to_string(c));
      }
    }
    if (!std::isfinite(log_likelihood(st_, d_))) {
      fail("likelihood", "a zero mean meets a positive count");
    }
  }

  bool frozen(std::int64_t k) const { return k > adapt_end_; }

  void sweep(std::int64_t k) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(cfg_.threads)
#endif
    for (int g = 0; g < G_; ++g) update_gene(k, g);

    if (cfg_.update_lambda) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(cfg_.threads)
#endif
      for (int c = 0; c < C_; ++c) update_lambda(k, c);
    }

    for (auto& a : eta_ad_) a.end_iteration(k, cfg_);
    for (auto& a : sw_ad_) a.end_iteration(k, cfg_);
    for (auto& a : phi_ad_) a.end_iteration(k, cfg_);
    for (auto& a : lambda_ad_) a.end_iteration(k, cfg_);
  }

  void update_gene(std::int64_t k, int g) {
    thread_local std::vector<double> col;
    thread_local std::vector<double> ps, pu, lps, lpu;
    col.resize(static_cast<std::size_t>(C_));
    ps.resize(static_cast<std::size_t>(R_));
    pu.resize(static_cast<std::size_t>(R_));
    lps.resize(static_cast<std::size_t>(R_));
    lpu.resize(static_cast<std::size_t>(R_));
    std::mt19937_64& rng = gene_rng_[static_cast<std::size_t>(g)];
    GeneCounters& gc = gene_counts_[static_cast<std::size_t>(g)];
    const bool fz = frozen(k);

    if (cfg_.update_block) {
      const double a = st_.hyper.bound_a;
      JointBlockAdapter& blk = blocks_[static_cast<std::size_t>(g)];
      const Eigen::Vector3d z = to_unconstrained(st_.u_off[g], st_.u_on[g], st_.s_on[g], a);
      const Eigen::Vector3d zp = blk.propose(z, rng);
      double nu_off, nu_on, ns_on;
      from_unconstrained(zp, a, nu_off, nu_on, ns_on);
      double log_ratio = kNegInf;
      const double new_prior = log_prior_coords(nu_off, nu_on, ns_on, a);
      const double new_jac = log_jacobian(nu_off, nu_on, ns_on, a);
      bool valid = new_prior > kNegInf && new_jac > kNegInf && std::isfinite(new_jac);
      for (int kk = 0; valid && kk < K_; ++kk) {
        const double u = st_.u_sw(kk, g);
        valid = u > nu_off && u < nu_on;
      }
      if (valid) {
        const AlmondCoords co{nu_off, nu_on, ns_on, a};
        for (int r = 0; r < R_; ++r) {
          const Position p = position(r, g, st_.u_sw(group_of_sub(r), g), co);
          ps[r] = p.s;
          pu[r] = p.u;
          lps[r] = safe_log(p.s);
          lpu[r] = safe_log(p.u);
        }
        const double eta = st_.eta[g];
        const double size = size_of(eta);
        double delta = 0.0;
        for (int c = 0; c < C_; ++c) {
          const int r = sub_of_cell(c);
          col[c] = entry(c, g, ps[r], pu[r], lps[r], lpu[r], st_.lambda[c], log_lambda_[c], eta, size);
          delta += col[c] - ll_(c, g);
        }
        const double width_old = std::log(st_.u_on[g] - st_.u_off[g]);
        const double width_new = std::log(nu_on - nu_off);
        log_ratio = delta + new_prior -
                    log_prior_coords(st_.u_off[g], st_.u_on[g], st_.s_on[g], a) +
                    static_cast<double>(K_) * (width_old - width_new) + new_jac -
                    log_jacobian(st_.u_off[g], st_.u_on[g], st_.s_on[g], a);
      }
      const bool acc = metropolis_accept(log_ratio, rng);
      if (acc) {
        st_.u_off[g] = nu_off;
        st_.u_on[g] = nu_on;
        st_.s_on[g] = ns_on;
        for (int r = 0; r < R_; ++r) {
          pos_s_(r, g) = ps[r];
          pos_u_(r, g) = pu[r];
          lpos_s_(r, g) = lps[r];
          lpos_u_(r, g) = lpu[r];
        }
        for (int c = 0; c < C_; ++c) ll_(c, g) = col[c];
      }
      count(gc.block, gc.block_f, fz, acc);
      if (cfg_.adapt) blk.update(k, acc ? zp : z, accept_probability(log_ratio), cfg_);
    }

    if (cfg_.update_eta) {
      UnivariateAdapter& ad = eta_ad_[static_cast<std::size_t>(g)];
      const double eta = st_.eta[g];
      const double ep = eta + std::exp(ad.log_sd) * std_normal(rng);
      double log_ratio = kNegInf;
      double new_count = 0.0;
      if (ep >= 0.0 && std::isfinite(ep)) {
        const double size = size_of(ep);
        double delta = 0.0;
        for (int c = 0; c < C_; ++c) {
          const int r = sub_of_cell(c);
          col[c] = entry(c, g, pos_s_(r, g), pos_u_(r, g), lpos_s_(r, g), lpos_u_(r, g),
                         st_.lambda[c], log_lambda_[c], ep, size);
          delta += col[c] - ll_(c, g);
        }
        new_count = gene_count_term(g, ep);
        log_ratio = delta + (new_count - count_[g]) + log_prior_eta(ep) - log_prior_eta(eta);
      }
      const bool acc = metropolis_accept(log_ratio, rng);
      if (acc) {
        st_.eta[g] = ep;
        count_[g] = new_count;
        for (int c = 0; c < C_; ++c) ll_(c, g) = col[c];
      }
      ad.record(acc);
      count(gc.eta, gc.eta_f, fz, acc);
    }

    const double eta = st_.eta[g];
    const double size = size_of(eta);
    const AlmondCoords co = st_.coords(g);

    if (cfg_.update_switch) {
      for (int k2 = 0; k2 < K_; ++k2) {
        UnivariateAdapter& ad = sw_ad_[idx_sw(k2, g)];
        const double up = st_.u_sw(k2, g) + std::exp(ad.log_sd) * std_normal(rng);
        const auto& subs = subs_of_group_[static_cast<std::size_t>(k2)];
        const auto& cells = cells_of_group_[static_cast<std::size_t>(k2)];
        double log_ratio = kNegInf;
        if (up > co.u_off && up < co.u_on) {
          for (int r : subs) {
            const Position p = position(r, g, up, co);
            ps[r] = p.s;
            pu[r] = p.u;
            lps[r] = safe_log(p.s);
            lpu[r] = safe_log(p.u);
          }
          double delta = 0.0;
          for (int c : cells) {
            const int r = sub_of_cell(c);
            col[c] = entry(c, g, ps[r], pu[r], lps[r], lpu[r], st_.lambda[c], log_lambda_[c], eta, size);
            delta += col[c] - ll_(c, g);
          }
          log_ratio = delta;
        }
        const bool acc = metropolis_accept(log_ratio, rng);
        if (acc) {
          st_.u_sw(k2, g) = up;
          for (int r : subs) {
            pos_s_(r, g) = ps[r];
            pos_u_(r, g) = pu[r];
            lpos_s_(r, g) = lps[r];
            lpos_u_(r, g) = lpu[r];
          }
          for (int c : cells) ll_(c, g) = col[c];
        }
        ad.record(acc);
        count(gc.u_sw, gc.u_sw_f, fz, acc);
      }
    }

    if (cfg_.update_phi) {
      for (int r = 0; r < R_; ++r) {
        UnivariateAdapter& ad = phi_ad_[idx_phi(r, g)];
        double pp = st_.phi(r, g) + std::exp(ad.log_sd) * std_normal(rng);
        pp -= kTwoPi * std::floor(pp / kTwoPi);
        if (pp >= kTwoPi) pp = 0.0;
        const auto& cells = cells_of_sub_[static_cast<std::size_t>(r)];
        const Position p = phi_to_position({pp, st_.hyper.sector_p}, st_.u_sw(group_of_sub(r), g),
                                           co, st_.hyper.beta);
        const double nls = safe_log(p.s);
        const double nlu = safe_log(p.u);
        double delta = 0.0;
        for (int c : cells) {
          col[c] = entry(c, g, p.s, p.u, nls, nlu, st_.lambda[c], log_lambda_[c], eta, size);
          delta += col[c] - ll_(c, g);
        }
        const bool acc = metropolis_accept(delta, rng);
        if (acc) {
          st_.phi(r, g) = pp;
          pos_s_(r, g) = p.s;
          pos_u_(r, g) = p.u;
          lpos_s_(r, g) = nls;
          lpos_u_(r, g) = nlu;
          for (int c : cells) ll_(c, g) = col[c];
        }
        ad.record(acc);
        count(gc.phi, gc.phi_f, fz, acc);
      }
    }
  }

  void update_lambda(std::int64_t k, int c) {
    thread_local std::vector<double> row;
    row.resize(static_cast<std::size_t>(G_));
    std::mt19937_64& rng = cell_rng_[static_cast<std::size_t>(c)];
    UnivariateAdapter& ad = lambda_ad_[static_cast<std::size_t>(c)];
    const double lp = st_.lambda[c] + std::exp(ad.log_sd) * std_normal(rng);
    double log_ratio = kNegInf;
    double new_log = 0.0;
    if (lp > 0.0 && lp <= 1.0) {
      new_log = std::log(lp);
      const int r = sub_of_cell(c);
      double delta = 0.0;
      for (int g = 0; g < G_; ++g) {
        const double eta = st_.eta[g];
        row[g] = entry(c, g, pos_s_(r, g), pos_u_(r, g), lpos_s_(r, g), lpos_u_(r, g), lp, new_log,
                       eta, size_of(eta));
        delta += row[g] - ll_(c, g);
      }
      log_ratio = delta;
    }
    const bool acc = metropolis_accept(log_ratio, rng);
    if (acc) {
      st_.lambda[c] = lp;
      log_lambda_[c] = new_log;
      for (int g = 0; g < G_; ++g) ll_(c, g) = row[g];
    }
    ad.record(acc);
    CellCounters& cc = cell_counts_[static_cast<std::size_t>(c)];
    count(cc.lambda, cc.lambda_f, frozen(k), acc);
  }

  void retain(std::int64_t k) {
    Eigen::VectorXd row(static_cast<Eigen::Index>(C_) * G_);
    std::vector<double> table;
    for (int g = 0; g < G_; ++g) {
      const auto& vals = values_[static_cast<std::size_t>(g)];
      table.resize(vals.size());
      for (std::size_t i = 0; i < vals.size(); ++i) {
        table[i] = count_term(vals[i], st_.eta[g]) - std::lgamma(static_cast<double>(vals[i]) + 1.0);
      }
      for (int c = 0; c < C_; ++c) {
        row[static_cast<Eigen::Index>(g) * C_ + c] =
            ll_(c, g) + table[static_cast<std::size_t>(vidx_s_(c, g))] +
            table[static_cast<std::size_t>(vidx_u_(c, g))];
      }
    }
    out_.pointwise.add(row);
    if (cfg_.store_pointwise) {
      if (out_.pointwise_matrix.rows() == 0) {
        out_.pointwise_matrix.resize(0, row.size());
      }
      const Eigen::Index n = out_.pointwise_matrix.rows();
      out_.pointwise_matrix.conservativeResize(n + 1, Eigen::NoChange);
      out_.pointwise_matrix.row(n) = row.transpose();
    }
    out_.log_posterior.push_back(current_log_posterior());
    out_.draws.push_back(rescale_capture(st_));
    out_.iteration.push_back(k);
  }

  const Dataset& d_;
  ChainConfig cfg_;
  int C_ = 0, G_ = 0, K_ = 0, R_ = 0;
  std::int64_t adapt_end_ = 0;
  std::int64_t k_done_ = 0;
  std::vector<std::vector<int>> cells_of_sub_, cells_of_group_, subs_of_group_;

  std::vector<std::vector<std::int32_t>> values_;
  std::vector<std::vector<std::int64_t>> mult_;
  Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic> vidx_s_, vidx_u_;
  double log_factorial_ = 0.0;

  ModelState st_;
  Eigen::MatrixXd pos_s_, pos_u_, lpos_s_, lpos_u_;
  Eigen::VectorXd log_lambda_;
  Eigen::MatrixXd ll_;
  Eigen::VectorXd count_;

  std::vector<std::mt19937_64> gene_rng_, cell_rng_;
  std::vector<JointBlockAdapter> blocks_;
  std::vector<UnivariateAdapter> eta_ad_, sw_ad_, phi_ad_, lambda_ad_;
  std::vector<GeneCounters> gene_counts_;
  std::vector<CellCounters> cell_counts_;

  PosteriorDraws out_;
};

}  // namespace

std::int64_t ChainConfig::resolved_adapt_end() const {
  if (adapt_end >= 0) return adapt_end;
  return static_cast<std::int64_t>(std::floor(0.9 * static_cast<double>(n_burnin)));
}

std::int64_t ChainConfig::expected_draws() const { return (n_iter - n_burnin) / thin; }

void ChainConfig::validate() const {
  if (n_iter < 1) throw std::invalid_argument("n_iter must be >= 1");
  if (n_burnin < 0 || n_burnin >= n_iter) {
    throw std::invalid_argument("n_burnin must satisfy 0 <= n_burnin < n_iter");
  }
  if (thin < 1) throw std::invalid_argument("thin must be >= 1");
  if (!(target_accept > 0.0 && target_accept < 1.0)) {
    throw std::invalid_argument("target_accept must lie in (0, 1)");
  }
  if (adapt_start < 1) throw std::invalid_argument("adapt_start must be >= 1");
  if (resolved_adapt_end() > n_burnin) throw std::invalid_argument("adapt_end must be <= n_burnin");
  if (!(gamma_c1 > 0.0) || !(gamma_c2 >= 0.0)) {
    throw std::invalid_argument("adaptation constants must be positive");
  }
  if (univariate_adapt_interval < 1) {
    throw std::invalid_argument("univariate_adapt_interval must be >= 1");
  }
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
}

JointBlockAdapter::JointBlockAdapter(const Eigen::Vector3d& start, double initial_variance)
    : mean(start), cov(Eigen::Matrix3d::Identity() * initial_variance) {
  refresh();
}

Eigen::Matrix3d JointBlockAdapter::proposal_covariance() const {
  return std::exp(log_scale) * cov + kCovJitter * Eigen::Matrix3d::Identity();
}

void JointBlockAdapter::refresh() {
  Eigen::LLT<Eigen::Matrix3d> llt(proposal_covariance());
  if (llt.info() == Eigen::Success) {
    chol_ = llt.matrixL();
  } else {
    // Covariance lost positive definiteness through rounding; fall back to its diagonal.
    chol_ = (std::exp(log_scale) * cov.diagonal().cwiseAbs().array() + kCovJitter)
                .sqrt()
                .matrix()
                .asDiagonal();
  }
}

Eigen::Vector3d JointBlockAdapter::propose(const Eigen::Vector3d& x, std::mt19937_64& rng) const {
  Eigen::Vector3d e;
  for (int i = 0; i < 3; ++i) e[i] = std_normal(rng);
  return x + chol_ * e;
}

void JointBlockAdapter::update(std::int64_t k, const Eigen::Vector3d& x, double accept_prob,
                               const ChainConfig& cfg) {
  if (k < cfg.adapt_start || k > cfg.resolved_adapt_end()) return;
  const double step = adaptation_step(k, cfg.gamma_c1, cfg.gamma_c2);
  log_scale += step * (accept_prob - cfg.target_accept);
  const Eigen::Vector3d diff = x - mean;
  mean += step * diff;
  cov += step * (diff * diff.transpose() - cov);
  refresh();
}

double adapt_log_sd(double log_sd, double window_accept_rate, std::int64_t k,
                    const ChainConfig& cfg) {
  return log_sd +
         adaptation_step(k, cfg.gamma_c1, cfg.gamma_c2) * (window_accept_rate - cfg.target_accept);
}

void UnivariateAdapter::end_iteration(std::int64_t k, const ChainConfig& cfg) {
  if (k % cfg.univariate_adapt_interval != 0) return;
  if (cfg.adapt && k >= cfg.adapt_start && k <= cfg.resolved_adapt_end()) {
    const double rate = static_cast<double>(window_accepts) /
                        static_cast<double>(cfg.univariate_adapt_interval);
    log_sd = adapt_log_sd(log_sd, rate, k, cfg);
  }
  window_accepts = 0;
}

ModelState initial_state(const Dataset& data, const Hyperparameters& hyper) {
  data.validate();
  const int C = data.cells();
  const int G = data.genes();
  ModelState st = ModelState::zeros(G, data.n_groups, data.n_subgroups, C, hyper);
  const double a = hyper.bound_a;
  Eigen::VectorXd total(C);
  for (int c = 0; c < C; ++c) {
    total[c] = static_cast<double>(data.spliced.row(c).cast<std::int64_t>().sum() +
                                   data.unspliced.row(c).cast<std::int64_t>().sum());
  }
  const double top = total.maxCoeff();
  for (int c = 0; c < C; ++c) {
    st.lambda[c] = top > 0.0 ? std::clamp(total[c] / top, 1e-3, 0.999) : 0.5;
  }
  std::vector<double> us(static_cast<std::size_t>(C)), ss(static_cast<std::size_t>(C));
  for (int g = 0; g < G; ++g) {
    for (int c = 0; c < C; ++c) {
      us[static_cast<std::size_t>(c)] = data.unspliced(c, g) / st.lambda[c];
      ss[static_cast<std::size_t>(c)] = data.spliced(c, g) / st.lambda[c];
    }
    const double upper = 0.99 * a;
    st.u_on[g] = std::clamp(quantile(us, 0.99), std::min(0.1, upper / 2), upper);
    st.u_off[g] = std::clamp(quantile(us, 0.05), 0.01 * st.u_on[g], 0.5 * st.u_on[g]);
    st.s_on[g] = std::clamp(quantile(ss, 0.99), std::min(0.1, upper / 2), upper);
    st.eta[g] = 0.5;
    for (int k = 0; k < data.n_groups; ++k) st.u_sw(k, g) = 0.5 * (st.u_off[g] + st.u_on[g]);
    const double mid_on = std::min(std::numbers::pi / 2.0, branch_arc(hyper.sector_p) / 2.0);
    for (int r = 0; r < data.n_subgroups; ++r) st.phi(r, g) = mid_on;
  }
  return st;
}

PosteriorDraws run_chain(const Dataset& data, const ChainConfig& cfg,
                         const std::optional<ModelState>& init, const ProgressFn& progress) {
  Chain chain(data, cfg);
  chain.start(init ? *init : initial_state(data, Hyperparameters{default_bound(data)}));
  chain.run(progress);
  return chain.finish();
}

PosteriorDraws resume_chain(const Dataset& data, const std::string& checkpoint_path,
                            std::int64_t stop_after, const ProgressFn& progress) {
  std::ifstream is(checkpoint_path, std::ios::binary);
  ChainConfig cfg = Chain::read_config(checkpoint_path, is);
  cfg.stop_after = stop_after;
  Chain chain(data, cfg);
  chain.load_rest(is);
  chain.run(progress);
  return chain.finish();
}

ScalarChainResult run_scalar_chain(const std::function<double(double)>& log_density, double x0,
                                   double initial_log_sd, const ChainConfig& cfg) {
  cfg.validate();
  ScalarChainResult out;
  std::mt19937_64 rng = make_stream(cfg.seed, kGeneStreamTag, 0);
  UnivariateAdapter ad{initial_log_sd, 0};
  double x = x0;
  double lx = log_density(x);
  if (!(lx > kNegInf)) throw std::invalid_argument("scalar chain starts at zero density");
  const std::int64_t adapt_end = cfg.resolved_adapt_end();
  out.samples.reserve(static_cast<std::size_t>(cfg.n_iter));
  out.log_sd_trace.reserve(static_cast<std::size_t>(cfg.n_iter));
  for (std::int64_t k = 1; k <= cfg.n_iter; ++k) {
    const double y = x + std::exp(ad.log_sd) * std_normal(rng);
    const double ly = log_density(y);
    const bool acc = metropolis_accept(ly - lx, rng);
    if (acc) {
      x = y;
      lx = ly;
    }
    ad.record(acc);
    count(out.overall, out.frozen, k > adapt_end, acc);
    ad.end_iteration(k, cfg);
    out.samples.push_back(x);
    out.log_sd_trace.push_back(ad.log_sd);
  }
  return out;
}

}  // namespace velokin
