#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "velokin/model.hpp"

using namespace velokin;

namespace {

Dataset small_dataset(std::mt19937_64& rng, int cells, int genes, std::vector<int> groups,
                      std::vector<int> subgroups) {
  std::poisson_distribution<int> pois(6.0);
  CountMatrix s(cells, genes);
  CountMatrix u(cells, genes);
  for (int g = 0; g < genes; ++g) {
    for (int c = 0; c < cells; ++c) {
      s(c, g) = pois(rng);
      u(c, g) = pois(rng);
    }
  }
  return Dataset::from_labels(s, u, std::move(groups), std::move(subgroups));
}

ModelState random_state(std::mt19937_64& rng, const Dataset& d) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ModelState st = ModelState::zeros(d.genes(), d.n_groups, d.n_subgroups, d.cells(), {});
  for (int g = 0; g < d.genes(); ++g) {
    st.u_off[g] = 3.0 * unit(rng);
    st.u_on[g] = st.u_off[g] + 1.0 + 10.0 * unit(rng);
    st.s_on[g] = 1.0 + 20.0 * unit(rng);
    st.eta[g] = unit(rng);
    for (int k = 0; k < d.n_groups; ++k) {
      st.u_sw(k, g) = st.u_off[g] + (0.05 + 0.9 * unit(rng)) * (st.u_on[g] - st.u_off[g]);
    }
    for (int r = 0; r < d.n_subgroups; ++r) st.phi(r, g) = kTwoPi * unit(rng);
  }
  for (int c = 0; c < d.cells(); ++c) st.lambda[c] = 0.2 + 0.8 * unit(rng);
  return st;
}

}  // namespace

TEST_CASE("nb_logpmf agrees with the product-form oracle") {
  const std::vector<double> mus{0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0};
  for (double eta : {0.0, 1e-6, 0.5, 2.0}) {
    for (double mu : mus) {
      for (int y = 0; y <= 50; ++y) {
        const double ref = oracle::nb_logpmf_direct(y, mu, eta);
        CHECK(std::abs(nb_logpmf(y, mu, eta) - ref) <= 1e-12 * std::max(1.0, std::abs(ref)));
      }
    }
  }
  CHECK(nb_logpmf(3, 2.0, 0.5) == doctest::Approx(oracle::nb_logpmf_direct(3, 2.0, 0.5)).epsilon(1e-12));
}

TEST_CASE("nb_logpmf Poisson limit and degenerate mean") {
  CHECK(nb_logpmf(0, 1.0, 0.0) == doctest::Approx(-1.0).epsilon(1e-15));
  for (double mu : {0.1, 3.0, 40.0}) {
    for (int y = 0; y <= 60; y += 3) {
      const double pois = y * std::log(mu) - mu - std::lgamma(y + 1.0);
      CHECK(std::abs(nb_logpmf(y, mu, 1e-12) - pois) < 1e-9);
    }
  }
  CHECK(nb_logpmf(0, 0.0, 0.5) == 0.0);
  CHECK(nb_logpmf(2, 0.0, 0.5) == -kInfinity);
  CHECK_THROWS_AS(nb_logpmf(-1, 1.0, 0.5), std::domain_error);
}

TEST_CASE("nb mean and count terms add up to the pmf") {
  for (double eta : {0.0, 0.3, 1.7}) {
    for (double mu : {0.4, 7.0}) {
      for (int y : {0, 1, 9, 30}) {
        CHECK(nb_mean_term(y, mu, eta) + nb_count_term(y, eta) ==
              doctest::Approx(nb_logpmf(y, mu, eta)).epsilon(1e-11));
      }
    }
  }
}

TEST_CASE("NB moments by Monte Carlo") {
  // gamma-Poisson mixture, shape 1/eta, scale mu*eta
  const double mu = 5.0;
  const double eta = 0.8;
  std::mt19937_64 rng(9);
  std::gamma_distribution<double> mix(1.0 / eta, mu * eta);
  const int n = 1000000;
  std::vector<double> ys(n);
  for (int i = 0; i < n; ++i) ys[i] = std::poisson_distribution<int>(mix(rng))(rng);
  const double var = mu + mu * mu * eta;
  CHECK(std::abs(oracle::mean_of(ys) - mu) < 3 * std::sqrt(var / n));
  // standard error of the sample variance from the empirical fourth moment
  double m4 = 0.0;
  for (double y : ys) m4 += std::pow(y - mu, 4);
  m4 /= n;
  const double se_var = std::sqrt((m4 - var * var) / n);
  CHECK(std::abs(oracle::variance_of(ys) - var) < 3 * se_var);

  // pmf sums to one
  double total = 0;
  for (int y = 0; y < 2000; ++y) total += std::exp(nb_logpmf(y, mu, eta));
  CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("likelihood equals the sum of individual terms") {
  std::mt19937_64 rng(10);
  const Dataset d = small_dataset(rng, 3, 2, {0, 0, 0}, {0, 1, 1});
  const ModelState st = random_state(rng, d);
  double ref = 0.0;
  for (int g = 0; g < 2; ++g) {
    for (int c = 0; c < 3; ++c) {
      const int r = d.subgroup_of_cell[c];
      const Position pos =
          phi_to_position({st.phi(r, g), st.hyper.sector_p}, st.u_sw(0, g), st.coords(g));
      ref += oracle::nb_logpmf_direct(d.spliced(c, g), st.lambda[c] * pos.s, st.eta[g]);
      ref += oracle::nb_logpmf_direct(d.unspliced(c, g), st.lambda[c] * pos.u, st.eta[g]);
    }
  }
  CHECK(log_likelihood(st, d) == doctest::Approx(ref).epsilon(1e-12));
  const Eigen::MatrixXd pw = pointwise_log_likelihood(st, d);
  CHECK(pw.rows() == 3);
  CHECK(pw.cols() == 2);
  CHECK(pw.rowwise().sum().sum() == doctest::Approx(log_likelihood(st, d)).epsilon(1e-14));
  CHECK(pw.colwise().sum().sum() == doctest::Approx(log_likelihood(st, d)).epsilon(1e-14));
}

TEST_CASE("sector position gives the lower steady-state likelihood") {
  CountMatrix s(1, 1), u(1, 1);
  s(0, 0) = 3;
  u(0, 0) = 1;
  const Dataset d = Dataset::from_labels(s, u, {0}, {0});
  ModelState st = ModelState::zeros(1, 1, 1, 1, {});
  st.u_off[0] = 2.0;
  st.u_on[0] = 8.0;
  st.s_on[0] = 16.0;
  st.eta[0] = 0.4;
  st.u_sw(0, 0) = 5.0;
  st.phi(0, 0) = kTwoPi - 0.1;
  st.lambda[0] = 1.0;
  CHECK(log_likelihood(st, d) == nb_logpmf(3, 4.0, 0.4) + nb_logpmf(1, 2.0, 0.4));
}

TEST_CASE("likelihood is invariant under capture rescaling") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    const Dataset d = small_dataset(rng, 12, 4, {0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1},
                                    {0, 0, 1, 1, 1, 0, 2, 2, 3, 3, 3, 2});
    const ModelState st = random_state(rng, d);
    const double a3 = rep == 0 ? 2.0 : 0.1 + 5.0 * unit(rng);
    ModelState moved = st;
    moved.lambda /= a3;
    moved.u_off *= a3;
    moved.u_on *= a3;
    moved.s_on *= a3;
    moved.u_sw *= a3;
    const double before = log_likelihood(st, d);
    CHECK(std::abs(log_likelihood(moved, d) - before) <= 1e-9 * std::abs(before));
    const ModelState res = rescale_capture(st);
    CHECK(res.lambda.mean() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(std::abs(log_likelihood(res, d) - before) <= 1e-9 * std::abs(before));
  }
}

TEST_CASE("rescale_capture examples") {
  ModelState st = ModelState::zeros(1, 1, 1, 3, {});
  st.u_off[0] = 1.0;
  st.u_on[0] = 4.0;
  st.s_on[0] = 3.0;
  st.u_sw(0, 0) = 2.0;
  st.lambda.setConstant(0.5);
  const ModelState out = rescale_capture(st);
  CHECK(out.lambda == Eigen::VectorXd::Ones(3));
  // lambda doubles, so the coordinates halve to keep every mean unchanged
  CHECK(out.u_off[0] == 0.5);
  CHECK(out.u_on[0] == 2.0);
  CHECK(out.s_on[0] == 1.5);
  CHECK(out.u_sw(0, 0) == 1.0);
  st.lambda << 0.5, 1.0, 1.5;
  CHECK(identical(rescale_capture(st), st));
}

TEST_CASE("prior components") {
  const double a = 10.0;
  CHECK(log_prior_coords(1.0, 11.0, 5.0, a) == -kInfinity);
  CHECK(log_prior_coords(3.0, 2.0, 5.0, a) == -kInfinity);
  CHECK(log_prior_coords(1.0, 4.0, 0.0, a) == -kInfinity);
  // Beta(2,1) part at s_on = a/2 is log(1/a); simplex part is log(2/a^2)
  CHECK(log_prior_coords(1.0, 4.0, a / 2, a) ==
        doctest::Approx(std::log(1.0 / a) + std::log(2.0 / (a * a))).epsilon(1e-15));
  CHECK(log_prior_coords(1.0, 4.0, 3.0, a) == log_prior_coords(2.0, 9.0, 3.0, a));
  CHECK(log_prior_lambda(1.5) == -kInfinity);
  CHECK(log_prior_lambda(0.0) == -kInfinity);
  CHECK(log_prior_lambda(1.0) == 0.0);
  CHECK(log_prior_switch(1.0, 1.0, 4.0) == -kInfinity);
  CHECK(log_prior_switch(4.0, 1.0, 4.0) == -kInfinity);
  CHECK(log_prior_switch(2.0, 1.0, 4.0) == doctest::Approx(-std::log(3.0)));
  CHECK(log_prior_eta(-0.1) == -kInfinity);
  CHECK(log_prior_eta(0.0) == 0.0);
  CHECK(log_prior_eta(100.0) == doctest::Approx(-1e4 / 2e8));
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> phi(0.0, kTwoPi);
  const double ref = log_prior_phi(0.0);
  for (int i = 0; i < 100; ++i) CHECK(log_prior_phi(phi(rng)) == ref);
  CHECK(log_prior_phi(kTwoPi) == ref);
  CHECK(log_prior_phi(-1e-9) == -kInfinity);
}

TEST_CASE("posterior is prior plus likelihood") {
  std::mt19937_64 rng(13);
  const Dataset d = small_dataset(rng, 4, 3, {0, 0, 0, 0}, {0, 0, 1, 1});
  ModelState st = random_state(rng, d);
  st.hyper.bound_a = default_bound(d);
  CHECK(std::isfinite(log_posterior(st, d)));
  CHECK(log_posterior(st, d) == log_prior(st) + log_likelihood(st, d));
  st.lambda[0] = 1.5;
  CHECK(log_posterior(st, d) == -kInfinity);
}

TEST_CASE("dataset invariants") {
  CountMatrix s = CountMatrix::Ones(3, 2);
  CountMatrix u = CountMatrix::Ones(3, 2);
  const Dataset d = Dataset::from_labels(s, u, {0, 1, 1}, {0, 1, 2});
  CHECK(d.group_of_subgroup == std::vector<int>{0, 1, 1});
  CHECK(d.cells_by_group()[1] == std::vector<int>{1, 2});

  auto kind_of = [](auto&& f) {
    try {
      f();
    } catch (const DatasetError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  CHECK(kind_of([&] { Dataset::from_labels(s, u, {0, 1, 1}, {0, 0, 1}); }) ==
        static_cast<int>(DatasetErrorKind::kSubgroupCrossesGroups));
  CHECK(kind_of([&] { Dataset::from_labels(s, CountMatrix::Ones(2, 2), {0, 1, 1}, {0, 1, 2}); }) ==
        static_cast<int>(DatasetErrorKind::kDimensionMismatch));
  CountMatrix neg = s;
  neg(0, 0) = -1;
  CHECK(kind_of([&] { Dataset::from_labels(neg, u, {0, 1, 1}, {0, 1, 2}); }) ==
        static_cast<int>(DatasetErrorKind::kNegativeCount));
  CHECK(kind_of([&] { Dataset::from_labels(s, u, {0, 2, 2}, {0, 1, 2}); }) ==
        static_cast<int>(DatasetErrorKind::kLabelOutOfRange));
}
