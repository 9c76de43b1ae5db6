#include "velokin/kinetics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace velokin {

void RateParams::validate() const {
  if (!std::isfinite(alpha_off) || !std::isfinite(alpha_on) || !std::isfinite(beta) ||
      !std::isfinite(gamma)) {
    throw std::invalid_argument("rate parameters must be finite");
  }
  if (alpha_off < 0.0) throw std::invalid_argument("alpha_off must be nonnegative");
  if (!(alpha_on > alpha_off)) throw std::invalid_argument("alpha_on must exceed alpha_off");
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
}

double exp_difference_quotient(double beta, double gamma, double t) {
  if (t == kInfinity) return 0.0;
  const double gap = gamma - beta;
  if (rates_near_degenerate(beta, gamma)) {
    // Equal-rates limit -t exp(-beta t), carried to second order in the gap so
    // that the switch-over point is seamless.
    const double dt = gap * t;
    return -t * std::exp(-beta * t) * (1.0 - dt / 2.0 + dt * dt / 6.0);
  }
  if (std::abs(gap * t) > 1.0) {
    return (std::exp(-gamma * t) - std::exp(-beta * t)) / gap;
  }
  return std::exp(-beta * t) * std::expm1(-gap * t) / gap;
}

double power_difference_quotient(double beta, double gamma, double x) {
  if (x <= 0.0) return 0.0;
  const double gap = gamma - beta;
  const double log_x = std::log(x);
  const double z = gap * log_x / beta;
  if (rates_near_degenerate(beta, gamma)) {
    return x * (log_x / beta) * (1.0 + z / 2.0 + z * z / 6.0);
  }
  if (std::abs(z) > 1.0) return (std::pow(x, gamma / beta) - x) / gap;
  return x * std::expm1(z) / gap;
}

namespace {

void check_time(double value, const char* name) {
  if (!std::isfinite(value)) {
    throw std::invalid_argument(std::string(name) + " must be finite");
  }
}

void check_omega(double omega) {
  if (std::isnan(omega) || !(omega > 0.0)) {
    throw std::invalid_argument("omega must be positive (or infinite)");
  }
}

Position on_branch(double elapsed, const RateParams& th) {
  const double u_off = th.alpha_off / th.beta;
  const double u_on = th.alpha_on / th.beta;
  const double s_off = th.alpha_off / th.gamma;
  const double s_on = th.alpha_on / th.gamma;
  const double rise_u = -std::expm1(-th.beta * elapsed);
  const double rise_s = -std::expm1(-th.gamma * elapsed);
  Position p;
  p.u = u_off + (u_on - u_off) * rise_u;
  p.s = s_off + (s_on - s_off) * rise_s +
        (th.alpha_on - th.alpha_off) * exp_difference_quotient(th.beta, th.gamma, elapsed);
  return p;
}

Position off_branch(double since_switch, Position at_switch, const RateParams& th) {
  const double u_off = th.alpha_off / th.beta;
  const double s_off = th.alpha_off / th.gamma;
  Position p;
  p.u = u_off + (at_switch.u - u_off) * std::exp(-th.beta * since_switch);
  p.s = s_off + (at_switch.s - s_off) * std::exp(-th.gamma * since_switch) +
        (th.alpha_off - th.beta * at_switch.u) *
            exp_difference_quotient(th.beta, th.gamma, since_switch);
  return p;
}

}  // namespace

Position solve_elapsed(double elapsed, double omega, const RateParams& theta) {
  theta.validate();
  check_omega(omega);
  if (std::isnan(elapsed)) throw std::invalid_argument("elapsed time must not be NaN");
  if (elapsed < 0.0) return steady_states(theta).off;
  if (elapsed <= omega) return on_branch(elapsed, theta);
  return off_branch(elapsed - omega, on_branch(omega, theta), theta);
}

Position solve(double t, double t0_on, double omega, const RateParams& theta) {
  check_time(t, "t");
  check_time(t0_on, "t0_on");
  return solve_elapsed(t - t0_on, omega, theta);
}

SteadyStates steady_states(const RateParams& theta) {
  theta.validate();
  return {{theta.alpha_off / theta.gamma, theta.alpha_off / theta.beta},
          {theta.alpha_on / theta.gamma, theta.alpha_on / theta.beta}};
}

Position switching_point(double omega, double t0_on, const RateParams& theta) {
  check_time(t0_on, "t0_on");
  theta.validate();
  check_omega(omega);
  // Evaluated on the elapsed-time scale so the result is exactly shift-free.
  return on_branch(omega, theta);
}

}  // namespace velokin
