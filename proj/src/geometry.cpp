#include "velokin/geometry.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace velokin {

void AlmondCoords::validate() const {
  if (!std::isfinite(u_off) || !std::isfinite(u_on) || !std::isfinite(s_on) ||
      !std::isfinite(bound)) {
    throw std::invalid_argument("almond coordinates must be finite");
  }
  if (!(u_off >= 0.0 && u_off < u_on)) {
    throw std::invalid_argument("almond coordinates require 0 <= u_off < u_on");
  }
  if (!(s_on > 0.0)) throw std::invalid_argument("almond coordinates require s_on > 0");
}

bool AlmondCoords::within_bound() const {
  return u_on <= bound && s_on <= bound && s_off() <= bound;
}

RateParams coords_to_rates(const AlmondCoords& c, double beta) {
  if (c.s_on == 0.0) throw std::invalid_argument("s_on must be nonzero");
  c.validate();
  RateParams theta;
  theta.beta = beta;
  theta.gamma = beta * c.u_on / c.s_on;
  theta.alpha_off = beta * c.u_off;
  theta.alpha_on = beta * c.u_on;
  theta.validate();
  return theta;
}

AlmondCoords rates_to_coords(const RateParams& theta, double bound) {
  theta.validate();
  return {theta.alpha_off / theta.beta, theta.alpha_on / theta.beta,
          theta.alpha_on / theta.gamma, bound};
}

namespace {

void check_switch(double u_sw, const AlmondCoords& c) {
  if (!(u_sw >= c.u_off && u_sw <= c.u_on)) {
    throw std::domain_error("switching u-coordinate outside [u_off, u_on]");
  }
}

void check_angle(const AngularPosition& ap) {
  if (!(ap.p > 0.0 && ap.p < kTwoPi)) {
    throw std::invalid_argument("sector amplitude must lie in (0, 2 pi)");
  }
  if (!(ap.phi >= 0.0 && ap.phi <= kTwoPi)) {
    throw std::invalid_argument("phi must lie in [0, 2 pi]");
  }
}

// s on the ON branch at relative distance x = (u_on - u) / (u_on - u_off).
double on_branch_s(double x, const AlmondCoords& c, double beta) {
  const double gamma = beta * c.u_on / c.s_on;
  const double s_off = c.s_off();
  return c.s_on + (s_off - c.s_on) * std::pow(x, gamma / beta) +
         beta * (c.u_on - c.u_off) * power_difference_quotient(beta, gamma, x);
}

// s on the OFF branch at relative distance y = (u - u_off) / (u_sw - u_off).
double off_branch_s(double y, Position sw, const AlmondCoords& c, double beta) {
  const double gamma = beta * c.u_on / c.s_on;
  const double s_off = c.s_off();
  return s_off + (sw.s - s_off) * std::pow(y, gamma / beta) +
         beta * (c.u_off - sw.u) * power_difference_quotient(beta, gamma, y);
}

}  // namespace

double switching_u_to_omega(double u_sw, const AlmondCoords& c, double beta) {
  c.validate();
  if (!(u_sw > c.u_off && u_sw < c.u_on)) {
    throw std::domain_error("switching u-coordinate must lie strictly inside (u_off, u_on)");
  }
  return -std::log((c.u_on - u_sw) / (c.u_on - c.u_off)) / beta;
}

double omega_to_switching_u(double omega, const AlmondCoords& c, double beta) {
  c.validate();
  if (std::isnan(omega) || omega < 0.0) throw std::invalid_argument("omega must be >= 0");
  return c.u_off + (c.u_on - c.u_off) * -std::expm1(-beta * omega);
}

Position switching_position(double u_sw, const AlmondCoords& c, double beta) {
  c.validate();
  check_switch(u_sw, c);
  const double x = (c.u_on - u_sw) / (c.u_on - c.u_off);
  return {on_branch_s(x, c, beta), u_sw};
}

Position phi_to_position(const AngularPosition& ap, double u_sw, const AlmondCoords& c,
                         double beta) {
  c.validate();
  check_switch(u_sw, c);
  check_angle(ap);
  const double arc = branch_arc(ap.p);
  if (ap.phi < arc) {
    const double frac = ap.phi / arc;
    const double rise = (u_sw - c.u_off) / (c.u_on - c.u_off);
    const double x = 1.0 - frac * rise;
    return {on_branch_s(x, c, beta), c.u_off + frac * (u_sw - c.u_off)};
  }
  if (ap.phi < 2.0 * arc) {
    const double y = 1.0 - (ap.phi - arc) / arc;
    const Position sw{on_branch_s((c.u_on - u_sw) / (c.u_on - c.u_off), c, beta), u_sw};
    return {off_branch_s(y, sw, c, beta), c.u_off + y * (u_sw - c.u_off)};
  }
  return {c.s_off(), c.u_off};
}

double position_to_time(const AngularPosition& ap, double u_sw, const AlmondCoords& c,
                        double beta) {
  c.validate();
  check_switch(u_sw, c);
  check_angle(ap);
  const double arc = branch_arc(ap.p);
  const double rise = (u_sw - c.u_off) / (c.u_on - c.u_off);
  if (ap.phi < arc) return -std::log1p(-(ap.phi / arc) * rise) / beta;
  if (ap.phi < 2.0 * arc) {
    const double omega = -std::log1p(-rise) / beta;
    const double y = 1.0 - (ap.phi - arc) / arc;
    return omega - std::log(y) / beta;
  }
  return kInfinity;
}

double time_to_phi(double elapsed, double p, double u_sw, const AlmondCoords& c, double beta) {
  c.validate();
  if (!(u_sw > c.u_off && u_sw < c.u_on)) {
    throw std::domain_error("switching u-coordinate must lie strictly inside (u_off, u_on)");
  }
  if (std::isnan(elapsed) || elapsed < 0.0) {
    throw std::invalid_argument("elapsed time must be >= 0");
  }
  const double arc = branch_arc(p);
  if (elapsed == kInfinity) return 2.0 * arc;
  const double omega = switching_u_to_omega(u_sw, c, beta);
  if (elapsed < omega) {
    const double rise = (u_sw - c.u_off) / (c.u_on - c.u_off);
    return arc * -std::expm1(-beta * elapsed) / rise;
  }
  return arc * (1.0 - std::exp(-beta * (elapsed - omega))) + arc;
}

double induced_time_logpdf(double t, double omega, double beta, double p) {
  if (!(p > 0.0 && p < kTwoPi)) throw std::invalid_argument("sector amplitude must lie in (0, 2 pi)");
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  if (std::isnan(omega) || !(omega > 0.0)) throw std::invalid_argument("omega must be positive");
  if (std::isnan(t)) throw std::invalid_argument("t must not be NaN");
  if (t < 0.0) return -kInfinity;
  if (t == kInfinity) return std::log(induced_time_atom(p));
  const double arc_mass = std::log(branch_arc(p) / kTwoPi);
  if (t < omega) {
    return arc_mass + std::log(beta) - beta * t - std::log(-std::expm1(-beta * omega));
  }
  return arc_mass + std::log(beta) - beta * (t - omega);
}

double induced_switch_time_logpdf(double omega, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  if (std::isnan(omega)) throw std::invalid_argument("omega must not be NaN");
  if (omega < 0.0) return -kInfinity;
  return std::log(beta) - beta * omega;
}

}  // namespace velokin
