#pragma once

// Working coordinates of the sampler. Rates are replaced by steady-state
// coordinates, the ON duration by the u-coordinate of the switching point,
// and the elapsed time by an angle phi in [0, 2 pi]:
//
//   [0, h)        ON branch, u rises linearly in phi from u_off to u_sw
//   [h, 2h)       OFF branch, u falls linearly in phi from u_sw to u_off
//   [2h, 2 pi]    sector pinned to the lower steady state
//
// where h = (2 pi - p) / 2 and p is the sector amplitude.

#include <numbers>

#include "velokin/kinetics.hpp"

namespace velokin {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Steady-state coordinates of one gene. bound is the upper limit a.
struct AlmondCoords {
  double u_off = 0.0;
  double u_on = 1.0;
  double s_on = 1.0;
  double bound = 1.0;

  /// s-coordinate of the lower steady state, u_off * s_on / u_on.
  double s_off() const { return u_off * s_on / u_on; }

  /// Throws std::invalid_argument unless 0 <= u_off < u_on and s_on > 0.
  /// The bound only restricts the prior support; see within_bound().
  void validate() const;

  bool within_bound() const;
};

struct AngularPosition {
  double phi = 0.0;
  double p = std::numbers::pi / 2.0;  ///< sector amplitude
};

/// Half-width h = (2 pi - p) / 2 of the ON and OFF arcs.
inline double branch_arc(double p) { return (kTwoPi - p) / 2.0; }

/// gamma = beta u_on / s_on, alpha_off = beta u_off, alpha_on = beta u_on.
RateParams coords_to_rates(const AlmondCoords& c, double beta = 1.0);

/// Inverse of coords_to_rates; bound is carried through unchanged.
AlmondCoords rates_to_coords(const RateParams& theta, double bound);

/// ON duration whose switching point has u-coordinate u_sw.
/// Requires u_off < u_sw < u_on; throws std::domain_error otherwise.
double switching_u_to_omega(double u_sw, const AlmondCoords& c, double beta = 1.0);

/// u-coordinate of the switching point after an ON phase of length omega.
double omega_to_switching_u(double omega, const AlmondCoords& c, double beta = 1.0);

/// Switching point (s^omega, u_sw) on the ON branch.
Position switching_position(double u_sw, const AlmondCoords& c, double beta = 1.0);

/// Maps an angle to the phase plane. Closed-form in u; s follows from the
/// kinetic solution rewritten as a power of the relative u-distance.
Position phi_to_position(const AngularPosition& ap, double u_sw, const AlmondCoords& c,
                         double beta = 1.0);

/// Elapsed time since ON onset that reproduces phi_to_position. Returns
/// kInfinity inside the steady-state sector.
double position_to_time(const AngularPosition& ap, double u_sw, const AlmondCoords& c,
                        double beta = 1.0);

/// Inverse of position_to_time: the angle that corresponds to a given
/// elapsed time (kInfinity maps to the start of the sector).
double time_to_phi(double elapsed, double p, double u_sw, const AlmondCoords& c,
                   double beta = 1.0);

/// Probability mass that phi ~ U(0, 2 pi) puts on the steady-state sector.
inline double induced_time_atom(double p) { return p / kTwoPi; }

/// Log-density of the elapsed time induced by phi ~ U(0, 2 pi), given the ON
/// duration omega. For finite t this is the density of the continuous part (a
/// truncated exponential on [0, omega) and a translated exponential on
/// [omega, inf), each of mass (2 pi - p) / (4 pi)); for t = kInfinity it is the
/// log of the steady-state atom. Negative t gives -inf.
double induced_time_logpdf(double t, double omega, double beta, double p);

/// Log-density of omega induced by u_sw ~ U(u_off, u_on): Exponential(beta).
double induced_switch_time_logpdf(double omega, double beta);

}  // namespace velokin
