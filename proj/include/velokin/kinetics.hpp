#pragma once

// Closed-form solution of the transcription / splicing / degradation ODE
//
//   du/dt = alpha(t) - beta u,   ds/dt = beta u - gamma s,
//
// with alpha(t) piecewise constant: alpha_off before the ON onset, alpha_on
// for a window of length omega, alpha_off again afterwards. The system starts
// at the lower steady state.

#include <limits>

namespace velokin {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Relative gap |gamma - beta| / beta below which the equal-rates formulas are used.
inline constexpr double kDegenerateRateGap = 1e-8;

struct RateParams {
  double alpha_off = 0.0;
  double alpha_on = 1.0;
  double beta = 1.0;
  double gamma = 1.0;

  /// Throws std::invalid_argument unless 0 <= alpha_off < alpha_on and beta, gamma > 0.
  void validate() const;
};

/// A point of the (s, u) phase plane.
struct Position {
  double s = 0.0;
  double u = 0.0;
};

struct SteadyStates {
  Position off;  ///< (alpha_off / gamma, alpha_off / beta)
  Position on;   ///< (alpha_on / gamma, alpha_on / beta)
};

/// Solution at absolute time t for an ON phase starting at t0_on and lasting
/// omega (omega may be kInfinity, meaning transcription never switches off).
Position solve(double t, double t0_on, double omega, const RateParams& theta);

/// Same solution parameterised by the elapsed time since the ON onset.
Position solve_elapsed(double elapsed, double omega, const RateParams& theta);

SteadyStates steady_states(const RateParams& theta);

/// Position at which transcription switches off; independent of t0_on.
Position switching_point(double omega, double t0_on, const RateParams& theta);

/// RNA velocity ds/dt = beta u - gamma s.
inline double velocity(Position pos, double beta, double gamma) {
  return beta * pos.u - gamma * pos.s;
}

/// (exp(-gamma t) - exp(-beta t)) / (gamma - beta), evaluated without
/// cancellation. Tends to -t exp(-beta t) as gamma -> beta.
double exp_difference_quotient(double beta, double gamma, double t);

/// (x^(gamma/beta) - x) / (gamma - beta) for x in [0, 1]; the same kernel
/// written in terms of x = exp(-beta t).
double power_difference_quotient(double beta, double gamma, double x);

inline bool rates_near_degenerate(double beta, double gamma) {
  const double gap = gamma - beta;
  return (gap < 0 ? -gap : gap) < beta * kDegenerateRateGap;
}

}  // namespace velokin
