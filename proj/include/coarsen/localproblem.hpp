#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "coarsen/dynamics.hpp"
#include "coarsen/scenarios.hpp"

namespace coarsen {

struct LocalProblemError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Forcing term on dY_p/dt as a function of time.
using PairForcing = std::function<double(double)>;

// Two particles with free ends:
//   Y1' = -2 Y1^-b + Y2^-b + F1,  Y2' = -2 Y2^-b + Y1^-b + F2,
// the term of a vanished partner dropped.
struct PairSolution {
  double beta = 0.0;
  double A1 = 0.0, A2 = 0.0;
  double eta = 0.0;  // sup|F1| + sup|F2| as supplied by the caller
  double tau1 = 0.0, tau2 = 0.0;
  double event_tol = 0.0;
  std::vector<double> times, Y1, Y2;  // Y_p = 0 from tau_p on
};

// With empty `times` the trajectory is sampled uniformly plus geometrically
// towards each vanishing time.
PairSolution solve_pair(double beta, double A1, double A2, const PairForcing& F1,
                        const PairForcing& F2, double eta, const StepControl& ctrl,
                        std::vector<double> times = {});

// Bisects A2 in [A1/2, 3A1/2] on the sign of tau2 - tau1 down to the bracket
// limit; returns the solution for the final A2.
PairSolution tune_pair(double beta, double A1, const PairForcing& F1, const PairForcing& F2,
                       double eta, const StepControl& ctrl);

// sup_t |Y_p(t) - ((b+1)(tau - t))^(1/(b+1))| / (eta (tau - t)) over samples
// with tau - t in [lo, hi]; the plain sup of the residual when eta = 0.
// Throws unless |tau1 - tau2| <= max_dtau (negative: 10 event_tol).
// Unequal forcing leaves a floor of order ulp(A)^((b+1)/(3b+1)) on
// |tau1 - tau2| after tuning, so such pairs need a looser max_dtau.
double simultaneous_power_law_residual(const PairSolution& sol,
                                       std::optional<std::pair<double, double>> window = {},
                                       double max_dtau = -1.0);

struct PortraitResult {
  double beta = 0.0;
  double S_star = 0.0, B_star = 0.0;
  double A0 = 0.0, B0 = 0.0;  // coefficients of e^-s (1,1) and e^-ks (1,-1), k=(3b+1)/(b+1)
  double fit_residual = 0.0;  // max relative misfit of the two components on the window
  double s_lo = 0.0, s_hi = 0.0;
  double fixed_point_residual = 0.0;  // max_p |W_p - (b+1)^(1/(b+1))| at s_hi
  // Z = W / (b+1)^(1/(b+1)); first the special solution, then the one shifted by S_star.
  std::vector<std::array<double, 3>> trajectory;  // s, Z1, Z2
  std::vector<std::array<double, 3>> shifted;     // s, Z1, Z2
  std::vector<double> shifted_angle;  // angle of Z - (1,1) to the line (1,-1), per shifted sample
};

// Integrates Y1(-1) = (4(b+1))^(1/(b+1)), Y2(-1) = 0 backwards in t = -e^s
// for W_p = Y_p e^(-s/(b+1)) and fits the decay into the fixed point.
PortraitResult z_phase_portrait(double beta, double y_offset = 1e-30);

using Mat2 = std::array<std::array<double, 2>, 2>;

// Solution operator of the linearization about the simultaneous power law.
Mat2 fundamental_matrix(double beta, double t, double T, double tau_bar);

struct LinearizedCheck {
  double residual = 0.0;  // ||D - fit|| / ||D|| on the early part of the window
  double fitted_exponent = 0.0;  // slope of log|D1 - D2| against -log(tau - t)
  double tau_bar = 0.0, T = 0.0;
  std::vector<double> times, D1, D2, fit1, fit2;
  std::vector<double> residual_profile;  // |D - fit| / |D| per sample
};

// Compares D_p = x_(3(j-1)+p) - xbar_(3(j-1)+p) between T_j and the vanishing
// of rung j-1 with the least-squares combination of
//   (tau - t)(c1, c2),  (tau - T) rho^(b/(b+1)) (1, 1),  (tau - T) rho^(3b/(b+1)) (1, -1),
// rho = (tau - T)/(tau - t).
LinearizedCheck linearized_difference_check(const LadderSpec& spec, double eps, std::size_t j,
                                            const StepControl& ctrl);

// CSV: t,Y1,Y2
void write_pair_csv(std::ostream& out, const PairSolution& sol);
// CSV: s,Z1,Z2
void write_portrait_csv(std::ostream& out, const PortraitResult& res);

}  // namespace coarsen
