#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "coarsen/analysis.hpp"
#include "coarsen/dynamics.hpp"
#include "coarsen/lattice.hpp"

namespace coarsen {

struct ScenarioError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Sizes (u + 1/2) / 2^53 with u the top 53 bits of mt19937_64: strictly in (0,1).
std::vector<double> init_uniform_random(std::size_t n, std::uint64_t seed);

// Length 2*halfwidth+1, centre X0, all others 1.
std::vector<double> init_spike(double X0, std::size_t halfwidth);

// Advances `sys` through the given output times, calling `sample` after each.
// Returns the concatenated event log.
std::vector<VanishEvent> run_sampled(ParticleSystem& sys, const std::vector<double>& times,
                                     const StepControl& ctrl,
                                     const std::function<void(const ParticleSystem&)>& sample);

// Geometric output times t0, t0*r, ... up to and including t_end.
std::vector<double> geometric_times(double t0, double t_end, double ratio);

enum class Phase { Concentration, Spreading };
const char* phase_name(Phase p);

struct SpikeOptions {
  std::size_t halfwidth = 0;  // 0 picks 4*rounds + 8
  std::size_t rounds = 8;
  double t_budget = 1e6;
  StepControl ctrl;
};

struct PhaseOutcome {
  double beta = 0.0, X0 = 0.0;
  Phase verdict = Phase::Spreading;
  std::vector<Index> vanish_order;  // offsets |j - centre| of the first vanishings
  bool sequential = false;
  double center_gain_fraction = 0.0;  // centre growth / initial mass of vanished particles
  double time = 0.0;
};

// Concentration iff the first 2*rounds vanishings are the centre's neighbours
// taken outward pair by pair and the centre gained at least 3/4 of their mass.
PhaseOutcome classify_spike(double beta, double X0, const SpikeOptions& opt = {});

// Geometric bisection on X0 until X_hi/X_lo - 1 <= rel_tol; returns the
// geometric midpoint. Throws if the bracket does not straddle the boundary.
double phase_boundary(double beta, double X_lo, double X_hi, double rel_tol,
                      const SpikeOptions& opt = {});

// Scans X0 = X_lo * ratio^k up to X_hi for the first Concentration verdict,
// then bisects between it and the previous scan point. Empty when no scan
// point concentrates; X_lo itself concentrating yields X_lo.
std::optional<double> find_phase_boundary(double beta, double X_lo, double X_hi, double rel_tol,
                                          const SpikeOptions& opt = {}, double ratio = 1.25);

struct LadderSpec {
  std::size_t N = 8;
  std::size_t N_star = 1;
  double gamma = 0.25;
  double beta = 0.8;
  std::vector<double> R1, R2;  // indexed by rung j = 0..N-1
  double eps = 0.0;

  double R(std::size_t j) const;
  void validate() const;
};

inline constexpr double kBetaStar = 0.70951129135145477;  // (ln4 - ln3) / (ln3 - ln2)

// R1 = R2 = gamma^j for every rung.
LadderSpec default_ladder(std::size_t N, double gamma, double beta, std::size_t N_star = 1);

// Indices -3N..3N stored at offset 3N: left half ones, right half the
// repeating (1, R1[j], R2[j]) pattern, eps added at 3N.
std::vector<double> init_ladder(const LadderSpec& spec);

// Index of lattice site 3j+p in the stored array.
inline std::size_t ladder_site(const LadderSpec& spec, std::size_t j, std::size_t p) {
  return 3 * spec.N + 3 * j + p;
}

struct LadderRun {
  std::vector<double> tau1, tau2;  // per rung; NaN when not observed
  std::vector<VanishEvent> events;
};

// Unperturbed vanishing times of the small particles of every rung.
LadderRun run_ladder(const LadderSpec& spec, const StepControl& ctrl);

struct TuneOptions {
  double tol_tau = 1e-9;  // on max_j |tau2 - tau1|
  std::size_t max_sweeps = 12;
  std::size_t max_bisect = 200;
  bool strict = true;  // throw when tol_tau is not met
  StepControl ctrl;
};

struct TuneReport {
  LadderSpec spec;
  std::vector<double> dtau;  // tau2 - tau1 per rung after tuning
  double max_dtau = 0.0;
  std::size_t worst_rung = 0;
  std::size_t sweeps = 0;
  bool converged = false;
};

// Adjusts R2[j], j in [N_star, N-1], so the two small particles of each rung
// vanish together. Rungs are swept right to left; the best sweep is returned.
// Sweeps stop when tol_tau is met or two sweeps in a row fail to halve the
// worst gap (rounding noise amplified along the ladder bounds what is reachable).
TuneReport tune_simultaneous_vanishing(const LadderSpec& spec, const TuneOptions& opt);

struct AmplificationResult {
  std::vector<std::size_t> rungs;
  std::vector<double> deltas;  // |x_3j(T_j) - xbar_3j(T_j)|
  std::vector<double> T;
  std::vector<double> d0;      // signed x_3j - xbar_3j at T_j
  std::vector<double> d3_next;  // signed x_3(j+1) - xbar_3(j+1) at T_j
  std::vector<double> noise;   // change of delta over max(event_tol, |taubar1 - taubar2|) after T_j
  std::vector<std::size_t> usable;  // rungs with delta > 10 noise
  double fitted_exponent = 0.0;      // coefficient on log delta_j
  double fitted_R_coefficient = 0.0; // coefficient on log R_(j-1)
  double fitted_prefactor = 0.0;     // exp(intercept)
  double noise_floor = 0.0;  // max of noise
  std::vector<std::string> warnings;
};

// Runs the perturbed and unperturbed ladders on one shared step sequence.
// eps = 0 returns the zero deltas without a fit; otherwise fewer than 3
// usable rungs throw NumericFailure.
AmplificationResult amplification_experiment(const LadderSpec& spec, double eps,
                                             const StepControl& ctrl);

}  // namespace coarsen
