#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "coarsen/lattice.hpp"

namespace coarsen {

struct VanishEvent {
  Index index = kNone;
  double tau = 0.0;
  std::optional<Index> left, right;  // living neighbours just before removal
};

struct StepControl {
  double rel_tol = 1e-8;
  double abs_tol = 1e-12;  // in y = x^(beta+1)
  double dt_init = 1e-4;
  double dt_max = 1.0;
  double event_tol = 1e-10;
  double simultaneity_window = 1e-10;
  double y_floor = 1e-14;
  // Remove an isolated small particle ahead of its zero crossing once the
  // frozen-neighbour closed form is accurate to the tolerances above.
  bool terminal_lump = true;
  // Systems with more living particles than this use overlapping windows.
  std::size_t block_threshold = 256;
  std::size_t block_core = 32;
  std::size_t block_overlap = 8;

  void validate() const;
};

// Raised when the step size underflows or the windowed solver cannot converge.
struct NumericFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// dx/dt for every index; 0 at vanished indices.
std::vector<double> rhs(const ParticleSystem& sys);
// dy/dt with y = x^(beta+1); 0 at vanished indices.
std::vector<double> rhs_regularized(const ParticleSystem& sys);

// Optional additive forcing on dx_j/dt, keyed by particle index.
using Forcing = std::function<double(Index, double)>;

struct AdvanceStats {
  std::size_t steps = 0;
  std::size_t rejected = 0;
  std::size_t windows = 0;
  std::size_t sweeps = 0;
};

std::vector<VanishEvent> advance_to(ParticleSystem& sys, double t_end, const StepControl& ctrl,
                                    AdvanceStats* stats = nullptr);

// Integrates several Free-boundary systems on one shared step sequence so
// that differences between nearby systems carry correlated truncation error.
std::vector<std::vector<VanishEvent>> advance_joint(std::vector<ParticleSystem*> systems,
                                                    double t_end, const StepControl& ctrl,
                                                    const Forcing& forcing = {},
                                                    AdvanceStats* stats = nullptr);

// Fixed-step classical RK4 in y with geometric refinement ahead of each
// zero crossing. Intended as an independent oracle for small systems.
std::vector<VanishEvent> reference_advance(ParticleSystem& sys, double t_end, double dt);

struct HalfLifeViolation {
  Index index;
  double t1, t;
};

// Checks x_j(t) >= x_j(t1)/2 whenever
// t - t1 <= (1 - 2^-(beta+1)) x_j(t1)^(beta+1) / (2(beta+1)).
class HalfLifeMonitor {
 public:
  explicit HalfLifeMonitor(double beta, std::size_t window = 8);
  void observe(double t, const std::vector<double>& sizes);
  const std::vector<HalfLifeViolation>& violations() const { return violations_; }
  static double protected_time(double beta, double x1);

 private:
  struct Sample {
    double t;
    std::vector<double> x;
  };
  double beta_;
  std::size_t window_;
  std::vector<Sample> anchors_;
  std::vector<HalfLifeViolation> violations_;
};

std::vector<HalfLifeViolation> half_life_monitor(
    double beta, const std::vector<std::pair<double, std::vector<double>>>& samples,
    std::size_t window = 8);

// CSV: index,tau,left,right
void write_event_log(std::ostream& out, const std::vector<VanishEvent>& events);

}  // namespace coarsen
