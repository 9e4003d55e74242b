#pragma once

// Adaptive Dormand-Prince 5(4) integration of a contiguous run of living
// particles in y = x^(beta+1). The run may be closed (Free/Periodic) or
// bordered by prescribed "ghost" trajectories recorded by another run.

#include <cstddef>
#include <limits>
#include <vector>

#include "coarsen/dynamics.hpp"

namespace coarsen::detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Piecewise cubic Hermite trajectory of one particle in y.
struct Track {
  Index id = kNone;
  std::vector<double> t, y, f;
  double end = kInf;  // time the particle left the run that recorded it
  double give_left = 0.0, give_right = 0.0;  // x handed to each side at `end`

  void push(double tt, double yy, double ff);
  double value(double s) const;
  double slope(double s) const;
};

struct Removal {
  Index id = kNone;
  double t_cut = 0.0;  // run time at which it left the state
  double tau = 0.0;
  Index left = kNone, right = kNone;
  double give_left = 0.0, give_right = 0.0;
};

enum class Edge { Free, Ghost };

struct ChainSetup {
  double beta = 1.0;
  StepControl ctrl;
  bool periodic = false;
  Edge left = Edge::Free, right = Edge::Free;
  std::vector<Index> ids;
  std::vector<int> segment;  // coupling only inside equal segments; empty = one segment
  std::vector<double> y;
  std::vector<const Track*> left_ghosts, right_ghosts;  // nearest first
  Forcing forcing;
  std::vector<Index> record;  // ids whose trajectories are kept
  double h_init = 0.0;
};

class Chain {
 public:
  Chain(ChainSetup setup, double t0);

  void run(double t_stop);

  double time() const { return t_; }
  double step_hint() const { return h_; }
  const std::vector<Index>& ids() const { return ids_; }
  const std::vector<double>& y() const { return y_; }
  const std::vector<Removal>& removals() const { return removals_; }
  std::vector<Track>& tracks() { return tracks_; }
  bool ghost_exhausted() const { return ghost_exhausted_; }
  std::size_t accepted() const { return accepted_; }
  std::size_t rejected() const { return rejected_; }

 private:
  struct Cut {
    double ttz = kInf;
    double cut = 0.0;
    bool lump = false;
  };

  void relink();
  void eval(double s, const double* Y, double* F);
  double ghost_g(bool left_side, double s) const;
  double ghost_x(bool left_side) const;
  double next_break() const;
  // event_tol, raised to a few ulps of the current time.
  double tick() const;
  bool process_ghost_ends();
  bool process_terminal(double t_stop);
  Cut terminal_cut(std::size_t k, double t_stop) const;
  double neighbour_g(std::size_t slot) const;
  void record_all();

  double beta_, a_, bp1_;
  StepControl c_;
  bool periodic_;
  Edge ledge_, redge_;
  std::vector<Index> ids_;
  std::vector<int> seg_;
  std::vector<double> y_, f_;
  std::vector<const Track*> lg_, rg_;
  std::size_t lcur_ = 0, rcur_ = 0;
  Forcing forcing_;

  // Neighbour slots: [0,L) positions, L none, L+1 left ghost, L+2 right ghost.
  std::vector<std::size_t> lidx_, ridx_;
  std::vector<double> p_, g_;
  std::vector<double> k2_, k3_, k4_, k5_, k6_, k7_, ys_, yn_;

  std::vector<int> rec_;
  std::vector<Track> tracks_;
  std::vector<Removal> removals_;

  double t_, h_;
  double err_prev_ = 1e-4;
  bool ghost_exhausted_ = false;
  std::size_t accepted_ = 0, rejected_ = 0;
};

}  // namespace coarsen::detail
