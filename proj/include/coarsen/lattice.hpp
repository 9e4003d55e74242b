#pragma once

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace coarsen {

using Index = std::size_t;
inline constexpr Index kNone = std::numeric_limits<Index>::max();

enum class Boundary { Free, Periodic };

struct LatticeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Neighbors {
  std::optional<Index> left;
  std::optional<Index> right;
};

// Particle sizes on a finite lattice with a doubly linked chain of the
// living (strictly positive) entries. Indices are never relabeled.
//
// Invariants:
//   sizes[j] > 0  <=>  j is linked  <=>  vanish_time(j) is empty
//   traversal from leftmost() via right links visits living indices in order
//   Periodic: links wrap; a lone particle links to itself
class ParticleSystem {
 public:
  ParticleSystem(double beta, std::vector<double> sizes, Boundary boundary);

  double beta() const { return beta_; }
  Boundary boundary() const { return boundary_; }
  std::size_t size() const { return sizes_.size(); }
  std::size_t living_count() const { return living_; }
  double time() const { return time_; }
  void set_time(double t);

  const std::vector<double>& sizes() const { return sizes_; }
  double size_of(Index j) const { return sizes_.at(j); }
  // Only living particles may be resized, and only to a positive value.
  void set_size(Index j, double x);

  bool alive(Index j) const { return sizes_.at(j) > 0.0; }
  std::optional<double> vanish_time(Index j) const;
  const std::vector<std::optional<double>>& vanish_times() const { return vanish_; }

  Index left_link(Index j) const { return left_.at(j); }
  Index right_link(Index j) const { return right_.at(j); }
  Index leftmost() const { return head_; }

  Neighbors sigma(Index j) const;
  double living_laplacian(Index j) const;
  void remove_particle(Index j, double tau);
  double total_mass(Index m, Index n) const;
  double total_mass() const;

  // Living indices in chain order starting at leftmost().
  std::vector<Index> living() const;

  // Persisted hint for the large-system integrator (window length).
  double window_hint = 0.0;
  double step_hint = 0.0;

 private:
  double g(Index k) const;

  double beta_;
  Boundary boundary_;
  std::vector<double> sizes_;
  std::vector<Index> left_, right_;
  std::vector<std::optional<double>> vanish_;
  std::size_t living_ = 0;
  Index head_ = kNone;
  double time_ = 0.0;
};

struct DensityReport {
  bool satisfied = true;
  std::vector<Index> traps;
};

// Blocks [0,L), [L,2L), ...; the trailing block may be shorter.
DensityReport density_check(const std::vector<double>& sizes, std::size_t L, double d);
DensityReport density_check(const ParticleSystem& sys, std::size_t L, double d);

// CSV: index,size,vanish_time_or_blank
void write_snapshot(std::ostream& out, const ParticleSystem& sys);

}  // namespace coarsen
