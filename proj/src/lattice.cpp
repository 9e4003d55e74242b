#include "coarsen/lattice.hpp"

#include <cmath>
#include <ostream>
#include <string>

#include "coarsen/io.hpp"

namespace coarsen {

ParticleSystem::ParticleSystem(double beta, std::vector<double> sizes, Boundary boundary)
    : beta_(beta), boundary_(boundary), sizes_(std::move(sizes)) {
  if (!(beta_ > 0.0) || !std::isfinite(beta_)) throw LatticeError("beta must be positive");
  if (sizes_.empty()) throw LatticeError("empty size array");
  const std::size_t n = sizes_.size();
  left_.assign(n, kNone);
  right_.assign(n, kNone);
  vanish_.assign(n, std::nullopt);
  Index prev = kNone;
  for (Index j = 0; j < n; ++j) {
    const double x = sizes_[j];
    if (!(x >= 0.0) || !std::isfinite(x))
      throw LatticeError("size at index " + std::to_string(j) + " is negative or not finite");
    if (x == 0.0) {
      vanish_[j] = 0.0;
      continue;
    }
    if (prev == kNone) {
      head_ = j;
    } else {
      right_[prev] = j;
      left_[j] = prev;
    }
    prev = j;
    ++living_;
  }
  if (living_ == 0) throw LatticeError("no positive size");
  if (boundary_ == Boundary::Periodic) {
    left_[head_] = prev;
    right_[prev] = head_;
  }
}

void ParticleSystem::set_time(double t) {
  if (!std::isfinite(t) || t < 0.0) throw LatticeError("time must be finite and non-negative");
  time_ = t;
}

void ParticleSystem::set_size(Index j, double x) {
  if (!alive(j)) throw LatticeError("set_size on vanished index " + std::to_string(j));
  if (!(x > 0.0) || !std::isfinite(x)) throw LatticeError("set_size needs a positive size");
  sizes_[j] = x;
}

std::optional<double> ParticleSystem::vanish_time(Index j) const { return vanish_.at(j); }

Neighbors ParticleSystem::sigma(Index j) const {
  if (j >= sizes_.size()) throw std::out_of_range("sigma: index out of range");
  Neighbors out;
  if (alive(j)) {
    if (left_[j] != kNone) out.left = left_[j];
    if (right_[j] != kNone) out.right = right_[j];
    return out;
  }
  // Vanished index: scan for the nearest living entries.
  const std::size_t n = sizes_.size();
  for (Index k = j; k-- > 0;)
    if (sizes_[k] > 0.0) {
      out.left = k;
      break;
    }
  for (Index k = j + 1; k < n; ++k)
    if (sizes_[k] > 0.0) {
      out.right = k;
      break;
    }
  if (boundary_ == Boundary::Periodic && living_ > 0) {
    if (!out.left) out.left = left_[head_];
    if (!out.right) out.right = head_;
  }
  return out;
}

double ParticleSystem::g(Index k) const {
  if (k == kNone) return 0.0;
  const double x = sizes_[k];
  return x > 0.0 ? std::pow(x, -beta_) : 0.0;
}

double ParticleSystem::living_laplacian(Index j) const {
  if (j >= sizes_.size()) throw std::out_of_range("living_laplacian: index out of range");
  if (!alive(j)) return 0.0;
  return g(left_[j]) - 2.0 * g(j) + g(right_[j]);
}

void ParticleSystem::remove_particle(Index j, double tau) {
  if (j >= sizes_.size()) throw std::out_of_range("remove_particle: index out of range");
  if (!alive(j)) throw LatticeError("particle " + std::to_string(j) + " already removed");
  if (!std::isfinite(tau) || tau < 0.0) throw LatticeError("vanishing time must be finite and >= 0");
  const Index l = left_[j];
  const Index r = right_[j];
  if (living_ == 1) {
    head_ = kNone;
  } else {
    if (l != kNone) right_[l] = r;
    if (r != kNone) left_[r] = l;
    if (head_ == j) head_ = r;
  }
  left_[j] = right_[j] = kNone;
  sizes_[j] = 0.0;
  vanish_[j] = tau;
  --living_;
}

double ParticleSystem::total_mass(Index m, Index n) const {
  if (m > n || n >= sizes_.size()) throw std::out_of_range("total_mass: bad index range");
  double s = 0.0;
  for (Index k = m; k <= n; ++k) s += sizes_[k];
  return s;
}

double ParticleSystem::total_mass() const { return total_mass(0, sizes_.size() - 1); }

std::vector<Index> ParticleSystem::living() const {
  std::vector<Index> out;
  out.reserve(living_);
  Index k = head_;
  for (std::size_t c = 0; c < living_; ++c) {
    out.push_back(k);
    k = right_[k];
  }
  return out;
}

DensityReport density_check(const std::vector<double>& sizes, std::size_t L, double d) {
  if (L == 0 || !(d > 0.0)) throw LatticeError("density_check needs L >= 1 and d > 0");
  DensityReport rep;
  for (std::size_t b = 0; b < sizes.size(); b += L) {
    const std::size_t e = std::min(sizes.size(), b + L);
    double s = 0.0;
    std::optional<Index> trap;
    for (std::size_t k = b; k < e; ++k) {
      s += sizes[k];
      if (!trap && sizes[k] >= d) trap = k;
    }
    if (s / static_cast<double>(e - b) < d) rep.satisfied = false;
    if (trap) rep.traps.push_back(*trap);
  }
  return rep;
}

DensityReport density_check(const ParticleSystem& sys, std::size_t L, double d) {
  return density_check(sys.sizes(), L, d);
}

void write_snapshot(std::ostream& out, const ParticleSystem& sys) {
  out << "index,size,vanish_time_or_blank\n";
  for (Index j = 0; j < sys.size(); ++j) {
    out << j << ',' << fmt(sys.sizes()[j]) << ',';
    if (auto tau = sys.vanish_time(j)) out << fmt(*tau);
    out << '\n';
  }
}

}  // namespace coarsen
