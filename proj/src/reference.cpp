#include <algorithm>
#include <cmath>

#include "coarsen/dynamics.hpp"

namespace coarsen {

namespace {

struct RefChain {
  double beta, a, bp1;
  bool periodic;
  std::vector<Index> ids;
  std::vector<double> y;

  void eval(const std::vector<double>& Y, std::vector<double>& F) const {
    const std::size_t L = Y.size();
    std::vector<double> g(L);
    for (std::size_t k = 0; k < L; ++k) g[k] = Y[k] > 0.0 ? std::pow(Y[k], -a) : 0.0;
    F.assign(L, 0.0);
    for (std::size_t k = 0; k < L; ++k) {
      double gl = 0.0, gr = 0.0;
      if (k > 0) gl = g[k - 1];
      else if (periodic) gl = g[L - 1];
      if (k + 1 < L) gr = g[k + 1];
      else if (periodic) gr = g[0];
      const double p = Y[k] > 0.0 ? std::pow(Y[k], a) : 0.0;
      F[k] = bp1 * (p * (gl + gr) - 2.0);
    }
  }
};

}  // namespace

std::vector<VanishEvent> reference_advance(ParticleSystem& sys, double t_end, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("reference_advance: dt must be positive");
  if (!(t_end >= sys.time())) throw std::invalid_argument("reference_advance: t_end before current time");
  constexpr double kGrade = 0.05;      // step = kGrade * time-to-zero near a crossing
  constexpr double kTerminal = 1e-13;  // remove once time-to-zero drops below this
  RefChain c{sys.beta(), sys.beta() / (sys.beta() + 1.0), sys.beta() + 1.0,
             sys.boundary() == Boundary::Periodic, sys.living(), {}};
  for (Index j : c.ids) c.y.push_back(std::pow(sys.size_of(j), c.bp1));
  std::vector<VanishEvent> events;
  std::vector<double> k1, k2, k3, k4, tmp;
  double t = sys.time();

  auto remove_batch = [&](const std::vector<std::size_t>& S, const std::vector<double>& taus) {
    const std::size_t L = c.y.size();
    std::vector<char> dead(L, 0);
    for (auto k : S) dead[k] = 1;
    std::vector<double> delta(L, 0.0);
    auto step_left = [&](std::size_t k) -> std::size_t {
      if (k > 0) return k - 1;
      return c.periodic ? L - 1 : L;
    };
    auto step_right = [&](std::size_t k) -> std::size_t {
      if (k + 1 < L) return k + 1;
      return c.periodic ? 0 : L;
    };
    for (std::size_t i = 0; i < S.size(); ++i) {
      const std::size_t k = S[i];
      const double x = std::pow(std::max(c.y[k], 0.0), 1.0 / c.bp1);
      VanishEvent ev;
      ev.index = c.ids[k];
      ev.tau = taus[i];
      const std::size_t l0 = step_left(k), r0 = step_right(k);
      if (l0 < L && l0 != k) ev.left = c.ids[l0];
      if (r0 < L && r0 != k) ev.right = c.ids[r0];
      std::size_t l = l0;
      for (std::size_t g = 0; l < L && dead[l] && g < L; ++g) l = step_left(l);
      std::size_t r = r0;
      for (std::size_t g = 0; r < L && dead[r] && g < L; ++g) r = step_right(r);
      if (l < L && !dead[l]) delta[l] += 0.5 * x;
      if (r < L && !dead[r]) delta[r] += 0.5 * x;
      events.push_back(ev);
    }
    std::vector<Index> ids;
    std::vector<double> y;
    for (std::size_t k = 0; k < L; ++k) {
      if (dead[k]) continue;
      ids.push_back(c.ids[k]);
      y.push_back(std::pow(std::pow(c.y[k], 1.0 / c.bp1) + delta[k], c.bp1));
    }
    c.ids = std::move(ids);
    c.y = std::move(y);
  };

  while (t < t_end && !c.y.empty()) {
    c.eval(c.y, k1);
    const std::size_t L = c.y.size();
    std::vector<std::size_t> S;
    std::vector<double> taus;
    double ttz_min = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < L; ++k) {
      if (!(k1[k] < 0.0)) continue;
      const double ttz = c.y[k] / -k1[k];
      if (ttz <= kTerminal) {
        S.push_back(k);
        taus.push_back(t + ttz);
      } else {
        ttz_min = std::min(ttz_min, ttz);
      }
    }
    if (!S.empty()) {
      remove_batch(S, taus);
      continue;
    }
    double h = std::min({dt, t_end - t, kGrade * ttz_min});
    const bool last = h == t_end - t;
    tmp.resize(L);
    for (std::size_t k = 0; k < L; ++k) tmp[k] = c.y[k] + 0.5 * h * k1[k];
    c.eval(tmp, k2);
    for (std::size_t k = 0; k < L; ++k) tmp[k] = c.y[k] + 0.5 * h * k2[k];
    c.eval(tmp, k3);
    for (std::size_t k = 0; k < L; ++k) tmp[k] = c.y[k] + h * k3[k];
    c.eval(tmp, k4);
    std::vector<double> yn(L);
    for (std::size_t k = 0; k < L; ++k)
      yn[k] = c.y[k] + h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
    // A crossing inside the step: linear interpolation for tau.
    for (std::size_t k = 0; k < L; ++k)
      if (yn[k] <= 0.0) {
        S.push_back(k);
        taus.push_back(t + h * c.y[k] / (c.y[k] - yn[k]));
      }
    c.y = yn;
    t = last ? t_end : t + h;
    if (!S.empty()) {
      for (auto k : S) c.y[k] = 0.0;
      remove_batch(S, taus);
    }
  }
  const double inv = 1.0 / c.bp1;
  for (std::size_t k = 0; k < c.ids.size(); ++k) sys.set_size(c.ids[k], std::pow(c.y[k], inv));
  std::stable_sort(events.begin(), events.end(),
                   [](const VanishEvent& a, const VanishEvent& b) { return a.tau < b.tau; });
  for (const auto& ev : events) sys.remove_particle(ev.index, ev.tau);
  sys.set_time(t_end);
  return events;
}

double HalfLifeMonitor::protected_time(double beta, double x1) {
  return (1.0 - std::pow(2.0, -(beta + 1.0))) * std::pow(x1, beta + 1.0) / (2.0 * (beta + 1.0));
}

HalfLifeMonitor::HalfLifeMonitor(double beta, std::size_t window) : beta_(beta), window_(window) {
  if (!(beta > 0.0) || window == 0) throw std::invalid_argument("HalfLifeMonitor: bad parameters");
}

void HalfLifeMonitor::observe(double t, const std::vector<double>& sizes) {
  // Relative slack absorbs rounding when the bound is met with equality.
  constexpr double kSlack = 1e-9;
  for (const auto& a : anchors_) {
    if (a.x.size() != sizes.size()) throw std::invalid_argument("HalfLifeMonitor: size mismatch");
    const double dt = t - a.t;
    for (std::size_t j = 0; j < sizes.size(); ++j) {
      const double x1 = a.x[j];
      if (!(x1 > 0.0)) continue;
      if (dt <= protected_time(beta_, x1) && sizes[j] < 0.5 * x1 * (1.0 - kSlack))
        violations_.push_back({j, a.t, t});
    }
  }
  anchors_.push_back({t, sizes});
  if (anchors_.size() > window_) anchors_.erase(anchors_.begin());
}

std::vector<HalfLifeViolation> half_life_monitor(
    double beta, const std::vector<std::pair<double, std::vector<double>>>& samples,
    std::size_t window) {
  HalfLifeMonitor mon(beta, window);
  for (const auto& [t, x] : samples) mon.observe(t, x);
  return mon.violations();
}

}  // namespace coarsen
