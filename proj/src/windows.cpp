#include "windows.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>

namespace coarsen::detail {

namespace {

constexpr int kMaxSweeps = 6;

struct BlockResult {
  std::vector<Index> ids;     // core ids in chain order
  std::vector<double> y;      // final y, or -1 when removed inside the window
  std::vector<Removal> removals;
};

bool agree(const BlockResult& a, const BlockResult& b, const StepControl& c) {
  if (a.ids != b.ids || a.removals.size() != b.removals.size()) return false;
  for (std::size_t k = 0; k < a.y.size(); ++k) {
    if ((a.y[k] < 0.0) != (b.y[k] < 0.0)) return false;
    if (a.y[k] < 0.0) continue;
    if (std::fabs(a.y[k] - b.y[k]) > c.abs_tol + c.rel_tol * std::fabs(a.y[k])) return false;
  }
  for (std::size_t i = 0; i < a.removals.size(); ++i) {
    if (a.removals[i].id != b.removals[i].id) return false;
    if (std::fabs(a.removals[i].tau - b.removals[i].tau) > c.event_tol) return false;
  }
  return true;
}

}  // namespace

std::vector<VanishEvent> advance_windows(ParticleSystem& sys, double t_end, const StepControl& ctrl,
                                         AdvanceStats* stats) {
  const std::size_t w = ctrl.block_overlap;
  const std::size_t m = w;  // spare ghosts per side for vanishings inside one window
  const std::size_t Z = w + m;
  const std::size_t B = std::max(ctrl.block_core, Z);
  const double beta = sys.beta();
  const double bp1 = beta + 1.0;
  const bool periodic = sys.boundary() == Boundary::Periodic;

  double delta = sys.window_hint;
  if (!(delta > 0.0)) {
    const double mean = sys.total_mass() / static_cast<double>(sys.living_count());
    delta = 0.05 * std::pow(mean, bp1);
  }
  std::vector<VanishEvent> all;
  std::vector<std::int64_t> pos_of(sys.size(), -1);

  while (sys.time() < t_end) {
    if (sys.living_count() <= ctrl.block_threshold) {
      auto ev = advance_direct(sys, t_end, ctrl, stats);
      all.insert(all.end(), ev.begin(), ev.end());
      break;
    }
    const double t0 = sys.time();
    double t1 = std::min(t0 + delta, t_end);
    if (t_end - t1 < 0.25 * delta) t1 = t_end;

    const std::vector<Index> P = sys.living();
    const std::size_t L = P.size();
    const std::vector<double> y0 = y_of(sys, P);
    for (std::size_t k = 0; k < L; ++k) pos_of[P[k]] = static_cast<std::int64_t>(k);
    const std::size_t nb = std::max<std::size_t>(3, L / B);
    std::vector<std::size_t> start(nb + 1);
    for (std::size_t b = 0; b <= nb; ++b) start[b] = b * L / nb;
    auto wrap = [&](std::int64_t p) {
      const auto l = static_cast<std::int64_t>(L);
      return static_cast<std::size_t>(((p % l) + l) % l);
    };

    // Linear predictor for the first sweep.
    std::vector<Track> tracks(L);
    {
      std::vector<double> g(L);
      for (std::size_t k = 0; k < L; ++k) g[k] = std::pow(y0[k], -beta / bp1);
      for (std::size_t b = 0; b < nb; ++b) {
        const std::size_t s = start[b], e = start[b + 1];
        for (std::size_t k = s; k < e; ++k) {
          if (k >= s + Z && k + Z < e) continue;
          double gl = 0.0, gr = 0.0;
          if (k > 0) gl = g[k - 1];
          else if (periodic) gl = g[L - 1];
          if (k + 1 < L) gr = g[k + 1];
          else if (periodic) gr = g[0];
          const double f0 = bp1 * ((gl + gr) / g[k] - 2.0);
          Track& tr = tracks[k];
          tr.id = P[k];
          tr.push(t0, y0[k], f0);
          const double y1 = y0[k] + f0 * (t1 - t0);
          if (y1 > 0.0) {
            tr.push(t1, y1, f0);
          } else {
            tr.end = t0 + y0[k] / -f0;
            tr.give_left = tr.give_right = 0.5 * std::pow(y0[k], 1.0 / bp1);
          }
        }
      }
    }

    std::vector<BlockResult> res, old;
    std::vector<double> hints(nb, sys.step_hint > 0.0 ? sys.step_hint : 0.1 * (t1 - t0));
    bool converged = false;
    int sweep = 0;
    for (sweep = 1; sweep <= kMaxSweeps; ++sweep) {
      std::vector<Track> next(L);
      res.assign(nb, {});
      bool exhausted = false;
      for (std::size_t b = 0; b < nb; ++b) {
        const std::size_t s = start[b], e = start[b + 1];
        auto lo = static_cast<std::int64_t>(s) - static_cast<std::int64_t>(w);
        auto hi = static_cast<std::int64_t>(e + w);
        ChainSetup cs;
        cs.beta = beta;
        cs.ctrl = ctrl;
        if (!periodic && lo - static_cast<std::int64_t>(m) < 0) {
          lo = 0;
          cs.left = Edge::Free;
        } else {
          cs.left = Edge::Ghost;
          for (std::size_t i = 1; i <= m; ++i) cs.left_ghosts.push_back(&tracks[wrap(lo - static_cast<std::int64_t>(i))]);
        }
        if (!periodic && hi + static_cast<std::int64_t>(m) > static_cast<std::int64_t>(L)) {
          hi = static_cast<std::int64_t>(L);
          cs.right = Edge::Free;
        } else {
          cs.right = Edge::Ghost;
          for (std::size_t i = 0; i < m; ++i) cs.right_ghosts.push_back(&tracks[wrap(hi + static_cast<std::int64_t>(i))]);
        }
        for (auto p = lo; p < hi; ++p) {
          const std::size_t q = wrap(p);
          cs.ids.push_back(P[q]);
          cs.y.push_back(y0[q]);
        }
        for (std::size_t k = s; k < e; ++k)
          if (k < s + Z || k + Z >= e) cs.record.push_back(P[k]);
        cs.h_init = hints[b];
        Chain ch(std::move(cs), t0);
        ch.run(t1);
        hints[b] = ch.step_hint();
        exhausted = exhausted || ch.ghost_exhausted();
        if (stats) {
          stats->steps += ch.accepted();
          stats->rejected += ch.rejected();
        }
        auto in_core = [&](Index id) {
          const auto p = static_cast<std::size_t>(pos_of[id]);
          return p >= s && p < e;
        };
        BlockResult& r = res[b];
        for (std::size_t k = s; k < e; ++k) r.ids.push_back(P[k]);
        r.y.assign(e - s, -1.0);
        for (std::size_t k = 0; k < ch.ids().size(); ++k) {
          const Index id = ch.ids()[k];
          if (in_core(id)) r.y[static_cast<std::size_t>(pos_of[id]) - s] = ch.y()[k];
        }
        for (const auto& rm : ch.removals())
          if (in_core(rm.id)) r.removals.push_back(rm);
        for (auto& tr : ch.tracks()) next[static_cast<std::size_t>(pos_of[tr.id])] = std::move(tr);
      }
      if (exhausted) break;
      if (sweep >= 2) {
        converged = true;
        for (std::size_t b = 0; b < nb && converged; ++b) converged = agree(res[b], old[b], ctrl);
      }
      old = res;
      tracks = std::move(next);
      if (converged) break;
    }
    if (stats) stats->sweeps += static_cast<std::size_t>(std::min(sweep, kMaxSweeps));
    if (!converged) {
      delta *= 0.5;
      if (delta < 1e-12 * std::max(1.0, t0)) {
        std::ostringstream os;
        os << "windowed relaxation failed to converge at t=" << t0;
        throw NumericFailure(os.str());
      }
      continue;
    }
    std::vector<Removal> removals;
    std::vector<Index> ids;
    std::vector<double> ys;
    for (const auto& r : res) {
      removals.insert(removals.end(), r.removals.begin(), r.removals.end());
      for (std::size_t k = 0; k < r.ids.size(); ++k)
        if (r.y[k] >= 0.0) {
          ids.push_back(r.ids[k]);
          ys.push_back(r.y[k]);
        }
    }
    for (Index id : P) pos_of[id] = -1;
    auto ev = commit(sys, std::move(removals), ids, ys, t1);
    all.insert(all.end(), ev.begin(), ev.end());
    if (stats) ++stats->windows;
    if (t1 - t0 >= 0.999 * delta) {
      if (sweep <= 2) delta *= 1.5;
      else if (sweep == 3) delta *= 1.15;
      else if (sweep >= 5) delta *= 0.7;
    }
  }
  sys.window_hint = delta;
  return all;
}

}  // namespace coarsen::detail
