#include "coarsen/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "chain.hpp"
#include "coarsen/io.hpp"
#include "windows.hpp"

namespace coarsen {

void StepControl::validate() const {
  auto pos = [](double v) { return v > 0.0 && std::isfinite(v); };
  if (!pos(rel_tol) || !pos(abs_tol) || !pos(dt_init) || !pos(dt_max) || !pos(event_tol) ||
      !pos(simultaneity_window) || !pos(y_floor))
    throw std::invalid_argument("step control values must be positive and finite");
  if (event_tol > dt_max) throw std::invalid_argument("event_tol must not exceed dt_max");
  if (block_core < 4 || block_overlap < 2 || block_overlap > block_core)
    throw std::invalid_argument("block sizes: need core >= 4 and 2 <= overlap <= core");
}

std::vector<double> rhs(const ParticleSystem& sys) {
  std::vector<double> out(sys.size(), 0.0);
  for (Index j = 0; j < sys.size(); ++j)
    if (sys.alive(j)) out[j] = sys.living_laplacian(j);
  return out;
}

std::vector<double> rhs_regularized(const ParticleSystem& sys) {
  const double b = sys.beta();
  std::vector<double> out(sys.size(), 0.0);
  auto g = [&](Index k) { return k == kNone ? 0.0 : std::pow(sys.size_of(k), -b); };
  for (Index j = 0; j < sys.size(); ++j) {
    if (!sys.alive(j)) continue;
    const double p = std::pow(sys.size_of(j), b);
    out[j] = (b + 1.0) * (p * (g(sys.left_link(j)) + g(sys.right_link(j))) - 2.0);
  }
  return out;
}

namespace detail {

std::vector<VanishEvent> commit(ParticleSystem& sys, std::vector<Removal> removals,
                                const std::vector<Index>& ids, const std::vector<double>& y,
                                double t_end) {
  const double inv = 1.0 / (sys.beta() + 1.0);
  for (std::size_t k = 0; k < ids.size(); ++k) sys.set_size(ids[k], std::pow(y[k], inv));
  std::stable_sort(removals.begin(), removals.end(), [](const Removal& a, const Removal& b) {
    return a.tau < b.tau || (a.tau == b.tau && a.id < b.id);
  });
  std::vector<VanishEvent> events;
  events.reserve(removals.size());
  for (const auto& r : removals) {
    VanishEvent ev;
    ev.index = r.id;
    ev.tau = r.tau;
    if (r.left != kNone) ev.left = r.left;
    if (r.right != kNone) ev.right = r.right;
    sys.remove_particle(r.id, r.tau);
    events.push_back(ev);
  }
  sys.set_time(t_end);
  return events;
}

std::vector<double> y_of(const ParticleSystem& sys, const std::vector<Index>& ids) {
  std::vector<double> y(ids.size());
  const double e = sys.beta() + 1.0;
  for (std::size_t k = 0; k < ids.size(); ++k) y[k] = std::pow(sys.size_of(ids[k]), e);
  return y;
}

std::vector<VanishEvent> advance_direct(ParticleSystem& sys, double t_end, const StepControl& ctrl,
                                        AdvanceStats* stats) {
  ChainSetup s;
  s.beta = sys.beta();
  s.ctrl = ctrl;
  s.periodic = sys.boundary() == Boundary::Periodic;
  s.ids = sys.living();
  s.y = y_of(sys, s.ids);
  s.h_init = sys.step_hint;
  Chain ch(std::move(s), sys.time());
  ch.run(t_end);
  if (stats) {
    stats->steps += ch.accepted();
    stats->rejected += ch.rejected();
  }
  sys.step_hint = ch.step_hint();
  return commit(sys, ch.removals(), ch.ids(), ch.y(), t_end);
}

}  // namespace detail

std::vector<VanishEvent> advance_to(ParticleSystem& sys, double t_end, const StepControl& ctrl,
                                    AdvanceStats* stats) {
  ctrl.validate();
  if (!(t_end >= sys.time())) throw std::invalid_argument("advance_to: t_end before current time");
  if (t_end == sys.time() || sys.living_count() == 0) {
    sys.set_time(t_end);
    return {};
  }
  if (sys.living_count() <= ctrl.block_threshold) return detail::advance_direct(sys, t_end, ctrl, stats);
  return detail::advance_windows(sys, t_end, ctrl, stats);
}

std::vector<std::vector<VanishEvent>> advance_joint(std::vector<ParticleSystem*> systems,
                                                    double t_end, const StepControl& ctrl,
                                                    const Forcing& forcing, AdvanceStats* stats) {
  ctrl.validate();
  if (systems.empty()) return {};
  const double t0 = systems.front()->time();
  const double beta = systems.front()->beta();
  detail::ChainSetup s;
  s.beta = beta;
  s.ctrl = ctrl;
  std::vector<Index> offset;
  Index base = 0;
  for (std::size_t i = 0; i < systems.size(); ++i) {
    const ParticleSystem& sys = *systems[i];
    if (sys.boundary() != Boundary::Free) throw std::invalid_argument("advance_joint needs Free systems");
    if (sys.time() != t0 || sys.beta() != beta)
      throw std::invalid_argument("advance_joint needs equal time and beta");
    offset.push_back(base);
    for (Index j : sys.living()) {
      s.ids.push_back(base + j);
      s.segment.push_back(static_cast<int>(i));
      s.y.push_back(std::pow(sys.size_of(j), beta + 1.0));
    }
    base += sys.size();
  }
  if (!(t_end >= t0)) throw std::invalid_argument("advance_joint: t_end before current time");
  if (forcing) {
    s.forcing = [&](Index id, double t) {
      const auto it = std::upper_bound(offset.begin(), offset.end(), id) - 1;
      return forcing(id - *it, t);
    };
  }
  s.h_init = systems.front()->step_hint;
  detail::Chain ch(std::move(s), t0);
  ch.run(t_end);
  if (stats) {
    stats->steps += ch.accepted();
    stats->rejected += ch.rejected();
  }
  auto sys_of = [&](Index id) {
    return static_cast<std::size_t>(std::upper_bound(offset.begin(), offset.end(), id) - offset.begin()) - 1;
  };
  std::vector<std::vector<detail::Removal>> rem(systems.size());
  for (auto r : ch.removals()) {
    const std::size_t i = sys_of(r.id);
    r.id -= offset[i];
    if (r.left != kNone) r.left -= offset[i];
    if (r.right != kNone) r.right -= offset[i];
    rem[i].push_back(r);
  }
  std::vector<std::vector<Index>> ids(systems.size());
  std::vector<std::vector<double>> ys(systems.size());
  for (std::size_t k = 0; k < ch.ids().size(); ++k) {
    const std::size_t i = sys_of(ch.ids()[k]);
    ids[i].push_back(ch.ids()[k] - offset[i]);
    ys[i].push_back(ch.y()[k]);
  }
  std::vector<std::vector<VanishEvent>> out;
  for (std::size_t i = 0; i < systems.size(); ++i) {
    systems[i]->step_hint = ch.step_hint();
    out.push_back(detail::commit(*systems[i], std::move(rem[i]), ids[i], ys[i], t_end));
  }
  return out;
}

void write_event_log(std::ostream& out, const std::vector<VanishEvent>& events) {
  out << "index,tau,left,right\n";
  for (const auto& e : events) {
    out << e.index << ',' << fmt(e.tau) << ',';
    if (e.left) out << *e.left;
    out << ',';
    if (e.right) out << *e.right;
    out << '\n';
  }
}

}  // namespace coarsen
