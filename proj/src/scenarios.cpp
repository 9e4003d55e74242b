#include "coarsen/scenarios.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Dense>

namespace coarsen {

std::vector<double> init_uniform_random(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ScenarioError("init_uniform_random: n must be positive");
  std::mt19937_64 gen(seed);
  std::vector<double> x(n);
  constexpr double kScale = 1.0 / 9007199254740992.0;  // 2^-53
  for (auto& v : x) v = (static_cast<double>(gen() >> 11) + 0.5) * kScale;
  return x;
}

std::vector<double> init_spike(double X0, std::size_t halfwidth) {
  if (!(X0 > 1.0) || !std::isfinite(X0)) throw ScenarioError("init_spike: X0 must exceed 1");
  if (halfwidth == 0) throw ScenarioError("init_spike: halfwidth must be positive");
  std::vector<double> x(2 * halfwidth + 1, 1.0);
  x[halfwidth] = X0;
  return x;
}

std::vector<VanishEvent> run_sampled(ParticleSystem& sys, const std::vector<double>& times,
                                     const StepControl& ctrl,
                                     const std::function<void(const ParticleSystem&)>& sample) {
  std::vector<VanishEvent> log;
  for (double t : times) {
    if (t < sys.time()) throw ScenarioError("run_sampled: output times must be non-decreasing");
    auto ev = advance_to(sys, t, ctrl);
    log.insert(log.end(), ev.begin(), ev.end());
    if (sample) sample(sys);
  }
  return log;
}

std::vector<double> geometric_times(double t0, double t_end, double ratio) {
  if (!(t0 > 0.0) || !(t_end >= t0) || !(ratio > 1.0)) throw ScenarioError("geometric_times: bad range");
  std::vector<double> out;
  for (double t = t0; t < t_end * (1.0 - 1e-12); t *= ratio) out.push_back(t);
  out.push_back(t_end);
  return out;
}

const char* phase_name(Phase p) { return p == Phase::Concentration ? "concentration" : "spreading"; }

PhaseOutcome classify_spike(double beta, double X0, const SpikeOptions& opt) {
  if (opt.rounds < 3) throw ScenarioError("classify_spike: rounds must be at least 3");
  const std::size_t hw = opt.halfwidth == 0 ? 4 * opt.rounds + 8 : opt.halfwidth;
  if (hw < 4 * opt.rounds) throw ScenarioError("classify_spike: halfwidth below 4*rounds");
  ParticleSystem sys(beta, init_spike(X0, hw), Boundary::Periodic);
  PhaseOutcome out;
  out.beta = beta;
  out.X0 = X0;
  const std::size_t want = 2 * opt.rounds;
  std::vector<VanishEvent> log;
  bool ordered = true;
  // Chunks grow with the time already elapsed so that long spreading runs stay cheap.
  double t = 0.0;
  while (log.size() < want && ordered) {
    if (t >= opt.t_budget) {
      std::ostringstream os;
      os << "classify_spike: only " << log.size() << " vanishings by t=" << t;
      throw NumericFailure(os.str());
    }
    t = std::min(opt.t_budget, t + std::max(0.05, 0.02 * t));
    auto ev = advance_to(sys, t, opt.ctrl);
    for (const auto& e : ev) {
      if (log.size() >= want) break;
      const std::size_t off = e.index > hw ? e.index - hw : hw - e.index;
      out.vanish_order.push_back(off);
      if (off != log.size() / 2 + 1) ordered = false;
      log.push_back(e);
    }
  }
  out.time = sys.time();
  double vanished0 = 0.0;
  for (const auto& e : log) vanished0 += e.index == hw ? X0 : 1.0;
  out.center_gain_fraction = sys.alive(hw) ? (sys.size_of(hw) - X0) / vanished0 : 0.0;
  out.sequential = ordered && log.size() >= want;
  out.verdict = out.sequential && out.center_gain_fraction >= 0.75 ? Phase::Concentration
                                                                   : Phase::Spreading;
  return out;
}

double phase_boundary(double beta, double X_lo, double X_hi, double rel_tol,
                      const SpikeOptions& opt) {
  if (!(X_lo > 1.0) || !(X_hi > X_lo) || !(rel_tol > 0.0))
    throw ScenarioError("phase_boundary: need 1 < X_lo < X_hi and rel_tol > 0");
  if (classify_spike(beta, X_lo, opt).verdict != Phase::Spreading ||
      classify_spike(beta, X_hi, opt).verdict != Phase::Concentration)
    throw ScenarioError("phase_boundary: bracket does not straddle the boundary");
  while (X_hi / X_lo - 1.0 > rel_tol) {
    const double mid = std::sqrt(X_lo * X_hi);
    if (classify_spike(beta, mid, opt).verdict == Phase::Concentration)
      X_hi = mid;
    else
      X_lo = mid;
  }
  return std::sqrt(X_lo * X_hi);
}

std::optional<double> find_phase_boundary(double beta, double X_lo, double X_hi, double rel_tol,
                                          const SpikeOptions& opt, double ratio) {
  if (!(ratio > 1.0)) throw ScenarioError("find_phase_boundary: ratio must exceed 1");
  if (!(X_lo > 1.0) || !(X_hi > X_lo))
    throw ScenarioError("find_phase_boundary: need 1 < X_lo < X_hi");
  if (classify_spike(beta, X_lo, opt).verdict == Phase::Concentration) return X_lo;
  for (double prev = X_lo; prev < X_hi;) {
    const double X = std::min(X_hi, prev * ratio);
    if (classify_spike(beta, X, opt).verdict == Phase::Concentration)
      return phase_boundary(beta, prev, X, rel_tol, opt);
    prev = X;
  }
  return std::nullopt;
}

double LadderSpec::R(std::size_t j) const { return std::pow(gamma, static_cast<double>(j)); }

void LadderSpec::validate() const {
  if (N < 2) throw ScenarioError("ladder: N must be at least 2");
  if (N_star < 1 || N_star >= N) throw ScenarioError("ladder: need 1 <= N_star < N");
  if (!(gamma > 0.0 && gamma < 1.0 / 3.0)) throw ScenarioError("ladder: gamma must lie in (0, 1/3)");
  if (!(beta >= kBetaStar)) throw ScenarioError("ladder: beta below (ln4-ln3)/(ln3-ln2)");
  if (!(std::fabs(eps) < 0.125)) throw ScenarioError("ladder: |eps| must be below 1/8");
  if (R1.size() != N || R2.size() != N) throw ScenarioError("ladder: R1 and R2 need N entries");
  for (std::size_t j = 0; j < N; ++j) {
    const double r = R(j);
    for (double v : {R1[j], R2[j]})
      if (!(v >= 0.5 * r && v <= 1.5 * r)) {
        std::ostringstream os;
        os << "ladder: rung " << j << " size " << v << " outside [R/2, 3R/2]";
        throw ScenarioError(os.str());
      }
  }
}

LadderSpec default_ladder(std::size_t N, double gamma, double beta, std::size_t N_star) {
  LadderSpec s;
  s.N = N;
  s.N_star = N_star;
  s.gamma = gamma;
  s.beta = beta;
  for (std::size_t j = 0; j < N; ++j) {
    s.R1.push_back(s.R(j));
    s.R2.push_back(s.R(j));
  }
  s.validate();
  return s;
}

std::vector<double> init_ladder(const LadderSpec& spec) {
  spec.validate();
  std::vector<double> x(6 * spec.N + 1, 1.0);
  for (std::size_t j = 0; j < spec.N; ++j) {
    x[ladder_site(spec, j, 1)] = spec.R1[j];
    x[ladder_site(spec, j, 2)] = spec.R2[j];
  }
  x[ladder_site(spec, spec.N, 0)] += spec.eps;
  return x;
}

namespace {

double ladder_tau_scale(const LadderSpec& spec, std::size_t j) {
  return std::pow(spec.R(j), spec.beta + 1.0) / (spec.beta + 1.0);
}

// Runs until both small particles of every rung >= j_min have vanished.
LadderRun run_ladder_until(const LadderSpec& spec, const StepControl& ctrl, std::size_t j_min) {
  ParticleSystem sys(spec.beta, init_ladder(spec), Boundary::Free);
  LadderRun out;
  out.tau1.assign(spec.N, NAN);
  out.tau2.assign(spec.N, NAN);
  auto done = [&] {
    for (std::size_t j = j_min; j < spec.N; ++j)
      if (sys.alive(ladder_site(spec, j, 1)) || sys.alive(ladder_site(spec, j, 2))) return false;
    return true;
  };
  double t = 1.2 * ladder_tau_scale(spec, j_min);
  for (int grow = 0; !done(); ++grow) {
    if (grow > 60) throw NumericFailure("ladder: small particles did not vanish");
    auto ev = advance_to(sys, t, ctrl);
    out.events.insert(out.events.end(), ev.begin(), ev.end());
    t *= 1.25;
  }
  for (const auto& e : out.events) {
    const std::size_t base = 3 * spec.N;
    if (e.index <= base) continue;
    const std::size_t rel = e.index - base;
    if (rel % 3 == 1) out.tau1[rel / 3] = e.tau;
    if (rel % 3 == 2) out.tau2[rel / 3] = e.tau;
  }
  return out;
}

}  // namespace

LadderRun run_ladder(const LadderSpec& spec, const StepControl& ctrl) {
  return run_ladder_until(spec, ctrl, spec.N_star);
}

TuneReport tune_simultaneous_vanishing(const LadderSpec& spec_in, const TuneOptions& opt) {
  spec_in.validate();
  if (spec_in.eps != 0.0) throw ScenarioError("tune: eps must be 0 while tuning");
  LadderSpec spec = spec_in;
  auto gap = [&](std::size_t j) {
    const LadderRun r = run_ladder_until(spec, opt.ctrl, j);
    return r.tau2[j] - r.tau1[j];
  };
  auto measure = [&](TuneReport& rep) {
    rep.spec = spec;
    rep.dtau.assign(spec.N, 0.0);
    const LadderRun r = run_ladder(spec, opt.ctrl);
    rep.max_dtau = 0.0;
    rep.worst_rung = spec.N_star;
    for (std::size_t j = spec.N_star; j < spec.N; ++j) {
      rep.dtau[j] = r.tau2[j] - r.tau1[j];
      if (!(std::fabs(rep.dtau[j]) <= rep.max_dtau)) {
        rep.max_dtau = std::fabs(rep.dtau[j]);
        rep.worst_rung = j;
      }
    }
    rep.converged = rep.max_dtau <= opt.tol_tau;
  };
  TuneReport best;
  measure(best);
  std::size_t stalled = 0;
  for (std::size_t sweep = 1; sweep <= opt.max_sweeps && !best.converged; ++sweep) {
    for (std::size_t j = spec.N; j-- > spec.N_star;) {
      // tau2 grows with R2; bisect on the sign of tau2 - tau1 to the bracket limit.
      double lo = 0.5 * spec.R(j), hi = 1.5 * spec.R(j);
      for (std::size_t it = 0; it < opt.max_bisect; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (!(mid > lo && mid < hi)) break;
        spec.R2[j] = mid;
        const double d = gap(j);
        if (d == 0.0) {
          lo = hi = mid;
          break;
        }
        (d > 0.0 ? hi : lo) = mid;
      }
      spec.R2[j] = 0.5 * (lo + hi);
    }
    TuneReport rep;
    measure(rep);
    rep.sweeps = sweep;
    // Rounding noise amplified down the ladder sets a floor on |dtau|; stop
    // once sweeps no longer improve on the best one seen.
    if (rep.max_dtau < best.max_dtau) {
      stalled = rep.max_dtau < 0.5 * best.max_dtau ? 0 : stalled + 1;
      best = rep;
    } else {
      ++stalled;
      best.sweeps = sweep;
    }
    if (stalled >= 2) break;
  }
  if (!best.converged && opt.strict) {
    std::ostringstream os;
    os << "tune: no fixed point within tol_tau; worst rung " << best.worst_rung
       << " with |dtau|=" << best.max_dtau;
    throw NumericFailure(os.str());
  }
  return best;
}

namespace {

struct JointSample {
  double T = 0.0;
  double d0 = 0.0, d3 = 0.0;  // x - xbar at sites 3j and 3(j+1)
  double noise = 0.0;         // change of d0 over the event-time ambiguity after T
};

// Perturbed and unperturbed ladders on one step sequence, sampled at every
// T_j = max(tau_3j+1, tau_3j+2, taubar_3j+1), deepest rung first. The
// event-time ambiguity at rung j is max(event_tol, |taubar_3j+1 - taubar_3j+2|).
std::vector<JointSample> joint_ladder_samples(const LadderSpec& bar, const LadderSpec& pert,
                                              const StepControl& ctrl) {
  const std::size_t N = bar.N, Ns = bar.N_star;
  std::vector<double> T(N + 1, 0.0), h(N + 1, 0.0);
  {
    ParticleSystem a(bar.beta, init_ladder(bar), Boundary::Free);
    ParticleSystem b(bar.beta, init_ladder(pert), Boundary::Free);
    double t = 1.2 * ladder_tau_scale(bar, Ns);
    auto pending = [&] {
      for (std::size_t j = Ns; j < N; ++j)
        for (std::size_t p = 1; p <= 2; ++p)
          if (a.alive(ladder_site(bar, j, p)) || b.alive(ladder_site(bar, j, p))) return true;
      return false;
    };
    for (int grow = 0; pending(); ++grow) {
      if (grow > 60) throw NumericFailure("amplification: small particles did not vanish");
      advance_joint({&a, &b}, t, ctrl);
      t *= 1.25;
    }
    for (std::size_t j = Ns; j < N; ++j) {
      const std::size_t s1 = ladder_site(bar, j, 1), s2 = ladder_site(bar, j, 2);
      T[j] = std::max({*b.vanish_time(s1), *b.vanish_time(s2), *a.vanish_time(s1)});
      h[j] = std::max(ctrl.event_tol, std::fabs(*a.vanish_time(s1) - *a.vanish_time(s2)));
    }
  }
  std::vector<JointSample> out(N + 1);
  ParticleSystem a(bar.beta, init_ladder(bar), Boundary::Free);
  ParticleSystem b(bar.beta, init_ladder(pert), Boundary::Free);
  for (std::size_t j = N; j-- > Ns;) {
    const std::size_t s0 = ladder_site(bar, j, 0), s3 = ladder_site(bar, j + 1, 0);
    advance_joint({&a, &b}, T[j], ctrl);
    out[j].T = T[j];
    out[j].d0 = b.size_of(s0) - a.size_of(s0);
    out[j].d3 = b.size_of(s3) - a.size_of(s3);
    advance_joint({&a, &b}, T[j] + h[j], ctrl);
    out[j].noise = std::fabs(b.size_of(s0) - a.size_of(s0) - out[j].d0);
  }
  return out;
}

}  // namespace

AmplificationResult amplification_experiment(const LadderSpec& spec_in, double eps,
                                             const StepControl& ctrl) {
  spec_in.validate();
  LadderSpec bar = spec_in;
  bar.eps = 0.0;
  LadderSpec pert = bar;
  pert.eps = eps;
  pert.validate();
  const std::size_t N = bar.N, Ns = bar.N_star;
  AmplificationResult res;

  const auto js = joint_ladder_samples(bar, pert, ctrl);
  for (std::size_t j = N - 1; j > Ns; --j)
    if (!(js[j].T < js[j - 1].T)) res.warnings.push_back("T not increasing below rung " + std::to_string(j));

  // Rung N carries the initial perturbation itself.
  res.rungs.push_back(N);
  res.deltas.push_back(std::fabs(eps));
  res.T.push_back(0.0);
  res.d0.push_back(eps);
  res.d3_next.push_back(0.0);
  res.noise.push_back(0.0);
  for (std::size_t j = N; j-- > Ns;) {
    res.rungs.push_back(j);
    res.deltas.push_back(std::fabs(js[j].d0));
    res.T.push_back(js[j].T);
    res.d0.push_back(js[j].d0);
    res.d3_next.push_back(js[j].d3);
    res.noise.push_back(js[j].noise);
  }
  // Identical runs: every delta is zero and there is nothing to fit.
  if (eps == 0.0) return res;
  for (std::size_t i = 0; i < res.rungs.size(); ++i) {
    res.noise_floor = std::max(res.noise_floor, res.noise[i]);
    if (res.deltas[i] > 0.0 && res.deltas[i] > 10.0 * res.noise[i]) {
      res.usable.push_back(res.rungs[i]);
    } else {
      res.warnings.push_back("rung " + std::to_string(res.rungs[i]) + " below noise floor");
    }
  }
  // Regression of log delta_(j-1) on log delta_j and log R_(j-1).
  const auto kept = [&](std::size_t r) {
    return std::find(res.usable.begin(), res.usable.end(), r) != res.usable.end();
  };
  std::vector<std::array<double, 3>> X;
  std::vector<double> Y;
  for (std::size_t i = 0; i + 1 < res.rungs.size(); ++i) {
    const std::size_t j = res.rungs[i];
    if (!kept(j) || !kept(j - 1)) continue;
    X.push_back({1.0, std::log(res.deltas[i]), std::log(bar.R(j - 1))});
    Y.push_back(std::log(res.deltas[i + 1]));
  }
  if (res.usable.size() < 3 || X.size() < 3) {
    std::ostringstream os;
    os << "amplification: fewer than 3 usable rungs (rung:delta/noise";
    for (std::size_t i = 0; i < res.rungs.size(); ++i)
      os << ' ' << res.rungs[i] << ':' << res.deltas[i] << '/' << res.noise[i];
    os << ')';
    throw NumericFailure(os.str());
  }
  Eigen::MatrixXd A(X.size(), 3);
  Eigen::VectorXd y(Y.size());
  for (std::size_t k = 0; k < X.size(); ++k) {
    for (int c = 0; c < 3; ++c) A(static_cast<Eigen::Index>(k), c) = X[k][c];
    y(static_cast<Eigen::Index>(k)) = Y[k];
  }
  const auto qr = A.colPivHouseholderQr();
  if (qr.rank() < 3) throw NumericFailure("amplification: singular regression");
  const Eigen::Vector3d c = qr.solve(y);
  res.fitted_prefactor = std::exp(c[0]);
  res.fitted_exponent = c[1];
  res.fitted_R_coefficient = c[2];
  return res;
}

}  // namespace coarsen
