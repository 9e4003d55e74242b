#include "coarsen/localproblem.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <boost/numeric/odeint.hpp>

#include "coarsen/io.hpp"

namespace coarsen {

namespace {

Forcing pair_forcing(const PairForcing& F1, const PairForcing& F2) {
  if (!F1 && !F2) return {};
  return [F1, F2](Index j, double t) {
    const PairForcing& F = j == 0 ? F1 : F2;
    return F ? F(t) : 0.0;
  };
}

void check_pair_args(double beta, double A1, double A2) {
  if (!(beta > 0.0)) throw LocalProblemError("pair: beta must be positive");
  if (!(A1 > 0.0) || !(A2 > 0.0)) throw LocalProblemError("pair: initial sizes must be positive");
}

std::pair<double, double> pair_vanishing_times(double beta, double A1, double A2, const Forcing& f,
                                               const StepControl& ctrl) {
  ParticleSystem sys(beta, {A1, A2}, Boundary::Free);
  double t = 1.2 * std::pow(std::max(A1, A2), beta + 1.0) / (beta + 1.0);
  for (int grow = 0; sys.living_count() > 0; ++grow) {
    if (grow > 60) throw NumericFailure("pair: particles did not vanish");
    advance_joint({&sys}, t, ctrl, f);
    t *= 1.5;
  }
  return {*sys.vanish_time(0), *sys.vanish_time(1)};
}

}  // namespace

PairSolution solve_pair(double beta, double A1, double A2, const PairForcing& F1,
                        const PairForcing& F2, double eta, const StepControl& ctrl,
                        std::vector<double> times) {
  check_pair_args(beta, A1, A2);
  ctrl.validate();
  const Forcing f = pair_forcing(F1, F2);
  PairSolution sol;
  sol.beta = beta;
  sol.A1 = A1;
  sol.A2 = A2;
  sol.eta = eta;
  sol.event_tol = ctrl.event_tol;
  std::tie(sol.tau1, sol.tau2) = pair_vanishing_times(beta, A1, A2, f, ctrl);

  if (times.empty()) {
    const double tmax = std::max(sol.tau1, sol.tau2);
    for (int i = 0; i <= 64; ++i) times.push_back(tmax * i / 64.0);
    for (double tau : {sol.tau1, sol.tau2})
      for (int k = 1; k <= 96; ++k) times.push_back(tau - tau * std::pow(10.0, -k / 8.0));
  }
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  if (!times.empty() && times.front() < 0.0) throw LocalProblemError("pair: negative sample time");

  ParticleSystem sys(beta, {A1, A2}, Boundary::Free);
  for (double t : times) {
    advance_joint({&sys}, t, ctrl, f);
    sol.times.push_back(t);
    sol.Y1.push_back(sys.size_of(0));
    sol.Y2.push_back(sys.size_of(1));
  }
  return sol;
}

PairSolution tune_pair(double beta, double A1, const PairForcing& F1, const PairForcing& F2,
                       double eta, const StepControl& ctrl) {
  check_pair_args(beta, A1, A1);
  ctrl.validate();
  const Forcing f = pair_forcing(F1, F2);
  auto gap = [&](double A2) {
    const auto [t1, t2] = pair_vanishing_times(beta, A1, A2, f, ctrl);
    return t2 - t1;
  };
  // The first midpoint is A1 itself, exact when the forcing is symmetric.
  double lo = 0.5 * A1, hi = 1.5 * A1;
  if (!(gap(lo) < 0.0) || !(gap(hi) > 0.0)) throw NumericFailure("tune_pair: A2 bracket fails");
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (!(mid > lo && mid < hi)) break;
    const double d = gap(mid);
    if (d == 0.0) {
      lo = hi = mid;
      break;
    }
    (d > 0.0 ? hi : lo) = mid;
  }
  return solve_pair(beta, A1, 0.5 * (lo + hi), F1, F2, eta, ctrl);
}

double simultaneous_power_law_residual(const PairSolution& sol,
                                       std::optional<std::pair<double, double>> window,
                                       double max_dtau) {
  if (max_dtau < 0.0) max_dtau = 10.0 * sol.event_tol;
  if (!(std::fabs(sol.tau1 - sol.tau2) <= max_dtau))
    throw LocalProblemError("power law: vanishing times are not simultaneous");
  const double bp1 = sol.beta + 1.0;
  const double tau = 0.5 * (sol.tau1 + sol.tau2);
  double sup = 0.0;
  for (std::size_t i = 0; i < sol.times.size(); ++i) {
    const double d = tau - sol.times[i];
    if (!(d > 0.0) || !(sol.Y1[i] > 0.0) || !(sol.Y2[i] > 0.0)) continue;
    if (window && (d < window->first || d > window->second)) continue;
    const double y = std::pow(bp1 * d, 1.0 / bp1);
    const double r = std::max(std::fabs(sol.Y1[i] - y), std::fabs(sol.Y2[i] - y));
    sup = std::max(sup, sol.eta > 0.0 ? r / (sol.eta * d) : r);
  }
  return sup;
}

namespace {

using State = std::array<double, 2>;

// Least squares of v on two basis columns; returns coefficients and max misfit.
struct Fit2 {
  double c0 = 0.0, c1 = 0.0, misfit = 0.0, scale = 0.0;
};

Fit2 fit_two(const std::vector<double>& b0, const std::vector<double>& b1,
             const std::vector<double>& v) {
  double a00 = 0.0, a01 = 0.0, a11 = 0.0, r0 = 0.0, r1 = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    a00 += b0[i] * b0[i];
    a01 += b0[i] * b1[i];
    a11 += b1[i] * b1[i];
    r0 += b0[i] * v[i];
    r1 += b1[i] * v[i];
  }
  const double det = a00 * a11 - a01 * a01;
  if (!(det > 0.0)) throw NumericFailure("portrait: singular fit");
  Fit2 f;
  f.c0 = (r0 * a11 - r1 * a01) / det;
  f.c1 = (a00 * r1 - a01 * r0) / det;
  for (std::size_t i = 0; i < v.size(); ++i) {
    f.misfit = std::max(f.misfit, std::fabs(f.c0 * b0[i] + f.c1 * b1[i] - v[i]));
    f.scale = std::max(f.scale, std::fabs(v[i]));
  }
  return f;
}

}  // namespace

PortraitResult z_phase_portrait(double beta, double y_offset) {
  if (!(beta >= kBetaStar)) throw LocalProblemError("portrait: beta below the critical value");
  if (!(y_offset > 0.0)) throw LocalProblemError("portrait: offset must be positive");
  namespace ode = boost::numeric::odeint;
  const double bp1 = beta + 1.0, a = beta / bp1;
  const double kappa = (3.0 * beta + 1.0) / bp1;
  const double W0 = std::pow(bp1, 1.0 / bp1);

  // v_p = W_p^(b+1); smooth in s once v2 has left the offset.
  auto rhs = [bp1, a](const State& v, State& dv, double) {
    const double v1 = std::max(v[0], 1e-300), v2 = std::max(v[1], 1e-300);
    dv[0] = -v1 + bp1 * (2.0 - std::pow(v1 / v2, a));
    dv[1] = -v2 + bp1 * (2.0 - std::pow(v2 / v1, a));
  };
  const State v_init{4.0 * bp1, y_offset};
  // Samples at s (increasing, >= 0); integration always starts at s = 0.
  auto integrate = [&](std::vector<double> s) {
    const bool pad = s.front() > 0.0;
    if (pad) s.insert(s.begin(), 0.0);
    std::vector<State> out;
    State v = v_init;
    auto stepper = ode::make_controlled(1e-15, 1e-14, ode::runge_kutta_dopri5<State>());
    // The first step must resolve the initial layer of width ~ y_offset.
    ode::integrate_times(stepper, rhs, v, s.begin(), s.end(), 1e-3 * y_offset,
                         [&](const State& x, double) { out.push_back(x); });
    if (pad) out.erase(out.begin());
    return out;
  };
  auto W = [bp1](double v) { return std::pow(v, 1.0 / bp1); };

  PortraitResult res;
  res.beta = beta;
  // Keep the (1,-1) component well above the accumulated integration error.
  res.s_hi = std::max(22.0 / kappa, 9.5);
  const double ds = 0.01;
  std::vector<double> s;
  for (int i = 0; i * ds <= res.s_hi + 1e-12; ++i) s.push_back(i * ds);
  const auto v = integrate(s);
  for (std::size_t i = 0; i < s.size(); i += 5)
    res.trajectory.push_back({s[i], W(v[i][0]) / W0, W(v[i][1]) / W0});
  res.fixed_point_residual =
      std::max(std::fabs(W(v.back()[0]) - W0), std::fabs(W(v.back()[1]) - W0));

  // Move the window start later until the next-order terms are negligible on it.
  bool ok = false;
  for (double s_lo = 2.0; res.s_hi - s_lo >= 2.5; s_lo += 0.5) {
    std::vector<double> e1, e2, ek, ek1, S, D;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] < s_lo) continue;
      const double w1 = W(v[i][0]) - W0, w2 = W(v[i][1]) - W0;
      const double x = s[i] - s_lo;  // shifted to keep the basis of order one
      e1.push_back(std::exp(-x));
      e2.push_back(std::exp(-2.0 * x));
      ek.push_back(std::exp(-kappa * x));
      ek1.push_back(std::exp(-(kappa + 1.0) * x));
      S.push_back(0.5 * (w1 + w2));
      D.push_back(0.5 * (w1 - w2));
    }
    const Fit2 fs = fit_two(e1, e2, S), fd = fit_two(ek, ek1, D);
    const double rem = std::max(std::fabs(fs.c1 / fs.c0), std::fabs(fd.c1 / fd.c0));
    res.fit_residual = std::max(fs.misfit / fs.scale, fd.misfit / fd.scale);
    res.s_lo = s_lo;
    res.A0 = fs.c0 * std::exp(s_lo);
    res.B0 = fd.c0 * std::exp(kappa * s_lo);
    if (rem < 1e-3 && res.fit_residual < 1e-3) {
      ok = true;
      break;
    }
  }
  if (!ok) throw NumericFailure("portrait: no fit window with residual below 1e-3");
  res.S_star = -std::pow(bp1, a) * res.A0;
  res.B_star = res.B0;

  // Y(t - S_star) has no e^-s component left.
  std::vector<double> st, sv;
  for (double x = std::log(2.0 + std::fabs(res.S_star)); x <= res.s_hi; x += 0.05) {
    st.push_back(x);
    sv.push_back(std::log(std::exp(x) + res.S_star));
  }
  const auto vs = integrate(sv);
  for (std::size_t i = 0; i < st.size(); ++i) {
    const double scale = std::exp((sv[i] - st[i]) / bp1) / W0;
    const double z1 = W(vs[i][0]) * scale, z2 = W(vs[i][1]) * scale;
    res.shifted.push_back({st[i], z1, z2});
    const double u1 = z1 - 1.0, u2 = z2 - 1.0;
    const double n = std::hypot(u1, u2);
    res.shifted_angle.push_back(
        n > 0.0 ? std::acos(std::min(1.0, std::fabs(u1 - u2) / (std::sqrt(2.0) * n))) : 0.0);
  }
  return res;
}

Mat2 fundamental_matrix(double beta, double t, double T, double tau_bar) {
  if (!(t < tau_bar)) throw LocalProblemError("fundamental_matrix: t must precede tau_bar");
  if (!(T <= t)) throw LocalProblemError("fundamental_matrix: t must not precede T");
  const double bp1 = beta + 1.0;
  const double rho = (tau_bar - T) / (tau_bar - t);
  const double p = 0.5 * std::pow(rho, beta / bp1), m = 0.5 * std::pow(rho, 3.0 * beta / bp1);
  return {{{p + m, p - m}, {p - m, p + m}}};
}

LinearizedCheck linearized_difference_check(const LadderSpec& spec, double eps, std::size_t j,
                                            const StepControl& ctrl) {
  spec.validate();
  if (!(j > spec.N_star && j <= spec.N)) throw LocalProblemError("linearized check: rung out of range");
  LadderSpec bar = spec;
  bar.eps = 0.0;
  LadderSpec pert = bar;
  pert.eps = eps;
  const std::size_t k = j - 1;
  const std::size_t s1 = ladder_site(bar, k, 1), s2 = ladder_site(bar, k, 2);
  LinearizedCheck out;

  // Pass 1: T_j and the unperturbed vanishing time of rung j-1.
  {
    ParticleSystem a(bar.beta, init_ladder(bar), Boundary::Free);
    ParticleSystem b(bar.beta, init_ladder(pert), Boundary::Free);
    double t = 1.2 * std::pow(bar.R(k), bar.beta + 1.0) / (bar.beta + 1.0);
    for (int grow = 0; a.alive(s1) || a.alive(s2) || b.alive(s1) || b.alive(s2); ++grow) {
      if (grow > 60) throw NumericFailure("linearized check: rung did not vanish");
      advance_joint({&a, &b}, t, ctrl);
      t *= 1.25;
    }
    out.tau_bar = 0.5 * (*a.vanish_time(s1) + *a.vanish_time(s2));
    if (j < spec.N) {
      const std::size_t r1 = ladder_site(bar, j, 1), r2 = ladder_site(bar, j, 2);
      out.T = std::max({*a.vanish_time(r1), *a.vanish_time(r2), *b.vanish_time(r1),
                        *b.vanish_time(r2)});
    }
  }
  const double span = out.tau_bar - out.T;
  if (!(span > 0.0)) throw NumericFailure("linearized check: rung j-1 vanished before T_j");

  // Pass 2: three decades of tau - t, stopping at the first vanishing in either run.
  ParticleSystem a(bar.beta, init_ladder(bar), Boundary::Free);
  ParticleSystem b(bar.beta, init_ladder(pert), Boundary::Free);
  for (int i = 1; i <= 60; ++i) {
    const double t = out.tau_bar - span * std::pow(10.0, -i / 20.0);
    advance_joint({&a, &b}, t, ctrl);
    if (!a.alive(s1) || !a.alive(s2) || !b.alive(s1) || !b.alive(s2)) break;
    out.times.push_back(t);
    out.D1.push_back(b.size_of(s1) - a.size_of(s1));
    out.D2.push_back(b.size_of(s2) - a.size_of(s2));
  }
  const std::size_t n = out.times.size();
  if (eps == 0.0) {
    out.fit1.assign(n, 0.0);
    out.fit2.assign(n, 0.0);
    out.residual_profile.assign(n, 0.0);
    return out;
  }
  double dmax = 0.0;
  for (std::size_t i = 0; i < n; ++i) dmax = std::max({dmax, std::fabs(out.D1[i]), std::fabs(out.D2[i])});
  if (!(dmax > 0.0)) throw NumericFailure("linearized check: no measurable difference");

  // Fit on the first two decades, well before the linearization breaks down.
  const double bp1 = bar.beta + 1.0, a1 = bar.beta / bp1, a3 = 3.0 * bar.beta / bp1;
  std::size_t nfit = 0;
  while (nfit < n && out.tau_bar - out.times[nfit] >= 1e-2 * span * (1.0 - 1e-12)) ++nfit;
  if (nfit < 8) throw NumericFailure("linearized check: too few samples before the breakdown");
  auto basis = [&](std::size_t i, int comp) -> std::array<double, 4> {
    const double d = out.tau_bar - out.times[i], rho = span / d;
    const double sym = std::pow(rho, a1), anti = std::pow(rho, a3);
    return {comp == 0 ? d / span : 0.0, comp == 1 ? d / span : 0.0, sym,
            comp == 0 ? anti : -anti};
  };
  double M[4][4] = {}, r[4] = {};
  for (std::size_t i = 0; i < nfit; ++i)
    for (int comp = 0; comp < 2; ++comp) {
      const auto x = basis(i, comp);
      const double y = (comp == 0 ? out.D1[i] : out.D2[i]) / dmax;
      for (int p = 0; p < 4; ++p) {
        r[p] += x[p] * y;
        for (int q = 0; q < 4; ++q) M[p][q] += x[p] * x[q];
      }
    }
  // Gaussian elimination with partial pivoting.
  for (int c = 0; c < 4; ++c) {
    int best = c;
    for (int rr = c + 1; rr < 4; ++rr)
      if (std::fabs(M[rr][c]) > std::fabs(M[best][c])) best = rr;
    std::swap(M[c], M[best]);
    std::swap(r[c], r[best]);
    if (!(std::fabs(M[c][c]) > 0.0)) throw NumericFailure("linearized check: singular fit");
    for (int rr = c + 1; rr < 4; ++rr) {
      const double f = M[rr][c] / M[c][c];
      for (int q = c; q < 4; ++q) M[rr][q] -= f * M[c][q];
      r[rr] -= f * r[c];
    }
  }
  double coef[4];
  for (int c = 3; c >= 0; --c) {
    double acc = r[c];
    for (int q = c + 1; q < 4; ++q) acc -= M[c][q] * coef[q];
    coef[c] = acc / M[c][c];
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double f[2];
    for (int comp = 0; comp < 2; ++comp) {
      const auto x = basis(i, comp);
      f[comp] = dmax * (coef[0] * x[0] + coef[1] * x[1] + coef[2] * x[2] + coef[3] * x[3]);
    }
    out.fit1.push_back(f[0]);
    out.fit2.push_back(f[1]);
    const double e = std::hypot(out.D1[i] - f[0], out.D2[i] - f[1]);
    const double m = std::hypot(out.D1[i], out.D2[i]);
    out.residual_profile.push_back(m > 0.0 ? e / m : 0.0);
    if (i < nfit) {
      num += e * e;
      den += m * m;
    }
  }
  out.residual = std::sqrt(num / den);

  std::vector<double> d, diff;
  for (std::size_t i = 0; i < nfit; ++i) {
    d.push_back(out.tau_bar - out.times[i]);
    diff.push_back(std::fabs(out.D1[i] - out.D2[i]));
  }
  // Slope of log|D1 - D2| in log(tau - t), over the later decade of the fit range.
  double mx = 0.0, my = 0.0, cnt = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] <= 0.1 * span * (1.0 + 1e-12) && diff[i] > 0.0) {
      mx += std::log(d[i]);
      my += std::log(diff[i]);
      cnt += 1.0;
    }
  if (cnt < 5) throw NumericFailure("linearized check: too few samples for the exponent");
  mx /= cnt;
  my /= cnt;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] <= 0.1 * span * (1.0 + 1e-12) && diff[i] > 0.0) {
      sxx += (std::log(d[i]) - mx) * (std::log(d[i]) - mx);
      sxy += (std::log(d[i]) - mx) * (std::log(diff[i]) - my);
    }
  out.fitted_exponent = -sxy / sxx;
  return out;
}

void write_pair_csv(std::ostream& out, const PairSolution& sol) {
  out << "t,Y1,Y2\n";
  for (std::size_t i = 0; i < sol.times.size(); ++i)
    out << fmt(sol.times[i]) << ',' << fmt(sol.Y1[i]) << ',' << fmt(sol.Y2[i]) << '\n';
}

void write_portrait_csv(std::ostream& out, const PortraitResult& res) {
  out << "s,Z1,Z2\n";
  for (const auto& p : res.trajectory) out << fmt(p[0]) << ',' << fmt(p[1]) << ',' << fmt(p[2]) << '\n';
}

}  // namespace coarsen
