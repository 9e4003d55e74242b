#include <doctest.h>

#include <cmath>

#include "coarsen/localproblem.hpp"

using namespace coarsen;

namespace {

StepControl pair_ctrl() {
  StepControl c;
  c.rel_tol = 1e-12;
  c.abs_tol = 1e-30;
  c.y_floor = 1e-40;
  return c;  // event_tol stays at its 1e-10 default
}

PairForcing constant(double v) {
  return [v](double) { return v; };
}

double decoupled(double A, double beta) { return std::pow(A, beta + 1.0) / (beta + 1.0); }

}  // namespace

TEST_SUITE("localproblem") {
  TEST_CASE("equal pair: closed-form vanishing time") {
    for (double beta : {0.8, 1.0, 2.0}) {
      const auto s = solve_pair(beta, 1.2, 1.2, constant(0), constant(0), 0.0, pair_ctrl());
      const double tau = decoupled(1.2, beta);
      CHECK(std::fabs(s.tau1 - tau) <= 1e-8 * tau);
      CHECK(std::fabs(s.tau2 - tau) <= 1e-8 * tau);
    }
  }

  TEST_CASE("smaller particle vanishes first and the gap stays open") {
    const double beta = 0.8, nu = 1e-2;
    const auto s = solve_pair(beta, 1.0, 1.0 - nu, constant(0), constant(0), 0.0, pair_ctrl());
    CHECK(s.tau2 < s.tau1);
    for (std::size_t i = 0; i < s.times.size(); ++i) {
      if (s.times[i] >= s.tau2) continue;
      CHECK(s.Y1[i] - s.Y2[i] >= nu / 2);
      CHECK(s.Y1[i] + s.Y2[i] <= 4.0);
      CHECK(s.Y2[i] >= 0.0);
    }
  }

  TEST_CASE("vanishing times approach the decoupled ones as (nu, eta) -> 0") {
    const double beta = 0.8;
    double prev = INFINITY;
    for (double e : {1e-2, 1e-3, 1e-4}) {
      const auto s = solve_pair(beta, 1.0, 1.0 - e, constant(e / 2), constant(-e / 2), e, pair_ctrl());
      const double r = std::max(std::fabs(s.tau1 - decoupled(1.0, beta)),
                                std::fabs(s.tau2 - decoupled(1.0 - e, beta)));
      CHECK(r < prev);
      prev = r;
    }
    // Frozen at the finest point.
    CHECK(prev == doctest::Approx(4.23e-3).epsilon(0.01));
  }

  TEST_CASE("simultaneous power law") {
    const double beta = 0.8;
    SUBCASE("unforced tuned pair is the exact power law") {
      const auto s = tune_pair(beta, 1.0, constant(0), constant(0), 0.0, pair_ctrl());
      CHECK(s.A2 == 1.0);
      CHECK(simultaneous_power_law_residual(s) <= 10.0 * s.event_tol);
    }
    SUBCASE("constant forcing: ratio bounded and linear in eta") {
      // |tau1 - tau2| after tuning is limited by ulp(A2)^((b+1)/(3b+1)).
      double per_eta[2][2];
      int k = 0;
      for (double eta : {1e-3, 1e-4}) {
        const auto s = tune_pair(beta, 1.0, constant(eta), constant(0), eta, pair_ctrl());
        const double tb = 0.5 * (s.tau1 + s.tau2);
        per_eta[k][0] = simultaneous_power_law_residual(s, std::make_pair(1e-2 * tb, 1e-1 * tb), 1e-7);
        per_eta[k][1] = simultaneous_power_law_residual(s, std::make_pair(1e-3 * tb, 1e-2 * tb), 1e-7);
        ++k;
      }
      for (int i = 0; i < 2; ++i) {
        CHECK(per_eta[i][0] < 2.0);
        CHECK(per_eta[i][1] / per_eta[i][0] == doctest::Approx(1.0).epsilon(0.25));
      }
      CHECK(per_eta[1][0] / per_eta[0][0] == doctest::Approx(1.0).epsilon(0.1));
    }
    SUBCASE("rejects a non-simultaneous pair") {
      const auto s = solve_pair(beta, 1.0, 0.9, constant(0), constant(0), 0.0, pair_ctrl());
      CHECK_THROWS_AS(simultaneous_power_law_residual(s), LocalProblemError);
    }
  }

  TEST_CASE("phase portrait") {
    SUBCASE("beta = 0.8 baseline") {
      const auto p = z_phase_portrait(0.8);
      CHECK(p.S_star > -1.0);
      CHECK(p.S_star < 1.0);
      CHECK(p.B_star > 0.0);
      CHECK(p.fit_residual < 1e-3);
      CHECK(p.fixed_point_residual < 1e-4);
      CHECK(p.S_star == doctest::Approx(-0.4561337597).epsilon(1e-6));
      CHECK(p.B_star == doctest::Approx(1.71048425).epsilon(1e-6));
      REQUIRE(!p.shifted_angle.empty());
      CHECK(std::fabs(p.shifted_angle.back()) < 1e-3);
      // (W1 - W2) e^(ks) tends to 2 B0 on the late part of the trajectory.
      const double kappa = 3.4 / 1.8, w = std::pow(1.8, 1.0 / 1.8);
      const auto& last = p.trajectory.back();
      const double diff = w * (last[1] - last[2]) * std::exp(kappa * last[0]);
      CHECK(diff == doctest::Approx(2.0 * p.B0).epsilon(1e-2));
    }
    SUBCASE("beta = 1 closed form") {
      const auto p = z_phase_portrait(1.0);
      CHECK(p.S_star == doctest::Approx(-1.0 / 3.0).epsilon(1e-6));
      CHECK(p.B_star == doctest::Approx(std::sqrt(2.0)).epsilon(1e-6));
    }
    SUBCASE("stable under the starting offset") {
      const auto a = z_phase_portrait(0.8, 1e-20), b = z_phase_portrait(0.8, 1e-40);
      CHECK(a.S_star == doctest::Approx(b.S_star).epsilon(1e-7));
      CHECK(a.B_star == doctest::Approx(b.B_star).epsilon(1e-7));
    }
    CHECK_THROWS_AS(z_phase_portrait(0.5), LocalProblemError);
  }

  TEST_CASE("fundamental matrix") {
    const double beta = 0.8, T = 0.1, tb = 1.0;
    const Mat2 I = fundamental_matrix(beta, T, T, tb);
    CHECK(I[0][0] == doctest::Approx(1.0));
    CHECK(I[0][1] == doctest::Approx(0.0));
    CHECK(I[1][1] == doctest::Approx(1.0));

    const double t = 0.9, rho = (tb - T) / (tb - t);
    const Mat2 P = fundamental_matrix(beta, t, T, tb);
    const double ls = std::pow(rho, beta / (beta + 1.0)), ld = std::pow(rho, 3.0 * beta / (beta + 1.0));
    CHECK(P[0][0] + P[0][1] == doctest::Approx(ls));
    CHECK(P[1][0] + P[1][1] == doctest::Approx(ls));
    CHECK(P[0][0] - P[0][1] == doctest::Approx(ld));
    CHECK(P[1][0] - P[1][1] == doctest::Approx(-ld));

    // d Phi/dt = (b/(b+1)) / (tb - t) [[2,-1],[-1,2]] Phi
    for (double s : {0.2, 0.5, 0.8, 0.95}) {
      const double h = 1e-6 * (tb - s);
      const Mat2 Pp = fundamental_matrix(beta, s + h, T, tb), Pm = fundamental_matrix(beta, s - h, T, tb);
      const Mat2 P0 = fundamental_matrix(beta, s, T, tb);
      const double c = beta / (beta + 1.0) / (tb - s);
      double err = 0.0, scale = 0.0;
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          const double fd = (Pp[i][j] - Pm[i][j]) / (2 * h);
          const double rhs = c * ((i == 0 ? 2 : -1) * P0[0][j] + (i == 0 ? -1 : 2) * P0[1][j]);
          err = std::max(err, std::fabs(fd - rhs));
          scale = std::max(scale, std::fabs(rhs));
        }
      CHECK(err <= 1e-6 * std::max(1.0, scale));
    }
    CHECK_THROWS_AS(fundamental_matrix(beta, 1.0, T, tb), LocalProblemError);
  }

  TEST_CASE("linearized difference check") {
    StepControl c;
    c.rel_tol = 1e-11;
    c.abs_tol = 1e-30;
    c.event_tol = 1e-17;
    c.simultaneity_window = 1e-17;
    c.y_floor = 1e-40;
    c.dt_init = 1e-12;
    TuneOptions opt;
    opt.ctrl = c;
    opt.tol_tau = 5e-8;
    const LadderSpec spec = tune_simultaneous_vanishing(default_ladder(4, 0.25, 0.8), opt).spec;

    const auto zero = linearized_difference_check(spec, 0.0, 3, c);
    CHECK(zero.residual == 0.0);
    for (double d : zero.D1) CHECK(d == 0.0);

    const auto r = linearized_difference_check(spec, 1e-10, 3, c);
    const double expected = 3.0 * 0.8 / 1.8;
    CHECK(std::fabs(r.fitted_exponent - expected) <= 0.1 * expected);
    CHECK(r.residual < 0.05);
    // The (1,-1) component dominates close to the vanishing.
    CHECK(r.D1.back() * r.D2.back() < 0.0);
    // Linearization degrades towards tau: the profile rises over the last decade.
    const std::size_t n = r.residual_profile.size();
    REQUIRE(n > 20);
    CHECK(r.residual_profile[n - 1] > r.residual_profile[n - 15]);

    CHECK_THROWS(linearized_difference_check(spec, 1e-10, 1, c));
    CHECK_THROWS(linearized_difference_check(spec, 1e-10, 5, c));
  }
}
