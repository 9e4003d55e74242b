#include <doctest.h>

#include <cmath>
#include <sstream>

#include "coarsen/dynamics.hpp"
#include "coarsen/scenarios.hpp"

using namespace coarsen;

TEST_SUITE("dynamics") {
  TEST_CASE("rhs") {
    ParticleSystem c(0.5, {2, 2, 2, 2}, Boundary::Periodic);
    for (double v : rhs(c)) CHECK(v == doctest::Approx(0.0));
    ParticleSystem lone(0.5, {0, 1, 0}, Boundary::Free);
    CHECK(rhs(lone)[1] == doctest::Approx(-2.0));
    CHECK(rhs(lone)[0] == 0.0);
    ParticleSystem a(1.0, {1, 2, 1}, Boundary::Free);
    CHECK(rhs(a)[1] == doctest::Approx(1.0));
  }

  TEST_CASE("regularized rhs") {
    for (double beta : {0.3, 0.8, 2.0}) {
      ParticleSystem lone(beta, {0, 0.37, 0}, Boundary::Free);
      CHECK(rhs_regularized(lone)[1] == doctest::Approx(-2.0 * (beta + 1.0)));
      ParticleSystem c(beta, {3, 3, 3}, Boundary::Periodic);
      CHECK(rhs_regularized(c)[1] == doctest::Approx(0.0));
    }
    // Bounded as x_j -> 0: (b+1)(2 x^b - 2) with neighbours 1.
    ParticleSystem s(1.0, {1, 1e-8, 1}, Boundary::Free);
    CHECK(std::fabs(rhs_regularized(s)[1] + 4.0) <= 1e-6);
  }

  TEST_CASE("lone particle vanishes at the closed-form time") {
    StepControl ctrl;
    ParticleSystem s(1.0, {1}, Boundary::Free);
    const auto ev = advance_to(s, 1.0, ctrl);
    REQUIRE(ev.size() == 1);
    CHECK(std::fabs(ev[0].tau - 0.25) <= ctrl.event_tol);
    CHECK(s.time() == 1.0);
    CHECK(s.living_count() == 0);
  }

  TEST_CASE("equal pair vanishes together at A^(b+1)/(b+1)") {
    StepControl ctrl;
    const double beta = 0.8, A = 1.3;
    ParticleSystem s(beta, {A, A}, Boundary::Free);
    const auto ev = advance_to(s, 5.0, ctrl);
    REQUIRE(ev.size() == 2);
    const double tau = std::pow(A, beta + 1.0) / (beta + 1.0);
    for (const auto& e : ev) CHECK(std::fabs(e.tau - tau) <= ctrl.event_tol);
  }

  TEST_CASE("symmetric data stays symmetric") {
    const std::size_t hw = 20;
    std::vector<double> x = init_uniform_random(hw + 1, 9);
    std::vector<double> sym(2 * hw + 1);
    for (std::size_t k = 0; k <= hw; ++k) sym[hw + k] = sym[hw - k] = x[k] + 0.2;
    ParticleSystem s(0.5, sym, Boundary::Free);
    StepControl ctrl;
    double worst = 0.0;
    for (double t = 0.05; t <= 2.0; t += 0.05) {
      advance_to(s, t, ctrl);
      for (std::size_t k = 1; k <= hw; ++k)
        worst = std::max(worst, std::fabs(s.size_of(hw + k) - s.size_of(hw - k)));
    }
    CHECK(s.living_count() < 2 * hw + 1);
    CHECK(worst <= 1e-10);
  }

  TEST_CASE("vanished particles stay vanished and events are ordered") {
    ParticleSystem s(0.5, init_uniform_random(200, 5), Boundary::Periodic);
    StepControl ctrl;
    double last = 0.0;
    std::vector<char> gone(200, 0);
    for (double t = 0.1; t <= 3.0; t += 0.1) {
      for (const auto& e : advance_to(s, t, ctrl)) {
        CHECK(e.tau >= last);
        last = e.tau;
        CHECK_FALSE(gone[e.index]);
        gone[e.index] = 1;
      }
      for (Index j = 0; j < 200; ++j)
        if (gone[j]) REQUIRE(s.size_of(j) == 0.0);
    }
  }

  TEST_CASE("mass: conserved when periodic, non-increasing when free") {
    // Integrating in y does not conserve x-mass exactly; the drift scales with rel_tol.
    StepControl ctrl;
    ctrl.rel_tol = 1e-9;
    ParticleSystem p(0.5, init_uniform_random(300, 11), Boundary::Periodic);
    ParticleSystem f(0.5, init_uniform_random(300, 11), Boundary::Free);
    const double Mp = p.total_mass();
    double Mf = f.total_mass();
    for (double t = 0.25; t <= 5.0; t += 0.25) {
      advance_to(p, t, ctrl);
      advance_to(f, t, ctrl);
      CHECK(std::fabs(p.total_mass() - Mp) <= 1e-9 * Mp * t);
      CHECK(f.total_mass() <= Mf * (1.0 + 1e-12));
      Mf = f.total_mass();
    }
  }

  TEST_CASE("vanishing follows the (tau - t)^(1/(b+1)) law") {
    const double beta = 0.5;
    StepControl ctrl;
    ParticleSystem probe(beta, {1, 0.3, 1}, Boundary::Free);
    const auto ev = advance_to(probe, 1.0, ctrl);
    REQUIRE(!ev.empty());
    REQUIRE(ev[0].index == 1);
    const double tau = ev[0].tau;
    double lo = 1e300, hi = 0.0;
    ParticleSystem s(beta, {1, 0.3, 1}, Boundary::Free);
    for (int k = 0; k <= 16; ++k) {
      const double d = tau * 1e-2 * std::pow(10.0, -k / 8.0);  // last decade and below
      advance_to(s, tau - d, ctrl);
      const double r = s.size_of(1) / std::pow(d, 1.0 / (beta + 1.0));
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
    // Neighbours near 1 give the lone-particle constant (2(b+1))^(1/(b+1)) up to O(1) factors.
    CHECK(lo > 0.5);
    CHECK(hi < 4.0);
    CHECK(hi / lo < 1.2);
  }

  TEST_CASE("reference integrator") {
    SUBCASE("lone particle converges at first order in dt or better") {
      for (double dt : {1e-2, 1e-3}) {
        ParticleSystem s(1.0, {1}, Boundary::Free);
        const auto ev = reference_advance(s, 1.0, dt);
        REQUIRE(ev.size() == 1);
        CHECK(std::fabs(ev[0].tau - 0.25) <= dt);
      }
    }
    SUBCASE("agrees with the adaptive integrator on random 10-particle systems") {
      StepControl ctrl;
      for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto x = init_uniform_random(10, seed);
        for (double& v : x) v += 0.5;
        const double xmax = *std::max_element(x.begin(), x.end());
        ParticleSystem a(0.5, x, Boundary::Periodic), b(0.5, x, Boundary::Periodic);
        std::vector<VanishEvent> ea, eb;
        double worst = 0.0;
        for (int k = 1; k <= 20; ++k) {
          const double t = 0.05 * k;
          for (auto& e : advance_to(a, t, ctrl)) ea.push_back(e);
          for (auto& e : reference_advance(b, t, 1e-4)) eb.push_back(e);
          for (Index j = 0; j < 10; ++j) worst = std::max(worst, std::fabs(a.size_of(j) - b.size_of(j)));
        }
        CHECK(worst <= 10.0 * ctrl.rel_tol * xmax);
        REQUIRE(ea.size() == eb.size());
        for (std::size_t i = 0; i < ea.size(); ++i) {
          CHECK(ea[i].index == eb[i].index);
          CHECK(std::fabs(ea[i].tau - eb[i].tau) <= std::max(ctrl.event_tol, 10 * 1e-4));
        }
      }
    }
  }

  TEST_CASE("half-life monitor") {
    const double beta = 0.5;
    SUBCASE("negative control: size halved in no time") {
      const auto v = half_life_monitor(beta, {{0.0, {1.0, 1.0}}, {1e-6, {0.4, 1.0}}});
      REQUIRE(v.size() == 1);
      CHECK(v[0].index == 0);
    }
    SUBCASE("lone particle meets the bound with equality") {
      // y = 1 - 2(b+1)t reaches 2^-(b+1), i.e. x = 1/2, exactly at the protected time.
      const double tp = HalfLifeMonitor::protected_time(beta, 1.0);
      std::vector<std::pair<double, std::vector<double>>> samples;
      for (int k = 0; k <= 10; ++k) {
        const double t = tp * k / 10.0;
        samples.push_back({t, {std::pow(1.0 - 2.0 * (beta + 1.0) * t, 1.0 / (beta + 1.0))}});
      }
      CHECK(samples.back().second[0] == doctest::Approx(0.5));
      CHECK(half_life_monitor(beta, samples, 16).empty());
    }
    SUBCASE("correct run") {
      ParticleSystem s(beta, init_uniform_random(500, 2), Boundary::Periodic);
      HalfLifeMonitor mon(beta);
      StepControl ctrl;
      for (double t = 0.01; t < 5.0; t *= 1.3) {
        advance_to(s, t, ctrl);
        mon.observe(t, s.sizes());
      }
      CHECK(mon.violations().empty());
    }
  }

  TEST_CASE("event log csv") {
    std::ostringstream os;
    write_event_log(os, {{3, 0.5, Index{2}, std::nullopt}});
    CHECK(os.str() == "index,tau,left,right\n3,0.5,2,\n");
  }

  TEST_CASE("step control validation") {
    StepControl c;
    c.rel_tol = 0.0;
    CHECK_THROWS(c.validate());
  }
}
