#include "coarsen/cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "coarsen/analysis.hpp"
#include "coarsen/io.hpp"
#include "coarsen/localproblem.hpp"
#include "coarsen/scenarios.hpp"

namespace coarsen {

namespace {

using nlohmann::json;

// What an experiment hands back; check_passed is only acted on under --check.
struct Outcome {
  json result = json::object();
  std::size_t events = 0;
  bool check_passed = true;
  std::vector<std::string> check_notes;
  std::vector<std::string> files;
};

json num_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

class OutDir {
 public:
  explicit OutDir(std::string dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }
  std::string path(const std::string& name) const { return dir_ + "/" + name; }
  template <class Fn>
  void write(Outcome& o, const std::string& name, Fn&& fill) const {
    std::ostringstream os;
    fill(os);
    write_text_file(path(name), os.str());
    o.files.push_back(name);
  }

 private:
  std::string dir_;
};

void require(Outcome& o, bool ok, const std::string& what) {
  if (!ok) {
    o.check_passed = false;
    o.check_notes.push_back(what);
  }
}

std::vector<double> sample_times(const RunConfig& c) {
  const double ratio =
      std::pow(c.t_end / c.t_start, 1.0 / static_cast<double>(c.samples - 1));
  return geometric_times(c.t_start, c.t_end, ratio);
}

Boundary boundary_of(const RunConfig& c) {
  return c.boundary == "free" ? Boundary::Free : Boundary::Periodic;
}

// Latest sample time at or below t; the first sample if none is.
double sample_at_or_below(const std::vector<SizeStats>& s, double t) {
  double best = s.front().time;
  for (const auto& x : s)
    if (x.time <= t * (1.0 + 1e-12)) best = x.time;
  return best;
}

// Index of the sample closest to t in log time.
std::size_t nearest(const std::vector<SizeStats>& s, double t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (std::fabs(std::log(s[i].time / t)) < std::fabs(std::log(s[best].time / t))) best = i;
  return best;
}

Outcome run_coarsening(const RunConfig& c, const OutDir& out) {
  Outcome o;
  const auto x0 = init_uniform_random(c.n, c.seed);
  double mean0 = 0.0;
  for (double v : x0) mean0 += v;
  mean0 /= static_cast<double>(x0.size());
  ParticleSystem sys(c.beta, x0, boundary_of(c));
  const double M0 = sys.total_mass();
  std::vector<SizeStats> series;
  std::vector<RescaledHistogram> hists;
  std::vector<double> split_l1;  // even/odd living particles against each other: sampling noise
  HalfLifeMonitor monitor(c.beta);
  double drift_rate = 0.0;
  const auto events = run_sampled(sys, sample_times(c), c.step_control(), [&](const ParticleSystem& s) {
    series.push_back(collect_stats(s, x0));
    hists.push_back(rescaled_density(s));
    std::vector<double> half[2];
    bool odd = false;
    for (double v : s.sizes())
      if (v > 0.0) half[(odd = !odd) ? 1 : 0].push_back(v);
    split_l1.push_back(half[0].empty() || half[1].empty()
                           ? 0.0
                           : l1_distance(rescaled_density(half[0], s.time()), rescaled_density(half[1], s.time())));
    monitor.observe(s.time(), s.sizes());
    drift_rate = std::max(drift_rate, std::fabs(s.total_mass() - M0) / (M0 * s.time()));
  });
  o.events = events.size();
  out.write(o, "stats.csv", [&](std::ostream& os) { write_stats_csv(os, series); });
  out.write(o, "events.csv", [&](std::ostream& os) { write_event_log(os, events); });

  json& r = o.result;
  r["mean0"] = mean0;
  r["initial_mass"] = M0;
  r["final_living"] = sys.living_count();
  r["half_life_violations"] = monitor.violations().size();
  if (sys.boundary() == Boundary::Periodic) r["mass_drift_per_time"] = drift_rate;
  const double expected = 1.0 / (c.beta + 1.0);
  r["expected_exponent"] = expected;
  auto win = growth_fit_window(series, c.beta, mean0);
  if (win && win->second < 10.0 * win->first * (1.0 - 1e-12)) win.reset();
  if (!win) {
    r["growth_fit"] = nullptr;
    require(o, false, "usable growth window shorter than a decade (run longer or with more particles)");
  } else {
    // The late decade of the usable window.
    const double hi = win->second, lo = std::max(win->first, sample_at_or_below(series, hi / 10.0));
    const PowerFit f = fit_growth_exponent(series, lo, hi);
    r["growth_fit"] = {{"t_lo", lo}, {"t_hi", hi}, {"slope", f.slope},
                       {"stderr", f.stderr_slope}, {"samples", f.samples}};
    require(o, std::fabs(f.slope - expected) <= 0.05, "growth slope off 1/(beta+1) by more than 0.05");
    // Self-similarity at hi/4, hi/2, hi.
    std::vector<RescaledHistogram> late;
    for (double t : {hi / 4.0, hi / 2.0, hi}) late.push_back(hists[nearest(series, t)]);
    double worst = 0.0;
    json l1 = json::array();
    for (std::size_t a = 0; a < late.size(); ++a)
      for (std::size_t b = a + 1; b < late.size(); ++b) {
        const double d = l1_distance(late[a], late[b]);
        worst = std::max(worst, d);
        l1.push_back({{"t1", late[a].time}, {"t2", late[b].time}, {"l1", d}});
      }
    r["self_similarity"] = {{"pairs", l1}, {"max_l1", worst},
                            {"split_half_l1_at_t_hi", split_l1[nearest(series, hi)]}};
    require(o, worst < 0.1, "rescaled densities differ by L1 >= 0.1");
    out.write(o, "histograms.csv", [&](std::ostream& os) { write_histogram_csv(os, late); });
  }
  require(o, monitor.violations().empty(), "half-life monitor reported violations");
  return o;
}

SpikeOptions spike_options(const RunConfig& c) {
  SpikeOptions opt;
  opt.halfwidth = c.halfwidth;
  opt.rounds = c.spike_rounds;
  opt.ctrl = c.step_control();
  return opt;
}

Outcome run_spike(const RunConfig& c, const OutDir& out) {
  Outcome o;
  const PhaseOutcome v = classify_spike(c.beta, c.x0, spike_options(c));
  json& r = o.result;
  r["verdict"] = phase_name(v.verdict);
  r["sequential"] = v.sequential;
  r["center_gain_fraction"] = v.center_gain_fraction;
  r["vanish_order"] = v.vanish_order;
  r["classified_at"] = v.time;

  // Long trajectory on a wider lattice for the growth of the maximum.
  const std::size_t hw = c.track_halfwidth;
  const auto x0 = init_spike(c.x0, hw);
  ParticleSystem sys(c.beta, x0, boundary_of(c));
  std::vector<SizeStats> series;
  const auto events = run_sampled(sys, sample_times(c), c.step_control(),
                                  [&](const ParticleSystem& s) { series.push_back(collect_stats(s, x0)); });
  o.events = events.size();
  std::size_t reach = 0;  // furthest vanished offset from the centre
  for (const auto& e : events) reach = std::max(reach, e.index > hw ? e.index - hw : hw - e.index);
  r["front_reach"] = reach;
  r["track_halfwidth"] = hw;
  if (reach + 2 >= hw) r["warning"] = "vanishings reached the lattice edge; enlarge track-halfwidth";
  out.write(o, "stats.csv", [&](std::ostream& os) { write_stats_csv(os, series); });
  out.write(o, "events.csv", [&](std::ostream& os) { write_event_log(os, events); });

  const double hi = series.back().time, lo = sample_at_or_below(series, hi / 10.0);
  const PowerFit f = fit_max_growth(series, lo, hi);
  const double expected = v.verdict == Phase::Concentration ? 1.0 : 1.0 / (c.beta + 1.0);
  r["max_growth"] = {{"t_lo", lo}, {"t_hi", hi}, {"slope", f.slope}, {"stderr", f.stderr_slope},
                     {"expected", expected}};
  require(o, std::fabs(f.slope - expected) <= 0.1, "max-size growth slope off by more than 0.1");
  require(o, reach + 2 < hw, "vanishings reached the lattice edge");
  return o;
}

Outcome run_phase(const RunConfig& c, const OutDir& out) {
  Outcome o;
  std::vector<double> betas{c.beta};
  for (double b : c.betas)
    if (std::find(betas.begin(), betas.end(), b) == betas.end()) betas.push_back(b);
  struct Row {
    std::optional<double> boundary;
    std::string error;
  };
  std::vector<Row> rows(betas.size());
  std::atomic<std::size_t> next{0};
  const SpikeOptions opt = spike_options(c);
  auto worker = [&] {
    for (std::size_t i; (i = next++) < betas.size();) {
      try {
        rows[i].boundary = find_phase_boundary(betas[i], c.x_lo, c.x_hi, c.bisect_tol, opt);
      } catch (const std::exception& e) {
        rows[i].error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < std::min(c.jobs, betas.size()); ++k) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  json table = json::array();
  std::string failure;
  for (std::size_t i = 0; i < betas.size(); ++i) {
    json row = {{"beta", betas[i]}};
    row["boundary"] = rows[i].boundary ? json(*rows[i].boundary) : json(nullptr);
    if (!rows[i].error.empty()) {
      row["error"] = rows[i].error;
      failure = rows[i].error;
    }
    table.push_back(row);
    require(o, rows[i].boundary.has_value(), "no boundary below x-hi for beta=" + fmt(betas[i]));
  }
  o.result["x_lo"] = c.x_lo;
  o.result["x_hi"] = c.x_hi;
  o.result["rounds"] = opt.rounds;
  o.result["rows"] = table;
  if (!rows.empty() && rows[0].boundary) o.result["boundary"] = *rows[0].boundary;
  out.write(o, "phase.csv", [&](std::ostream& os) {
    os << "beta,boundary\n";
    for (std::size_t i = 0; i < betas.size(); ++i)
      os << fmt(betas[i]) << ',' << (rows[i].boundary ? fmt(*rows[i].boundary) : "") << '\n';
  });
  if (!failure.empty()) throw NumericFailure("phase: " + failure);
  return o;
}

json ladder_json(const TuneReport& rep) {
  const LadderSpec& s = rep.spec;
  json j = {{"N", s.N},         {"N_star", s.N_star},     {"gamma", s.gamma},
            {"beta", s.beta},   {"R1", s.R1},             {"R2", s.R2},
            {"sweeps", rep.sweeps}, {"converged", rep.converged}, {"max_dtau", rep.max_dtau},
            {"worst_rung", rep.worst_rung}};
  json d = json::array();
  for (double v : rep.dtau) d.push_back(num_or_null(v));
  j["dtau"] = d;
  return j;
}

TuneReport tune_from_config(const RunConfig& c) {
  TuneOptions opt;
  opt.tol_tau = c.tol_tau;
  opt.strict = false;
  opt.ctrl = c.step_control();
  return tune_simultaneous_vanishing(default_ladder(c.rungs, c.gamma, c.beta, c.n_star), opt);
}

Outcome run_ladder_tune(const RunConfig& c, const OutDir& out) {
  Outcome o;
  const TuneReport rep = tune_from_config(c);
  o.result = ladder_json(rep);
  out.write(o, "ladder.json", [&](std::ostream& os) { os << ladder_json(rep).dump(2) << '\n'; });
  if (!rep.converged) {
    std::ostringstream os;
    os << "ladder-tune: max |tau2 - tau1| = " << rep.max_dtau << " at rung " << rep.worst_rung
       << " after " << rep.sweeps << " sweeps exceeds tol-tau";
    throw NumericFailure(os.str());
  }
  return o;
}

LadderSpec load_ladder(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read ladder file '" + path + "'");
  json j;
  try {
    in >> j;
    LadderSpec s;
    s.N = j.at("N").get<std::size_t>();
    s.N_star = j.at("N_star").get<std::size_t>();
    s.gamma = j.at("gamma").get<double>();
    s.beta = j.at("beta").get<double>();
    s.R1 = j.at("R1").get<std::vector<double>>();
    s.R2 = j.at("R2").get<std::vector<double>>();
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ConfigError("ladder file '" + path + "': " + e.what());
  } catch (const ScenarioError& e) {
    throw ConfigError("ladder file '" + path + "': " + e.what());
  }
}

Outcome run_ladder_amplify(const RunConfig& c, const OutDir& out) {
  Outcome o;
  LadderSpec spec;
  if (!c.ladder_file.empty()) {
    spec = load_ladder(c.ladder_file);
  } else {
    const TuneReport rep = tune_from_config(c);
    spec = rep.spec;
    o.result["tuning"] = ladder_json(rep);
  }
  const AmplificationResult a = amplification_experiment(spec, c.eps, c.step_control());
  json& r = o.result;
  r["eps"] = c.eps;
  r["rungs"] = a.rungs;
  r["deltas"] = a.deltas;
  r["T"] = a.T;
  r["noise"] = a.noise;
  r["usable"] = a.usable;
  r["warnings"] = a.warnings;
  const double b = spec.beta;
  const double e_exp = 1.0 / (3.0 * b + 1.0), r_exp = (4.0 * b + 1.0) / (3.0 * b + 1.0);
  r["expected_exponent"] = e_exp;
  r["expected_R_coefficient"] = r_exp;
  if (c.eps != 0.0) {
    r["fitted_exponent"] = a.fitted_exponent;
    r["fitted_R_coefficient"] = a.fitted_R_coefficient;
    r["fitted_prefactor"] = a.fitted_prefactor;
    require(o, std::fabs(a.fitted_exponent - e_exp) <= 0.10 * e_exp, "delta exponent off by more than 10%");
    require(o, std::fabs(a.fitted_R_coefficient - r_exp) <= 0.15 * r_exp, "R coefficient off by more than 15%");
    require(o, a.usable.size() >= 4, "fewer than 4 usable rungs");
  }
  out.write(o, "amplification.csv", [&](std::ostream& os) {
    os << "rung,T,delta,d0,d3_next,noise,usable\n";
    for (std::size_t i = 0; i < a.rungs.size(); ++i) {
      const bool u = std::find(a.usable.begin(), a.usable.end(), a.rungs[i]) != a.usable.end();
      os << a.rungs[i] << ',' << fmt(a.T[i]) << ',' << fmt(a.deltas[i]) << ',' << fmt(a.d0[i]) << ','
         << fmt(a.d3_next[i]) << ',' << fmt(a.noise[i]) << ',' << (u ? 1 : 0) << '\n';
    }
  });
  return o;
}

Outcome run_local_pair(const RunConfig& c, const OutDir& out) {
  Outcome o;
  const double f1 = c.f1, f2 = c.f2;
  const PairForcing F1 = [f1](double) { return f1; };
  const PairForcing F2 = [f2](double) { return f2; };
  const double eta = std::fabs(f1) + std::fabs(f2);
  const StepControl ctrl = c.step_control();
  const PairSolution sol = c.tune ? tune_pair(c.beta, c.a1, F1, F2, eta, ctrl)
                                  : solve_pair(c.beta, c.a1, c.a2, F1, F2, eta, ctrl);
  o.events = 2;
  json& r = o.result;
  const double b1 = c.beta + 1.0;
  const double t1 = std::pow(sol.A1, b1) / b1, t2 = std::pow(sol.A2, b1) / b1;
  r["A1"] = sol.A1;
  r["A2"] = sol.A2;
  r["eta"] = eta;
  r["tau1"] = sol.tau1;
  r["tau2"] = sol.tau2;
  r["decoupled_tau1"] = t1;
  r["decoupled_tau2"] = t2;
  r["decoupled_residual"] = std::max(std::fabs(sol.tau1 - t1), std::fabs(sol.tau2 - t2));
  std::optional<double> plaw;
  try {
    plaw = simultaneous_power_law_residual(sol);
    r["power_law_residual"] = *plaw;
  } catch (const LocalProblemError& e) {
    r["power_law_residual"] = nullptr;
    r["power_law_note"] = e.what();
  }
  out.write(o, "pair.csv", [&](std::ostream& os) { write_pair_csv(os, sol); });
  if (c.a1 == c.a2 && eta == 0.0 && !c.tune) {
    require(o, std::fabs(sol.tau1 - t1) <= 1e-8 * t1 && std::fabs(sol.tau2 - t2) <= 1e-8 * t2,
            "equal pair misses the closed-form vanishing time by more than 1e-8 relative");
  } else if (c.tune && eta == 0.0) {
    require(o, plaw && *plaw <= 10.0 * ctrl.event_tol, "tuned pair residual above 10 event-tol");
  } else if (c.tune) {
    require(o, plaw.has_value() && std::isfinite(*plaw), "tuned pair has no finite power-law ratio");
  }
  return o;
}

Outcome run_local_portrait(const RunConfig& c, const OutDir& out) {
  Outcome o;
  const PortraitResult p = z_phase_portrait(c.beta);
  json& r = o.result;
  r["S_star"] = p.S_star;
  r["B_star"] = p.B_star;
  r["A0"] = p.A0;
  r["B0"] = p.B0;
  r["fit_residual"] = p.fit_residual;
  r["window"] = {p.s_lo, p.s_hi};
  r["fixed_point_residual"] = p.fixed_point_residual;
  r["final_shifted_angle"] = p.shifted_angle.empty() ? json(nullptr) : json(p.shifted_angle.back());
  out.write(o, "portrait.csv", [&](std::ostream& os) { write_portrait_csv(os, p); });
  out.write(o, "shifted.csv", [&](std::ostream& os) {
    os << "s,Z1,Z2,angle\n";
    for (std::size_t i = 0; i < p.shifted.size(); ++i)
      os << fmt(p.shifted[i][0]) << ',' << fmt(p.shifted[i][1]) << ',' << fmt(p.shifted[i][2]) << ','
         << fmt(p.shifted_angle[i]) << '\n';
  });
  require(o, p.S_star > -1.0 && p.S_star < 1.0, "S_star outside (-1,1)");
  require(o, p.B_star > 0.0, "B_star not positive");
  require(o, p.fit_residual < 1e-3, "portrait fit residual above 1e-3");
  return o;
}

Outcome dispatch(const RunConfig& c, const OutDir& out) {
  switch (c.experiment) {
    case Experiment::Run: return run_coarsening(c, out);
    case Experiment::Spike: return run_spike(c, out);
    case Experiment::Phase: return run_phase(c, out);
    case Experiment::LadderTune: return run_ladder_tune(c, out);
    case Experiment::LadderAmplify: return run_ladder_amplify(c, out);
    case Experiment::LocalPair: return run_local_pair(c, out);
    case Experiment::LocalPortrait: return run_local_portrait(c, out);
  }
  throw ConfigError("unhandled experiment");
}

json config_json(const RunConfig& c) {
  json j = json::object();
  std::istringstream in(c.echo());
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    j[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return j;
}

json error_record(const std::string& kind, const std::string& message, int code) {
  return {{"kind", kind}, {"message", message}, {"exit_code", code}};
}

}  // namespace

std::string content_hash(const std::string& text) {
  const std::string blob = "blob " + std::to_string(text.size()) + '\0' + text;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), md, &len, EVP_sha1(), nullptr) != 1)
    throw std::runtime_error("sha1 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

int execute(const RunConfig& cfg, std::ostream& log) {
  const OutDir out(cfg.output_dir);
  const std::string echo = cfg.echo();
  write_text_file(out.path("config.txt"), echo);
  json meta = {{"experiment", experiment_name(cfg.experiment)},
               {"config", config_json(cfg)},
               {"config_hash", content_hash(echo)},
               {"seed", cfg.seed},
               {"tolerances",
                {{"rel_tol", cfg.rel_tol}, {"abs_tol", cfg.abs_tol}, {"event_tol", cfg.event_tol}}}};
  const auto t0 = std::chrono::steady_clock::now();
  int code = kExitOk;
  try {
    Outcome o = dispatch(cfg, out);
    write_text_file(out.path("result.json"), o.result.dump(2) + "\n");
    o.files.push_back("result.json");
    meta["event_count"] = o.events;
    meta["outputs"] = o.files;
    meta["check"] = {{"requested", cfg.check}, {"passed", o.check_passed}, {"notes", o.check_notes}};
    meta["status"] = "ok";
    meta["error"] = nullptr;
    if (cfg.check && !o.check_passed) {
      code = kExitCheck;
      meta["status"] = "check-failed";
      std::string msg;
      for (const auto& n : o.check_notes) msg += (msg.empty() ? "" : "; ") + n;
      meta["error"] = error_record("check", msg, code);
    }
  } catch (const ConfigError& e) {
    code = kExitConfig;
    meta["status"] = "incomplete";
    meta["error"] = error_record("config", e.what(), code);
  } catch (const AnalysisError& e) {
    code = kExitNumeric;
    meta["status"] = "incomplete";
    meta["error"] = error_record("numeric", e.what(), code);
  } catch (const std::invalid_argument& e) {
    // Domain errors raised by a module on values the config let through.
    code = kExitConfig;
    meta["status"] = "incomplete";
    meta["error"] = error_record("config", e.what(), code);
  } catch (const std::exception& e) {
    code = kExitNumeric;
    meta["status"] = "incomplete";
    meta["error"] = error_record("numeric", e.what(), code);
  }
  meta["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  meta["exit_code"] = code;
  write_text_file(out.path("metadata.json"), meta.dump(2) + "\n");
  log << experiment_name(cfg.experiment) << ": " << meta["status"].get<std::string>() << " -> "
      << cfg.output_dir << "\n";
  if (!meta["error"].is_null()) log << "  " << meta["error"]["message"].get<std::string>() << "\n";
  return code;
}

int run_cli(const std::vector<std::string>& args, std::ostream& log, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = parse_config(args);
  } catch (const ConfigError& e) {
    err << error_record("config", e.what(), kExitConfig).dump() << "\n";
    return kExitConfig;
  }
  return execute(cfg, log);
}

}  // namespace coarsen
