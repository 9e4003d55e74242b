#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "coarsen/dynamics.hpp"

namespace coarsen {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class Experiment { Run, Spike, Phase, LadderTune, LadderAmplify, LocalPair, LocalPortrait };

const char* experiment_name(Experiment e);
Experiment parse_experiment(const std::string& name);

// Every key a config file or flag may set. Keys are kebab-case; the same
// spelling is used in files (key=value) and on the command line (--key value).
struct RunConfig {
  Experiment experiment = Experiment::Run;
  double beta = 0.5;
  std::size_t n = 100000;      // run: particle count
  std::size_t halfwidth = 0;   // spike: 0 picks 4*rounds+8
  std::size_t rungs = 8;       // ladder: N
  std::size_t n_star = 1;
  std::uint64_t seed = 1;
  double rel_tol = 1e-8;
  double abs_tol = 1e-12;
  double event_tol = 1e-10;
  double dt_init = 1e-4;
  double y_floor = 1e-14;
  double t_end = 1e4;
  double t_start = 1e-2;       // first sampled time
  std::size_t samples = 80;    // sampled times per run (geometric spacing)
  std::string output_dir = "out";
  std::string boundary = "periodic";

  double x0 = 10.0;            // spike height
  std::size_t spike_rounds = 8;
  std::size_t track_halfwidth = 2000;  // spike: lattice for the max-size trajectory; fronts travel ~1.3 sites per unit time at beta 0.3
  double x_lo = 1.1, x_hi = 100.0, bisect_tol = 0.02;
  std::vector<double> betas;   // phase: extra beta values, run in parallel
  std::size_t jobs = 1;

  double gamma = 0.25;
  double eps = 1e-10;
  double tol_tau = 1e-9;       // ladder: target max |tau2 - tau1| per rung
  std::string ladder_file;     // ladder-amplify: tuned R1,R2 from ladder-tune

  double a1 = 1.0, a2 = 1.0;
  double f1 = 0.0, f2 = 0.0;   // constant forcing for local-pair
  bool tune = false;           // local-pair: bisect A2 for simultaneous vanishing

  bool check = false;

  // Defaults for one experiment before any file or flag is applied.
  static RunConfig defaults(Experiment e);
  StepControl step_control() const;
  // key=value lines in a fixed key order; parse_config_text reads it back.
  std::string echo() const;
};

// Applies `key=value` text (one per line, `#` starts a comment) onto cfg.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin);

// args[0] is the experiment (`ladder tune` is accepted for `ladder-tune`);
// `--config path` loads a file first and the remaining flags override it
// regardless of their position. Flag names are matched case-insensitively
// with `_` read as `-`.
RunConfig parse_config(const std::vector<std::string>& args);

// The experiment key, if present, selects the defaults; otherwise `run`.
RunConfig parse_config_text(const std::string& text);

}  // namespace coarsen
