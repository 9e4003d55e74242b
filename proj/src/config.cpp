#include "coarsen/config.hpp"

#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <type_traits>

#include "coarsen/io.hpp"

namespace coarsen {

namespace {

constexpr const char* kNames[] = {"run",           "spike",      "phase",         "ladder-tune",
                                  "ladder-amplify", "local-pair", "local-portrait"};

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE)
    throw ConfigError("key '" + key + "': not a number: '" + v + "'");
  return x;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || v[0] == '-' || end != v.c_str() + v.size() || errno == ERANGE)
    throw ConfigError("key '" + key + "': not a non-negative integer: '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field num(T RunConfig::*m) {
  if constexpr (std::is_same_v<T, double>) {
    return {[m](RunConfig& c, const std::string& v) { c.*m = to_double("", v); },
            [m](const RunConfig& c) { return fmt(c.*m); }};
  } else {
    return {[m](RunConfig& c, const std::string& v) { c.*m = static_cast<T>(to_uint("", v)); },
            [m](const RunConfig& c) { return std::to_string(c.*m); }};
  }
}

// Key order is the echo order.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f = {
      {"experiment",
       {[](RunConfig& c, const std::string& v) { c.experiment = parse_experiment(v); },
        [](const RunConfig& c) { return std::string(experiment_name(c.experiment)); }}},
      {"beta", num(&RunConfig::beta)},
      {"n", num(&RunConfig::n)},
      {"halfwidth", num(&RunConfig::halfwidth)},
      {"rungs", num(&RunConfig::rungs)},
      {"n-star", num(&RunConfig::n_star)},
      {"seed", num(&RunConfig::seed)},
      {"rel-tol", num(&RunConfig::rel_tol)},
      {"abs-tol", num(&RunConfig::abs_tol)},
      {"event-tol", num(&RunConfig::event_tol)},
      {"dt-init", num(&RunConfig::dt_init)},
      {"y-floor", num(&RunConfig::y_floor)},
      {"t-end", num(&RunConfig::t_end)},
      {"t-start", num(&RunConfig::t_start)},
      {"samples", num(&RunConfig::samples)},
      {"output-dir",
       {[](RunConfig& c, const std::string& v) { c.output_dir = v; },
        [](const RunConfig& c) { return c.output_dir; }}},
      {"boundary",
       {[](RunConfig& c, const std::string& v) {
          if (v != "periodic" && v != "free") throw ConfigError("boundary must be periodic or free");
          c.boundary = v;
        },
        [](const RunConfig& c) { return c.boundary; }}},
      {"x0", num(&RunConfig::x0)},
      {"spike-rounds", num(&RunConfig::spike_rounds)},
      {"track-halfwidth", num(&RunConfig::track_halfwidth)},
      {"x-lo", num(&RunConfig::x_lo)},
      {"x-hi", num(&RunConfig::x_hi)},
      {"bisect-tol", num(&RunConfig::bisect_tol)},
      {"betas",
       {[](RunConfig& c, const std::string& v) {
          c.betas.clear();
          std::stringstream ss(v);
          for (std::string item; std::getline(ss, item, ',');)
            if (!trim(item).empty()) c.betas.push_back(to_double("betas", trim(item)));
        },
        [](const RunConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.betas.size(); ++i) s += (i ? "," : "") + fmt(c.betas[i]);
          return s;
        }}},
      {"jobs", num(&RunConfig::jobs)},
      {"gamma", num(&RunConfig::gamma)},
      {"eps", num(&RunConfig::eps)},
      {"tol-tau", num(&RunConfig::tol_tau)},
      {"ladder-file",
       {[](RunConfig& c, const std::string& v) { c.ladder_file = v; },
        [](const RunConfig& c) { return c.ladder_file; }}},
      {"a1", num(&RunConfig::a1)},
      {"a2", num(&RunConfig::a2)},
      {"f1", num(&RunConfig::f1)},
      {"f2", num(&RunConfig::f2)},
      {"tune",
       {[](RunConfig& c, const std::string& v) { c.tune = to_bool("tune", v); },
        [](const RunConfig& c) { return std::string(c.tune ? "true" : "false"); }}},
      {"check",
       {[](RunConfig& c, const std::string& v) { c.check = to_bool("check", v); },
        [](const RunConfig& c) { return std::string(c.check ? "true" : "false"); }}},
  };
  return f;
}

const Field* find_field(const std::string& key) {
  for (const auto& [k, f] : fields())
    if (k == key) return &f;
  return nullptr;
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown key '" + key + "'");
  try {
    f->set(cfg, value);
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    // Numeric helpers do not know the key; put it back in front.
    if (msg.rfind("key '':", 0) == 0) throw ConfigError("key '" + key + "'" + msg.substr(6));
    throw;
  }
}

void validate(const RunConfig& c) {
  auto pos = [](double x) { return x > 0.0; };
  if (!pos(c.beta)) throw ConfigError("beta must be positive");
  for (double b : c.betas)
    if (!pos(b)) throw ConfigError("betas must be positive");
  if (!pos(c.rel_tol) || !pos(c.abs_tol) || !pos(c.event_tol) || !pos(c.dt_init) ||
      !pos(c.y_floor))
    throw ConfigError("tolerances must be positive");
  if (!pos(c.t_end) || !pos(c.t_start) || !(c.t_start < c.t_end))
    throw ConfigError("need 0 < t-start < t-end");
  if (c.samples < 2) throw ConfigError("samples must be at least 2");
  if (c.output_dir.empty()) throw ConfigError("output-dir must not be empty");
  if (c.jobs == 0) throw ConfigError("jobs must be at least 1");
  switch (c.experiment) {
    case Experiment::Run:
      if (c.n < 3) throw ConfigError("run: n must be at least 3");
      break;
    case Experiment::Spike:
      if (!(c.x0 > 1.0)) throw ConfigError("spike: x0 must exceed 1");
      if (c.spike_rounds < 3) throw ConfigError("spike: spike-rounds must be at least 3");
      if (c.track_halfwidth < 4) throw ConfigError("spike: track-halfwidth must be at least 4");
      break;
    case Experiment::Phase:
      if (!(c.x_lo > 1.0 && c.x_lo < c.x_hi)) throw ConfigError("phase: need 1 < x-lo < x-hi");
      if (!pos(c.bisect_tol)) throw ConfigError("phase: bisect-tol must be positive");
      break;
    case Experiment::LadderTune:
    case Experiment::LadderAmplify:
      if (c.rungs < 3 || c.n_star >= c.rungs) throw ConfigError("ladder: need rungs >= 3 and n-star < rungs");
      if (!(c.tol_tau > 0.0)) throw ConfigError("ladder: tol-tau must be positive");
      if (!(c.gamma > 0.0 && c.gamma < 1.0 / 3.0))
        throw ConfigError("ladder: gamma must lie in (0,1/3)");
      break;
    case Experiment::LocalPair:
      if (!pos(c.a1) || !pos(c.a2)) throw ConfigError("local-pair: a1 and a2 must be positive");
      break;
    case Experiment::LocalPortrait:
      break;
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

const char* experiment_name(Experiment e) { return kNames[static_cast<int>(e)]; }

Experiment parse_experiment(const std::string& name) {
  for (int i = 0; i < 7; ++i)
    if (name == kNames[i]) return static_cast<Experiment>(i);
  throw ConfigError("unknown experiment '" + name + "'");
}

RunConfig RunConfig::defaults(Experiment e) {
  RunConfig c;
  c.experiment = e;
  switch (e) {
    case Experiment::Run:
      c.t_start = 0.1;
      c.t_end = 400.0;
      break;
    case Experiment::Spike:
      c.beta = 0.1;
      c.t_start = 1.0;
      c.t_end = 1000.0;
      c.samples = 60;
      break;
    case Experiment::Phase:
      c.beta = 0.1;
      break;
    case Experiment::LadderTune:
    case Experiment::LadderAmplify:
      // Vanishing times of the deep rungs are ~R^(b+1) with R down to 0.25^7.
      c.beta = 0.8;
      c.rel_tol = 1e-11;
      c.abs_tol = 1e-30;
      c.event_tol = 1e-17;
      c.dt_init = 1e-12;
      c.y_floor = 1e-40;
      // Rounding noise amplified down the ladder keeps the top rungs near 8e-9.
      c.tol_tau = 1e-8;
      break;
    case Experiment::LocalPair:
    case Experiment::LocalPortrait:
      c.beta = 0.8;
      // Tuned pairs sit at a residual near 6e-11; the default event_tol keeps
      // the 10 event_tol acceptance bound above that.
      c.rel_tol = 1e-12;
      c.abs_tol = 1e-30;
      c.y_floor = 1e-40;
      break;
  }
  return c;
}

StepControl RunConfig::step_control() const {
  StepControl s;
  s.rel_tol = rel_tol;
  s.abs_tol = abs_tol;
  s.event_tol = event_tol;
  s.simultaneity_window = event_tol;
  s.dt_init = dt_init;
  s.y_floor = y_floor;
  return s;
}

std::string RunConfig::echo() const {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + "=" + f.get(*this) + "\n";
  return out;
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::stringstream ss(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(ss, line);) {
    ++line_no;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value");
    set_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig probe;
  apply_config_text(probe, text, "<text>");
  RunConfig cfg = RunConfig::defaults(probe.experiment);
  apply_config_text(cfg, text, "<text>");
  validate(cfg);
  return cfg;
}

RunConfig parse_config(const std::vector<std::string>& args) {
  if (args.empty()) throw ConfigError("missing experiment");
  std::size_t first = 1;
  std::string name = args[0];
  if (name == "ladder" && args.size() > 1 && args[1].rfind("--", 0) != 0) {
    name += "-" + args[1];
    first = 2;
  }
  // The experiment name on the command line wins over one in the file.
  const Experiment exp = parse_experiment(name);
  RunConfig cfg = RunConfig::defaults(exp);
  std::vector<std::pair<std::string, std::string>> flags;
  std::string config_path;
  for (std::size_t i = first; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + a + "'");
    std::string key = a.substr(2), value;
    const auto eq = key.find('=');
    if (eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.erase(eq);
    }
    for (char& ch : key)
      ch = ch == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (eq != std::string::npos) {
      // value already split off
    } else if (key == "check" || key == "tune") {
      value = "true";
    } else {
      if (i + 1 >= args.size()) throw ConfigError("flag '--" + key + "' needs a value");
      value = args[++i];
    }
    if (key == "config") {
      config_path = value;
    } else {
      flags.emplace_back(key, value);
    }
  }
  if (!config_path.empty()) apply_config_text(cfg, read_file(config_path), config_path);
  for (const auto& [k, v] : flags) set_key(cfg, k, v);
  cfg.experiment = exp;
  validate(cfg);
  return cfg;
}

}  // namespace coarsen
