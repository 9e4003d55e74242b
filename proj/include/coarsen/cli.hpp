#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "coarsen/config.hpp"

namespace coarsen {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitCheck = 4;

// git blob id of the text: sha1("blob <len>\0" + text), lower-case hex.
std::string content_hash(const std::string& text);

// Runs one experiment into cfg.output_dir. Always leaves config.txt and
// metadata.json behind; metadata.status is ok, check-failed or incomplete.
int execute(const RunConfig& cfg, std::ostream& log);

// Full command line minus the program name. Config errors are reported on
// `err` as one JSON line.
int run_cli(const std::vector<std::string>& args, std::ostream& log, std::ostream& err);

}  // namespace coarsen
