#include <iostream>
#include <string>
#include <vector>

#include "coarsen/cli.hpp"

namespace {

constexpr const char* kUsage = R"(usage: coarsen <experiment> [--config file] [--key value | --key=value]...

experiments: run, spike, phase, ladder-tune (or: ladder tune), ladder-amplify
             (or: ladder amplify), local-pair, local-portrait

Every key of config.txt is also a flag (--beta 0.5, --rel-tol 1e-10, ...).
--check exits with 4 when the experiment misses its acceptance threshold.
exit codes: 0 ok, 2 config error, 3 numeric failure, 4 check failed
)";

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty() || args[0] == "--help" || args[0] == "-h") {
    std::cout << kUsage;
    return args.empty() ? coarsen::kExitConfig : coarsen::kExitOk;
  }
  return coarsen::run_cli(args, std::cout, std::cerr);
}
