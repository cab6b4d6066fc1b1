#pragma once

#include <iosfwd>
#include <string>

#include "shine/run_config.hpp"

namespace shine {

// One function per CLI command. Progress and summaries go to `out`; every
// failure is a std::runtime_error naming the offending input. Artifacts land
// in cfg.out_dir, which is created on demand.
void cmd_preprocess(const RunConfig& cfg, std::ostream& out);
void cmd_build_graphs(const RunConfig& cfg, std::ostream& out);
void cmd_train(const RunConfig& cfg, std::ostream& out);
void cmd_eval(const RunConfig& cfg, std::ostream& out);
void cmd_ablate(const RunConfig& cfg, std::ostream& out);
void cmd_sweep(const RunConfig& cfg, std::ostream& out);

// Dispatch by command name (preprocess, build-graphs, train, eval, ablate,
// sweep). Throws on an unknown name.
void run_command(const std::string& name, const RunConfig& cfg, std::ostream& out);

}  // namespace shine
