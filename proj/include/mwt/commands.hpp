#pragma once

#include "mwt/config.hpp"

#include <optional>
#include <string>

namespace mwt {

struct CommandOptions {
    std::string out_dir;                       // overrides io.out_dir when set
    std::optional<std::uint64_t> seed;         // overrides train.seeds with one seed
    int jobs = 1;                              // accepted; runs execute sequentially
};

/// Each command returns a process exit code: 0 iff every requested run
/// completed. Output files land in the run's output directory together with
/// a byte copy of the config and its hash.
int cmd_pretrain(const RunConfig& cfg, const CommandOptions& opt);
int cmd_finetune(const RunConfig& cfg, const CommandOptions& opt);
int cmd_sweep(const RunConfig& cfg, const CommandOptions& opt);
int cmd_benchmark(const RunConfig& cfg, const CommandOptions& opt);
int cmd_analyze(const RunConfig& cfg, const CommandOptions& opt);

}  // namespace mwt
