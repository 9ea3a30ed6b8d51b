#pragma once

#include <iosfwd>

namespace maskfuse {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitPrecondition = 3;
inline constexpr int kExitNumerical = 4;

inline constexpr const char* kCodeVersion = "0.1.0";

// Subcommands: gen-data, split, pretrain, finetune, evaluate, stress, report.
// Each writes into `--out` through a sibling ".partial" directory that is
// renamed on success and removed on failure, and leaves a run_manifest.json
// listing every produced file with its SHA-256.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace maskfuse
