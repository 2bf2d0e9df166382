#pragma once

#include <filesystem>
#include <string>

#include "lporec/config.hpp"
#include "lporec/data.hpp"
#include "lporec/eval.hpp"

namespace lporec {

// LPO_REC_THREADS, default 1. Canonical runs are single-threaded.
int env_threads();

// Subcommand bodies; the CLI maps thrown errors to exit codes
// (ValidationError -> 2, anything else -> 3).
void cmd_generate(const SyntheticSpec& spec, const std::filesystem::path& out_path);
void cmd_prepare(const std::filesystem::path& in_path, const std::filesystem::path& out_dir);
void cmd_train(const RunConfig& config);
MetricsReport cmd_evaluate(const std::filesystem::path& checkpoint,
                           const std::filesystem::path& split_dir,
                           const std::filesystem::path& out_json, const std::string& split = "test",
                           int threads = 1);
ProbDiagnostics cmd_diagnose(const std::filesystem::path& checkpoint,
                             const std::filesystem::path& split_dir, int bins,
                             const std::filesystem::path& out_csv,
                             const std::string& split = "test", int threads = 1);
void cmd_ablate(const RunConfig& config, const std::filesystem::path& out_csv);

}  // namespace lporec
