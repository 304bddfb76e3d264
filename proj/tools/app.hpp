#pragma once

// Subcommand implementations behind the gigp executable.

#include "gigp/config.hpp"
#include "gigp/volume.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace gigp::app {

// Exit statuses.
inline constexpr int kOk = 0;
inline constexpr int kValidationFailure = 1;
inline constexpr int kRuntimeFailure = 2;

class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ManifestEntry {
    std::string id;
    std::string file;   // relative to the dataset directory
    std::string split;  // labeled, unlabeled, validation, test
};

struct Manifest {
    std::uint64_t seed = 0;
    std::string config_text;
    std::vector<ManifestEntry> volumes;
};

std::string manifest_json(const Manifest& manifest);
Manifest parse_manifest(const std::string& text);
Manifest load_manifest(const std::filesystem::path& data_dir);

// Volumes of one split, in manifest order. Labels are dropped for the
// unlabeled split.
std::vector<data::Volume> load_split(const std::filesystem::path& data_dir, const Manifest& manifest,
                                     const std::string& split);

Manifest cmd_gen_data(const RunConfig& config, const std::filesystem::path& out_dir, bool force, std::ostream& log);

void cmd_train(const RunConfig& config, const std::filesystem::path& data_dir, const std::filesystem::path& run_dir,
               std::ostream& log);

struct EvalOptions {
    std::filesystem::path checkpoint;
    std::filesystem::path data_dir;
    std::string split = "test";
    std::filesystem::path csv;            // empty: next to the checkpoint
    const RunConfig* expected = nullptr;  // when set, must match the checkpoint
    bool ground_truth = false;            // score labels against themselves
};

train::EvalSummary cmd_eval(const EvalOptions& options, std::ostream& out);
std::string format_eval_csv(const train::EvalSummary& summary);

int cmd_selfcheck(std::uint64_t seed, bool invariants, bool gradients, std::ostream& out);

// Keeps large scratch buffers on the heap instead of fresh mappings per call.
void tune_allocator();

}  // namespace gigp::app
