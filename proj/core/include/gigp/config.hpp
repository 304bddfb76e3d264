#pragma once

// Flat key=value run configuration with section prefixes (net.*, train.*,
// ablation.*, phantom.*, data.*, paths.*). Blank lines and lines starting
// with '#' are ignored. Every key has a default.

#include "gigp/phantom.hpp"
#include "gigp/segnet.hpp"
#include "gigp/trainer.hpp"
#include "gigp/volume.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace gigp {

struct DataConfig {
    data::SplitSizes split;
    int num_labeled = 4;
    std::uint64_t seed = 7;
};

struct PathConfig {
    std::string data_dir;
    std::string run_dir;
};

struct RunConfig {
    net::NetConfig net;
    train::TrainConfig train;
    data::PhantomSpec phantom;
    DataConfig data;
    PathConfig paths;
};

bool operator==(const RunConfig& a, const RunConfig& b);

// Carries every offending key so callers can report them all at once.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(const std::string& message, std::vector<std::string> keys)
        : std::invalid_argument(message), keys_(std::move(keys)) {}
    const std::vector<std::string>& keys() const { return keys_; }

private:
    std::vector<std::string> keys_;
};

std::vector<std::string> config_keys();

// Applies the assignments in `text` on top of `base`.
RunConfig parse_config(const std::string& text, const RunConfig& base = {});
RunConfig load_config(const std::filesystem::path& path, const RunConfig& base = {});
// One assignment; throws ConfigError for unknown keys or bad values.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

// Every key in canonical order; parse_config(to_config_text(c)) == c.
std::string to_config_text(const RunConfig& config);

// Semantic validation of all sections; ConfigError lists every offending key.
void validate_config(const RunConfig& config);

// Network and training configs with the ablation switches applied.
net::NetConfig effective_net(const RunConfig& config);
train::TrainConfig effective_train(const RunConfig& config);

const char* build_id();

}  // namespace gigp
