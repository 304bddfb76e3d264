#include "gigp/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#ifndef GIGP_BUILD_ID
#define GIGP_BUILD_ID "gigp-dev"
#endif

namespace gigp {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& s) {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
}

long long parse_int(const std::string& s) {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw std::invalid_argument("not a boolean");
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    if (s.empty() || s == "auto") return out;
    for (const auto& item : split_list(s)) out.push_back(parse_double(item));
    return out;
}

std::string fmt_double_list(const std::vector<double>& v) {
    if (v.empty()) return "auto";
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt_double(v[i]);
    return out;
}

std::array<int, 3> parse_triple(const std::string& s) {
    const auto items = split_list(s);
    if (items.size() != 3) throw std::invalid_argument("expected three comma-separated integers");
    std::array<int, 3> out{};
    for (int i = 0; i < 3; ++i) out[i] = static_cast<int>(parse_int(items[i]));
    return out;
}

std::string fmt_triple(const std::array<int, 3>& v) {
    return std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]);
}

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Access>
Field double_field(Access access) {
    return {[access](const RunConfig& c) { return fmt_double(access(const_cast<RunConfig&>(c))); },
            [access](RunConfig& c, const std::string& v) { access(c) = parse_double(v); }};
}

template <typename Access>
Field int_field(Access access) {
    return {[access](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); },
            [access](RunConfig& c, const std::string& v) {
                using T = std::remove_reference_t<decltype(access(c))>;
                if constexpr (std::is_unsigned_v<T>) {
                    if (!v.empty() && v[0] == '-') throw std::invalid_argument("must be non-negative");
                    std::size_t used = 0;
                    const unsigned long long x = std::stoull(v, &used);
                    if (used != v.size()) throw std::invalid_argument("trailing characters");
                    access(c) = static_cast<T>(x);
                } else {
                    access(c) = static_cast<T>(parse_int(v));
                }
            }};
}

template <typename Access>
Field bool_field(Access access) {
    return {[access](const RunConfig& c) { return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false"); },
            [access](RunConfig& c, const std::string& v) { access(c) = parse_bool(v); }};
}

template <typename Access>
Field string_field(Access access) {
    return {[access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)); },
            [access](RunConfig& c, const std::string& v) { access(c) = v; }};
}

template <typename Access>
Field triple_field(Access access) {
    return {[access](const RunConfig& c) { return fmt_triple(access(const_cast<RunConfig&>(c))); },
            [access](RunConfig& c, const std::string& v) { access(c) = parse_triple(v); }};
}

template <typename Access>
Field list_field(Access access) {
    return {[access](const RunConfig& c) { return fmt_double_list(access(const_cast<RunConfig&>(c))); },
            [access](RunConfig& c, const std::string& v) { access(c) = parse_double_list(v); }};
}

#define GIGP_ACCESS(expr) [](RunConfig& c) -> auto& { return c.expr; }

const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = {
        {"net.depth", int_field(GIGP_ACCESS(net.depth))},
        {"net.base_channels", int_field(GIGP_ACCESS(net.base_channels))},
        {"net.growth", int_field(GIGP_ACCESS(net.growth))},
        {"net.num_classes", int_field(GIGP_ACCESS(net.num_classes))},
        {"net.input_shape", triple_field(GIGP_ACCESS(net.input_shape))},
        {"net.ssm_state_dim", int_field(GIGP_ACCESS(net.ssm_state_dim))},
        {"net.lambda1", double_field(GIGP_ACCESS(net.lambda1))},
        {"net.lambda2", double_field(GIGP_ACCESS(net.lambda2))},
        {"net.slope", double_field(GIGP_ACCESS(net.slope))},
        {"train.gamma1", double_field(GIGP_ACCESS(train.gamma1))},
        {"train.gamma2", double_field(GIGP_ACCESS(train.gamma2))},
        {"train.alpha_e", double_field(GIGP_ACCESS(train.alpha_e))},
        {"train.alpha_k", list_field(GIGP_ACCESS(train.alpha_k))},
        {"train.beta_k", list_field(GIGP_ACCESS(train.beta_k))},
        {"train.lr", double_field(GIGP_ACCESS(train.lr))},
        {"train.momentum", double_field(GIGP_ACCESS(train.momentum))},
        {"train.weight_decay", double_field(GIGP_ACCESS(train.weight_decay))},
        {"train.ema_decay", double_field(GIGP_ACCESS(train.ema_decay))},
        {"train.ramp_length", int_field(GIGP_ACCESS(train.ramp_length))},
        {"train.epochs", int_field(GIGP_ACCESS(train.epochs))},
        {"train.iters_per_epoch", int_field(GIGP_ACCESS(train.iters_per_epoch))},
        {"train.labeled_batch", int_field(GIGP_ACCESS(train.labeled_batch))},
        {"train.unlabeled_batch", int_field(GIGP_ACCESS(train.unlabeled_batch))},
        {"train.noise_sigma", double_field(GIGP_ACCESS(train.noise_sigma))},
        {"train.noise_clip", double_field(GIGP_ACCESS(train.noise_clip))},
        {"train.wave_amplitude", double_field(GIGP_ACCESS(train.wave.amplitude))},
        {"train.wave_frequency", double_field(GIGP_ACCESS(train.wave.frequency))},
        {"train.augment", bool_field(GIGP_ACCESS(train.augment))},
        {"train.labeled_only", bool_field(GIGP_ACCESS(train.labeled_only))},
        {"train.seed", int_field(GIGP_ACCESS(train.seed))},
        {"ablation.enable_gmam", bool_field(GIGP_ACCESS(train.ablation.gmam))},
        {"ablation.enable_ggpc", bool_field(GIGP_ACCESS(train.ablation.ggpc))},
        {"ablation.enable_giim", bool_field(GIGP_ACCESS(train.ablation.giim))},
        {"phantom.grid", triple_field(GIGP_ACCESS(phantom.grid))},
        {"phantom.semi_axis_min", double_field(GIGP_ACCESS(phantom.semi_axis_min))},
        {"phantom.semi_axis_max", double_field(GIGP_ACCESS(phantom.semi_axis_max))},
        {"phantom.bump_magnitude", double_field(GIGP_ACCESS(phantom.bump_magnitude))},
        {"phantom.bump_count", int_field(GIGP_ACCESS(phantom.bump_count))},
        {"phantom.contrast", double_field(GIGP_ACCESS(phantom.contrast))},
        {"phantom.contrast_jitter", double_field(GIGP_ACCESS(phantom.contrast_jitter))},
        {"phantom.noise", double_field(GIGP_ACCESS(phantom.noise))},
        {"phantom.bias_field", double_field(GIGP_ACCESS(phantom.bias_field))},
        {"phantom.distractors", int_field(GIGP_ACCESS(phantom.distractors))},
        {"phantom.distractor_radius", double_field(GIGP_ACCESS(phantom.distractor_radius))},
        {"phantom.distractor_contrast", double_field(GIGP_ACCESS(phantom.distractor_contrast))},
        {"data.train_count", int_field(GIGP_ACCESS(data.split.train))},
        {"data.validation_count", int_field(GIGP_ACCESS(data.split.validation))},
        {"data.test_count", int_field(GIGP_ACCESS(data.split.test))},
        {"data.num_labeled", int_field(GIGP_ACCESS(data.num_labeled))},
        {"data.seed", int_field(GIGP_ACCESS(data.seed))},
        {"paths.data_dir", string_field(GIGP_ACCESS(paths.data_dir))},
        {"paths.run_dir", string_field(GIGP_ACCESS(paths.run_dir))},
    };
    return table;
}

#undef GIGP_ACCESS

const Field* find_field(const std::string& key) {
    for (const auto& [name, field] : fields()) {
        if (name == key) return &field;
    }
    return nullptr;
}

ConfigError make_error(const std::string& what, const std::vector<std::string>& messages, std::vector<std::string> keys) {
    std::string msg = what;
    for (const auto& m : messages) msg += "\n  " + m;
    return ConfigError(msg, std::move(keys));
}

}  // namespace

bool operator==(const RunConfig& a, const RunConfig& b) { return to_config_text(a) == to_config_text(b); }

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.first);
    return out;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
    const Field* f = find_field(key);
    if (f == nullptr) throw ConfigError("unknown configuration key '" + key + "'", {key});
    try {
        f->set(config, value);
    } catch (const std::exception& e) {
        throw ConfigError("invalid value '" + value + "' for '" + key + "': " + e.what(), {key});
    }
}

std::string get_config_value(const RunConfig& config, const std::string& key) {
    const Field* f = find_field(key);
    if (f == nullptr) throw ConfigError("unknown configuration key '" + key + "'", {key});
    return f->get(config);
}

RunConfig parse_config(const std::string& text, const RunConfig& base) {
    RunConfig config = base;
    std::vector<std::string> keys;
    std::vector<std::string> messages;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            keys.push_back(t);
            messages.push_back("line " + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
            continue;
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        try {
            set_config_value(config, key, value);
        } catch (const ConfigError& e) {
            keys.push_back(key);
            messages.push_back("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!keys.empty()) throw make_error("configuration rejected:", messages, keys);
    return config;
}

RunConfig load_config(const std::filesystem::path& path, const RunConfig& base) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), base);
}

std::string to_config_text(const RunConfig& config) {
    std::string out;
    for (const auto& [name, field] : fields()) out += name + "=" + field.get(config) + "\n";
    return out;
}

void validate_config(const RunConfig& config) {
    std::vector<std::string> keys;
    std::vector<std::string> messages;
    auto check = [&](const std::string& key, const std::function<void()>& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            keys.push_back(key);
            messages.push_back(e.what());
        }
    };
    check("net.*", [&] { config.net.validate(); });
    check("phantom.*", [&] { config.phantom.validate(); });
    try {
        config.train.validate(config.net.depth);
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        messages.push_back(msg);
        std::istringstream ss(msg.substr(msg.find(':') + 1));
        std::string k;
        while (ss >> k) keys.push_back(k);
    }
    const auto& s = config.data.split;
    if (s.train < 1 || s.validation < 0 || s.test < 0) {
        keys.push_back("data.train_count/data.validation_count/data.test_count");
        messages.push_back("split counts must satisfy train >= 1, validation >= 0, test >= 0");
    }
    if (config.data.num_labeled < 1 || config.data.num_labeled > s.train) {
        keys.push_back("data.num_labeled");
        messages.push_back("data.num_labeled must lie in [1, data.train_count]");
    }
    if (config.data.num_labeled < config.train.labeled_batch) {
        keys.push_back("train.labeled_batch");
        messages.push_back("train.labeled_batch exceeds data.num_labeled");
    }
    const auto& in = config.net.input_shape;
    const auto& g = config.phantom.grid;
    if (g[0] < in[2] || g[1] < in[1] || g[2] < in[0]) {
        keys.push_back("phantom.grid");
        messages.push_back("phantom.grid (nx,ny,nz) must be at least net.input_shape (d,h,w) reversed");
    }
    if (!keys.empty()) throw make_error("configuration invalid:", messages, keys);
}

net::NetConfig effective_net(const RunConfig& config) {
    net::NetConfig n = config.net;
    train::TrainConfig t = config.train;
    train::apply_ablation(n, t);
    return n;
}

train::TrainConfig effective_train(const RunConfig& config) {
    net::NetConfig n = config.net;
    train::TrainConfig t = config.train;
    train::apply_ablation(n, t);
    return t;
}

const char* build_id() { return GIGP_BUILD_ID; }

}  // namespace gigp
