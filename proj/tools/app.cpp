#include "app.hpp"

#include "gigp/checkpoint.hpp"
#include "gigp/phantom.hpp"
#include "gigp/selfcheck.hpp"
#include "gigp/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace gigp::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::string show(const std::optional<double>& v, int precision) {
    if (!v) return "missing";
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << *v;
    return os.str();
}

}  // namespace

std::string manifest_json(const Manifest& manifest) {
    json j;
    j["format"] = "gigp-dataset";
    j["seed"] = manifest.seed;
    j["config"] = manifest.config_text;
    json vols = json::array();
    for (const auto& v : manifest.volumes) vols.push_back({{"id", v.id}, {"file", v.file}, {"split", v.split}});
    j["volumes"] = vols;
    return j.dump(2) + "\n";
}

Manifest parse_manifest(const std::string& text) {
    Manifest m;
    try {
        const json j = json::parse(text);
        if (j.value("format", "") != "gigp-dataset") throw std::runtime_error("manifest format is not gigp-dataset");
        m.seed = j.at("seed").get<std::uint64_t>();
        m.config_text = j.at("config").get<std::string>();
        for (const auto& v : j.at("volumes")) {
            m.volumes.push_back({v.at("id").get<std::string>(), v.at("file").get<std::string>(),
                                 v.at("split").get<std::string>()});
        }
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("malformed manifest: ") + e.what());
    }
    return m;
}

Manifest load_manifest(const fs::path& data_dir) {
    const fs::path path = data_dir / "manifest.json";
    if (!fs::exists(path)) throw std::runtime_error("no dataset manifest at " + path.string());
    return parse_manifest(read_text(path));
}

std::vector<data::Volume> load_split(const fs::path& data_dir, const Manifest& manifest, const std::string& split) {
    std::vector<data::Volume> out;
    for (const auto& e : manifest.volumes) {
        if (e.split != split) continue;
        data::Volume v = data::load_volume(data_dir / e.file);
        if (split == "unlabeled") v.label.reset();
        out.push_back(std::move(v));
    }
    return out;
}

Manifest cmd_gen_data(const RunConfig& config, const fs::path& out_dir, bool force, std::ostream& log) {
    validate_config(config);
    if (fs::exists(out_dir / "manifest.json") && !force) {
        throw UsageError("dataset already exists at " + out_dir.string() + " (use --force to overwrite)");
    }
    make_dir(out_dir / "volumes");

    const auto& sizes = config.data.split;
    const std::size_t total = static_cast<std::size_t>(sizes.train) + sizes.validation + sizes.test;
    const data::DatasetSplit split = data::split_dataset(total, sizes, config.data.num_labeled, config.data.seed);
    if (!split.warning.empty()) log << "warning: " << split.warning << "\n";
    std::vector<std::string> role(total);
    for (auto i : split.labeled) role[i] = "labeled";
    for (auto i : split.unlabeled) role[i] = "unlabeled";
    for (auto i : split.validation) role[i] = "validation";
    for (auto i : split.test) role[i] = "test";

    Manifest manifest;
    manifest.seed = config.data.seed;
    manifest.config_text = to_config_text(config);
    // Separate stream from the split shuffle so volume content does not
    // depend on the split sizes.
    std::mt19937_64 rng(config.data.seed ^ 0x9e3779b97f4a7c15ULL);
    for (std::size_t i = 0; i < total; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "vol%03zu", i);
        const data::Phantom p = data::generate_phantom(config.phantom, rng, id);
        const std::string file = std::string("volumes/") + id + ".gvol";
        data::save_volume(p.volume, out_dir / file);
        manifest.volumes.push_back({id, file, role[i]});
    }
    write_text(out_dir / "manifest.json", manifest_json(manifest));
    log << "wrote " << total << " volumes (" << split.labeled.size() << " labeled, " << split.unlabeled.size()
        << " unlabeled, " << split.validation.size() << " validation, " << split.test.size() << " test) to "
        << out_dir.string() << "\n";
    return manifest;
}

void cmd_train(const RunConfig& config, const fs::path& data_dir, const fs::path& run_dir, std::ostream& log) {
    validate_config(config);
    const Manifest manifest = load_manifest(data_dir);
    train::TrainData data;
    data.labeled = load_split(data_dir, manifest, "labeled");
    data.unlabeled = load_split(data_dir, manifest, "unlabeled");
    data.validation = load_split(data_dir, manifest, "validation");
    if (data.labeled.empty()) throw std::runtime_error("dataset at " + data_dir.string() + " has no labeled volumes");

    make_dir(run_dir);
    const std::string text = to_config_text(config);
    write_text(run_dir / "config.txt", text);
    write_text(run_dir / "build.txt", std::string(build_id()) + "\n");

    train::LoopOptions opts;
    opts.config_text = text;
    opts.run_dir = run_dir;
    opts.progress = [&log](const std::string& line) { log << line << "\n" << std::flush; };
    const auto out = train::train_loop(data, effective_net(config), effective_train(config), opts);
    log << "best validation dice " << fmt(out.best_val_dice) << " at iteration " << out.best_iteration << "\n";
    log << "outputs in " << run_dir.string() << "\n";
}

std::string format_eval_csv(const train::EvalSummary& summary) {
    std::string s = "id,dice,jaccard,hd95,asd\n";
    for (const auto& r : summary.rows) {
        s += r.id + "," + fmt(r.metrics.dice) + "," + fmt(r.metrics.jaccard) + "," + fmt_opt(r.metrics.hd95) + "," +
             fmt_opt(r.metrics.asd) + "\n";
    }
    s += "mean," + fmt(summary.mean_dice) + "," + fmt(summary.mean_jaccard) + "," + fmt_opt(summary.mean_hd95) + "," +
         fmt_opt(summary.mean_asd) + "\n";
    return s;
}

train::EvalSummary cmd_eval(const EvalOptions& options, std::ostream& out) {
    const Checkpoint ck = load_checkpoint(options.checkpoint);
    RunConfig stored;
    try {
        stored = parse_config(ck.config_text);
    } catch (const ConfigError& e) {
        throw std::runtime_error(std::string("checkpoint carries an invalid config: ") + e.what());
    }
    const net::NetConfig net = effective_net(stored);
    if (options.expected && !(effective_net(*options.expected) == net)) {
        throw std::runtime_error("checkpoint " + options.checkpoint.string() +
                                 " was trained with a different network config");
    }
    ParameterSet teacher = net::build_network(net, 0);
    try {
        restore_blobs(ck, "teacher/", teacher);
    } catch (const std::exception& e) {
        throw std::runtime_error("checkpoint does not match its config: " + std::string(e.what()));
    }

    const Manifest manifest = load_manifest(options.data_dir);
    const auto volumes = load_split(options.data_dir, manifest, options.split);
    if (volumes.empty()) throw UsageError("split '" + options.split + "' has no volumes");

    train::EvalSummary summary;
    if (options.ground_truth) {
        std::vector<train::EvalRow> rows;
        for (const auto& v : volumes) rows.push_back({v.id, metrics::evaluate(v.label_mask(), v.label_mask())});
        summary = train::summarize(std::move(rows));
    } else {
        summary = train::evaluate_model(net, teacher, volumes);
    }

    out << std::left << std::setw(12) << "id" << std::setw(10) << "dice" << std::setw(10) << "jaccard"
        << std::setw(10) << "hd95" << "asd\n";
    auto line = [&](const std::string& id, double d, double j, const std::optional<double>& h,
                    const std::optional<double>& a) {
        out << std::left << std::setw(12) << id << std::setw(10) << show(d, 4) << std::setw(10) << show(j, 4)
            << std::setw(10) << show(h, 3) << show(a, 3) << "\n";
    };
    for (const auto& r : summary.rows) line(r.id, r.metrics.dice, r.metrics.jaccard, r.metrics.hd95, r.metrics.asd);
    line("mean", summary.mean_dice, summary.mean_jaccard, summary.mean_hd95, summary.mean_asd);

    const fs::path csv = options.csv.empty()
                             ? options.checkpoint.parent_path() / ("eval_" + options.split + ".csv")
                             : options.csv;
    write_text(csv, format_eval_csv(summary));
    out << "wrote " << csv.string() << "\n";
    return summary;
}

int cmd_selfcheck(std::uint64_t seed, bool invariants, bool gradients, std::ostream& out) {
    selfcheck::Options opts;
    opts.seed = seed;
    opts.invariants = invariants;
    opts.gradients = gradients;
    opts.on_result = [&out](const selfcheck::PropertyResult& r) {
        out << selfcheck::format_result(r) << "\n" << std::flush;
    };
    const auto results = selfcheck::run(opts);
    std::size_t failed = 0;
    for (const auto& r : results) failed += !r.passed;
    out << results.size() - failed << "/" << results.size() << " properties passed\n";
    return failed == 0 ? kOk : kValidationFailure;
}

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace gigp::app
