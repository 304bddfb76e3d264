// Acceptance runner: one PASS/FAIL line per criterion.
//
//   gigp_acceptance [--criterion N]... [--workdir DIR] [--seeds K]

#include "app.hpp"

#include "gigp/checkpoint.hpp"
#include "gigp/config.hpp"
#include "gigp/phantom.hpp"
#include "gigp/selfcheck.hpp"
#include "gigp/trainer.hpp"
#include "gigp/volume.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace gigp;

namespace {

struct Verdict {
    bool passed = false;
    std::string detail;
};

struct Settings {
    fs::path workdir = fs::temp_directory_path() / "gigp_acceptance";
    int seeds = 3;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int precision = 3) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Verdict selfcheck_group(selfcheck::Group group, double budget_seconds) {
    selfcheck::Options opts;
    opts.invariants = group == selfcheck::Group::invariants;
    opts.gradients = group == selfcheck::Group::gradients;
    opts.on_result = [](const selfcheck::PropertyResult& r) { std::cout << "  " << selfcheck::format_result(r) << "\n"; };
    const auto t0 = Clock::now();
    const auto results = selfcheck::run(opts);
    const double secs = seconds_since(t0);
    std::vector<std::string> failed;
    for (const auto& r : results) {
        if (!r.passed) failed.push_back(r.name);
    }
    std::string detail = std::to_string(results.size() - failed.size()) + "/" + std::to_string(results.size()) +
                         " properties in " + num(secs) + " s";
    for (const auto& f : failed) detail += "; failed " + f;
    if (secs >= budget_seconds) detail += "; over the " + num(budget_seconds) + " s budget";
    return {failed.empty() && secs < budget_seconds && !results.empty(), detail};
}

Verdict criterion_invariants(const Settings&) { return selfcheck_group(selfcheck::Group::invariants, 300.0); }

Verdict criterion_gradients(const Settings&) { return selfcheck_group(selfcheck::Group::gradients, 300.0); }

Verdict criterion_scale_invariance(const Settings&) {
    const double tol = 2e-2;
    const double gap = selfcheck::scale_invariance_gap(20, 32, 20240917);
    return {gap <= tol, "max per-component gap " + num(gap, 4) + " over 20 phantoms (tolerance " + num(tol) + ")"};
}

// Reduced network and phantoms so that 200 steps fit comfortably.
RunConfig loss_assembly_config() {
    RunConfig c;
    c.phantom.grid = {16, 16, 16};
    c.phantom.semi_axis_min = 3.0;
    c.phantom.semi_axis_max = 4.5;
    c.net.depth = 2;
    c.net.base_channels = 4;
    c.net.input_shape = {16, 16, 16};
    c.train.epochs = 4;
    c.train.iters_per_epoch = 50;
    c.train.labeled_batch = 1;
    c.train.unlabeled_batch = 1;
    c.train.seed = 11;
    return c;
}

train::TrainData phantom_data(const RunConfig& c, int labeled, int unlabeled, int validation, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    train::TrainData d;
    for (int i = 0; i < labeled; ++i) d.labeled.push_back(data::generate_phantom(c.phantom, rng).volume);
    for (int i = 0; i < unlabeled; ++i) {
        auto v = data::generate_phantom(c.phantom, rng).volume;
        v.label.reset();
        d.unlabeled.push_back(std::move(v));
    }
    for (int i = 0; i < validation; ++i) d.validation.push_back(data::generate_phantom(c.phantom, rng).volume);
    return d;
}

bool same_parameters(const ParameterSet& a, const ParameterSet& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto x = a.entries()[i].tensor.values();
        const auto y = b.entries()[i].tensor.values();
        if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) return false;
    }
    return true;
}

Verdict criterion_loss_assembly(const Settings&) {
    const RunConfig c = loss_assembly_config();
    const train::TrainData d = phantom_data(c, 2, 4, 1, 5);
    const net::NetConfig net = effective_net(c);
    const train::TrainConfig tc = effective_train(c);

    const auto full = train::train_loop(d, net, tc);
    const long long ramp = tc.effective_ramp_length();
    double worst = 0.0;
    bool finite = true;
    for (const auto& r : full.log) {
        const double w = train::ramp_weight(static_cast<long long>(r.iter), ramp);
        const double sum = r.l_s + tc.gamma1 * w * r.l_c + tc.gamma2 * w * r.l_gmc;
        finite = finite && std::isfinite(r.l_total);
        worst = std::max(worst, std::abs(r.l_total - sum));
    }
    const bool decomposes = finite && full.log.size() == 200 && worst <= 1e-12;

    train::TrainConfig zero = tc;
    zero.gamma1 = 0.0;
    zero.gamma2 = 0.0;
    train::TrainConfig labeled_only = tc;
    labeled_only.labeled_only = true;
    const auto a = train::train_loop(d, net, zero);
    const auto b = train::train_loop(d, net, labeled_only);
    bool logs_equal = a.log.size() == b.log.size();
    for (std::size_t i = 0; logs_equal && i < a.log.size(); ++i) {
        logs_equal = std::memcmp(&a.log[i].l_total, &b.log[i].l_total, sizeof(double)) == 0 &&
                     std::memcmp(&a.log[i].l_s, &b.log[i].l_s, sizeof(double)) == 0;
    }
    const bool bitwise = logs_equal && same_parameters(a.state.student, b.state.student) &&
                         same_parameters(a.state.teacher, b.state.teacher) &&
                         serialize_checkpoint(a.final) == serialize_checkpoint(b.final);
    return {decomposes && bitwise, "max |total - weighted sum| " + num(worst, 3) + " over " +
                                       std::to_string(full.log.size()) + " steps; gamma=0 vs labeled-only " +
                                       (bitwise ? "bitwise identical" : "DIFFER")};
}

struct Arm {
    std::string name;
    bool labeled_only;
    train::AblationFlags flags;
};

Verdict criterion_trend(const Settings& s) {
    const std::vector<Arm> arms{
        {"labeled-only", true, {false, false, false}}, {"MT", false, {false, false, false}},
        {"MT+GMAM", false, {true, false, false}},      {"MT+GGPC", false, {false, true, false}},
        {"MT+GIIM", false, {false, false, true}},      {"GIGP", false, {true, true, true}},
    };
    const auto t0 = Clock::now();
    std::vector<std::vector<double>> dice(arms.size());
    std::ofstream table(s.workdir / "trend.csv");
    table << "arm,seed,test_dice,test_jaccard,test_hd95,test_asd,seconds\n";
    for (int seed = 1; seed <= s.seeds; ++seed) {
        RunConfig base;
        base.data.seed = static_cast<std::uint64_t>(seed);
        base.train.seed = static_cast<std::uint64_t>(seed);
        const fs::path data_dir = s.workdir / ("trend_data_" + std::to_string(seed));
        std::ostringstream quiet;
        app::cmd_gen_data(base, data_dir, true, quiet);
        for (std::size_t a = 0; a < arms.size(); ++a) {
            RunConfig c = base;
            c.train.labeled_only = arms[a].labeled_only;
            c.train.ablation = arms[a].flags;
            const fs::path run = s.workdir / ("trend_" + arms[a].name + "_" + std::to_string(seed));
            const auto t1 = Clock::now();
            app::cmd_train(c, data_dir, run, quiet);
            app::EvalOptions eo;
            eo.checkpoint = run / "best.ckpt";
            eo.data_dir = data_dir;
            eo.split = "test";
            const auto summary = app::cmd_eval(eo, quiet);
            const double secs = seconds_since(t1);
            dice[a].push_back(100.0 * summary.mean_dice);
            table << arms[a].name << "," << seed << "," << summary.mean_dice << "," << summary.mean_jaccard << ","
                  << (summary.mean_hd95 ? num(*summary.mean_hd95, 6) : "") << ","
                  << (summary.mean_asd ? num(*summary.mean_asd, 6) : "") << "," << secs << "\n";
            std::cout << "  " << std::left << std::setw(13) << arms[a].name << " seed " << seed << "  test dice "
                      << std::fixed << std::setprecision(2) << 100.0 * summary.mean_dice << "  (" << std::setprecision(0)
                      << secs << " s)\n"
                      << std::defaultfloat << std::flush;
        }
    }
    const double total = seconds_since(t0);
    auto mean = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m += x;
        return m / static_cast<double>(v.size());
    };
    std::vector<double> means;
    for (const auto& d : dice) means.push_back(mean(d));
    const double lo = means[0], mt = means[1], full = means[5];
    bool ok = full >= lo + 2.0;
    std::string detail;
    for (std::size_t a = 0; a < arms.size(); ++a) detail += arms[a].name + " " + num(means[a], 4) + "  ";
    detail += "| GIGP - labeled-only " + num(full - lo, 3) + " (need >= 2)";
    for (std::size_t a = 2; a <= 4; ++a) {
        if (means[a] < mt - 0.5) {
            ok = false;
            detail += "; " + arms[a].name + " below MT - 0.5";
        }
    }
    detail += "; " + num(total / 60.0, 3) + " min";
    if (total >= 45.0 * 60.0) {
        ok = false;
        detail += " (over the 45 min budget)";
    }
    return {ok, detail};
}

RunConfig determinism_config() {
    RunConfig c;
    c.data.split = {8, 2, 2};
    c.data.num_labeled = 2;
    c.train.epochs = 2;
    c.train.iters_per_epoch = 5;
    c.train.seed = 21;
    return c;
}

Verdict criterion_determinism(const Settings& s) {
    const RunConfig c = determinism_config();
    const fs::path data_dir = s.workdir / "det_data";
    std::ostringstream quiet;
    app::cmd_gen_data(c, data_dir, true, quiet);
    const fs::path a = s.workdir / "det_run_a";
    const fs::path b = s.workdir / "det_run_b";
    fs::remove_all(a);
    fs::remove_all(b);
    app::cmd_train(c, data_dir, a, quiet);
    app::cmd_train(c, data_dir, b, quiet);
    std::string detail;
    bool ok = true;
    for (const char* f : {"metrics.csv", "final.ckpt", "best.ckpt"}) {
        const std::string x = read_file(a / f);
        const std::string y = read_file(b / f);
        const bool same = !x.empty() && x == y;
        ok = ok && same;
        detail += std::string(f) + (same ? " identical (" + std::to_string(x.size()) + " B); " : " DIFFERS; ");
    }
    return {ok, detail + "10 steps at the default network size"};
}

template <class Error>
bool raises(const std::function<void()>& fn, const std::string& fragment, std::string& log) {
    try {
        fn();
    } catch (const Error& e) {
        if (std::string(e.what()).find(fragment) != std::string::npos) return true;
        log += "wrong message '" + std::string(e.what()) + "'; ";
        return false;
    } catch (const std::exception& e) {
        log += "wrong error '" + std::string(e.what()) + "'; ";
        return false;
    }
    log += "no error for '" + fragment + "'; ";
    return false;
}

Verdict criterion_formats(const Settings& s) {
    std::string log;
    bool ok = true;
    std::mt19937_64 rng(31);
    const data::Volume v = data::generate_phantom(data::PhantomSpec{}, rng, "fmt").volume;
    const fs::path vpath = s.workdir / "fmt.gvol";
    data::save_volume(v, vpath);
    const std::string vbytes = read_file(vpath);
    const data::Volume vback = data::load_volume(vpath);
    data::save_volume(vback, s.workdir / "fmt2.gvol");
    // The payload is single precision.
    std::vector<double> stored(v.intensities.size());
    for (std::size_t i = 0; i < stored.size(); ++i) stored[i] = static_cast<float>(v.intensities[i]);
    const bool vol_rt = read_file(s.workdir / "fmt2.gvol") == vbytes && vback.intensities == stored &&
                        vback.label == v.label && vback.dims == v.dims && vback.spacing == v.spacing;
    if (!vol_rt) log += "volume round trip differs; ";
    ok = ok && vol_rt;

    RunConfig c;
    c.net.input_shape = {16, 16, 16};
    const auto state = train::init_state(effective_net(c), effective_train(c));
    const Checkpoint ck = train::make_checkpoint(state, to_config_text(c));
    const fs::path cpath = s.workdir / "fmt.ckpt";
    save_checkpoint(cpath, ck);
    const std::string cbytes = read_file(cpath);
    const Checkpoint cback = load_checkpoint(cpath);
    save_checkpoint(s.workdir / "fmt2.ckpt", cback);
    bool ck_rt = read_file(s.workdir / "fmt2.ckpt") == cbytes && cback.blobs.size() == ck.blobs.size();
    for (std::size_t i = 0; ck_rt && i < ck.blobs.size(); ++i) {
        const auto x = ck.blobs[i].second.values();
        const auto y = cback.blobs[i].second.values();
        ck_rt = x.size() == y.size() && std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0;
    }
    if (!ck_rt) log += "checkpoint round trip differs; ";
    ok = ok && ck_rt;

    std::string bad_magic = vbytes;
    bad_magic.replace(bad_magic.find("GIGPVOL1"), 8, "GIGPVOL9");
    ok = raises<data::VolumeFormatError>([&] { data::decode_volume(bad_magic); }, "\"GIGPVOL1\"", log) && ok;
    const std::string header = vbytes.substr(0, vbytes.find('\n') + 1);
    ok = raises<data::VolumeFormatError>([&] { data::decode_volume(header + std::string(500 * 4, '\0')); },
                                         "length mismatch", log) &&
         ok;
    ok = raises<data::VolumeFormatError>([&] { data::decode_volume("{not json\n"); }, "header", log) && ok;

    std::string ck_magic = cbytes;
    ck_magic[3] = 'Q';
    ok = raises<CheckpointError>([&] { parse_checkpoint(ck_magic); }, "GIGPCKPT", log) && ok;
    std::string ck_version = cbytes;
    ck_version[8] = 2;
    ok = raises<CheckpointError>([&] { parse_checkpoint(ck_version); }, "version", log) && ok;
    ok = raises<CheckpointError>([&] { parse_checkpoint(cbytes.substr(0, cbytes.size() / 2)); }, "truncated", log) &&
         ok;
    ok = raises<CheckpointError>([&] { parse_checkpoint(cbytes + "x"); }, "trailing", log) && ok;
    return {ok, log.empty() ? "volume " + std::to_string(vbytes.size()) + " B and checkpoint " +
                                  std::to_string(cbytes.size()) + " B round trip bitwise; 7 corruptions rejected"
                            : log};
}

struct Criterion {
    int id;
    const char* name;
    Verdict (*run)(const Settings&);
};

const std::vector<Criterion>& criteria() {
    static const std::vector<Criterion> all{
        {1, "invariant suite", criterion_invariants},
        {2, "gradient acceptance", criterion_gradients},
        {3, "scale invariance", criterion_scale_invariance},
        {4, "loss assembly", criterion_loss_assembly},
        {5, "semi-supervised trend", criterion_trend},
        {6, "determinism", criterion_determinism},
        {7, "format round trips", criterion_formats},
    };
    return all;
}

}  // namespace

int main(int argc, char** argv) {
    gigp::app::tune_allocator();
    Settings settings;
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (i + 1 < argc && arg == "--criterion") {
            selected.push_back(std::stoi(argv[++i]));
        } else if (i + 1 < argc && arg == "--workdir") {
            settings.workdir = argv[++i];
        } else if (i + 1 < argc && arg == "--seeds") {
            settings.seeds = std::stoi(argv[++i]);
        } else {
            std::cerr << "usage: " << argv[0] << " [--criterion N]... [--workdir DIR] [--seeds K]\n";
            return 2;
        }
    }
    if (selected.empty()) {
        for (const auto& c : criteria()) selected.push_back(c.id);
    }
    fs::create_directories(settings.workdir);

    int failures = 0;
    for (int id : selected) {
        const auto it = std::find_if(criteria().begin(), criteria().end(), [&](const Criterion& c) { return c.id == id; });
        if (it == criteria().end()) {
            std::cerr << "unknown criterion " << id << "\n";
            return 2;
        }
        Verdict v;
        const auto t0 = Clock::now();
        try {
            v = it->run(settings);
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        std::cout << (v.passed ? "PASS" : "FAIL") << " criterion " << id << " (" << it->name << "): " << v.detail
                  << " [" << std::fixed << std::setprecision(1) << seconds_since(t0) << " s]\n"
                  << std::defaultfloat << std::flush;
        if (!v.passed) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
