#include "gigp/trainer.hpp"

#include "gigp/moments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace gigp::train {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

void check_two_class(const Tensor& probs, const Tensor& labels, const char* what) {
    if (probs.rank() != 5 || probs.dim(1) != 2) {
        throw ShapeError(std::string(what) + ": probabilities must be [B,2,D,H,W], got " + shape_str(probs.shape()));
    }
    Shape expected = probs.shape();
    expected[1] = 1;
    if (labels.shape() != expected) {
        throw ShapeError(std::string(what) + ": labels must be " + shape_str(expected) + ", got " +
                         shape_str(labels.shape()));
    }
    for (double v : labels.values()) {
        if (v != 0.0 && v != 1.0) throw std::invalid_argument(std::string(what) + ": labels must be 0 or 1");
    }
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

struct Sampler {
    std::vector<std::size_t> order;
    std::size_t pos = 0;

    std::size_t next(std::mt19937_64& rng) {
        if (pos == order.size()) pos = 0;
        if (pos == 0) std::shuffle(order.begin(), order.end(), rng);
        return order[pos++];
    }
};

Sampler make_sampler(std::size_t n) {
    Sampler s;
    s.order.resize(n);
    std::iota(s.order.begin(), s.order.end(), 0);
    return s;
}

data::AugmentOptions augment_options(const net::NetConfig& net) {
    data::AugmentOptions opts;
    opts.crop = {net.input_shape[2], net.input_shape[1], net.input_shape[0]};
    return opts;
}

Batch make_batch(const std::vector<data::Volume>& pool, Sampler& sampler, std::mt19937_64& rng, int count,
                 bool with_labels, const net::NetConfig& net, const TrainConfig& train) {
    const auto opts = augment_options(net);
    std::vector<Tensor> images;
    std::vector<Tensor> labels;
    for (int i = 0; i < count; ++i) {
        const data::Volume& src = pool[sampler.next(rng)];
        const data::Volume v = train.augment ? data::augment(src, opts, rng)
                                             : data::apply_augment(src, data::identity_draw(src, opts), opts);
        images.push_back(v.to_tensor());
        if (with_labels) {
            if (!v.label) throw std::invalid_argument("labeled volume '" + v.id + "' has no label");
            std::vector<double> lab(v.label->begin(), v.label->end());
            labels.push_back(Tensor::from_values({1, 1, v.dims[2], v.dims[1], v.dims[0]}, std::move(lab)));
        }
    }
    Batch b;
    b.images = concat(images, 0);
    if (with_labels) b.labels = concat(labels, 0);
    return b;
}

}  // namespace

void TrainConfig::validate(int depth) const {
    std::vector<std::string> bad;
    auto need = [&bad](bool ok, const char* key) {
        if (!ok) bad.emplace_back(key);
    };
    auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
    need(finite_nonneg(gamma1), "train.gamma1");
    need(finite_nonneg(gamma2), "train.gamma2");
    need(finite_nonneg(alpha_e), "train.alpha_e");
    need(std::isfinite(lr) && lr > 0.0, "train.lr");
    need(finite_nonneg(momentum) && momentum < 1.0, "train.momentum");
    need(finite_nonneg(weight_decay), "train.weight_decay");
    need(std::isfinite(ema_decay) && ema_decay >= 0.0 && ema_decay <= 1.0, "train.ema_decay");
    need(ramp_length >= 0, "train.ramp_length");
    need(epochs >= 1, "train.epochs");
    need(iters_per_epoch >= 1, "train.iters_per_epoch");
    need(labeled_batch >= 1, "train.labeled_batch");
    need(unlabeled_batch >= 1, "train.unlabeled_batch");
    need(finite_nonneg(noise_sigma), "train.noise_sigma");
    need(finite_nonneg(noise_clip), "train.noise_clip");
    need(alpha_k.empty() || static_cast<int>(alpha_k.size()) == depth, "train.alpha_k");
    need(beta_k.empty() || static_cast<int>(beta_k.size()) == depth, "train.beta_k");
    for (double v : alpha_k) need(finite_nonneg(v), "train.alpha_k");
    for (double v : beta_k) need(finite_nonneg(v), "train.beta_k");
    try {
        wave.validate();
    } catch (const std::invalid_argument&) {
        bad.emplace_back("train.wave_amplitude/train.wave_frequency");
    }
    if (!bad.empty()) {
        std::sort(bad.begin(), bad.end());
        bad.erase(std::unique(bad.begin(), bad.end()), bad.end());
        std::string msg = "invalid training configuration:";
        for (const auto& k : bad) msg += " " + k;
        throw std::invalid_argument(msg);
    }
}

int TrainConfig::effective_ramp_length() const {
    return ramp_length > 0 ? ramp_length : std::max(1, total_iterations() / 2);
}

std::vector<double> TrainConfig::level_alpha(int depth) const {
    return alpha_k.empty() ? std::vector<double>(depth, 1.0 / (2.0 * depth)) : alpha_k;
}

std::vector<double> TrainConfig::level_beta(int depth) const {
    if (!ablation.ggpc) return std::vector<double>(depth, 0.0);
    return beta_k.empty() ? std::vector<double>(depth, 1.0 / (2.0 * depth)) : beta_k;
}

void apply_ablation(net::NetConfig& net, TrainConfig& train) {
    net.mvma_enabled = train.ablation.gmam;
    net.giim_enabled = train.ablation.giim;
    if (!train.ablation.gmam) train.gamma2 = 0.0;
}

Tensor soft_dice_loss(const Tensor& probs, const Tensor& labels) {
    check_two_class(probs, labels, "soft_dice_loss");
    constexpr double eps = 1e-5;
    const Tensor fg = slice(probs, 1, 1, 2);
    const Tensor inter = sum(mul(fg, labels));
    const Tensor denom = add_scalar(add(sum(fg), sum(labels)), eps);
    const Tensor dice = div(add_scalar(mul_scalar(inter, 2.0), eps), denom);
    return add_scalar(mul_scalar(dice, -1.0), 1.0);
}

Tensor cross_entropy_loss(const Tensor& probs, const Tensor& labels) {
    check_two_class(probs, labels, "cross_entropy_loss");
    const Tensor bg = slice(probs, 1, 0, 1);
    const Tensor fg = slice(probs, 1, 1, 2);
    const Tensor not_label = add_scalar(mul_scalar(labels, -1.0), 1.0);
    const Tensor ll = add(mul(labels, log_clamped(fg)), mul(not_label, log_clamped(bg)));
    return mul_scalar(mean(ll), -1.0);
}

Tensor supervised_loss(const Tensor& probs, const Tensor& labels, double alpha_e) {
    const Tensor dice = soft_dice_loss(probs, labels);
    if (alpha_e == 0.0) return dice;
    return add(dice, mul_scalar(cross_entropy_loss(probs, labels), alpha_e));
}

Tensor consistency_loss(const Tensor& student, const Tensor& teacher_ns, const Tensor& teacher_gp) {
    require_same_shape(student, teacher_ns, "consistency_loss");
    Tensor loss = mean(square(sub(student, teacher_ns.detach())));
    if (teacher_gp.defined()) {
        require_same_shape(student, teacher_gp, "consistency_loss");
        loss = add(loss, mean(square(sub(student, teacher_gp.detach()))));
    }
    return loss;
}

Tensor total_loss(const Tensor& l_s, const Tensor& l_c, const Tensor& l_gmc, double w1, double w2) {
    const double s = l_s.item();
    const double c = l_c.item();
    const double g = l_gmc.item();
    if (!std::isfinite(s) || !std::isfinite(c) || !std::isfinite(g) || !std::isfinite(w1) || !std::isfinite(w2)) {
        std::ostringstream os;
        os << "non-finite loss: L_s=" << s << " L_c=" << c << " L_gmc=" << g << " w1=" << w1 << " w2=" << w2;
        throw NonFiniteLossError(os.str());
    }
    return add(add(l_s, mul_scalar(l_c, w1)), mul_scalar(l_gmc, w2));
}

double ramp_weight(long long iteration, long long ramp_length) {
    if (ramp_length < 1) throw std::invalid_argument("ramp length must be >= 1");
    const double t = static_cast<double>(std::min(std::max(iteration, 0LL), ramp_length)) / ramp_length;
    return std::exp(-5.0 * (1.0 - t) * (1.0 - t));
}

Tensor noise_perturb(const Tensor& batch, double sigma, double clip, std::mt19937_64& rng) {
    if (!(sigma >= 0.0) || !(clip >= 0.0)) throw std::invalid_argument("noise sigma and clip must be >= 0");
    std::vector<double> values(batch.values().begin(), batch.values().end());
    if (sigma > 0.0) {
        std::normal_distribution<double> dist(0.0, sigma);
        for (double& v : values) v += std::clamp(dist(rng), -clip, clip);
    }
    return Tensor::from_values(batch.shape(), std::move(values));
}

void ema_update(ParameterSet& teacher, const ParameterSet& student, double decay) {
    if (!(decay >= 0.0 && decay <= 1.0)) throw std::invalid_argument("EMA decay must lie in [0,1]");
    if (teacher.size() != student.size()) {
        throw std::invalid_argument("EMA: teacher has " + std::to_string(teacher.size()) + " parameters, student " +
                                    std::to_string(student.size()));
    }
    for (std::size_t i = 0; i < teacher.size(); ++i) {
        auto& t = teacher.entries()[i];
        const auto& s = student.entries()[i];
        if (t.name != s.name) {
            throw std::invalid_argument("EMA: parameter name mismatch at position " + std::to_string(i) + ": teacher '" +
                                        t.name + "' vs student '" + s.name + "'");
        }
        if (t.tensor.shape() != s.tensor.shape()) {
            throw std::invalid_argument("EMA: shape mismatch for parameter '" + t.name + "'");
        }
        auto tv = t.tensor.values_mut();
        const auto sv = s.tensor.values();
        for (std::size_t j = 0; j < tv.size(); ++j) tv[j] = decay * tv[j] + (1.0 - decay) * sv[j];
    }
}

TrainerState init_state(const net::NetConfig& net, const TrainConfig& train) {
    TrainerState state;
    state.student = net::build_network(net, train.seed);
    state.teacher = state.student.clone(false);
    for (const auto& p : state.student.entries()) state.velocity.emplace_back(p.tensor.numel(), 0.0);
    std::seed_seq seq{train.seed, std::uint64_t{0x6c61626cULL}};
    state.labeled_rng.seed(seq);
    std::seed_seq seq_u{train.seed, std::uint64_t{0x756e6c62ULL}};
    state.unlabeled_rng.seed(seq_u);
    std::seed_seq seq_n{train.seed, std::uint64_t{0x6e6f6973ULL}};
    state.noise_rng.seed(seq_n);
    return state;
}

Tensor moment_consistency(const net::NetConfig& net, const ParameterSet& student, const net::ForwardOutputs& s_out,
                          int first, const ParameterSet& teacher, const net::ForwardOutputs& t_ns,
                          const net::ForwardOutputs* t_gp, std::span<const double> alpha,
                          std::span<const double> beta) {
    const int depth = net.depth;
    const int count = t_ns.probs.dim(0);
    Tensor acc;
    int used = 0;
    for (int j = 0; j < count; ++j) {
        try {
            moments::LayerMoments ns;
            moments::LayerMoments gp;
            {
                NoGradGuard guard;
                ns.encoder = moments::normalized_moments(net::collapse_level(teacher, t_ns.encoder[depth - 1], true, depth - 1, j));
                ns.decoder = moments::normalized_moments(net::collapse_level(teacher, t_ns.decoder[0], false, 0, j));
                if (t_gp != nullptr) {
                    gp.encoder = moments::normalized_moments(
                        net::collapse_level(teacher, t_gp->encoder[depth - 1], true, depth - 1, j));
                    gp.decoder = moments::normalized_moments(net::collapse_level(teacher, t_gp->decoder[0], false, 0, j));
                } else {
                    gp = ns;
                }
            }
            std::vector<moments::LayerMoments> layers(depth);
            for (int k = 0; k < depth; ++k) {
                layers[k].encoder = moments::normalized_moments(net::collapse_level(student, s_out.encoder[k], true, k, first + j));
                layers[k].decoder = moments::normalized_moments(net::collapse_level(student, s_out.decoder[k], false, k, first + j));
            }
            const Tensor loss = moments::msgc_loss(layers, ns, gp, alpha, beta);
            acc = acc.defined() ? add(acc, loss) : loss;
            ++used;
        } catch (const moments::DegenerateFieldError&) {
            continue;
        }
    }
    if (used == 0) return Tensor::scalar(0.0);
    return used == 1 ? acc : mul_scalar(acc, 1.0 / used);
}

StepRecord train_step(TrainerState& state, const Batch& labeled, const Batch& unlabeled, const net::NetConfig& net,
                      const TrainConfig& train) {
    const int m = labeled.images.dim(0);
    if (m != train.labeled_batch) {
        throw std::invalid_argument("train_step: expected " + std::to_string(train.labeled_batch) +
                                    " labeled samples, got " + std::to_string(m));
    }
    if (!labeled.labels.defined()) throw std::invalid_argument("train_step: labeled batch has no labels");
    const bool semi = !train.labeled_only;
    int n = 0;
    if (semi) {
        n = unlabeled.images.defined() ? unlabeled.images.dim(0) : 0;
        if (n != train.unlabeled_batch) {
            throw std::invalid_argument("train_step: expected " + std::to_string(train.unlabeled_batch) +
                                        " unlabeled samples, got " + std::to_string(n));
        }
    }

    StepRecord rec;
    rec.iteration = state.iteration;
    rec.ramp = ramp_weight(static_cast<long long>(state.iteration), train.effective_ramp_length());
    const double w1 = train.gamma1 * rec.ramp;
    const double w2 = train.gamma2 * rec.ramp;

    state.student.zero_grad();
    const Tensor input = semi ? concat({labeled.images, unlabeled.images}, 0) : labeled.images;
    const net::ForwardOutputs s_out = net::forward(net, state.student, input, net::Mode::student, m);
    const Tensor l_s = supervised_loss(semi ? slice(s_out.probs, 0, 0, m) : s_out.probs, labeled.labels, train.alpha_e);

    Tensor l_c = Tensor::scalar(0.0);
    Tensor l_gmc = Tensor::scalar(0.0);
    if (semi) {
        const Tensor noisy = noise_perturb(unlabeled.images, train.noise_sigma, train.noise_clip, state.noise_rng);
        const net::ForwardOutputs t_ns = net::forward(net, state.teacher, noisy, net::Mode::teacher);
        std::optional<net::ForwardOutputs> t_gp;
        if (train.ablation.ggpc) {
            t_gp = net::forward(net, state.teacher, warp::apply_ggpc(unlabeled.images, train.wave), net::Mode::teacher);
        }
        const Tensor p_u = slice(s_out.probs, 0, m, m + n);
        {
            std::optional<NoGradGuard> frozen;
            if (w1 == 0.0) frozen.emplace();
            l_c = consistency_loss(p_u, t_ns.probs, t_gp ? t_gp->probs : Tensor());
        }
        if (train.ablation.gmam) {
            std::optional<NoGradGuard> frozen;
            if (w2 == 0.0) frozen.emplace();
            const auto alpha = train.level_alpha(net.depth);
            const auto beta = train.level_beta(net.depth);
            l_gmc = moment_consistency(net, state.student, s_out, m, state.teacher, t_ns, t_gp ? &*t_gp : nullptr,
                                       alpha, beta);
        }
    }

    const Tensor total = total_loss(l_s, l_c, l_gmc, w1, w2);
    rec.l_s = l_s.item();
    rec.l_c = l_c.item();
    rec.l_gmc = l_gmc.item();
    rec.total = total.item();
    if (total.requires_grad()) total.backward();

    auto& entries = state.student.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!entries[i].trainable) continue;
        auto w = entries[i].tensor.values_mut();
        const auto g = entries[i].tensor.grad();
        auto& v = state.velocity[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double d = (g.empty() ? 0.0 : g[j]) + train.weight_decay * w[j];
            v[j] = train.momentum * v[j] + d;
            w[j] -= train.lr * v[j];
        }
    }
    ema_update(state.teacher, state.student, train.ema_decay);
    ++state.iteration;
    return rec;
}

metrics::BinaryMask predict_mask(const net::NetConfig& net, const ParameterSet& params, const data::Volume& volume) {
    const auto opts = augment_options(net);
    const data::Volume v = volume.dims == opts.crop ? volume
                                                    : data::apply_augment(volume, data::identity_draw(volume, opts), opts);
    const net::ForwardOutputs out = net::forward(net, params, v.to_tensor(), net::Mode::teacher);
    metrics::BinaryMask mask({v.dims[2], v.dims[1], v.dims[0]}, {v.spacing[2], v.spacing[1], v.spacing[0]});
    const auto p = out.probs.values();
    const std::size_t vox = mask.size();
    for (std::size_t i = 0; i < vox; ++i) mask.data[i] = p[vox + i] > 0.5 ? 1 : 0;
    return mask;
}

EvalSummary summarize(std::vector<EvalRow> rows) {
    EvalSummary s;
    s.rows = std::move(rows);
    if (s.rows.empty()) return s;
    double hd = 0.0;
    double as = 0.0;
    int nhd = 0;
    int nas = 0;
    for (const auto& r : s.rows) {
        s.mean_dice += r.metrics.dice;
        s.mean_jaccard += r.metrics.jaccard;
        if (r.metrics.hd95) {
            hd += *r.metrics.hd95;
            ++nhd;
        }
        if (r.metrics.asd) {
            as += *r.metrics.asd;
            ++nas;
        }
    }
    s.mean_dice /= static_cast<double>(s.rows.size());
    s.mean_jaccard /= static_cast<double>(s.rows.size());
    if (nhd > 0) s.mean_hd95 = hd / nhd;
    if (nas > 0) s.mean_asd = as / nas;
    return s;
}

EvalSummary evaluate_model(const net::NetConfig& net, const ParameterSet& params,
                           const std::vector<data::Volume>& volumes) {
    std::vector<EvalRow> rows;
    const auto opts = augment_options(net);
    for (const auto& v : volumes) {
        const data::Volume cropped = v.dims == opts.crop ? v : data::apply_augment(v, data::identity_draw(v, opts), opts);
        rows.push_back({v.id, metrics::evaluate(predict_mask(net, params, cropped), cropped.label_mask())});
    }
    return summarize(std::move(rows));
}

std::string ablation_comment(const AblationFlags& flags) {
    return std::string("# ablation gmam=") + (flags.gmam ? "1" : "0") + " ggpc=" + (flags.ggpc ? "1" : "0") +
           " giim=" + (flags.giim ? "1" : "0");
}

std::string format_csv(const std::vector<LogRow>& rows, const AblationFlags& flags) {
    std::string out = ablation_comment(flags) + "\n" + kCsvHeader + "\n";
    for (const auto& r : rows) {
        out += std::to_string(r.iter) + "," + std::to_string(r.epoch) + "," + fmt(r.l_total) + "," + fmt(r.l_s) + "," +
               fmt(r.l_c) + "," + fmt(r.l_gmc) + "," + fmt_opt(r.val_dice) + "," + fmt_opt(r.val_jaccard) + "," +
               fmt_opt(r.val_hd95) + "," + fmt_opt(r.val_asd) + "\n";
    }
    return out;
}

std::vector<LogRow> parse_csv(const std::string& text) {
    std::vector<LogRow> rows;
    std::istringstream in(text);
    std::string line;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            if (line != kCsvHeader) throw std::invalid_argument("metrics CSV header mismatch: '" + line + "'");
            header = true;
            continue;
        }
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        while (f.size() < 10) f.emplace_back();
        if (f.size() != 10) throw std::invalid_argument("metrics CSV row has " + std::to_string(f.size()) + " fields");
        auto opt = [](const std::string& s) -> std::optional<double> {
            if (s.empty()) return std::nullopt;
            return std::stod(s);
        };
        LogRow r;
        r.iter = std::stoull(f[0]);
        r.epoch = std::stoi(f[1]);
        r.l_total = std::stod(f[2]);
        r.l_s = std::stod(f[3]);
        r.l_c = std::stod(f[4]);
        r.l_gmc = std::stod(f[5]);
        r.val_dice = opt(f[6]);
        r.val_jaccard = opt(f[7]);
        r.val_hd95 = opt(f[8]);
        r.val_asd = opt(f[9]);
        rows.push_back(r);
    }
    if (!header) throw std::invalid_argument("metrics CSV lacks its header line");
    return rows;
}

Checkpoint make_checkpoint(const TrainerState& state, const std::string& config_text) {
    Checkpoint ck;
    ck.config_text = config_text;
    ck.iteration = state.iteration;
    append_blobs(ck, "student/", state.student);
    append_blobs(ck, "teacher/", state.teacher);
    return ck;
}

TrainOutcome train_loop(const TrainData& data, const net::NetConfig& net, const TrainConfig& train,
                        const LoopOptions& options) {
    net.validate();
    train.validate(net.depth);
    if (data.labeled.empty()) throw std::invalid_argument("train_loop: the labeled split is empty");
    if (!train.labeled_only && data.unlabeled.empty()) {
        throw std::invalid_argument("train_loop: the unlabeled split is empty (set train.labeled_only=true)");
    }

    TrainOutcome out;
    out.state = init_state(net, train);
    TrainerState& state = out.state;
    Sampler labeled_sampler = make_sampler(data.labeled.size());
    Sampler unlabeled_sampler = make_sampler(data.unlabeled.size());

    for (int epoch = 0; epoch < train.epochs; ++epoch) {
        for (int it = 0; it < train.iters_per_epoch; ++it) {
            const Batch lb = make_batch(data.labeled, labeled_sampler, state.labeled_rng, train.labeled_batch, true, net,
                                        train);
            Batch ub;
            if (!train.labeled_only) {
                ub = make_batch(data.unlabeled, unlabeled_sampler, state.unlabeled_rng, train.unlabeled_batch, false,
                                net, train);
            }
            const StepRecord rec = train_step(state, lb, ub, net, train);
            LogRow row;
            row.iter = rec.iteration;
            row.epoch = epoch;
            row.l_total = rec.total;
            row.l_s = rec.l_s;
            row.l_c = rec.l_c;
            row.l_gmc = rec.l_gmc;
            out.log.push_back(row);
        }
        if (!data.validation.empty()) {
            const EvalSummary val = evaluate_model(net, state.teacher, data.validation);
            LogRow& row = out.log.back();
            row.val_dice = val.mean_dice;
            row.val_jaccard = val.mean_jaccard;
            row.val_hd95 = val.mean_hd95;
            row.val_asd = val.mean_asd;
            if (val.mean_dice > out.best_val_dice) {
                out.best_val_dice = val.mean_dice;
                out.best_iteration = state.iteration;
                out.best = make_checkpoint(state, options.config_text);
            }
            if (options.progress) {
                std::ostringstream os;
                os << "epoch " << epoch << " iter " << state.iteration << " L_total " << row.l_total << " val_dice "
                   << val.mean_dice;
                options.progress(os.str());
            }
        }
    }
    out.final = make_checkpoint(state, options.config_text);
    if (out.best_val_dice < 0.0) {
        out.best = out.final;
        out.best_iteration = state.iteration;
    }

    if (!options.run_dir.empty()) {
        std::filesystem::create_directories(options.run_dir);
        const auto csv_path = options.run_dir / "metrics.csv";
        std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
        if (!csv) throw std::runtime_error("cannot write '" + csv_path.string() + "'");
        csv << format_csv(out.log, train.ablation);
        save_checkpoint(options.run_dir / "best.ckpt", out.best);
        save_checkpoint(options.run_dir / "final.ckpt", out.final);
    }
    return out;
}

}  // namespace gigp::train
