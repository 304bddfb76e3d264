#pragma once

// Mean-teacher training: supervised Dice + cross-entropy on labeled samples,
// prediction consistency against a noise-perturbed and a wave-warped teacher
// branch, and moment consistency between student levels and the teacher's
// final encoder/decoder levels. The teacher is an EMA of the student.

#include "gigp/checkpoint.hpp"
#include "gigp/metrics.hpp"
#include "gigp/parameters.hpp"
#include "gigp/segnet.hpp"
#include "gigp/tensor.hpp"
#include "gigp/volume.hpp"
#include "gigp/wave_warp.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gigp::train {

struct AblationFlags {
    bool gmam = true;
    bool ggpc = true;
    bool giim = true;
};

struct TrainConfig {
    double gamma1 = 0.1;
    double gamma2 = 0.01;
    double alpha_e = 0.5;
    std::vector<double> alpha_k;  // empty: 1/(2K) per level
    std::vector<double> beta_k;   // empty: 1/(2K) per level
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 3e-5;
    double ema_decay = 0.99;
    int ramp_length = 0;  // 0: half of the total iterations
    int epochs = 10;
    int iters_per_epoch = 20;
    int labeled_batch = 2;
    int unlabeled_batch = 2;
    double noise_sigma = 0.1;
    double noise_clip = 0.2;
    warp::WaveParams wave;
    bool augment = true;
    // Skip every unlabeled computation; equivalent to gamma1 = gamma2 = 0.
    bool labeled_only = false;
    AblationFlags ablation;
    std::uint64_t seed = 1;

    // Throws std::invalid_argument listing every offending field.
    void validate(int depth) const;
    int total_iterations() const { return epochs * iters_per_epoch; }
    int effective_ramp_length() const;
    std::vector<double> level_alpha(int depth) const;
    std::vector<double> level_beta(int depth) const;
};

// Applies the ablation switches: no GMAM freezes lambda_P at 0 and zeroes
// gamma2; no GGPC drops the warp branch; no GIIM bypasses the block.
void apply_ablation(net::NetConfig& net, TrainConfig& train);

class NonFiniteLossError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// probs: [B,2,...] softmax output; labels: [B,1,...] of 0/1.
Tensor supervised_loss(const Tensor& probs, const Tensor& labels, double alpha_e);
Tensor soft_dice_loss(const Tensor& probs, const Tensor& labels);
Tensor cross_entropy_loss(const Tensor& probs, const Tensor& labels);

// MSE(student, ns) + MSE(student, gp); `teacher_gp` may be undefined.
Tensor consistency_loss(const Tensor& student, const Tensor& teacher_ns, const Tensor& teacher_gp);

// l_s + w1 * l_c + w2 * l_gmc; throws NonFiniteLossError with the breakdown.
Tensor total_loss(const Tensor& l_s, const Tensor& l_c, const Tensor& l_gmc, double w1, double w2);

double ramp_weight(long long iteration, long long ramp_length);

Tensor noise_perturb(const Tensor& batch, double sigma, double clip, std::mt19937_64& rng);

// t <- decay * t + (1 - decay) * s for every parameter, paired by name.
void ema_update(ParameterSet& teacher, const ParameterSet& student, double decay);

struct TrainerState {
    ParameterSet student;
    ParameterSet teacher;
    std::vector<std::vector<double>> velocity;  // per student parameter
    std::uint64_t iteration = 0;
    std::mt19937_64 labeled_rng;
    std::mt19937_64 unlabeled_rng;
    std::mt19937_64 noise_rng;
};

TrainerState init_state(const net::NetConfig& net, const TrainConfig& train);

struct StepRecord {
    std::uint64_t iteration = 0;  // index of the step just taken
    double ramp = 0.0;
    double total = 0.0;
    double l_s = 0.0;
    double l_c = 0.0;
    double l_gmc = 0.0;
};

struct Batch {
    Tensor images;  // [m or n, 1, D, H, W]
    Tensor labels;  // [m, 1, D, H, W]; undefined for unlabeled batches
};

// L_gmc for student features of unlabeled samples `first..first+count` and
// the matching teacher outputs. Degenerate samples are skipped; the result
// is the mean over the remaining ones (0 when none remain).
Tensor moment_consistency(const net::NetConfig& net, const ParameterSet& student, const net::ForwardOutputs& s_out,
                          int first, const ParameterSet& teacher, const net::ForwardOutputs& t_ns,
                          const net::ForwardOutputs* t_gp, std::span<const double> alpha,
                          std::span<const double> beta);

StepRecord train_step(TrainerState& state, const Batch& labeled, const Batch& unlabeled, const net::NetConfig& net,
                      const TrainConfig& train);

struct EvalRow {
    std::string id;
    metrics::MetricSet metrics;
};

struct EvalSummary {
    std::vector<EvalRow> rows;
    double mean_dice = 0.0;
    double mean_jaccard = 0.0;
    std::optional<double> mean_hd95;  // over volumes where defined
    std::optional<double> mean_asd;
};

// Foreground iff p(foreground) > 0.5. Volumes are center-cropped to the
// network input shape.
metrics::BinaryMask predict_mask(const net::NetConfig& net, const ParameterSet& params, const data::Volume& volume);
EvalSummary evaluate_model(const net::NetConfig& net, const ParameterSet& params,
                           const std::vector<data::Volume>& volumes);
EvalSummary summarize(std::vector<EvalRow> rows);

struct TrainData {
    std::vector<data::Volume> labeled;
    std::vector<data::Volume> unlabeled;
    std::vector<data::Volume> validation;
};

struct LogRow {
    std::uint64_t iter = 0;
    int epoch = 0;
    double l_total = 0.0;
    double l_s = 0.0;
    double l_c = 0.0;
    double l_gmc = 0.0;
    std::optional<double> val_dice, val_jaccard, val_hd95, val_asd;
};

inline constexpr char kCsvHeader[] = "iter,epoch,L_total,L_s,L_c,L_gmc,val_dice,val_jaccard,val_hd95,val_asd";

std::string ablation_comment(const AblationFlags& flags);
// Comment line, header, one line per row; doubles printed round-trippably.
std::string format_csv(const std::vector<LogRow>& rows, const AblationFlags& flags);
std::vector<LogRow> parse_csv(const std::string& text);

struct LoopOptions {
    std::string config_text;         // stored inside checkpoints
    std::filesystem::path run_dir;   // empty: write nothing
    std::function<void(const std::string&)> progress;
};

struct TrainOutcome {
    TrainerState state;
    std::vector<LogRow> log;
    double best_val_dice = -1.0;
    std::uint64_t best_iteration = 0;
    Checkpoint best;
    Checkpoint final;
};

// Writes metrics.csv, best.ckpt and final.ckpt into run_dir when set.
TrainOutcome train_loop(const TrainData& data, const net::NetConfig& net, const TrainConfig& train,
                        const LoopOptions& options = {});

Checkpoint make_checkpoint(const TrainerState& state, const std::string& config_text);

}  // namespace gigp::train
