#include "gigp/segnet.hpp"

#include "gigp/moments.hpp"
#include "gigp/ssm.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace gigp::net {

namespace {

const char* const kAxisTag[3] = {"h", "w", "l"};

std::string level_name(const char* part, int k) { return std::string(part) + std::to_string(k); }

Tensor he_kernel(Shape shape, std::mt19937_64& rng, double extra_scale = 1.0) {
    const int fan_in = shape[1] * shape[2] * shape[3] * shape[4];
    std::normal_distribution<double> dist(0.0, extra_scale * std::sqrt(2.0 / fan_in));
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = dist(rng);
    return Tensor::from_values(std::move(shape), std::move(v), true);
}

void add_norm(ParameterSet& set, const std::string& prefix, int channels) {
    set.add(prefix + ".gamma", Tensor::full({channels}, 1.0, true));
    set.add(prefix + ".beta", Tensor::zeros({channels}, true));
}

void add_block(ParameterSet& set, const std::string& prefix, int cin, int cout, int kernel, std::mt19937_64& rng) {
    set.add(prefix + ".weight", he_kernel({cout, cin, kernel, kernel, kernel}, rng));
    add_norm(set, prefix + ".norm", cout);
}

Tensor instance_norm(const Tensor& x, const ParameterSet& params, const std::string& prefix) {
    const int c = x.dim(1);
    const Tensor n = normalize(x, {2, 3, 4});
    return add(mul(n, reshape(params.get(prefix + ".gamma"), {1, c, 1, 1, 1})),
               reshape(params.get(prefix + ".beta"), {1, c, 1, 1, 1}));
}

Tensor conv_block(const Tensor& x, const ParameterSet& params, const std::string& prefix, const NetConfig& config,
                  int stride) {
    const Tensor& w = params.get(prefix + ".weight");
    Conv3dOptions opts;
    if (stride == 1) {
        const int p = w.dim(2) / 2;
        opts.padding = {p, p, p};
    } else {
        opts.stride = {stride, stride, stride};
    }
    const Tensor y = conv3d(x, w, Tensor(), opts);
    return leaky_relu(instance_norm(y, params, prefix + ".norm"), config.slope);
}

moments::MomentAttentionParams mvma_params(const ParameterSet& params, int k) {
    moments::MomentAttentionParams p;
    const std::string prefix = level_name("enc", k) + ".mvma.";
    for (int a = 0; a < 3; ++a) {
        p.kernel[a] = params.get(prefix + kAxisTag[a] + ".weight");
        p.bias[a] = params.get(prefix + kAxisTag[a] + ".bias");
    }
    p.lambda = params.get(prefix + "lambda");
    return p;
}

ForwardOutputs run(const NetConfig& config, const ParameterSet& params, const Tensor& batch, int num_labeled) {
    const int depth = config.depth;
    ForwardOutputs out;
    out.encoder.resize(depth);
    out.decoder.resize(depth);

    Tensor x = batch;
    for (int k = 0; k < depth; ++k) {
        const std::string enc = level_name("enc", k);
        if (k > 0) x = conv_block(x, params, enc + ".down", config, 2);
        x = conv_block(x, params, enc + ".conv", config, 1);
        if (config.mvma_enabled) x = moments::mvma_attention(x, mvma_params(params, k));
        if (k == depth - 1 && config.giim_enabled) {
            ssm::GiimOptions opts;
            opts.lambda1 = config.lambda1;
            opts.lambda2 = config.lambda2;
            opts.slope = config.slope;
            opts.labeled.assign(x.dim(0), false);
            for (int b = 0; b < num_labeled && b < x.dim(0); ++b) opts.labeled[b] = true;
            x = ssm::giim_block(x, ssm::giim_params_from(params, "bottleneck.giim"), opts);
        }
        out.encoder[k] = x;
    }

    Tensor d = conv_block(out.encoder[depth - 1], params, level_name("dec", depth - 1) + ".conv", config, 1);
    out.decoder[depth - 1] = d;
    for (int k = depth - 2; k >= 0; --k) {
        const std::string dec = level_name("dec", k);
        const Tensor up = resample_trilinear(d, config.level_shape(k));
        const Tensor proj = conv3d(up, params.get(dec + ".up.weight"), params.get(dec + ".up.bias"));
        d = conv_block(concat({proj, out.encoder[k]}, 1), params, dec + ".conv", config, 1);
        out.decoder[k] = d;
    }
    const Tensor logits = conv3d(d, params.get("head.weight"), params.get("head.bias"));
    out.probs = softmax(logits, 1);
    return out;
}

}  // namespace

void NetConfig::validate() const {
    if (depth < 1) throw std::invalid_argument("net.depth must be >= 1, got " + std::to_string(depth));
    if (base_channels < 1) throw std::invalid_argument("net.base_channels must be >= 1");
    if (growth < 1) throw std::invalid_argument("net.growth must be >= 1");
    if (num_classes != 2) {
        throw std::invalid_argument("net.num_classes must be 2 (background/foreground), got " +
                                    std::to_string(num_classes));
    }
    if (ssm_state_dim < 1) throw std::invalid_argument("net.ssm_state_dim must be >= 1");
    if (!(slope >= 0.0) || !std::isfinite(lambda1) || !std::isfinite(lambda2) || lambda1 < 0.0 || lambda2 < 0.0) {
        throw std::invalid_argument("net.slope, net.lambda1 and net.lambda2 must be finite and >= 0");
    }
    const int factor = 1 << (depth - 1);
    static const char* const names[3] = {"depth", "height", "width"};
    for (int a = 0; a < 3; ++a) {
        if (input_shape[a] < 1 || input_shape[a] % factor != 0) {
            throw std::invalid_argument("net.input_shape " + std::string(names[a]) + " extent " +
                                        std::to_string(input_shape[a]) + " is not divisible by 2^(depth-1) = " +
                                        std::to_string(factor));
        }
    }
}

int NetConfig::channels(int level) const {
    int c = base_channels;
    for (int k = 0; k < level; ++k) c *= growth;
    return c;
}

std::array<int, 3> NetConfig::level_shape(int level) const {
    return {input_shape[0] >> level, input_shape[1] >> level, input_shape[2] >> level};
}

bool operator==(const NetConfig& a, const NetConfig& b) {
    return a.depth == b.depth && a.base_channels == b.base_channels && a.growth == b.growth &&
           a.num_classes == b.num_classes && a.input_shape == b.input_shape && a.ssm_state_dim == b.ssm_state_dim &&
           a.lambda1 == b.lambda1 && a.lambda2 == b.lambda2 && a.slope == b.slope &&
           a.mvma_enabled == b.mvma_enabled && a.giim_enabled == b.giim_enabled;
}

ParameterSet build_network(const NetConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    ParameterSet set;
    const int depth = config.depth;

    for (int k = 0; k < depth; ++k) {
        const std::string enc = level_name("enc", k);
        const int c = config.channels(k);
        if (k > 0) add_block(set, enc + ".down", config.channels(k - 1), c, 2, rng);
        add_block(set, enc + ".conv", k == 0 ? 1 : c, c, 3, rng);

        // Raw moment maps scale like n (n^2 - 1) / 12 along the reduced
        // axis, so the gate convs start proportionally small.
        const auto shape = config.level_shape(k);
        for (int a = 0; a < 3; ++a) {
            const double n = shape[a];
            const double scale = 1.0 / std::max(1.0, n * (n * n - 1.0) / 12.0);
            set.add(enc + ".mvma." + kAxisTag[a] + ".weight", he_kernel({c, 6 * c, 1, 1, 1}, rng, scale));
            set.add(enc + ".mvma." + kAxisTag[a] + ".bias", Tensor::zeros({c}, true));
        }
        set.add(enc + ".mvma.lambda", Tensor::zeros({1}, true));
    }
    ssm::add_giim_params(set, "bottleneck.giim",
                         ssm::init_giim_params(config.channels(depth - 1), config.ssm_state_dim, rng));

    add_block(set, level_name("dec", depth - 1) + ".conv", config.channels(depth - 1), config.channels(depth - 1), 3,
              rng);
    for (int k = depth - 2; k >= 0; --k) {
        const std::string dec = level_name("dec", k);
        const int c = config.channels(k);
        set.add(dec + ".up.weight", he_kernel({c, config.channels(k + 1), 1, 1, 1}, rng));
        set.add(dec + ".up.bias", Tensor::zeros({c}, true));
        add_block(set, dec + ".conv", 2 * c, c, 3, rng);
    }
    set.add("head.weight", he_kernel({config.num_classes, config.channels(0), 1, 1, 1}, rng));
    set.add("head.bias", Tensor::zeros({config.num_classes}, true));

    for (int k = 0; k < depth; ++k) {
        for (const char* part : {"enc", "dec"}) {
            const std::string name = "collapse." + level_name(part, k);
            const int c = config.channels(k);
            set.add(name + ".weight", Tensor::full({c}, 1.0 / c, true));
            set.add(name + ".bias", Tensor::zeros({1}, true));
        }
    }

    if (!config.mvma_enabled) {
        for (int k = 0; k < depth; ++k) {
            const std::string prefix = level_name("enc", k) + ".mvma.";
            for (int a = 0; a < 3; ++a) {
                set.set_trainable(prefix + kAxisTag[a] + ".weight", false);
                set.set_trainable(prefix + kAxisTag[a] + ".bias", false);
            }
            set.set_trainable(prefix + "lambda", false);
        }
    }
    if (!config.giim_enabled) {
        for (auto& p : set.entries()) {
            if (p.name.rfind("bottleneck.giim.", 0) == 0) {
                p.trainable = false;
                p.tensor.set_requires_grad(false);
            }
        }
    }
    return set;
}

ForwardOutputs forward(const NetConfig& config, const ParameterSet& params, const Tensor& batch, Mode mode,
                       int num_labeled) {
    if (batch.rank() != 5 || batch.dim(1) != 1) {
        throw ShapeError("forward: batch must be [B,1,D,H,W], got " + shape_str(batch.shape()));
    }
    const std::array<int, 3> spatial{batch.dim(2), batch.dim(3), batch.dim(4)};
    if (spatial != config.input_shape) {
        throw ShapeError("forward: batch spatial shape " + shape_str({spatial[0], spatial[1], spatial[2]}) +
                         " does not match the configured input shape " +
                         shape_str({config.input_shape[0], config.input_shape[1], config.input_shape[2]}));
    }
    if (mode == Mode::teacher) {
        NoGradGuard guard;
        return run(config, params, batch, num_labeled);
    }
    return run(config, params, batch, num_labeled);
}

Tensor collapse_level(const ParameterSet& params, const Tensor& feature, bool encoder, int level, int sample) {
    const std::string name = "collapse." + level_name(encoder ? "enc" : "dec", level);
    const Tensor one = slice(feature, 0, sample, sample + 1);
    return moments::channel_collapse(one, params.get(name + ".weight"), params.get(name + ".bias"));
}

}  // namespace gigp::net
