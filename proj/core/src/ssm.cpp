#include "gigp/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gigp::ssm {

namespace {

double softplus_value(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid_value(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = dist(rng);
    return Tensor::from_values(std::move(shape), std::move(v), true);
}

Tensor conv_param(Shape shape, std::mt19937_64& rng) {
    const int fan_in = shape[1] * shape[2] * shape[3] * shape[4];
    return normal_tensor(std::move(shape), std::sqrt(2.0 / fan_in), rng);
}

Tensor channel_affine(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    const int c = gamma.dim(0);
    return add(mul(x, reshape(gamma, {1, c, 1, 1, 1})), reshape(beta, {1, c, 1, 1, 1}));
}

}  // namespace

Discretized discretize(double delta, std::span<const double> a, std::span<const double> b) {
    if (!(delta > 0.0)) throw std::invalid_argument("discretize: delta must be positive");
    if (a.size() != b.size()) throw std::invalid_argument("discretize: A and B lengths differ");
    Discretized out;
    out.a_bar.resize(a.size());
    out.b_bar.resize(b.size());
    for (std::size_t n = 0; n < a.size(); ++n) {
        out.a_bar[n] = std::exp(delta * a[n]);
        out.b_bar[n] = delta * b[n];
    }
    return out;
}

std::vector<double> SsmParams::a() const {
    std::vector<double> out;
    for (double v : a_log.values()) out.push_back(-std::exp(v));
    return out;
}

SsmParams init_ssm_params(int state_dim, int token_dim, std::mt19937_64& rng) {
    if (state_dim < 1 || token_dim < 1) throw std::invalid_argument("ssm dimensions must be positive");
    SsmParams p;
    const double delta0 = 0.05;
    p.w_delta = normal_tensor({token_dim}, 0.1, rng);
    p.b_delta = Tensor::from_values({1}, {std::log(std::expm1(delta0))}, true);
    p.w_b = normal_tensor({state_dim, token_dim}, 0.1, rng);
    p.b_b = Tensor::full({state_dim}, 1.0, true);
    p.w_c = normal_tensor({state_dim, token_dim}, 0.1, rng);
    p.b_c = Tensor::full({state_dim}, 1.0 / state_dim, true);
    std::vector<double> a_log(state_dim);
    for (int n = 0; n < state_dim; ++n) a_log[n] = std::log(static_cast<double>(n + 1));
    p.a_log = Tensor::from_values({state_dim}, std::move(a_log), true);
    p.d_skip = Tensor::full({token_dim}, 1.0, true);
    return p;
}

void add_ssm_params(ParameterSet& set, const std::string& prefix, const SsmParams& p) {
    set.add(prefix + ".w_delta", p.w_delta);
    set.add(prefix + ".b_delta", p.b_delta);
    set.add(prefix + ".w_b", p.w_b);
    set.add(prefix + ".b_b", p.b_b);
    set.add(prefix + ".w_c", p.w_c);
    set.add(prefix + ".b_c", p.b_c);
    set.add(prefix + ".a_log", p.a_log);
    set.add(prefix + ".d_skip", p.d_skip);
}

SsmParams ssm_params_from(const ParameterSet& set, const std::string& prefix) {
    return {set.get(prefix + ".w_delta"), set.get(prefix + ".b_delta"), set.get(prefix + ".w_b"),
            set.get(prefix + ".b_b"),     set.get(prefix + ".w_c"),     set.get(prefix + ".b_c"),
            set.get(prefix + ".a_log"),   set.get(prefix + ".d_skip")};
}

Direction parse_direction(std::string_view tag) {
    if (tag == "f") return Direction::forward;
    if (tag == "r") return Direction::reverse;
    if (tag == "c") return Direction::channel;
    if (tag == "t") return Direction::sample;
    throw std::invalid_argument("unknown scan direction '" + std::string(tag) + "' (expected f, r, c or t)");
}

char direction_tag(Direction direction) {
    switch (direction) {
        case Direction::forward: return 'f';
        case Direction::reverse: return 'r';
        case Direction::channel: return 'c';
        case Direction::sample: return 't';
    }
    throw std::invalid_argument("unknown scan direction");
}

SequenceBatch make_sequences(const Tensor& feature, Direction direction, const std::vector<bool>& labeled) {
    if (feature.rank() != 3) throw ShapeError("make_sequences: feature must be [B,C,S], got " + shape_str(feature.shape()));
    const int b = feature.dim(0);
    const int c = feature.dim(1);
    const int s = feature.dim(2);
    if (!labeled.empty() && labeled.size() != static_cast<std::size_t>(b)) {
        throw std::invalid_argument("make_sequences: labeled flags must cover every batch sample");
    }
    auto offset = [c, s](int bi, int ci, int si) { return (static_cast<std::size_t>(bi) * c + ci) * s + si; };
    auto index = std::make_shared<std::vector<std::size_t>>();
    index->reserve(feature.numel());
    Shape shape;
    switch (direction) {
        case Direction::forward:
        case Direction::reverse:
            for (int bi = 0; bi < b; ++bi)
                for (int ci = 0; ci < c; ++ci)
                    for (int si = 0; si < s; ++si)
                        index->push_back(offset(bi, ci, direction == Direction::forward ? si : s - 1 - si));
            shape = {b * c, s, 1};
            break;
        case Direction::channel:
            for (int bi = 0; bi < b; ++bi)
                for (int si = 0; si < s; ++si)
                    for (int ci = 0; ci < c; ++ci) index->push_back(offset(bi, ci, si));
            shape = {b * s, c, 1};
            break;
        case Direction::sample: {
            std::vector<int> order;
            for (int bi = 0; bi < b; ++bi)
                if (!labeled.empty() && labeled[bi]) order.push_back(bi);
            for (int bi = 0; bi < b; ++bi)
                if (labeled.empty() || !labeled[bi]) order.push_back(bi);
            for (int ci = 0; ci < c; ++ci)
                for (int si = 0; si < s; ++si)
                    for (int bi : order) index->push_back(offset(bi, ci, si));
            shape = {c * s, b, 1};
            break;
        }
        default:
            throw std::invalid_argument("make_sequences: unknown direction");
    }
    SequenceBatch out;
    out.tokens = gather(feature, *index, shape);
    out.direction = direction;
    out.source_shape = feature.shape();
    out.index = index;
    return out;
}

Tensor restore_sequences(const Tensor& tokens, const SequenceBatch& layout) {
    if (tokens.numel() != layout.index->size()) {
        throw ShapeError("restore_sequences: token count does not match the sequence layout");
    }
    std::vector<std::size_t> inverse(layout.index->size());
    for (std::size_t slot = 0; slot < inverse.size(); ++slot) inverse[(*layout.index)[slot]] = slot;
    return gather(tokens, std::move(inverse), layout.source_shape);
}

Tensor selective_scan(const Tensor& tokens, const SsmParams& params) {
    if (tokens.rank() != 3) throw ShapeError("selective_scan: tokens must be [S,L,d], got " + shape_str(tokens.shape()));
    const int num_seq = tokens.dim(0);
    const int len = tokens.dim(1);
    const int d = tokens.dim(2);
    const int n_state = params.state_dim();
    if (d != params.token_dim()) {
        throw ShapeError("selective_scan: token dimension 2 is " + std::to_string(d) + " but parameters expect " +
                         std::to_string(params.token_dim()));
    }
    const std::vector<double> a = params.a();
    const auto xv = tokens.values();
    const auto wd = params.w_delta.values();
    const double bd = params.b_delta.values()[0];
    const auto wb = params.w_b.values();
    const auto bb = params.b_b.values();
    const auto wc = params.w_c.values();
    const auto bc = params.b_c.values();
    const auto dk = params.d_skip.values();

    // Per-token cache: z, delta, B[N], C[N], Abar[N], h[d*N].
    const std::size_t stride = 2 + 3 * static_cast<std::size_t>(n_state) + static_cast<std::size_t>(d) * n_state;
    const std::size_t total = static_cast<std::size_t>(num_seq) * len;
    auto cache = std::make_shared<std::vector<double>>(total * stride);
    std::vector<double> y(xv.size());
    std::vector<double> h(static_cast<std::size_t>(d) * n_state);

    for (int q = 0; q < num_seq; ++q) {
        std::fill(h.begin(), h.end(), 0.0);
        for (int t = 0; t < len; ++t) {
            const std::size_t tok = static_cast<std::size_t>(q) * len + t;
            const double* x = xv.data() + tok * d;
            double* cc = cache->data() + tok * stride;
            double z = bd;
            for (int i = 0; i < d; ++i) z += wd[i] * x[i];
            const double delta = softplus_value(z);
            cc[0] = z;
            cc[1] = delta;
            double* bt = cc + 2;
            double* ct = bt + n_state;
            double* abar = ct + n_state;
            double* hs = abar + n_state;
            for (int n = 0; n < n_state; ++n) {
                double bv = bb[n];
                double cv = bc[n];
                for (int i = 0; i < d; ++i) {
                    bv += wb[n * d + i] * x[i];
                    cv += wc[n * d + i] * x[i];
                }
                bt[n] = bv;
                ct[n] = cv;
                abar[n] = std::exp(delta * a[n]);
            }
            double* yt = y.data() + tok * d;
            for (int i = 0; i < d; ++i) {
                double acc = dk[i] * x[i];
                for (int n = 0; n < n_state; ++n) {
                    double& hv = h[static_cast<std::size_t>(i) * n_state + n];
                    hv = abar[n] * hv + delta * bt[n] * x[i];
                    acc += ct[n] * hv;
                }
                yt[i] = acc;
                if (!std::isfinite(acc)) {
                    throw std::domain_error("selective_scan: non-finite output at sequence " + std::to_string(q) +
                                            ", step " + std::to_string(t));
                }
            }
            std::copy(h.begin(), h.end(), hs);
        }
    }

    const SsmParams p = params;
    return make_result(
        tokens.shape(), std::move(y),
        {tokens, p.w_delta, p.b_delta, p.w_b, p.b_b, p.w_c, p.b_c, p.a_log, p.d_skip},
        [tokens, p, a, cache, stride, num_seq, len, d, n_state](std::span<const double> g) {
            auto gx = Tensor(tokens).grad_mut();
            auto g_wd = Tensor(p.w_delta).grad_mut();
            auto g_bd = Tensor(p.b_delta).grad_mut();
            auto g_wb = Tensor(p.w_b).grad_mut();
            auto g_bb = Tensor(p.b_b).grad_mut();
            auto g_wc = Tensor(p.w_c).grad_mut();
            auto g_bc = Tensor(p.b_c).grad_mut();
            auto g_al = Tensor(p.a_log).grad_mut();
            auto g_dk = Tensor(p.d_skip).grad_mut();
            const auto xv = tokens.values();
            const auto wd = p.w_delta.values();
            const auto wb = p.w_b.values();
            const auto wc = p.w_c.values();
            const auto dk = p.d_skip.values();

            std::vector<double> d_a(n_state, 0.0);
            std::vector<double> dh(static_cast<std::size_t>(d) * n_state);
            std::vector<double> dbt(n_state);
            std::vector<double> dct(n_state);
            std::vector<double> dx(d);
            for (int q = 0; q < num_seq; ++q) {
                std::fill(dh.begin(), dh.end(), 0.0);
                for (int t = len - 1; t >= 0; --t) {
                    const std::size_t tok = static_cast<std::size_t>(q) * len + t;
                    const double* x = xv.data() + tok * d;
                    const double* gy = g.data() + tok * d;
                    const double* cc = cache->data() + tok * stride;
                    const double z = cc[0];
                    const double delta = cc[1];
                    const double* bt = cc + 2;
                    const double* ct = bt + n_state;
                    const double* abar = ct + n_state;
                    const double* hs = abar + n_state;
                    const double* hprev = t > 0 ? cache->data() + (tok - 1) * stride + 2 + 3 * n_state : nullptr;

                    std::fill(dx.begin(), dx.end(), 0.0);
                    std::fill(dbt.begin(), dbt.end(), 0.0);
                    std::fill(dct.begin(), dct.end(), 0.0);
                    double ddelta = 0.0;
                    for (int i = 0; i < d; ++i) {
                        dx[i] += dk[i] * gy[i];
                        if (!g_dk.empty()) g_dk[i] += gy[i] * x[i];
                        for (int n = 0; n < n_state; ++n) {
                            const std::size_t k = static_cast<std::size_t>(i) * n_state + n;
                            dct[n] += gy[i] * hs[k];
                            dh[k] += ct[n] * gy[i];
                        }
                    }
                    for (int i = 0; i < d; ++i) {
                        for (int n = 0; n < n_state; ++n) {
                            const std::size_t k = static_cast<std::size_t>(i) * n_state + n;
                            const double hp = hprev ? hprev[k] : 0.0;
                            const double dabar = dh[k] * hp;
                            ddelta += dh[k] * bt[n] * x[i] + dabar * abar[n] * a[n];
                            d_a[n] += dabar * abar[n] * delta;
                            dbt[n] += dh[k] * delta * x[i];
                            dx[i] += dh[k] * delta * bt[n];
                            dh[k] *= abar[n];
                        }
                    }
                    const double dz = ddelta * sigmoid_value(z);
                    if (!g_bd.empty()) g_bd[0] += dz;
                    for (int i = 0; i < d; ++i) {
                        if (!g_wd.empty()) g_wd[i] += dz * x[i];
                        dx[i] += dz * wd[i];
                    }
                    for (int n = 0; n < n_state; ++n) {
                        if (!g_bb.empty()) g_bb[n] += dbt[n];
                        if (!g_bc.empty()) g_bc[n] += dct[n];
                        for (int i = 0; i < d; ++i) {
                            if (!g_wb.empty()) g_wb[n * d + i] += dbt[n] * x[i];
                            if (!g_wc.empty()) g_wc[n * d + i] += dct[n] * x[i];
                            dx[i] += wb[n * d + i] * dbt[n] + wc[n * d + i] * dct[n];
                        }
                    }
                    if (!gx.empty()) {
                        for (int i = 0; i < d; ++i) gx[tok * d + i] += dx[i];
                    }
                }
            }
            if (!g_al.empty()) {
                for (int n = 0; n < n_state; ++n) g_al[n] += d_a[n] * a[n];
            }
        });
}

SequenceBatch selective_scan(const SequenceBatch& seq, const SsmParams& params) {
    SequenceBatch out = seq;
    out.tokens = selective_scan(seq.tokens, params);
    return out;
}

Tensor iim_forward(const Tensor& feature, const IimParams& params, double lambda1, double lambda2,
                   const std::vector<bool>& labeled) {
    static constexpr std::array<Direction, 4> kOrder{Direction::forward, Direction::reverse, Direction::channel,
                                                     Direction::sample};
    const std::array<double, 4> weight{1.0, 1.0, lambda1, lambda2};
    Tensor out;
    for (int k = 0; k < 4; ++k) {
        const SequenceBatch seq = make_sequences(feature, kOrder[k], labeled);
        const Tensor branch = restore_sequences(selective_scan(seq.tokens, params[k]), seq);
        const Tensor term = weight[k] == 1.0 ? branch : mul_scalar(branch, weight[k]);
        out = out.defined() ? add(out, term) : term;
    }
    return out;
}

Tensor gsc(const Tensor& feature, const GscParams& params) {
    Conv3dOptions same;
    same.padding = {params.main_kernel.dim(2) / 2, params.main_kernel.dim(3) / 2, params.main_kernel.dim(4) / 2};
    const Tensor main = conv3d(feature, params.main_kernel, params.main_bias, same);
    const Tensor gate = sigmoid(conv3d(feature, params.gate_kernel, params.gate_bias));
    if (main.shape() != feature.shape()) {
        throw ShapeError("gsc: main convolution must preserve shape " + shape_str(feature.shape()) + ", got " +
                         shape_str(main.shape()));
    }
    return add(feature, mul(main, gate));
}

GiimParams init_giim_params(int channels, int state_dim, std::mt19937_64& rng) {
    GiimParams p;
    p.gsc.main_kernel = conv_param({channels, channels, 3, 3, 3}, rng);
    p.gsc.main_bias = Tensor::zeros({channels}, true);
    p.gsc.gate_kernel = conv_param({channels, channels, 1, 1, 1}, rng);
    p.gsc.gate_bias = Tensor::zeros({channels}, true);
    p.norm1_gamma = Tensor::full({channels}, 1.0, true);
    p.norm1_beta = Tensor::zeros({channels}, true);
    p.norm2_gamma = Tensor::full({channels}, 1.0, true);
    p.norm2_beta = Tensor::zeros({channels}, true);
    for (auto& branch : p.iim) branch = init_ssm_params(state_dim, 1, rng);
    p.mlp1_kernel = conv_param({2 * channels, channels, 1, 1, 1}, rng);
    p.mlp1_bias = Tensor::zeros({2 * channels}, true);
    p.mlp2_kernel = conv_param({channels, 2 * channels, 1, 1, 1}, rng);
    p.mlp2_bias = Tensor::zeros({channels}, true);
    return p;
}

void add_giim_params(ParameterSet& set, const std::string& prefix, const GiimParams& p) {
    set.add(prefix + ".gsc.main.weight", p.gsc.main_kernel);
    set.add(prefix + ".gsc.main.bias", p.gsc.main_bias);
    set.add(prefix + ".gsc.gate.weight", p.gsc.gate_kernel);
    set.add(prefix + ".gsc.gate.bias", p.gsc.gate_bias);
    set.add(prefix + ".norm1.gamma", p.norm1_gamma);
    set.add(prefix + ".norm1.beta", p.norm1_beta);
    set.add(prefix + ".norm2.gamma", p.norm2_gamma);
    set.add(prefix + ".norm2.beta", p.norm2_beta);
    for (int k = 0; k < 4; ++k) {
        add_ssm_params(set, prefix + ".iim." + direction_tag(static_cast<Direction>(k)), p.iim[k]);
    }
    set.add(prefix + ".mlp1.weight", p.mlp1_kernel);
    set.add(prefix + ".mlp1.bias", p.mlp1_bias);
    set.add(prefix + ".mlp2.weight", p.mlp2_kernel);
    set.add(prefix + ".mlp2.bias", p.mlp2_bias);
}

GiimParams giim_params_from(const ParameterSet& set, const std::string& prefix) {
    GiimParams p;
    p.gsc = {set.get(prefix + ".gsc.main.weight"), set.get(prefix + ".gsc.main.bias"),
             set.get(prefix + ".gsc.gate.weight"), set.get(prefix + ".gsc.gate.bias")};
    p.norm1_gamma = set.get(prefix + ".norm1.gamma");
    p.norm1_beta = set.get(prefix + ".norm1.beta");
    p.norm2_gamma = set.get(prefix + ".norm2.gamma");
    p.norm2_beta = set.get(prefix + ".norm2.beta");
    for (int k = 0; k < 4; ++k) {
        p.iim[k] = ssm_params_from(set, prefix + ".iim." + direction_tag(static_cast<Direction>(k)));
    }
    p.mlp1_kernel = set.get(prefix + ".mlp1.weight");
    p.mlp1_bias = set.get(prefix + ".mlp1.bias");
    p.mlp2_kernel = set.get(prefix + ".mlp2.weight");
    p.mlp2_bias = set.get(prefix + ".mlp2.bias");
    return p;
}

Tensor giim_block(const Tensor& feature, const GiimParams& params, const GiimOptions& options) {
    if (feature.rank() != 5) throw ShapeError("giim_block: feature must be rank 5, got " + shape_str(feature.shape()));
    const Shape shape = feature.shape();
    const int b = shape[0];
    const int c = shape[1];
    const int s = shape[2] * shape[3] * shape[4];

    const Tensor g = gsc(feature, params.gsc);
    const Tensor n1 = channel_affine(normalize(g, {1}), params.norm1_gamma, params.norm1_beta);
    const Tensor mixed = reshape(iim_forward(reshape(n1, {b, c, s}), params.iim, options.lambda1, options.lambda2,
                                             options.labeled),
                                 shape);
    const Tensor u = add(g, mixed);
    const Tensor n2 = channel_affine(normalize(u, {1}), params.norm2_gamma, params.norm2_beta);
    const Tensor hidden = leaky_relu(conv3d(n2, params.mlp1_kernel, params.mlp1_bias), options.slope);
    return add(u, conv3d(hidden, params.mlp2_kernel, params.mlp2_bias));
}

}  // namespace gigp::ssm
