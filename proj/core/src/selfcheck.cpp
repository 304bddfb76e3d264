#include "gigp/selfcheck.hpp"

#include "gigp/config.hpp"
#include "gigp/metrics.hpp"
#include "gigp/moments.hpp"
#include "gigp/phantom.hpp"
#include "gigp/segnet.hpp"
#include "gigp/ssm.hpp"
#include "gigp/tensor.hpp"
#include "gigp/trainer.hpp"
#include "gigp/volume.hpp"
#include "gigp/wave_warp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace gigp::selfcheck {

namespace {

struct Outcome {
    bool passed = true;
    std::string detail;
};

using Check = std::function<Outcome(std::mt19937_64&)>;

struct Property {
    const char* name;
    Group group;
    Check check;
};

Outcome verdict(bool ok, const std::string& detail) { return {ok, detail}; }

std::string num(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = d(rng);
    return Tensor::from_values(shape, std::move(v));
}

Tensor random_integer_tensor(const Shape& shape, std::mt19937_64& rng, int lo, int hi) {
    std::uniform_int_distribution<int> d(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = d(rng);
    return Tensor::from_values(shape, std::move(v));
}

// Probe-weighted scalarization so every output element matters.
Tensor project(const Tensor& out, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sum(mul(out, random_tensor(out.shape(), rng)));
}

// ---- tensor-graph ---------------------------------------------------------

Outcome backward_twice(std::mt19937_64& rng) {
    Tensor x = random_tensor({3, 4}, rng);
    x.set_requires_grad(true);
    const Tensor loss = sum(mul(sigmoid(x), exp(mul_scalar(x, 0.3))));
    loss.backward();
    const std::vector<double> once(x.grad().begin(), x.grad().end());
    loss.backward();
    double worst = 0.0;
    for (std::size_t i = 0; i < once.size(); ++i) worst = std::max(worst, std::abs(x.grad()[i] - 2.0 * once[i]));
    return verdict(worst == 0.0, "max |g2 - 2 g1| = " + num(worst));
}

Outcome forward_determinism(std::mt19937_64& rng) {
    net::NetConfig cfg;
    cfg.input_shape = {16, 16, 16};
    const ParameterSet p = net::build_network(cfg, rng());
    const Tensor x = random_tensor({2, 1, 16, 16, 16}, rng);
    const auto a = net::forward(cfg, p, x, net::Mode::teacher, 1).probs;
    const auto b = net::forward(cfg, p, x, net::Mode::teacher, 1).probs;
    const bool same = std::equal(a.values().begin(), a.values().end(), b.values().begin());
    return verdict(same, same ? "bitwise identical probabilities" : "forward passes differ");
}

// ---- moments ---------------------------------------------------------------

Tensor mirror(const Tensor& t, int axis) {
    const Shape& s = t.shape();
    std::vector<std::size_t> index(t.numel());
    std::size_t i = 0;
    for (int b = 0; b < s[0]; ++b)
        for (int c = 0; c < s[1]; ++c)
            for (int x = 0; x < s[2]; ++x)
                for (int y = 0; y < s[3]; ++y)
                    for (int z = 0; z < s[4]; ++z) {
                        std::array<int, 3> p{x, y, z};
                        p[axis] = s[2 + axis] - 1 - p[axis];
                        index[i++] = (((static_cast<std::size_t>(b) * s[1] + c) * s[2] + p[0]) * s[3] + p[1]) * s[4] + p[2];
                    }
    return gather(t, std::move(index), s);
}

Outcome moment_flip_symmetry(std::mt19937_64& rng) {
    int mismatches = 0;
    int checked = 0;
    for (int trial = 0; trial < 6; ++trial) {
        std::uniform_int_distribution<int> ext(2, 7);
        const Shape shape{1, 2, ext(rng), ext(rng), ext(rng)};
        const Tensor f = random_integer_tensor(shape, rng, -9, 9);
        for (int flip_axis = 0; flip_axis < 3; ++flip_axis) {
            const Tensor g = mirror(f, flip_axis);
            for (int a = 0; a < 3; ++a) {
                const Tensor mf = moments::directional_moment_stack(f, static_cast<moments::Axis>(a));
                const Tensor mg = moments::directional_moment_stack(g, static_cast<moments::Axis>(a));
                // Mirroring the map back undoes the spatial flip on the kept axes.
                const Tensor mg_back = flip_axis == a ? mg : mirror(mg, flip_axis);
                const int channels = shape[1];
                const std::size_t per = mf.numel() / (6 * channels);
                for (int t = 0; t < 6; ++t) {
                    const auto& m = moments::kSecondOrder[t];
                    const int power = flip_axis == 0 ? m.p : (flip_axis == 1 ? m.q : m.r);
                    const double sign = power % 2 ? -1.0 : 1.0;
                    for (std::size_t k = 0; k < channels * per; ++k) {
                        const std::size_t idx = t * channels * per + k;
                        ++checked;
                        if (mg_back.values()[idx] != sign * mf.values()[idx]) ++mismatches;
                    }
                }
            }
            const Tensor single = slice(f, 1, 0, 1);
            try {
                const auto nf = moments::normalized_moments(single);
                const auto ng = moments::normalized_moments(mirror(single, flip_axis));
                for (int t = 0; t < 6; ++t) {
                    const auto& m = moments::kSecondOrder[t];
                    const int power = flip_axis == 0 ? m.p : (flip_axis == 1 ? m.q : m.r);
                    const double sign = power % 2 ? -1.0 : 1.0;
                    ++checked;
                    if (std::abs(ng.values.values()[t] - sign * nf.values.values()[t]) > 1e-12) ++mismatches;
                }
            } catch (const moments::DegenerateFieldError&) {
            }
        }
    }
    return verdict(mismatches == 0, std::to_string(mismatches) + " of " + std::to_string(checked) +
                                        " mirrored moment entries differ (directional: exact; normalized: 1e-12)");
}

Outcome moment_linearity(std::mt19937_64& rng) {
    int mismatches = 0;
    int checked = 0;
    for (int trial = 0; trial < 6; ++trial) {
        std::uniform_int_distribution<int> ext(1, 6);
        const Shape shape{1, 3, ext(rng), ext(rng), ext(rng)};
        const Tensor f = random_integer_tensor(shape, rng, -20, 20);
        const Tensor g = random_integer_tensor(shape, rng, -20, 20);
        std::uniform_int_distribution<int> coef(-4, 4);
        const double a = coef(rng);
        const double b = coef(rng);
        const Tensor combo = add(mul_scalar(f, a), mul_scalar(g, b));
        for (int ax = 0; ax < 3; ++ax) {
            const auto axis = static_cast<moments::Axis>(ax);
            const Tensor lhs = moments::directional_moment_stack(combo, axis);
            const Tensor rhs = add(mul_scalar(moments::directional_moment_stack(f, axis), a),
                                   mul_scalar(moments::directional_moment_stack(g, axis), b));
            for (std::size_t i = 0; i < lhs.numel(); ++i) {
                ++checked;
                if (lhs.values()[i] != rhs.values()[i]) ++mismatches;
            }
        }
    }
    return verdict(mismatches == 0, std::to_string(mismatches) + " of " + std::to_string(checked) + " entries differ");
}

Outcome constant_field_moments(std::mt19937_64&) {
    std::string detail;
    bool ok = true;
    for (int n : {8, 16, 24}) {
        for (double c : {1.0, 0.5, 3.0}) {
            const auto mv = moments::normalized_moments(Tensor::full({1, 1, n, n, n}, c));
            const auto v = mv.values.values();
            const bool exact = v[0] == 1.0 && v[1] == 1.0 && v[2] == 1.0 && v[3] == 0.0 && v[4] == 0.0 && v[5] == 0.0;
            if (!exact) {
                ok = false;
                detail += " n=" + std::to_string(n) + " c=" + num(c) + " -> (" + num(v[0]) + "," + num(v[1]) + "," +
                          num(v[2]) + "," + num(v[3]) + "," + num(v[4]) + "," + num(v[5]) + ")";
            }
        }
    }
    return verdict(ok, ok ? "(1,1,1,0,0,0) exactly for grids 8^3, 16^3, 24^3" : detail);
}

Outcome scale_invariance(std::mt19937_64& rng) {
    const double gap = scale_invariance_gap(20, 32, rng());
    return verdict(gap < 2e-2, "max component gap " + num(gap) + " over 20 fields (tolerance 2e-2)");
}

Outcome mvma_identity(std::mt19937_64& rng) {
    const int c = 3;
    const Tensor p = random_tensor({2, c, 5, 4, 6}, rng);
    moments::MomentAttentionParams params;
    for (int a = 0; a < 3; ++a) {
        params.kernel[a] = random_tensor({c, 6 * c, 1, 1, 1}, rng);
        params.bias[a] = random_tensor({c}, rng);
    }
    params.lambda = Tensor::zeros({1});
    const Tensor z = moments::mvma_attention(p, params);
    const bool same = std::equal(z.values().begin(), z.values().end(), p.values().begin());
    return verdict(same, same ? "lambda_P = 0 reproduces the input bitwise" : "output differs from input");
}

double msgc_oracle(const std::vector<moments::LayerMoments>& s, const moments::LayerMoments& ns,
                   const moments::LayerMoments& gp, const std::vector<double>& alpha, const std::vector<double>& beta) {
    double total = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
        for (int t = 0; t < 6; ++t) {
            const double se = s[k].encoder.values.values()[t];
            const double sd = s[k].decoder.values.values()[t];
            total += alpha[k] * (std::abs(se - ns.encoder.values.values()[t]) + std::abs(sd - ns.decoder.values.values()[t]));
            total += beta[k] * (std::abs(se - gp.encoder.values.values()[t]) + std::abs(sd - gp.decoder.values.values()[t]));
        }
    }
    return total;
}

moments::MomentVector random_moment_vector(std::mt19937_64& rng) {
    moments::MomentVector v;
    v.values = random_tensor({6}, rng, -2.0, 2.0);
    v.mass = 1.0;
    return v;
}

Outcome msgc_nonnegative(std::mt19937_64& rng) {
    double worst = std::numeric_limits<double>::infinity();
    int zero_fail = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int k = 1 + trial % 4;
        std::vector<moments::LayerMoments> s(k);
        for (auto& l : s) l = {random_moment_vector(rng), random_moment_vector(rng)};
        const moments::LayerMoments ns{random_moment_vector(rng), random_moment_vector(rng)};
        const moments::LayerMoments gp{random_moment_vector(rng), random_moment_vector(rng)};
        std::vector<double> alpha(k);
        std::vector<double> beta(k);
        std::uniform_real_distribution<double> w(0.0, 1.0);
        for (int i = 0; i < k; ++i) {
            alpha[i] = w(rng);
            beta[i] = w(rng);
        }
        worst = std::min(worst, moments::msgc_loss(s, ns, gp, alpha, beta).item());
        // Identical vectors everywhere must give exactly zero.
        std::vector<moments::LayerMoments> same(k, ns);
        if (moments::msgc_loss(same, ns, ns, alpha, beta).item() != 0.0) ++zero_fail;
    }
    return verdict(worst >= 0.0 && zero_fail == 0,
                   "min loss " + num(worst) + ", nonzero loss for identical inputs in " + std::to_string(zero_fail) +
                       " of 200 cases");
}

Outcome msgc_matches_oracle(std::mt19937_64& rng) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 1 + trial % 3;
        std::vector<moments::LayerMoments> s(k);
        for (auto& l : s) l = {random_moment_vector(rng), random_moment_vector(rng)};
        const moments::LayerMoments ns{random_moment_vector(rng), random_moment_vector(rng)};
        const moments::LayerMoments gp{random_moment_vector(rng), random_moment_vector(rng)};
        std::vector<double> alpha(k);
        std::vector<double> beta(k);
        std::uniform_real_distribution<double> w(0.0, 1.0);
        for (int i = 0; i < k; ++i) {
            alpha[i] = w(rng);
            beta[i] = w(rng);
        }
        const double got = moments::msgc_loss(s, ns, gp, alpha, beta).item();
        worst = std::max(worst, std::abs(got - msgc_oracle(s, ns, gp, alpha, beta)));
    }
    return verdict(worst < 1e-12, "max |msgc - direct sum| = " + num(worst));
}

// ---- wave warp ---------------------------------------------------------------

Outcome warp_displacement(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> f_dist(0.5, 4.0);
    double worst_excess = -1.0;
    for (int trial = 0; trial < 20; ++trial) {
        warp::WaveParams p;
        p.frequency = f_dist(rng);
        p.amplitude = std::uniform_real_distribution<double>(0.0, 0.99 / (2 * std::numbers::pi * p.frequency))(rng);
        std::uniform_int_distribution<int> ext(2, 20);
        const std::array<int, 3> shape{ext(rng), ext(rng), ext(rng)};
        const auto g = warp::build_wave_grid(shape, p);
        const auto id = warp::identity_grid(shape);
        for (std::size_t i = 0; i < g.coords.size(); ++i) {
            // Subtracting coordinates in [-1, 1] costs a few ulps.
            worst_excess = std::max(worst_excess, std::abs(g.coords[i] - id.coords[i]) - p.amplitude - 4e-16);
        }
    }
    return verdict(worst_excess <= 0.0, "max (|G - id| - A) = " + num(worst_excess));
}

Outcome warp_monotone(std::mt19937_64& rng) {
    int violations = 0;
    for (int trial = 0; trial < 10; ++trial) {
        warp::WaveParams p;
        p.frequency = std::uniform_real_distribution<double>(0.5, 5.0)(rng);
        p.amplitude = 0.999 / (2 * std::numbers::pi * p.frequency) * std::uniform_real_distribution<double>(0.1, 1.0)(rng);
        p.validate();
        const int samples = 10000;
        const double k = 2 * std::numbers::pi * p.frequency;
        double prev = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < samples; ++i) {
            const double c = -1.0 + 2.0 * i / (samples - 1);
            const double v = c + p.amplitude * std::sin(k * c);
            if (!(v > prev)) ++violations;
            prev = v;
        }
        // The grid builder must agree with the sampled map.
        const auto g = warp::build_wave_grid({samples, 2, 2}, p);
        for (int i = 1; i < samples; ++i) {
            if (!(g.at(i, 0, 0)[0] > g.at(i - 1, 0, 0)[0])) ++violations;
        }
    }
    return verdict(violations == 0, std::to_string(violations) + " non-increasing steps over 10 x 1e4 samples");
}

Outcome warp_range(std::mt19937_64& rng) {
    int violations = 0;
    for (int trial = 0; trial < 10; ++trial) {
        std::uniform_int_distribution<int> ext(2, 12);
        const Tensor v = random_tensor({2, 2, ext(rng), ext(rng), ext(rng)}, rng, -3.0, 5.0);
        const Tensor w = warp::apply_ggpc(v, {0.05 + 0.1 * trial / 10.0, 1.0});
        const auto [lo, hi] = std::minmax_element(v.values().begin(), v.values().end());
        for (double x : w.values()) {
            if (x < *lo || x > *hi) ++violations;
        }
    }
    return verdict(violations == 0, std::to_string(violations) + " warped values outside the input range");
}

// ---- selective scan ------------------------------------------------------

// Literal per-step recurrence, kept independent of the fused kernel.
std::vector<double> naive_scan(const Tensor& tokens, const ssm::SsmParams& p, std::vector<double>* states = nullptr) {
    const int S = tokens.dim(0);
    const int L = tokens.dim(1);
    const int d = tokens.dim(2);
    const int N = p.state_dim();
    const auto x = tokens.values();
    std::vector<double> y(x.size());
    for (int s = 0; s < S; ++s) {
        std::vector<std::vector<double>> h(d, std::vector<double>(N, 0.0));
        for (int t = 0; t < L; ++t) {
            const double* xt = &x[(static_cast<std::size_t>(s) * L + t) * d];
            double z = p.b_delta.values()[0];
            for (int i = 0; i < d; ++i) z += p.w_delta.values()[i] * xt[i];
            const double delta = std::log1p(std::exp(z));
            for (int i = 0; i < d; ++i) {
                double out = p.d_skip.values()[i] * xt[i];
                for (int n = 0; n < N; ++n) {
                    double bn = p.b_b.values()[n];
                    double cn = p.b_c.values()[n];
                    for (int j = 0; j < d; ++j) {
                        bn += p.w_b.values()[n * d + j] * xt[j];
                        cn += p.w_c.values()[n * d + j] * xt[j];
                    }
                    const double a = -std::exp(p.a_log.values()[n]);
                    h[i][n] = std::exp(delta * a) * h[i][n] + delta * bn * xt[i];
                    out += cn * h[i][n];
                    if (states) states->push_back(h[i][n]);
                }
                y[(static_cast<std::size_t>(s) * L + t) * d + i] = out;
            }
        }
    }
    return y;
}

ssm::SsmParams random_ssm(int n, int d, std::mt19937_64& rng) {
    ssm::SsmParams p = ssm::init_ssm_params(n, d, rng);
    p.w_delta = random_tensor({d}, rng, -0.5, 0.5);
    p.b_delta = random_tensor({1}, rng, -2.0, 1.0);
    p.w_b = random_tensor({n, d}, rng);
    p.b_b = random_tensor({n}, rng);
    p.w_c = random_tensor({n, d}, rng);
    p.b_c = random_tensor({n}, rng);
    p.a_log = random_tensor({n}, rng, -1.0, 1.5);
    p.d_skip = random_tensor({d}, rng);
    return p;
}

Outcome scan_vs_naive(std::mt19937_64& rng) {
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        std::uniform_int_distribution<int> len(1, 64);
        std::uniform_int_distribution<int> state(1, 8);
        std::uniform_int_distribution<int> dim(1, 3);
        std::uniform_int_distribution<int> seqs(1, 3);
        const int d = dim(rng);
        const ssm::SsmParams p = random_ssm(state(rng), d, rng);
        const Tensor tokens = random_tensor({seqs(rng), len(rng), d}, rng, -2.0, 2.0);
        const Tensor y = ssm::selective_scan(tokens, p);
        const auto ref = naive_scan(tokens, p);
        for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - y.values()[i]));
    }
    return verdict(worst < 1e-10, "max abs diff " + num(worst) + " over 200 cases (L <= 64, N <= 8)");
}

Outcome reorder_roundtrip(std::mt19937_64& rng) {
    int failures = 0;
    for (int trial = 0; trial < 20; ++trial) {
        std::uniform_int_distribution<int> ext(1, 7);
        const int b = ext(rng);
        const Tensor f = random_tensor({b, ext(rng), ext(rng) * 3}, rng);
        std::vector<bool> labeled(b);
        for (int i = 0; i < b; ++i) labeled[i] = (rng() & 1) != 0;
        for (auto dir : {ssm::Direction::forward, ssm::Direction::reverse, ssm::Direction::channel,
                         ssm::Direction::sample}) {
            const auto seq = ssm::make_sequences(f, dir, labeled);
            const Tensor back = ssm::restore_sequences(seq.tokens, seq);
            if (back.shape() != f.shape() || !std::equal(back.values().begin(), back.values().end(), f.values().begin())) {
                ++failures;
            }
        }
    }
    return verdict(failures == 0, std::to_string(failures) + " of 80 round trips not bitwise");
}

Outcome scan_stability(std::mt19937_64& rng) {
    int violations = 0;
    double worst_ratio = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + trial % 8;
        ssm::SsmParams p = random_ssm(n, 1, rng);
        p.w_delta = Tensor::zeros({1});
        p.w_b = Tensor::zeros({n, 1});
        p.w_c = Tensor::zeros({n, 1});
        const Tensor x = Tensor::full({1, 64, 1}, std::uniform_real_distribution<double>(-3.0, 3.0)(rng));
        std::vector<double> states;
        const auto ref = naive_scan(x, p, &states);
        const double delta = std::log1p(std::exp(p.b_delta.values()[0]));
        double max_bx = 0.0;
        double max_abar = 0.0;
        for (int k = 0; k < n; ++k) {
            max_bx = std::max(max_bx, std::abs(delta * p.b_b.values()[k] * x.values()[0]));
            max_abar = std::max(max_abar, std::exp(-delta * std::exp(p.a_log.values()[k])));
        }
        const double bound = max_bx / (1.0 - max_abar);
        for (double h : states) {
            if (!std::isfinite(h) || std::abs(h) > bound * (1.0 + 1e-12) + 1e-300) ++violations;
            if (bound > 0.0) worst_ratio = std::max(worst_ratio, std::abs(h) / bound);
        }
        const Tensor y = ssm::selective_scan(x, p);
        for (double v : y.values()) {
            if (!std::isfinite(v)) ++violations;
        }
    }
    return verdict(violations == 0, "max |h| / bound = " + num(worst_ratio) + ", violations " + std::to_string(violations));
}

// ---- segnet ------------------------------------------------------------------

Outcome segnet_shapes(std::mt19937_64& rng) {
    std::string detail;
    bool ok = true;
    for (int depth : {2, 3}) {
        for (int n : {16, 24, 32}) {
            net::NetConfig cfg;
            cfg.depth = depth;
            cfg.input_shape = {n, n, n};
            const ParameterSet p = net::build_network(cfg, rng());
            const Tensor x = random_tensor({1, 1, n, n, n}, rng);
            const auto out = net::forward(cfg, p, x, net::Mode::teacher);
            bool good = out.probs.shape() == Shape{1, 2, n, n, n} && static_cast<int>(out.encoder.size()) == depth &&
                        static_cast<int>(out.decoder.size()) == depth;
            for (int k = 0; k < depth && good; ++k) {
                const Shape want{1, cfg.channels(k), n >> k, n >> k, n >> k};
                good = out.encoder[k].shape() == want && out.decoder[k].shape() == want;
            }
            const auto pv = out.probs.values();
            const std::size_t vox = static_cast<std::size_t>(n) * n * n;
            double worst = 0.0;
            for (std::size_t i = 0; i < vox; ++i) worst = std::max(worst, std::abs(pv[i] + pv[vox + i] - 1.0));
            if (!good || worst > 1e-9) {
                ok = false;
                detail += " K=" + std::to_string(depth) + " n=" + std::to_string(n) + " (sum err " + num(worst) + ")";
            }
        }
    }
    return verdict(ok, ok ? "K in {2,3} x {16,24,32}^3 shapes and softmax sums hold" : "failed:" + detail);
}

Outcome segnet_ablation(std::mt19937_64& rng) {
    net::NetConfig on;
    on.input_shape = {16, 16, 16};
    const ParameterSet p = net::build_network(on, rng());
    const Tensor x = random_tensor({2, 1, 16, 16, 16}, rng);
    net::NetConfig no_mvma = on;
    no_mvma.mvma_enabled = false;
    net::NetConfig no_giim = on;
    no_giim.giim_enabled = false;
    auto probs = [&](const net::NetConfig& c, const ParameterSet& ps) {
        const Tensor t = net::forward(c, ps, x, net::Mode::teacher, 1).probs;
        return std::vector<double>(t.values().begin(), t.values().end());
    };
    const auto base = probs(on, p);
    const bool lambda_zero_same = base == probs(no_mvma, p);
    ParameterSet q = p.clone(false);
    for (auto& e : q.entries()) {
        if (e.name.find(".mvma.lambda") != std::string::npos) e.tensor.values_mut()[0] = 0.5;
    }
    const bool mvma_changes = probs(on, q) != probs(no_mvma, q);
    const bool giim_changes = base != probs(no_giim, p);
    return verdict(lambda_zero_same && mvma_changes && giim_changes,
                   std::string("lambda_P=0 equals disabled MVMA bitwise: ") + (lambda_zero_same ? "yes" : "no") +
                       "; MVMA active changes output: " + (mvma_changes ? "yes" : "no") +
                       "; GIIM bypass changes output: " + (giim_changes ? "yes" : "no"));
}

// ---- trainer ---------------------------------------------------------------

struct TinySetup {
    net::NetConfig net;
    train::TrainConfig train;
    train::TrainData data;
};

TinySetup tiny_setup(std::uint64_t seed) {
    TinySetup s;
    s.net.depth = 2;
    s.net.base_channels = 4;
    s.net.input_shape = {16, 16, 16};
    s.train.epochs = 1;
    s.train.iters_per_epoch = 4;
    s.train.labeled_batch = 1;
    s.train.unlabeled_batch = 1;
    s.train.gamma1 = 0.3;
    s.train.gamma2 = 0.1;
    s.train.seed = seed;
    data::PhantomSpec spec;
    spec.grid = {16, 16, 16};
    spec.semi_axis_min = 3.0;
    spec.semi_axis_max = 4.5;
    std::mt19937_64 rng(seed);
    for (int i = 0; i < 2; ++i) s.data.labeled.push_back(data::generate_phantom(spec, rng, "l" + std::to_string(i)).volume);
    for (int i = 0; i < 2; ++i) s.data.unlabeled.push_back(data::generate_phantom(spec, rng, "u" + std::to_string(i)).volume);
    s.data.validation.push_back(data::generate_phantom(spec, rng, "v").volume);
    return s;
}

Outcome trainer_invariants(std::mt19937_64& rng) {
    TinySetup s = tiny_setup(rng());
    train::TrainerState state = train::init_state(s.net, s.train);
    std::vector<std::vector<double>> lo;
    std::vector<std::vector<double>> hi;
    for (const auto& e : state.teacher.entries()) {
        lo.emplace_back(e.tensor.values().begin(), e.tensor.values().end());
        hi.emplace_back(e.tensor.values().begin(), e.tensor.values().end());
    }
    double worst_decomp = 0.0;
    double min_component = std::numeric_limits<double>::infinity();
    double worst_envelope = 0.0;
    double teacher_grad = 0.0;
    for (int step = 0; step < 4; ++step) {
        train::Batch lb{s.data.labeled[step % 2].to_tensor(), Tensor()};
        std::vector<double> lab(s.data.labeled[step % 2].label->begin(), s.data.labeled[step % 2].label->end());
        lb.labels = Tensor::from_values({1, 1, 16, 16, 16}, std::move(lab));
        train::Batch ub{s.data.unlabeled[step % 2].to_tensor(), Tensor()};
        const auto rec = train::train_step(state, lb, ub, s.net, s.train);
        const double recomposed =
            rec.l_s + s.train.gamma1 * rec.ramp * rec.l_c + s.train.gamma2 * rec.ramp * rec.l_gmc;
        worst_decomp = std::max(worst_decomp, std::abs(rec.total - recomposed));
        min_component = std::min({min_component, rec.l_s, rec.l_c, rec.l_gmc});
        for (const auto& e : state.teacher.entries()) {
            for (double g : e.tensor.grad()) teacher_grad = std::max(teacher_grad, std::abs(g));
        }
        for (std::size_t i = 0; i < state.teacher.size(); ++i) {
            const auto sv = state.student.entries()[i].tensor.values();
            const auto tv = state.teacher.entries()[i].tensor.values();
            for (std::size_t j = 0; j < tv.size(); ++j) {
                lo[i][j] = std::min(lo[i][j], sv[j]);
                hi[i][j] = std::max(hi[i][j], sv[j]);
                const double slack = 1e-12 * std::max(1.0, std::abs(tv[j]));
                worst_envelope = std::max({worst_envelope, lo[i][j] - tv[j] - slack, tv[j] - hi[i][j] - slack});
            }
        }
    }
    const bool ok = worst_decomp <= 1e-12 && min_component >= 0.0 && worst_envelope <= 0.0 && teacher_grad == 0.0;
    return verdict(ok, "decomposition err " + num(worst_decomp) + ", min component " + num(min_component) +
                           ", EMA envelope excess " + num(worst_envelope) + ", max |teacher grad| " + num(teacher_grad));
}

Outcome trainer_determinism(std::mt19937_64& rng) {
    const std::uint64_t seed = rng();
    TinySetup a = tiny_setup(seed);
    TinySetup b = tiny_setup(seed);
    const auto ra = train::train_loop(a.data, a.net, a.train);
    const auto rb = train::train_loop(b.data, b.net, b.train);
    const bool same_log = train::format_csv(ra.log, a.train.ablation) == train::format_csv(rb.log, b.train.ablation);
    const bool same_ckpt = serialize_checkpoint(ra.final) == serialize_checkpoint(rb.final);
    return verdict(same_log && same_ckpt, std::string("logs identical: ") + (same_log ? "yes" : "no") +
                                              ", final checkpoints identical: " + (same_ckpt ? "yes" : "no"));
}

// ---- metrics -----------------------------------------------------------------

metrics::BinaryMask random_blob_mask(std::mt19937_64& rng, const std::array<int, 3>& shape, bool speckle,
                                     const std::array<double, 3>& spacing = {1.0, 1.0, 1.0}) {
    metrics::BinaryMask m(shape, spacing);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int blobs = 1 + static_cast<int>(u(rng) * 2);
    for (int k = 0; k < blobs; ++k) {
        std::array<double, 3> c{};
        std::array<double, 3> r{};
        for (int a = 0; a < 3; ++a) {
            c[a] = u(rng) * (shape[a] - 1);
            r[a] = 0.8 + u(rng) * shape[a] / 3.0;
        }
        for (int z = 0; z < shape[0]; ++z)
            for (int y = 0; y < shape[1]; ++y)
                for (int x = 0; x < shape[2]; ++x) {
                    const double q = std::pow((z - c[0]) / r[0], 2) + std::pow((y - c[1]) / r[1], 2) +
                                     std::pow((x - c[2]) / r[2], 2);
                    if (q <= 1.0) m.at(z, y, x) = 1;
                }
    }
    if (speckle) {
        for (auto& v : m.data) {
            if (u(rng) < 0.02) v = 1;
        }
    }
    return m;
}

std::vector<double> brute_directed(const metrics::BinaryMask& from, const metrics::BinaryMask& to) {
    const auto bf = metrics::boundary_voxels(from);
    const auto bt = metrics::boundary_voxels(to);
    std::vector<double> out;
    for (const auto& p : bf) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : bt) {
            const double dz = (p[0] - q[0]) * from.spacing[0];
            const double dy = (p[1] - q[1]) * from.spacing[1];
            const double dx = (p[2] - q[2]) * from.spacing[2];
            best = std::min(best, std::sqrt(dz * dz + dy * dy + dx * dx));
        }
        out.push_back(best);
    }
    return out;
}

double brute_percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    std::size_t rank = static_cast<std::size_t>(std::ceil(q / 100.0 * v.size()));
    rank = std::max<std::size_t>(1, std::min(rank, v.size()));
    return v[rank - 1];
}

Outcome metric_oracle(std::mt19937_64& rng) {
    int set_mismatch = 0;
    double worst_dist = 0.0;
    int missing_ok = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::uniform_int_distribution<int> ext(2, 16);
        const std::array<int, 3> shape{ext(rng), ext(rng), ext(rng)};
        std::uniform_real_distribution<double> sp(0.5, 2.0);
        const std::array<double, 3> spacing =
            trial % 3 == 0 ? std::array<double, 3>{sp(rng), sp(rng), sp(rng)} : std::array<double, 3>{1.0, 1.0, 1.0};
        const auto a = random_blob_mask(rng, shape, trial % 2 == 0, spacing);
        const auto b = random_blob_mask(rng, shape, trial % 2 == 1, spacing);
        std::size_t inter = 0, uni = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            inter += a.data[i] && b.data[i];
            uni += a.data[i] || b.data[i];
            na += a.data[i];
            nb += b.data[i];
        }
        const double d_ref = na + nb == 0 ? 1.0 : 2.0 * inter / static_cast<double>(na + nb);
        const double j_ref = uni == 0 ? 1.0 : inter / static_cast<double>(uni);
        if (metrics::dice(a, b) != d_ref || metrics::jaccard(a, b) != j_ref) ++set_mismatch;
        if (na == 0 || nb == 0) {
            if (!metrics::evaluate(a, b).hd95) ++missing_ok;
            continue;
        }
        const auto ab = brute_directed(a, b);
        const auto ba = brute_directed(b, a);
        const double hd_ref = std::max(brute_percentile(ab, 95.0), brute_percentile(ba, 95.0));
        double sum = 0.0;
        for (double v : ab) sum += v;
        for (double v : ba) sum += v;
        const double asd_ref = sum / static_cast<double>(ab.size() + ba.size());
        worst_dist = std::max({worst_dist, std::abs(metrics::hd95(a, b) - hd_ref), std::abs(metrics::asd(a, b) - asd_ref)});
    }
    return verdict(set_mismatch == 0 && worst_dist < 1e-9,
                   "Dice/Jaccard mismatches " + std::to_string(set_mismatch) + ", max HD95/ASD deviation " +
                       num(worst_dist) + " over 100 pairs <= 16^3");
}

Outcome metric_relations(std::mt19937_64& rng) {
    double worst_j = 0.0;
    int order_fail = 0;
    int pairs = 0;
    for (int trial = 0; trial < 60; ++trial) {
        std::uniform_int_distribution<int> ext(4, 14);
        const std::array<int, 3> shape{ext(rng), ext(rng), ext(rng)};
        const auto a = random_blob_mask(rng, shape, false);
        const auto b = random_blob_mask(rng, shape, false);
        if (a.empty_foreground() && b.empty_foreground()) continue;
        const double d = metrics::dice(a, b);
        worst_j = std::max(worst_j, std::abs(metrics::jaccard(a, b) - d / (2.0 - d)));
        if (a.empty_foreground() || b.empty_foreground()) continue;
        ++pairs;
        const double h95 = metrics::hd95(a, b);
        if (h95 > metrics::hausdorff(a, b) || metrics::asd(a, b) > h95 + 1e-12) ++order_fail;
    }
    return verdict(worst_j < 1e-15 && order_fail == 0,
                   "max |J - D/(2-D)| = " + num(worst_j) + "; ordering violations " + std::to_string(order_fail) +
                       " of " + std::to_string(pairs));
}

Outcome metric_translation(std::mt19937_64& rng) {
    double worst = 0.0;
    for (int trial = 0; trial < 30; ++trial) {
        const std::array<int, 3> inner{8, 8, 8};
        const auto a = random_blob_mask(rng, inner, trial % 2 == 0);
        const auto b = random_blob_mask(rng, inner, false);
        const std::array<int, 3> big{14, 14, 14};
        std::uniform_int_distribution<int> off(0, 6);
        auto place = [&](const metrics::BinaryMask& m, const std::array<int, 3>& o) {
            metrics::BinaryMask out(big);
            for (int z = 0; z < 8; ++z)
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) out.at(z + o[0], y + o[1], x + o[2]) = m.at(z, y, x);
            return out;
        };
        const std::array<int, 3> o1{off(rng), off(rng), off(rng)};
        const std::array<int, 3> o2{off(rng), off(rng), off(rng)};
        const auto m1 = metrics::evaluate(place(a, o1), place(b, o1));
        const auto m2 = metrics::evaluate(place(a, o2), place(b, o2));
        worst = std::max({worst, std::abs(m1.dice - m2.dice), std::abs(m1.jaccard - m2.jaccard)});
        // Interior placements with a 3-voxel frame keep boundaries identical.
        if (m1.hd95 && m2.hd95) worst = std::max({worst, std::abs(*m1.hd95 - *m2.hd95), std::abs(*m1.asd - *m2.asd)});
    }
    return verdict(worst < 1e-12, "max metric change under translation " + num(worst));
}

// ---- data io -----------------------------------------------------------------

data::PhantomSpec small_spec() {
    data::PhantomSpec spec;
    spec.grid = {20, 20, 20};
    spec.semi_axis_min = 3.0;
    spec.semi_axis_max = 5.5;
    return spec;
}

Outcome data_reproducible(std::mt19937_64& rng) {
    const std::uint64_t seed = rng();
    std::mt19937_64 r1(seed);
    std::mt19937_64 r2(seed);
    const auto p1 = data::generate_phantom(small_spec(), r1);
    const auto p2 = data::generate_phantom(small_spec(), r2);
    const bool phantom_same = p1.volume.intensities == p2.volume.intensities && *p1.volume.label == *p2.volume.label;
    const auto s1 = data::split_dataset(60, {}, 4, seed);
    const auto s2 = data::split_dataset(60, {}, 4, seed);
    const bool split_same = s1.labeled == s2.labeled && s1.unlabeled == s2.unlabeled &&
                            s1.validation == s2.validation && s1.test == s2.test;
    data::AugmentOptions opts;
    opts.crop = {16, 16, 16};
    std::mt19937_64 a1(seed + 1);
    std::mt19937_64 a2(seed + 1);
    const auto v1 = data::augment(p1.volume, opts, a1);
    const auto v2 = data::augment(p1.volume, opts, a2);
    const bool aug_same = v1.intensities == v2.intensities && *v1.label == *v2.label;
    return verdict(phantom_same && split_same && aug_same,
                   std::string("phantom ") + (phantom_same ? "same" : "differs") + ", split " +
                       (split_same ? "same" : "differs") + ", augmentation " + (aug_same ? "same" : "differs"));
}

Outcome data_topology(std::mt19937_64& rng) {
    int failures = 0;
    int checked = 0;
    std::string witness;
    for (int trial = 0; trial < 12; ++trial) {
        const auto p = data::generate_phantom(small_spec(), rng);
        if (data::connected_components(p.volume.label_mask()) != 1) {
            ++failures;
            witness = "phantom " + std::to_string(trial) + " is not one component";
            continue;
        }
        data::AugmentOptions opts;
        opts.crop = p.volume.dims;
        for (int k = 0; k < 4; ++k) {
            data::AugmentDraw draw = data::identity_draw(p.volume, opts);
            draw.flip = {(rng() & 1) != 0, (rng() & 1) != 0, (rng() & 1) != 0};
            draw.rotation_plane = static_cast<int>(rng() % 3);
            draw.quarter_turns = static_cast<int>(rng() % 4);
            draw.scale = k < 2 ? 1.0 : (k == 2 ? 0.9 : 1.1);
            const auto v = data::apply_augment(p.volume, draw, opts);
            ++checked;
            if (data::connected_components(v.label_mask()) != 1) {
                ++failures;
                witness = "draw " + std::to_string(k) + " of phantom " + std::to_string(trial) + " split the label";
            }
        }
    }
    return verdict(failures == 0, std::to_string(failures) + " failures over " + std::to_string(checked) +
                                      " augmentations" + (witness.empty() ? "" : " (" + witness + ")"));
}

Outcome data_normalization(std::mt19937_64& rng) {
    double worst_mean = 0.0;
    double worst_var = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const auto p = data::generate_phantom(small_spec(), rng);
        const auto& v = p.volume.intensities;
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= v.size();
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        var /= v.size();
        worst_mean = std::max(worst_mean, std::abs(mean));
        worst_var = std::max(worst_var, std::abs(var - 1.0));
    }
    return verdict(worst_mean < 1e-9 && worst_var < 1e-9,
                   "max |mean| " + num(worst_mean) + ", max |var - 1| " + num(worst_var));
}

// ---- cli config --------------------------------------------------------------

Outcome config_roundtrip(std::mt19937_64& rng) {
    int failures = 0;
    for (int trial = 0; trial < 20; ++trial) {
        RunConfig c;
        std::uniform_real_distribution<double> u(0.0, 1.0);
        c.train.gamma1 = u(rng);
        c.train.lr = u(rng) * 0.1;
        c.train.alpha_k = trial % 2 ? std::vector<double>{u(rng), u(rng), u(rng)} : std::vector<double>{};
        c.train.ablation.giim = trial % 3 != 0;
        c.phantom.noise = u(rng);
        c.net.input_shape = {16 + 8 * (trial % 3), 24, 32};
        c.data.seed = rng();
        c.paths.run_dir = "runs/r" + std::to_string(trial);
        const RunConfig back = parse_config(to_config_text(c));
        if (!(back == c) || to_config_text(back) != to_config_text(c)) ++failures;
    }
    bool rejected = false;
    try {
        parse_config("train.lr=0.1\nnot.a.key=1\ntrain.bogus=2\n");
    } catch (const ConfigError& e) {
        rejected = e.keys().size() == 2;
    }
    return verdict(failures == 0 && rejected, std::to_string(failures) + " of 20 round trips differ; unknown keys " +
                                                  (rejected ? "all reported" : "not all reported"));
}

Outcome ablation_combinations(std::mt19937_64& rng) {
    const std::uint64_t seed = rng();
    int failures = 0;
    std::string witness;
    for (int mask = 0; mask < 8; ++mask) {
        TinySetup s = tiny_setup(seed);
        s.train.iters_per_epoch = 2;
        s.train.ablation = {(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0};
        train::apply_ablation(s.net, s.train);
        try {
            const auto out = train::train_loop(s.data, s.net, s.train);
            const std::string csv = train::format_csv(out.log, s.train.ablation);
            const std::string first = csv.substr(0, csv.find('\n'));
            if (first != train::ablation_comment(s.train.ablation) || out.log.size() != 2) {
                ++failures;
                witness = first;
            }
        } catch (const std::exception& e) {
            ++failures;
            witness = e.what();
        }
    }
    return verdict(failures == 0, std::to_string(failures) + " of 8 flag combinations failed" +
                                      (witness.empty() ? "" : " (" + witness + ")"));
}

// ---- gradients ---------------------------------------------------------------

Outcome grad_smooth_ops(std::mt19937_64& rng) {
    const Tensor x = random_tensor({2, 3, 4}, rng, 0.2, 1.5);
    const Tensor y = random_tensor({2, 3, 4}, rng, 0.5, 2.0);
    const Tensor b = random_tensor({1, 3, 1}, rng, 0.5, 2.0);
    double worst = 0.0;
    worst = std::max(worst, finite_difference_check([&](const Tensor& t) { return sum(square(t)); }, x));
    worst = std::max(worst, finite_difference_check([&](const Tensor& t) { return project(mul(t, y), 1); }, x));
    worst = std::max(worst, finite_difference_check([&](const Tensor& t) { return project(div(y, t), 2); }, x));
    worst = std::max(worst, finite_difference_check([&](const Tensor& t) { return project(add(t, b), 3); }, x));
    worst = std::max(worst, finite_difference_check([&](const Tensor& t) { return project(mul(x, t), 4); }, b));
    worst = std::max(worst, finite_difference_check([&](const Tensor& t) { return project(exp(t), 5); }, x));
    worst = std::max(worst, finite_difference_check([&](const Tensor& t) { return project(log_clamped(t), 6); }, x));
    worst = std::max(worst, finite_difference_check([&](const Tensor& t) { return project(normalize(t, {1, 2}), 7); }, x));
    worst = std::max(worst, finite_difference_check([&](const Tensor& t) { return project(sum_axes(t, {1}), 8); }, x));
    worst = std::max(worst, finite_difference_check([&](const Tensor& t) { return mean(square(t)); }, x));
    return verdict(worst < 1e-7, "max rel err " + num(worst) + " (tolerance 1e-7)");
}

Outcome grad_activations(std::mt19937_64& rng) {
    Tensor x = random_tensor({2, 3, 5}, rng, -2.0, 2.0);
    // Keep kinked activations away from their kink.
    auto xv = x.values_mut();
    for (double& v : xv) {
        if (std::abs(v) < 0.05) v += 0.1;
    }
    double smooth = 0.0;
    for (auto kind : {ActivationKind::sigmoid, ActivationKind::tanh, ActivationKind::softplus, ActivationKind::softmax}) {
        Activation act;
        act.kind = kind;
        smooth = std::max(smooth, finite_difference_check(
                                      [&](const Tensor& t) { return project(apply_activation(t, act), 11); }, x));
    }
    double kinked = 0.0;
    for (auto kind : {ActivationKind::relu, ActivationKind::leaky_relu}) {
        Activation act;
        act.kind = kind;
        kinked = std::max(kinked, finite_difference_check(
                                      [&](const Tensor& t) { return project(apply_activation(t, act), 12); }, x));
    }
    return verdict(smooth < 1e-7 && kinked < 1e-4,
                   "smooth max rel err " + num(smooth) + ", relu/leaky max rel err " + num(kinked));
}

Outcome grad_conv3d(std::mt19937_64& rng) {
    const Tensor in = random_tensor({2, 3, 5, 4, 6}, rng);
    Tensor k = random_tensor({4, 3, 3, 2, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    Conv3dOptions opts;
    opts.stride = {2, 1, 2};
    opts.padding = {1, 0, 1};
    k.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor x = in.detach();
    x.set_requires_grad(true);
    auto loss = [&]() { return project(conv3d(x, k, b, opts), 21); };
    const double ex = finite_difference_check(loss, x);
    const double ek = finite_difference_check(loss, k);
    const double eb = finite_difference_check(loss, b);
    return verdict(std::max({ex, ek, eb}) < 1e-4,
                   "input " + num(ex) + ", kernel " + num(ek) + ", bias " + num(eb));
}

Outcome grad_resample(std::mt19937_64& rng) {
    const Tensor x = random_tensor({1, 2, 5, 4, 3}, rng);
    double worst = 0.0;
    for (const std::array<int, 3> target : {std::array<int, 3>{3, 7, 2}, std::array<int, 3>{9, 2, 5}}) {
        worst = std::max(worst, finite_difference_check(
                                    [&](const Tensor& t) { return project(resample_trilinear(t, target), 31); }, x));
    }
    return verdict(worst < 1e-4, "max rel err " + num(worst));
}

Outcome grad_grid_sample(std::mt19937_64& rng) {
    const Tensor x = random_tensor({2, 1, 6, 5, 7}, rng);
    const double e = finite_difference_check(
        [&](const Tensor& t) { return project(warp::apply_ggpc(t, {0.07, 1.5}), 41); }, x);
    return verdict(e < 1e-6, "max rel err " + num(e) + " (tolerance 1e-6)");
}

Outcome grad_selective_scan(std::mt19937_64& rng) {
    double worst = 0.0;
    for (int trial = 0; trial < 3; ++trial) {
        const int d = 1 + trial;
        ssm::SsmParams p = random_ssm(3 + trial, d, rng);
        const Tensor tokens = random_tensor({2, 9, d}, rng);
        for (Tensor* t : {&p.w_delta, &p.b_delta, &p.w_b, &p.b_b, &p.w_c, &p.b_c, &p.a_log, &p.d_skip}) {
            t->set_requires_grad(true);
        }
        Tensor x = tokens.detach();
        x.set_requires_grad(true);
        auto loss = [&]() { return project(ssm::selective_scan(x, p), 51); };
        worst = std::max(worst, finite_difference_check(loss, x));
        for (Tensor* t : {&p.w_delta, &p.b_delta, &p.w_b, &p.b_b, &p.w_c, &p.b_c, &p.a_log, &p.d_skip}) {
            worst = std::max(worst, finite_difference_check(loss, *t));
        }
    }
    return verdict(worst < 1e-4, "max rel err " + num(worst) + " over tokens and all projections");
}

Outcome grad_giim(std::mt19937_64& rng) {
    std::mt19937_64 init(rng());
    ssm::GiimParams p = ssm::init_giim_params(3, 2, init);
    const Tensor x = random_tensor({2, 3, 3, 4, 3}, rng);
    ssm::GiimOptions opts;
    opts.labeled = {true, false};
    const double ex = finite_difference_check(
        [&](const Tensor& t) { return project(ssm::giim_block(t, p, opts), 55); }, x);
    Tensor x2 = x.detach();
    const double ek = finite_difference_check([&]() { return project(ssm::giim_block(x2, p, opts), 55); },
                                              p.gsc.main_kernel);
    const double ea = finite_difference_check([&]() { return project(ssm::giim_block(x2, p, opts), 55); },
                                              p.iim[3].a_log);
    return verdict(std::max({ex, ek, ea}) < 1e-4,
                   "input " + num(ex) + ", gsc kernel " + num(ek) + ", t-branch A " + num(ea));
}

Outcome grad_directional_moments(std::mt19937_64& rng) {
    const Tensor f = random_tensor({2, 2, 4, 3, 5}, rng);
    double worst = 0.0;
    for (int a = 0; a < 3; ++a) {
        worst = std::max(worst, finite_difference_check(
                                    [&](const Tensor& t) {
                                        return project(moments::directional_moment_stack(t, static_cast<moments::Axis>(a)),
                                                       61 + a);
                                    },
                                    f));
    }
    return verdict(worst < 1e-4, "max rel err " + num(worst));
}

Outcome grad_normalized_moments(std::mt19937_64& rng) {
    const Tensor f = random_tensor({1, 1, 5, 6, 4}, rng, 0.1, 1.0);
    const double e = finite_difference_check(
        [&](const Tensor& t) { return project(moments::normalized_moments(t).values, 71); }, f);
    const Tensor g = random_tensor({1, 1, 4, 4, 4}, rng, -1.0, 1.0);
    const double e2 = finite_difference_check(
        [&](const Tensor& t) { return project(moments::normalized_moments(t).values, 72); }, g);
    return verdict(std::max(e, e2) < 1e-4, "positive field " + num(e) + ", signed field " + num(e2));
}

Outcome grad_mvma(std::mt19937_64& rng) {
    const int c = 2;
    moments::MomentAttentionParams p;
    for (int a = 0; a < 3; ++a) {
        p.kernel[a] = random_tensor({c, 6 * c, 1, 1, 1}, rng, -0.05, 0.05);
        p.bias[a] = random_tensor({c}, rng);
        p.kernel[a].set_requires_grad(true);
    }
    p.lambda = Tensor::from_values({1}, {0.7}, true);
    Tensor x = random_tensor({2, c, 4, 3, 5}, rng);
    x.set_requires_grad(true);
    auto loss = [&]() { return project(moments::mvma_attention(x, p), 81); };
    const double ex = finite_difference_check(loss, x);
    const double ek = finite_difference_check(loss, p.kernel[1]);
    const double el = finite_difference_check(loss, p.lambda);
    Tensor w = random_tensor({c}, rng);
    w.set_requires_grad(true);
    const double ec = finite_difference_check([&]() { return project(moments::channel_collapse(x, w, Tensor::zeros({1})), 82); }, w);
    return verdict(std::max({ex, ek, el, ec}) < 1e-4,
                   "feature " + num(ex) + ", kernel " + num(ek) + ", lambda " + num(el) + ", collapse " + num(ec));
}

Outcome grad_msgc(std::mt19937_64& rng) {
    // Student moments come from real fields so the check runs through
    // normalized_moments as well.
    const int k = 2;
    std::vector<Tensor> fields;
    for (int i = 0; i < 2 * k; ++i) fields.push_back(random_tensor({1, 1, 4, 5, 3}, rng, 0.1, 1.0));
    const moments::LayerMoments ns{random_moment_vector(rng), random_moment_vector(rng)};
    const moments::LayerMoments gp{random_moment_vector(rng), random_moment_vector(rng)};
    const std::vector<double> alpha{0.3, 0.7};
    const std::vector<double> beta{0.5, 0.2};
    double worst = 0.0;
    for (int probe = 0; probe < 2 * k; ++probe) {
        Tensor& f = fields[probe];
        f.set_requires_grad(true);
        worst = std::max(worst, finite_difference_check(
                                    [&]() {
                                        std::vector<moments::LayerMoments> s(k);
                                        for (int i = 0; i < k; ++i) {
                                            s[i].encoder = moments::normalized_moments(fields[2 * i]);
                                            s[i].decoder = moments::normalized_moments(fields[2 * i + 1]);
                                        }
                                        return moments::msgc_loss(s, ns, gp, alpha, beta);
                                    },
                                    f));
        f.set_requires_grad(false);
    }
    return verdict(worst < 1e-4, "max rel err " + num(worst));
}

Tensor random_probs(const Shape& shape, std::mt19937_64& rng) { return softmax(random_tensor(shape, rng, -2.0, 2.0), 1); }

Tensor random_labels(const Shape& shape, std::mt19937_64& rng) {
    return random_integer_tensor(shape, rng, 0, 1);
}

Outcome grad_losses(std::mt19937_64& rng) {
    const Tensor logits = random_tensor({2, 2, 3, 4, 3}, rng, -2.0, 2.0);
    const Tensor labels = random_labels({2, 1, 3, 4, 3}, rng);
    const double es = finite_difference_check(
        [&](const Tensor& t) { return train::supervised_loss(softmax(t, 1), labels, 0.5); }, logits);
    const Tensor t_ns = random_probs({2, 2, 3, 4, 3}, rng);
    const Tensor t_gp = random_probs({2, 2, 3, 4, 3}, rng);
    const double ec = finite_difference_check(
        [&](const Tensor& t) { return train::consistency_loss(softmax(t, 1), t_ns, t_gp); }, logits);
    return verdict(std::max(es, ec) < 1e-4, "supervised " + num(es) + ", consistency " + num(ec));
}

Outcome grad_end_to_end(std::mt19937_64& rng) {
    net::NetConfig cfg;
    cfg.depth = 2;
    cfg.base_channels = 2;
    cfg.input_shape = {8, 8, 8};
    cfg.ssm_state_dim = 2;
    ParameterSet p = net::build_network(cfg, rng());
    for (auto& e : p.entries()) {
        if (e.name.find(".mvma.lambda") != std::string::npos) e.tensor.values_mut()[0] = 0.4;
    }
    const Tensor x = random_tensor({2, 1, 8, 8, 8}, rng);
    const Tensor y = random_labels({2, 1, 8, 8, 8}, rng);
    auto loss = [&]() { return train::supervised_loss(net::forward(cfg, p, x, net::Mode::student, 1).probs, y, 0.5); };

    p.zero_grad();
    loss().backward();
    double worst = 0.0;
    std::string where;
    auto& entries = p.entries();
    std::uniform_int_distribution<std::size_t> pick_param(0, entries.size() - 1);
    const double h = 1e-5;
    for (int probe = 0; probe < 20; ++probe) {
        auto& e = entries[pick_param(rng)];
        std::uniform_int_distribution<std::size_t> pick(0, e.tensor.numel() - 1);
        const std::size_t i = pick(rng);
        const double analytic = e.tensor.grad()[i];
        NoGradGuard guard;
        auto v = e.tensor.values_mut();
        const double orig = v[i];
        v[i] = orig + h;
        const double fp = loss().item();
        v[i] = orig - h;
        const double fm = loss().item();
        v[i] = orig;
        const double numeric = (fp - fm) / (2 * h);
        const double err = std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
        if (err > worst) {
            worst = err;
            where = e.name + "[" + std::to_string(i) + "]";
        }
    }
    return verdict(worst < 1e-3, "max rel err " + num(worst) + " over 20 random parameters (worst " + where + ")");
}

const std::vector<Property>& registry() {
    static const std::vector<Property> props = {
        {"tensor.backward_accumulates_twofold", Group::invariants, backward_twice},
        {"tensor.forward_deterministic", Group::invariants, forward_determinism},
        {"moments.flip_symmetry", Group::invariants, moment_flip_symmetry},
        {"moments.directional_linearity", Group::invariants, moment_linearity},
        {"moments.constant_field_normalized", Group::invariants, constant_field_moments},
        {"moments.scale_invariance_smooth", Group::invariants, scale_invariance},
        {"moments.mvma_lambda_zero_identity", Group::invariants, mvma_identity},
        {"moments.msgc_nonnegative_zero_iff_equal", Group::invariants, msgc_nonnegative},
        {"moments.msgc_matches_direct_sum", Group::invariants, msgc_matches_oracle},
        {"warp.displacement_bound", Group::invariants, warp_displacement},
        {"warp.monotone_axis_map", Group::invariants, warp_monotone},
        {"warp.output_within_input_range", Group::invariants, warp_range},
        {"ssm.scan_matches_naive_recurrence", Group::invariants, scan_vs_naive},
        {"ssm.reorder_roundtrip_bitwise", Group::invariants, reorder_roundtrip},
        {"ssm.state_bound_constant_params", Group::invariants, scan_stability},
        {"segnet.shape_contract", Group::invariants, segnet_shapes},
        {"segnet.ablation_toggles", Group::invariants, segnet_ablation},
        {"trainer.step_invariants", Group::invariants, trainer_invariants},
        {"trainer.deterministic_runs", Group::invariants, trainer_determinism},
        {"metrics.brute_force_oracle", Group::invariants, metric_oracle},
        {"metrics.jaccard_dice_and_ordering", Group::invariants, metric_relations},
        {"metrics.translation_invariance", Group::invariants, metric_translation},
        {"data.reproducible_from_seed", Group::invariants, data_reproducible},
        {"data.augment_preserves_topology", Group::invariants, data_topology},
        {"data.intensity_normalization", Group::invariants, data_normalization},
        {"cli.config_roundtrip", Group::invariants, config_roundtrip},
        {"cli.ablation_flag_combinations", Group::invariants, ablation_combinations},
        {"grad.smooth_elementwise_ops", Group::gradients, grad_smooth_ops},
        {"grad.activations", Group::gradients, grad_activations},
        {"grad.conv3d", Group::gradients, grad_conv3d},
        {"grad.resample_trilinear", Group::gradients, grad_resample},
        {"grad.grid_sample_trilinear", Group::gradients, grad_grid_sample},
        {"grad.selective_scan", Group::gradients, grad_selective_scan},
        {"grad.giim_block", Group::gradients, grad_giim},
        {"grad.directional_moments", Group::gradients, grad_directional_moments},
        {"grad.normalized_moments", Group::gradients, grad_normalized_moments},
        {"grad.mvma_attention", Group::gradients, grad_mvma},
        {"grad.msgc_loss", Group::gradients, grad_msgc},
        {"grad.supervised_and_consistency_loss", Group::gradients, grad_losses},
        {"grad.end_to_end_network", Group::gradients, grad_end_to_end},
    };
    return props;
}

}  // namespace

double scale_invariance_gap(int count, int grid, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    data::PhantomSpec spec;
    spec.grid = {grid, grid, grid};
    spec.semi_axis_min = grid / 8.0;
    spec.semi_axis_max = grid / 4.0;
    spec.bump_magnitude = 0.2;
    double worst = 0.0;
    for (int i = 0; i < count; ++i) {
        const Tensor field = data::smooth_phantom_field(spec, rng);
        const Tensor half = resample_trilinear(field, {grid / 2, grid / 2, grid / 2}, false);
        const auto a = moments::normalized_moments(field);
        const auto b = moments::normalized_moments(half);
        for (int t = 0; t < 6; ++t) worst = std::max(worst, std::abs(a.values.values()[t] - b.values.values()[t]));
    }
    return worst;
}

std::vector<std::string> property_names(Group group) {
    std::vector<std::string> out;
    for (const auto& p : registry()) {
        if (p.group == group) out.emplace_back(p.name);
    }
    return out;
}

std::vector<PropertyResult> run(const Options& options) {
    std::vector<PropertyResult> results;
    std::uint64_t index = 0;
    for (const auto& p : registry()) {
        ++index;
        if ((p.group == Group::invariants && !options.invariants) || (p.group == Group::gradients && !options.gradients)) {
            continue;
        }
        std::mt19937_64 rng(options.seed * 1000003ULL + index);
        PropertyResult r;
        r.name = p.name;
        r.group = p.group;
        const auto start = std::chrono::steady_clock::now();
        try {
            const Outcome o = p.check(rng);
            r.passed = o.passed;
            r.detail = o.detail;
        } catch (const std::exception& e) {
            r.passed = false;
            r.detail = std::string("exception: ") + e.what();
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (options.on_result) options.on_result(r);
        results.push_back(std::move(r));
    }
    return results;
}

bool all_passed(const std::vector<PropertyResult>& results) {
    return std::all_of(results.begin(), results.end(), [](const PropertyResult& r) { return r.passed; });
}

std::string format_result(const PropertyResult& result) {
    std::ostringstream os;
    os << (result.passed ? "PASS " : "FAIL ") << result.name << " : " << result.detail;
    os.precision(2);
    os << std::fixed << " [" << result.seconds << "s]";
    return os.str();
}

}  // namespace gigp::selfcheck
