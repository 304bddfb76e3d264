#include "gigp/moments.hpp"

#include <atomic>
#include <cmath>
#include <memory>
#include <string>

namespace gigp::moments {

namespace {

std::atomic<bool> g_sign_fault{false};

double ipow(double v, int e) {
    double out = 1.0;
    for (int i = 0; i < e; ++i) out *= v;
    return out;
}

void require_rank5(const Tensor& t, const char* op) {
    if (t.rank() != 5) throw ShapeError(std::string(op) + ": expected rank-5 [B,C,H,W,L], got " + shape_str(t.shape()));
}

}  // namespace

int moment_slot(const MomentIndex& index) {
    for (int i = 0; i < 6; ++i) {
        const auto& m = kSecondOrder[i];
        if (m.p == index.p && m.q == index.q && m.r == index.r) return i;
    }
    throw std::invalid_argument("moment index (" + std::to_string(index.p) + "," + std::to_string(index.q) + "," +
                                std::to_string(index.r) + ") is not second order");
}

Axis parse_axis(std::string_view name) {
    if (name == "h") return Axis::h;
    if (name == "w") return Axis::w;
    if (name == "l") return Axis::l;
    throw std::invalid_argument("invalid moment axis '" + std::string(name) + "' (expected h, w or l)");
}

Tensor directional_moment_stack(const Tensor& feature, Axis axis) {
    require_rank5(feature, "directional_moments");
    const int ax = static_cast<int>(axis);
    if (ax < 0 || ax > 2) throw std::invalid_argument("directional_moments: invalid axis " + std::to_string(ax));
    const int batch = feature.dim(0);
    const int channels = feature.dim(1);
    const std::array<int, 3> ext{feature.dim(2), feature.dim(3), feature.dim(4)};
    const std::size_t vox = static_cast<std::size_t>(ext[0]) * ext[1] * ext[2];

    std::array<int, 3> red = ext;
    red[ax] = 1;
    const std::size_t red_vox = static_cast<std::size_t>(red[0]) * red[1] * red[2];

    // weight[t * vox + v] and the reduced position of every voxel.
    auto weight = std::make_shared<std::vector<double>>(6 * vox);
    auto target = std::make_shared<std::vector<std::size_t>>(vox);
    const double cx = (ext[0] - 1) / 2.0;
    const double cy = (ext[1] - 1) / 2.0;
    const double cz = (ext[2] - 1) / 2.0;
    std::size_t v = 0;
    for (int x = 0; x < ext[0]; ++x) {
        for (int y = 0; y < ext[1]; ++y) {
            for (int z = 0; z < ext[2]; ++z, ++v) {
                for (int t = 0; t < 6; ++t) {
                    const auto& m = kSecondOrder[t];
                    (*weight)[t * vox + v] = ipow(x - cx, m.p) * ipow(y - cy, m.q) * ipow(z - cz, m.r);
                }
                const std::array<int, 3> pos{ax == 0 ? 0 : x, ax == 1 ? 0 : y, ax == 2 ? 0 : z};
                (*target)[v] = (static_cast<std::size_t>(pos[0]) * red[1] + pos[1]) * red[2] + pos[2];
            }
        }
    }

    const auto fv = feature.values();
    std::vector<double> out(static_cast<std::size_t>(batch) * 6 * channels * red_vox, 0.0);
    for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < channels; ++c) {
            const double* f = fv.data() + (static_cast<std::size_t>(b) * channels + c) * vox;
            for (int t = 0; t < 6; ++t) {
                double* o = out.data() + ((static_cast<std::size_t>(b) * 6 + t) * channels + c) * red_vox;
                const double* w = weight->data() + t * vox;
                for (std::size_t i = 0; i < vox; ++i) o[(*target)[i]] += w[i] * f[i];
            }
        }
    }
    return make_result({batch, 6 * channels, red[0], red[1], red[2]}, std::move(out), {feature},
                       [feature, weight, target, batch, channels, vox, red_vox](std::span<const double> g) {
                           auto gf = Tensor(feature).grad_mut();
                           if (gf.empty()) return;
                           for (int b = 0; b < batch; ++b) {
                               for (int c = 0; c < channels; ++c) {
                                   double* f = gf.data() + (static_cast<std::size_t>(b) * channels + c) * vox;
                                   for (int t = 0; t < 6; ++t) {
                                       const double* go =
                                           g.data() + ((static_cast<std::size_t>(b) * 6 + t) * channels + c) * red_vox;
                                       const double* w = weight->data() + t * vox;
                                       for (std::size_t i = 0; i < vox; ++i) f[i] += w[i] * go[(*target)[i]];
                                   }
                               }
                           }
                       });
}

DirectionalMomentMap directional_moments(const Tensor& feature, Axis axis) {
    const Tensor stack = directional_moment_stack(feature, axis);
    const int channels = feature.dim(1);
    DirectionalMomentMap out;
    out.axis = axis;
    for (int t = 0; t < 6; ++t) out.maps[t] = slice(stack, 1, t * channels, (t + 1) * channels);
    return out;
}

MomentVector normalized_moments(const Tensor& field) {
    require_rank5(field, "normalized_moments");
    if (field.dim(0) != 1 || field.dim(1) != 1) {
        throw ShapeError("normalized_moments: field must be single-sample, single-channel [1,1,D,H,W], got " +
                         shape_str(field.shape()));
    }
    const std::array<int, 3> ext{field.dim(2), field.dim(3), field.dim(4)};
    // Raw offsets keep the weights exact; sigma enters as mu = raw * n / (ss * mass)
    // for pure moments, so a constant field gives exactly 1.
    std::array<std::vector<double>, 3> off;
    std::array<double, 3> ss{};
    for (int a = 0; a < 3; ++a) {
        const double center = (ext[a] - 1) / 2.0;
        off[a].resize(ext[a]);
        for (int i = 0; i < ext[a]; ++i) {
            off[a][i] = i - center;
            ss[a] += off[a][i] * off[a][i];
        }
        if (ss[a] == 0.0) ss[a] = ext[a];  // extent 1: sigma taken as 1, offsets are zero
    }

    const auto fv = field.values();
    double mass = 0.0;
    for (double f : fv) mass += std::abs(f);
    if (!(mass > kMassEpsilon)) {
        throw DegenerateFieldError("normalized_moments: field mass " + std::to_string(mass) +
                                   " is below the degeneracy threshold");
    }

    const std::size_t vox = fv.size();
    auto weight = std::make_shared<std::vector<double>>(6 * vox);
    std::size_t v = 0;
    for (int x = 0; x < ext[0]; ++x) {
        for (int y = 0; y < ext[1]; ++y) {
            for (int z = 0; z < ext[2]; ++z, ++v) {
                for (int t = 0; t < 6; ++t) {
                    const auto& m = kSecondOrder[t];
                    (*weight)[t * vox + v] = ipow(off[0][x], m.p) * ipow(off[1][y], m.q) * ipow(off[2][z], m.r);
                }
            }
        }
    }
    std::vector<double> raw(6, 0.0);
    for (int t = 0; t < 6; ++t) {
        const double* w = weight->data() + t * vox;
        for (std::size_t i = 0; i < vox; ++i) raw[t] += w[i] * fv[i];
    }
    Tensor raw_t = make_result({6}, std::move(raw), {field}, [field, weight, vox](std::span<const double> g) {
        auto gf = Tensor(field).grad_mut();
        if (gf.empty()) return;
        for (int t = 0; t < 6; ++t) {
            const double* w = weight->data() + t * vox;
            for (std::size_t i = 0; i < vox; ++i) gf[i] += w[i] * g[t];
        }
    });

    std::vector<double> num(6, 1.0);
    std::vector<double> den(6, 1.0);
    for (int t = 0; t < 6; ++t) {
        const auto& m = kSecondOrder[t];
        const std::array<int, 3> e{m.p, m.q, m.r};
        std::vector<int> axes;
        for (int a = 0; a < 3; ++a) {
            for (int k = 0; k < e[a]; ++k) axes.push_back(a);
        }
        if (axes[0] == axes[1]) {
            num[t] = ext[axes[0]];
            den[t] = ss[axes[0]];
        } else {
            den[t] = std::sqrt(ss[axes[0]] / ext[axes[0]]) * std::sqrt(ss[axes[1]] / ext[axes[1]]);
        }
    }
    const Tensor mass_t = sum(abs(reshape(field, {static_cast<int>(vox)})));
    const Tensor scaled = mul(raw_t, Tensor::from_values({6}, std::move(num)));
    const Tensor denom = mul(mass_t, Tensor::from_values({6}, std::move(den)));
    return MomentVector{div(scaled, denom), mass};
}

Tensor mvma_attention(const Tensor& feature, const MomentAttentionParams& params) {
    require_rank5(feature, "mvma_attention");
    const int channels = feature.dim(1);
    Tensor gate;
    for (int a = 0; a < 3; ++a) {
        const Tensor& k = params.kernel[a];
        if (k.rank() != 5 || k.dim(0) != channels || k.dim(1) != 6 * channels) {
            throw ShapeError("mvma_attention: axis " + std::to_string(a) + " kernel must be [" +
                             std::to_string(channels) + "," + std::to_string(6 * channels) +
                             ",1,1,1] for the stacked moments, got " + shape_str(k.shape()));
        }
        if (k.dim(2) != 1 || k.dim(3) != 1 || k.dim(4) != 1) {
            throw ShapeError("mvma_attention: kernel spatial extents must be 1");
        }
        const Tensor stack = directional_moment_stack(feature, static_cast<Axis>(a));
        const Tensor g = sigmoid(conv3d(stack, k, params.bias[a]));
        gate = gate.defined() ? mul(gate, g) : g;
    }
    const Tensor lambda = reshape(params.lambda, {1, 1, 1, 1, 1});
    return add(feature, mul(lambda, mul(feature, gate)));
}

Tensor channel_collapse(const Tensor& feature, const Tensor& weights, const Tensor& bias) {
    require_rank5(feature, "channel_collapse");
    if (weights.numel() != static_cast<std::size_t>(feature.dim(1))) {
        throw ShapeError("channel_collapse: weight length " + std::to_string(weights.numel()) +
                         " does not match channel count " + std::to_string(feature.dim(1)));
    }
    if (bias.numel() != 1) throw ShapeError("channel_collapse: bias must be a single value");
    return conv3d(feature, reshape(weights, {1, feature.dim(1), 1, 1, 1}), reshape(bias, {1}));
}

Tensor msgc_loss(std::span<const LayerMoments> student, const LayerMoments& teacher_ns, const LayerMoments& teacher_gp,
                 std::span<const double> alpha, std::span<const double> beta) {
    if (alpha.size() != student.size() || beta.size() != student.size()) {
        throw std::invalid_argument("msgc_loss: expected " + std::to_string(student.size()) +
                                    " alpha and beta weights, got " + std::to_string(alpha.size()) + " and " +
                                    std::to_string(beta.size()));
    }
    const double beta_sign = faults::msgc_sign_fault() ? -1.0 : 1.0;
    const Tensor ns_e = teacher_ns.encoder.values.detach();
    const Tensor ns_d = teacher_ns.decoder.values.detach();
    const Tensor gp_e = teacher_gp.encoder.values.detach();
    const Tensor gp_d = teacher_gp.decoder.values.detach();
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t k = 0; k < student.size(); ++k) {
        if (!std::isfinite(alpha[k]) || !std::isfinite(beta[k])) {
            throw std::invalid_argument("msgc_loss: non-finite weight at level " + std::to_string(k));
        }
        const Tensor& se = student[k].encoder.values;
        const Tensor& sd = student[k].decoder.values;
        const Tensor ns = add(sum(abs(sub(se, ns_e))), sum(abs(sub(sd, ns_d))));
        const Tensor gp = add(sum(abs(sub(se, gp_e))), sum(abs(sub(sd, gp_d))));
        total = add(total, add(mul_scalar(ns, alpha[k]), mul_scalar(gp, beta_sign * beta[k])));
    }
    return total;
}

namespace faults {
void set_msgc_sign_fault(bool enabled) { g_sign_fault = enabled; }
bool msgc_sign_fault() { return g_sign_fault; }
}  // namespace faults

}  // namespace gigp::moments
