#include "gigp/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

namespace gigp {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
// Eigen picks vectorization peeling from buffer addresses; fixed alignment
// keeps GEMM results identical from run to run.
// Uninitialized, aligned scratch. Alignment keeps the GEMM kernels on the same
// code path from run to run.
using Scratch = Eigen::VectorXd;

Scratch scratch_copy(std::span<const double> v) {
    Scratch s(static_cast<Eigen::Index>(v.size()));
    std::copy(v.begin(), v.end(), s.data());
    return s;
}

std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
        strides[i] = strides[i + 1] * static_cast<std::size_t>(shape[i + 1]);
    }
    return strides;
}

// Strides of `in` addressed through the multi-index of `out` (0 where in has extent 1).
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    auto strides = strides_of(in);
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (in[i] == 1 && out[i] != 1) strides[i] = 0;
    }
    return strides;
}

// Calls fn(linear_out, offset_a, offset_b) for every element of `out`.
template <typename Fn>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, Fn&& fn) {
    const std::size_t n = shape_numel(out);
    const int rank = static_cast<int>(out.size());
    std::vector<int> idx(rank, 0);
    std::size_t oa = 0;
    std::size_t ob = 0;
    for (std::size_t i = 0; i < n; ++i) {
        fn(i, oa, ob);
        for (int d = rank - 1; d >= 0; --d) {
            if (++idx[d] < out[d]) {
                oa += sa[d];
                ob += sb[d];
                break;
            }
            oa -= sa[d] * static_cast<std::size_t>(out[d] - 1);
            ob -= sb[d] * static_cast<std::size_t>(out[d] - 1);
            idx[d] = 0;
        }
    }
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    if (a.size() != b.size()) {
        throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    Shape out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i] || b[i] == 1) {
            out[i] = a[i];
        } else if (a[i] == 1) {
            out[i] = b[i];
        } else {
            std::ostringstream os;
            os << op << ": dimension " << i << " mismatch (" << a[i] << " vs " << b[i] << ")";
            throw ShapeError(os.str());
        }
    }
    return out;
}

enum class BinaryKind { add, sub, mul, div };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
    Shape out = broadcast_shape(a.shape(), b.shape(), name);
    const auto sa = broadcast_strides(a.shape(), out);
    const auto sb = broadcast_strides(b.shape(), out);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> values(shape_numel(out));
    const bool same = a.shape() == b.shape();
    auto eval = [&](std::size_t i, std::size_t ia, std::size_t ib) {
        switch (kind) {
            case BinaryKind::add: values[i] = av[ia] + bv[ib]; break;
            case BinaryKind::sub: values[i] = av[ia] - bv[ib]; break;
            case BinaryKind::mul: values[i] = av[ia] * bv[ib]; break;
            case BinaryKind::div: values[i] = av[ia] / bv[ib]; break;
        }
    };
    if (same) {
        for (std::size_t i = 0; i < values.size(); ++i) eval(i, i, i);
    } else {
        for_each_broadcast(out, sa, sb, eval);
    }
    return make_result(out, std::move(values), {a, b},
                       [a, b, out, sa, sb, kind, same](std::span<const double> g) {
                           auto ga = Tensor(a).grad_mut();
                           auto gb = Tensor(b).grad_mut();
                           const auto av = a.values();
                           const auto bv = b.values();
                           auto step = [&](std::size_t i, std::size_t ia, std::size_t ib) {
                               switch (kind) {
                                   case BinaryKind::add:
                                       if (!ga.empty()) ga[ia] += g[i];
                                       if (!gb.empty()) gb[ib] += g[i];
                                       break;
                                   case BinaryKind::sub:
                                       if (!ga.empty()) ga[ia] += g[i];
                                       if (!gb.empty()) gb[ib] -= g[i];
                                       break;
                                   case BinaryKind::mul:
                                       if (!ga.empty()) ga[ia] += g[i] * bv[ib];
                                       if (!gb.empty()) gb[ib] += g[i] * av[ia];
                                       break;
                                   case BinaryKind::div:
                                       if (!ga.empty()) ga[ia] += g[i] / bv[ib];
                                       if (!gb.empty()) gb[ib] -= g[i] * av[ia] / (bv[ib] * bv[ib]);
                                       break;
                               }
                           };
                           if (same) {
                               for (std::size_t i = 0; i < g.size(); ++i) step(i, i, i);
                           } else {
                               for_each_broadcast(out, sa, sb, step);
                           }
                       });
}

// Elementwise unary op given value and derivative-from-(input, output) functions.
template <typename F, typename D>
Tensor unary(const Tensor& a, F f, D dfdx) {
    const auto av = a.values();
    std::vector<double> values(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) values[i] = f(av[i]);
    auto out_values = std::make_shared<std::vector<double>>(values);
    return make_result(a.shape(), std::move(values), {a},
                       [a, out_values, dfdx](std::span<const double> g) {
                           auto ga = Tensor(a).grad_mut();
                           if (ga.empty()) return;
                           const auto av = a.values();
                           const auto& yv = *out_values;
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(av[i], yv[i]);
                       });
}

int normalize_axis(int axis, int rank, const char* op) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) {
        std::ostringstream os;
        os << op << ": axis " << axis << " out of range for rank " << rank;
        throw ShapeError(os.str());
    }
    return axis;
}

// Maps every element of `shape` to its group index when `axes` are collapsed.
std::pair<Shape, std::vector<std::size_t>> reduction_groups(const Shape& shape,
                                                            const std::vector<int>& axes,
                                                            const char* op) {
    Shape reduced = shape;
    for (int ax : axes) reduced[normalize_axis(ax, static_cast<int>(shape.size()), op)] = 1;
    const auto so = broadcast_strides(reduced, shape);
    std::vector<std::size_t> group(shape_numel(shape));
    for_each_broadcast(shape, so, so, [&](std::size_t i, std::size_t io, std::size_t) { group[i] = io; });
    return {reduced, std::move(group)};
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] <= 0) {
            throw ShapeError("tensor extent at dimension " + std::to_string(i) + " must be positive, got " +
                             shape_str(shape));
        }
    }
    auto node = std::make_shared<detail::Node>();
    node->value.assign(shape_numel(shape), value);
    node->shape = std::move(shape);
    Tensor t(std::move(node));
    t.set_requires_grad(requires_grad);
    return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != shape_numel(shape)) {
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
    }
    Tensor t = zeros(std::move(shape));
    t.node_->value = std::move(values);
    t.set_requires_grad(requires_grad);
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return full({1}, value, requires_grad); }

const Shape& Tensor::shape() const {
    if (!node_) throw std::logic_error("undefined tensor");
    return node_->shape;
}

int Tensor::dim(int axis) const { return shape()[normalize_axis(axis, rank(), "dim")]; }

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::values() const { return node_->value; }

std::span<double> Tensor::values_mut() { return node_->value; }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    if (!is_leaf()) throw std::logic_error("requires_grad can only be changed on leaf tensors");
    node_->requires_grad = flag;
    if (flag) {
        node_->grad.assign(node_->value.size(), 0.0);
    } else {
        node_->grad.clear();
    }
}

bool Tensor::is_leaf() const { return node_ && !node_->backward_fn; }

std::span<const double> Tensor::grad() const {
    if (!requires_grad()) return {};
    return node_->grad;
}

std::span<double> Tensor::grad_mut() {
    if (!requires_grad()) return {};
    return node_->grad;
}

void Tensor::zero_grad() {
    if (requires_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
    if (numel() != 1) throw ShapeError("backward requires a scalar loss, got shape " + shape_str(shape()));
    if (!node_->requires_grad) return;

    // Post-order DFS over the requires-grad subgraph.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Leaves collect this pass in a fresh buffer and add it once at the end,
    // so repeated passes accumulate exact multiples.
    std::vector<std::pair<detail::Node*, std::vector<double>>> previous;
    for (detail::Node* node : order) {
        if (!node->backward_fn && !node->grad.empty()) previous.emplace_back(node, std::move(node->grad));
        node->grad.assign(node->value.size(), 0.0);
    }
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backward_fn) node->backward_fn(node->grad);
    }
    for (auto& [node, old] : previous) {
        for (std::size_t i = 0; i < old.size(); ++i) node->grad[i] += old[i];
    }
}

Tensor Tensor::detach() const { return from_values(shape(), node_->value); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, BackwardFn backward) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    const bool needs = g_grad_enabled &&
                       std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (needs) {
        node->requires_grad = true;
        for (const auto& t : inputs) {
            if (t.requires_grad()) node->parents.push_back(t.node());
        }
        node->backward_fn = std::move(backward);
    }
    return Tensor(std::move(node));
}

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::div, "div"); }

Tensor add_scalar(const Tensor& a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
    return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor square(const Tensor& a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
    return unary(a, [](double x) { return std::abs(x); },
                 [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor exp(const Tensor& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log_clamped(const Tensor& a, double floor) {
    return unary(a, [floor](double x) { return std::log(std::max(x, floor)); },
                 [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(a,
                 [](double x) {
                     if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
                     const double e = std::exp(x);
                     return e / (1.0 + e);
                 },
                 [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    return unary(a, [slope](double x) { return x > 0.0 ? x : slope * x; },
                 [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor tanh(const Tensor& a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor softplus(const Tensor& a) {
    return unary(a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
                 [](double x, double) {
                     if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
                     const double e = std::exp(x);
                     return e / (1.0 + e);
                 });
}

Tensor softmax(const Tensor& a, int axis) {
    const Shape& shape = a.shape();
    axis = normalize_axis(axis, a.rank(), "softmax");
    std::size_t outer = 1;
    std::size_t inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[i];
    for (int i = axis + 1; i < a.rank(); ++i) inner *= shape[i];
    const std::size_t n = shape[axis];
    const auto av = a.values();
    auto y = std::make_shared<std::vector<double>>(av.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double mx = av[base];
            for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, av[base + k * inner]);
            double total = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                const double e = std::exp(av[base + k * inner] - mx);
                (*y)[base + k * inner] = e;
                total += e;
            }
            for (std::size_t k = 0; k < n; ++k) (*y)[base + k * inner] /= total;
        }
    }
    std::vector<double> values = *y;
    return make_result(shape, std::move(values), {a}, [a, y, outer, inner, n](std::span<const double> g) {
        auto ga = Tensor(a).grad_mut();
        if (ga.empty()) return;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * n * inner + in;
                double dot = 0.0;
                for (std::size_t k = 0; k < n; ++k) dot += g[base + k * inner] * (*y)[base + k * inner];
                for (std::size_t k = 0; k < n; ++k) {
                    const std::size_t i = base + k * inner;
                    ga[i] += (*y)[i] * (g[i] - dot);
                }
            }
        }
    });
}

Tensor apply_activation(const Tensor& input, const Activation& activation) {
    switch (activation.kind) {
        case ActivationKind::sigmoid: return sigmoid(input);
        case ActivationKind::relu: return relu(input);
        case ActivationKind::leaky_relu: return leaky_relu(input, activation.slope);
        case ActivationKind::softmax: return softmax(input, activation.axis);
        case ActivationKind::tanh: return tanh(input);
        case ActivationKind::softplus: return softplus(input);
    }
    throw std::invalid_argument("unknown activation kind " + std::to_string(static_cast<int>(activation.kind)));
}

// ---- reductions and layout --------------------------------------------------

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.values()) total += v;
    return make_result({1}, {total}, {a}, [a](std::span<const double> g) {
        auto ga = Tensor(a).grad_mut();
        for (double& v : ga) v += g[0];
    });
}

Tensor mean(const Tensor& a) {
    const double n = static_cast<double>(a.numel());
    double total = 0.0;
    for (double v : a.values()) total += v;
    return make_result({1}, {total / n}, {a}, [a, n](std::span<const double> g) {
        auto ga = Tensor(a).grad_mut();
        for (double& v : ga) v += g[0] / n;
    });
}

Tensor sum_axes(const Tensor& a, const std::vector<int>& axes) {
    auto [reduced, group] = reduction_groups(a.shape(), axes, "sum_axes");
    const auto av = a.values();
    std::vector<double> values(shape_numel(reduced), 0.0);
    for (std::size_t i = 0; i < av.size(); ++i) values[group[i]] += av[i];
    auto groups = std::make_shared<std::vector<std::size_t>>(std::move(group));
    return make_result(reduced, std::move(values), {a}, [a, groups](std::span<const double> g) {
        auto ga = Tensor(a).grad_mut();
        if (ga.empty()) return;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[(*groups)[i]];
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> values(a.values().begin(), a.values().end());
    return make_result(std::move(shape), std::move(values), {a}, [a](std::span<const double> g) {
        auto ga = Tensor(a).grad_mut();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const int rank = parts[0].rank();
    axis = normalize_axis(axis, rank, "concat");
    Shape out = parts[0].shape();
    out[axis] = 0;
    for (const auto& p : parts) {
        if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
        for (int d = 0; d < rank; ++d) {
            if (d != axis && p.dim(d) != parts[0].dim(d)) {
                throw ShapeError("concat: dimension " + std::to_string(d) + " mismatch (" +
                                 std::to_string(p.dim(d)) + " vs " + std::to_string(parts[0].dim(d)) + ")");
            }
        }
        out[axis] += p.dim(axis);
    }
    std::size_t outer = 1;
    std::size_t inner = 1;
    for (int d = 0; d < axis; ++d) outer *= out[d];
    for (int d = axis + 1; d < rank; ++d) inner *= out[d];
    std::vector<double> values(shape_numel(out));
    const std::size_t out_block = out[axis] * inner;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t block = p.dim(axis) * inner;
        const auto pv = p.values();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(pv.begin() + o * block, block, values.begin() + o * out_block + offset);
        }
        offset += block;
    }
    return make_result(out, std::move(values), parts, [parts, outer, inner, out_block, axis](std::span<const double> g) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            const std::size_t block = p.dim(axis) * inner;
            auto gp = Tensor(p).grad_mut();
            if (!gp.empty()) {
                for (std::size_t o = 0; o < outer; ++o) {
                    for (std::size_t k = 0; k < block; ++k) gp[o * block + k] += g[o * out_block + offset + k];
                }
            }
            offset += block;
        }
    });
}

Tensor slice(const Tensor& a, int axis, int begin, int end) {
    axis = normalize_axis(axis, a.rank(), "slice");
    if (begin < 0 || end > a.dim(axis) || begin >= end) {
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for dimension " + std::to_string(axis) + " of extent " +
                         std::to_string(a.dim(axis)));
    }
    Shape out = a.shape();
    out[axis] = end - begin;
    std::size_t outer = 1;
    std::size_t inner = 1;
    for (int d = 0; d < axis; ++d) outer *= out[d];
    for (int d = axis + 1; d < a.rank(); ++d) inner *= out[d];
    const std::size_t in_block = a.dim(axis) * inner;
    const std::size_t out_block = out[axis] * inner;
    const std::size_t start = begin * inner;
    const auto av = a.values();
    std::vector<double> values(shape_numel(out));
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(av.begin() + o * in_block + start, out_block, values.begin() + o * out_block);
    }
    return make_result(out, std::move(values), {a}, [a, outer, in_block, out_block, start](std::span<const double> g) {
        auto ga = Tensor(a).grad_mut();
        if (ga.empty()) return;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t k = 0; k < out_block; ++k) ga[o * in_block + start + k] += g[o * out_block + k];
        }
    });
}

Tensor gather(const Tensor& a, std::vector<std::size_t> index, Shape shape) {
    if (index.size() != shape_numel(shape)) {
        throw ShapeError("gather: index count " + std::to_string(index.size()) + " does not match shape " +
                         shape_str(shape));
    }
    const auto av = a.values();
    std::vector<double> values(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= av.size()) throw ShapeError("gather: index out of range");
        values[i] = av[index[i]];
    }
    auto idx = std::make_shared<std::vector<std::size_t>>(std::move(index));
    return make_result(std::move(shape), std::move(values), {a}, [a, idx](std::span<const double> g) {
        auto ga = Tensor(a).grad_mut();
        if (ga.empty()) return;
        for (std::size_t i = 0; i < g.size(); ++i) ga[(*idx)[i]] += g[i];
    });
}

Tensor normalize(const Tensor& a, const std::vector<int>& axes, double eps) {
    auto [reduced, group] = reduction_groups(a.shape(), axes, "normalize");
    const std::size_t groups = shape_numel(reduced);
    const double count = static_cast<double>(a.numel() / groups);
    const auto av = a.values();
    std::vector<double> mu(groups, 0.0);
    std::vector<double> var(groups, 0.0);
    for (std::size_t i = 0; i < av.size(); ++i) mu[group[i]] += av[i];
    for (double& m : mu) m /= count;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = av[i] - mu[group[i]];
        var[group[i]] += d * d;
    }
    auto rstd = std::make_shared<std::vector<double>>(groups);
    for (std::size_t k = 0; k < groups; ++k) (*rstd)[k] = 1.0 / std::sqrt(var[k] / count + eps);
    auto y = std::make_shared<std::vector<double>>(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) (*y)[i] = (av[i] - mu[group[i]]) * (*rstd)[group[i]];
    std::vector<double> values = *y;
    auto gidx = std::make_shared<std::vector<std::size_t>>(std::move(group));
    return make_result(a.shape(), std::move(values), {a},
                       [a, y, rstd, gidx, groups, count](std::span<const double> g) {
                           auto ga = Tensor(a).grad_mut();
                           if (ga.empty()) return;
                           std::vector<double> mg(groups, 0.0);
                           std::vector<double> mgy(groups, 0.0);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               mg[(*gidx)[i]] += g[i];
                               mgy[(*gidx)[i]] += g[i] * (*y)[i];
                           }
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               const std::size_t k = (*gidx)[i];
                               ga[i] += (*rstd)[k] * (g[i] - mg[k] / count - (*y)[i] * mgy[k] / count);
                           }
                       });
}

// ---- conv3d -----------------------------------------------------------------

namespace {

struct ConvGeometry {
    int ci, d, h, w;
    int co, kd, kh, kw;
    int od, oh, ow;
    std::array<int, 3> stride, pad;
    std::size_t kcols() const { return static_cast<std::size_t>(ci) * kd * kh * kw; }
    std::size_t in_vox() const { return static_cast<std::size_t>(d) * h * w; }
    std::size_t out_vox() const { return static_cast<std::size_t>(od) * oh * ow; }
    bool pointwise() const {
        return kd == 1 && kh == 1 && kw == 1 && stride == std::array<int, 3>{1, 1, 1} &&
               pad == std::array<int, 3>{0, 0, 0};
    }
};

void im2col(const double* x, const ConvGeometry& g, double* col) {
    const std::size_t p = g.out_vox();
    std::size_t row = 0;
    for (int c = 0; c < g.ci; ++c) {
        const double* xc = x + static_cast<std::size_t>(c) * g.in_vox();
        for (int kz = 0; kz < g.kd; ++kz) {
            for (int ky = 0; ky < g.kh; ++ky) {
                for (int kx = 0; kx < g.kw; ++kx, ++row) {
                    double* out = col + row * p;
                    for (int oz = 0; oz < g.od; ++oz) {
                        const int iz = oz * g.stride[0] - g.pad[0] + kz;
                        for (int oy = 0; oy < g.oh; ++oy) {
                            const int iy = oy * g.stride[1] - g.pad[1] + ky;
                            double* dst = out + (static_cast<std::size_t>(oz) * g.oh + oy) * g.ow;
                            if (iz < 0 || iz >= g.d || iy < 0 || iy >= g.h) {
                                std::fill_n(dst, g.ow, 0.0);
                                continue;
                            }
                            const double* src = xc + (static_cast<std::size_t>(iz) * g.h + iy) * g.w;
                            if (g.stride[2] == 1) {
                                const int shift = kx - g.pad[2];
                                const int lo = std::clamp(-shift, 0, g.ow);
                                const int hi = std::clamp(g.w - shift, lo, g.ow);
                                std::fill(dst, dst + lo, 0.0);
                                std::copy(src + lo + shift, src + hi + shift, dst + lo);
                                std::fill(dst + hi, dst + g.ow, 0.0);
                                continue;
                            }
                            for (int ox = 0; ox < g.ow; ++ox) {
                                const int ix = ox * g.stride[2] - g.pad[2] + kx;
                                dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
                            }
                        }
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, const ConvGeometry& g, double* x) {
    const std::size_t p = g.out_vox();
    std::size_t row = 0;
    for (int c = 0; c < g.ci; ++c) {
        double* xc = x + static_cast<std::size_t>(c) * g.in_vox();
        for (int kz = 0; kz < g.kd; ++kz) {
            for (int ky = 0; ky < g.kh; ++ky) {
                for (int kx = 0; kx < g.kw; ++kx, ++row) {
                    const double* in = col + row * p;
                    for (int oz = 0; oz < g.od; ++oz) {
                        const int iz = oz * g.stride[0] - g.pad[0] + kz;
                        if (iz < 0 || iz >= g.d) continue;
                        for (int oy = 0; oy < g.oh; ++oy) {
                            const int iy = oy * g.stride[1] - g.pad[1] + ky;
                            if (iy < 0 || iy >= g.h) continue;
                            const double* src = in + (static_cast<std::size_t>(oz) * g.oh + oy) * g.ow;
                            double* dst = xc + (static_cast<std::size_t>(iz) * g.h + iy) * g.w;
                            if (g.stride[2] == 1) {
                                const int shift = kx - g.pad[2];
                                const int lo = std::clamp(-shift, 0, g.ow);
                                const int hi = std::clamp(g.w - shift, lo, g.ow);
                                for (int ox = lo; ox < hi; ++ox) dst[ox + shift] += src[ox];
                                continue;
                            }
                            for (int ox = 0; ox < g.ow; ++ox) {
                                const int ix = ox * g.stride[2] - g.pad[2] + kx;
                                if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias, const Conv3dOptions& options) {
    if (input.rank() != 5) throw ShapeError("conv3d: input must be rank 5 [B,C,D,H,W], got " + shape_str(input.shape()));
    if (kernel.rank() != 5) throw ShapeError("conv3d: kernel must be rank 5 [Co,Ci,kd,kh,kw], got " + shape_str(kernel.shape()));
    if (kernel.dim(1) != input.dim(1)) {
        throw ShapeError("conv3d: input channel dimension 1 is " + std::to_string(input.dim(1)) +
                         " but kernel expects " + std::to_string(kernel.dim(1)));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != kernel.dim(0))) {
        throw ShapeError("conv3d: bias must have shape [" + std::to_string(kernel.dim(0)) + "], got " +
                         shape_str(bias.shape()));
    }
    ConvGeometry g{};
    g.ci = input.dim(1);
    g.d = input.dim(2);
    g.h = input.dim(3);
    g.w = input.dim(4);
    g.co = kernel.dim(0);
    g.kd = kernel.dim(2);
    g.kh = kernel.dim(3);
    g.kw = kernel.dim(4);
    g.stride = options.stride;
    g.pad = options.padding;
    const std::array<int, 3> in_ext{g.d, g.h, g.w};
    const std::array<int, 3> k_ext{g.kd, g.kh, g.kw};
    std::array<int, 3> out_ext{};
    for (int i = 0; i < 3; ++i) {
        if (g.stride[i] <= 0 || g.pad[i] < 0) throw ShapeError("conv3d: stride must be positive and padding non-negative");
        const int span = in_ext[i] + 2 * g.pad[i] - k_ext[i];
        if (span < 0) {
            throw ShapeError("conv3d: spatial dimension " + std::to_string(i + 2) + " (extent " +
                             std::to_string(in_ext[i]) + ") yields no output for kernel extent " +
                             std::to_string(k_ext[i]));
        }
        out_ext[i] = span / g.stride[i] + 1;
    }
    g.od = out_ext[0];
    g.oh = out_ext[1];
    g.ow = out_ext[2];

    const int batch = input.dim(0);
    const std::size_t p = g.out_vox();
    const std::size_t kc = g.kcols();
    std::vector<double> values(static_cast<std::size_t>(batch) * g.co * p);
    const Scratch kbuf = scratch_copy(kernel.values());
    Eigen::Map<const RowMat> k(kbuf.data(), g.co, static_cast<Eigen::Index>(kc));
    Scratch col(static_cast<Eigen::Index>(kc * p));
    Scratch out(static_cast<Eigen::Index>(g.co * p));
    for (int b = 0; b < batch; ++b) {
        const double* xb = input.values().data() + static_cast<std::size_t>(b) * g.ci * g.in_vox();
        if (g.pointwise()) {
            std::copy(xb, xb + kc * p, col.data());
        } else {
            im2col(xb, g, col.data());
        }
        Eigen::Map<const RowMat> c(col.data(), static_cast<Eigen::Index>(kc), static_cast<Eigen::Index>(p));
        Eigen::Map<RowMat> y(out.data(), g.co, static_cast<Eigen::Index>(p));
        y.noalias() = k * c;
        double* yb = values.data() + static_cast<std::size_t>(b) * g.co * p;
        for (int o = 0; o < g.co; ++o) {
            const double add = bias.defined() ? bias.values()[o] : 0.0;
            for (std::size_t i = 0; i < p; ++i) yb[o * p + i] = out[o * p + i] + add;
        }
    }

    std::vector<Tensor> inputs{input, kernel};
    if (bias.defined()) inputs.push_back(bias);
    return make_result({batch, g.co, g.od, g.oh, g.ow}, std::move(values), inputs,
                       [input, kernel, bias, g, batch](std::span<const double> grad) {
                           auto gx = Tensor(input).grad_mut();
                           auto gk = Tensor(kernel).grad_mut();
                           auto gb = bias.defined() ? Tensor(bias).grad_mut() : std::span<double>{};
                           const std::size_t p = g.out_vox();
                           const std::size_t kc = g.kcols();
                           const Scratch kbuf = scratch_copy(kernel.values());
                           Eigen::Map<const RowMat> k(kbuf.data(), g.co, static_cast<Eigen::Index>(kc));
                           Scratch col(static_cast<Eigen::Index>(gk.empty() ? 0 : kc * p));
                           Scratch dcol(static_cast<Eigen::Index>(gx.empty() ? 0 : kc * p));
                           Scratch dybuf(static_cast<Eigen::Index>(g.co * p));
                           Scratch dkbuf(static_cast<Eigen::Index>(gk.empty() ? 0 : g.co * kc));
                           for (int b = 0; b < batch; ++b) {
                               const double* gyb = grad.data() + static_cast<std::size_t>(b) * g.co * p;
                               std::copy(gyb, gyb + g.co * p, dybuf.data());
                               Eigen::Map<const RowMat> dy(dybuf.data(), g.co, static_cast<Eigen::Index>(p));
                               if (!gb.empty()) {
                                   for (int o = 0; o < g.co; ++o) {
                                       double acc = 0.0;
                                       for (std::size_t i = 0; i < p; ++i) acc += dybuf[o * p + i];
                                       gb[o] += acc;
                                   }
                               }
                               const double* xb = input.values().data() + static_cast<std::size_t>(b) * g.ci * g.in_vox();
                               if (!gk.empty()) {
                                   if (g.pointwise()) {
                                       std::copy(xb, xb + kc * p, col.data());
                                   } else {
                                       im2col(xb, g, col.data());
                                   }
                                   Eigen::Map<const RowMat> c(col.data(), static_cast<Eigen::Index>(kc), static_cast<Eigen::Index>(p));
                                   Eigen::Map<RowMat> dk(dkbuf.data(), g.co, static_cast<Eigen::Index>(kc));
                                   dk.noalias() = dy * c.transpose();
                                   for (Eigen::Index i = 0; i < dkbuf.size(); ++i) gk[i] += dkbuf[i];
                               }
                               if (!gx.empty()) {
                                   double* gxb = gx.data() + static_cast<std::size_t>(b) * g.ci * g.in_vox();
                                   Eigen::Map<RowMat> dc(dcol.data(), static_cast<Eigen::Index>(kc), static_cast<Eigen::Index>(p));
                                   dc.noalias() = k.transpose() * dy;
                                   if (g.pointwise()) {
                                       for (std::size_t i = 0; i < kc * p; ++i) gxb[i] += dcol[i];
                                   } else {
                                       col2im_add(dcol.data(), g, gxb);
                                   }
                               }
                           }
                       });
}

// ---- resample ---------------------------------------------------------------

namespace {

struct AxisWeights {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

AxisWeights axis_weights(int in, int out, bool align_corners) {
    AxisWeights w;
    w.lo.resize(out);
    w.hi.resize(out);
    w.frac.resize(out);
    for (int i = 0; i < out; ++i) {
        double s = 0.0;
        if (align_corners) {
            s = out > 1 ? static_cast<double>(i) * (in - 1) / (out - 1) : 0.0;
        } else {
            s = std::clamp((i + 0.5) * in / out - 0.5, 0.0, static_cast<double>(in - 1));
        }
        int lo = static_cast<int>(std::floor(s));
        if (in == 1) {
            w.lo[i] = w.hi[i] = 0;
            w.frac[i] = 0.0;
            continue;
        }
        lo = std::clamp(lo, 0, in - 2);
        w.lo[i] = lo;
        w.hi[i] = lo + 1;
        w.frac[i] = s - lo;
    }
    return w;
}

}  // namespace

Tensor resample_trilinear(const Tensor& input, const std::array<int, 3>& target, bool align_corners) {
    if (input.rank() != 5) {
        throw ShapeError("resample_trilinear: input must be rank 5, got " + shape_str(input.shape()));
    }
    for (int i = 0; i < 3; ++i) {
        if (target[i] <= 0) throw ShapeError("resample_trilinear: target extents must be positive");
    }
    const int planes = input.dim(0) * input.dim(1);
    const int d = input.dim(2), h = input.dim(3), w = input.dim(4);
    auto az = std::make_shared<AxisWeights>(axis_weights(d, target[0], align_corners));
    auto ay = std::make_shared<AxisWeights>(axis_weights(h, target[1], align_corners));
    auto ax = std::make_shared<AxisWeights>(axis_weights(w, target[2], align_corners));
    const std::size_t in_plane = static_cast<std::size_t>(d) * h * w;
    const std::size_t out_plane = static_cast<std::size_t>(target[0]) * target[1] * target[2];

    // Visits the eight taps of every output voxel: fn(out_index, in_index, weight).
    auto visit = [=](auto&& fn) {
        for (int pl = 0; pl < planes; ++pl) {
            const std::size_t ib = pl * in_plane;
            std::size_t o = pl * out_plane;
            for (int z = 0; z < target[0]; ++z) {
                const double fz = az->frac[z];
                const std::size_t z0 = ib + static_cast<std::size_t>(az->lo[z]) * h * w;
                const std::size_t z1 = ib + static_cast<std::size_t>(az->hi[z]) * h * w;
                for (int y = 0; y < target[1]; ++y) {
                    const double fy = ay->frac[y];
                    const std::size_t y0 = static_cast<std::size_t>(ay->lo[y]) * w;
                    const std::size_t y1 = static_cast<std::size_t>(ay->hi[y]) * w;
                    for (int x = 0; x < target[2]; ++x, ++o) {
                        const double fx = ax->frac[x];
                        const int x0 = ax->lo[x];
                        const int x1 = ax->hi[x];
                        fn(o, z0 + y0 + x0, (1 - fz) * (1 - fy) * (1 - fx));
                        fn(o, z0 + y0 + x1, (1 - fz) * (1 - fy) * fx);
                        fn(o, z0 + y1 + x0, (1 - fz) * fy * (1 - fx));
                        fn(o, z0 + y1 + x1, (1 - fz) * fy * fx);
                        fn(o, z1 + y0 + x0, fz * (1 - fy) * (1 - fx));
                        fn(o, z1 + y0 + x1, fz * (1 - fy) * fx);
                        fn(o, z1 + y1 + x0, fz * fy * (1 - fx));
                        fn(o, z1 + y1 + x1, fz * fy * fx);
                    }
                }
            }
        }
    };

    const auto xv = input.values();
    std::vector<double> values(static_cast<std::size_t>(planes) * out_plane, 0.0);
    visit([&](std::size_t o, std::size_t i, double wgt) { values[o] += wgt * xv[i]; });
    return make_result({input.dim(0), input.dim(1), target[0], target[1], target[2]}, std::move(values), {input},
                       [input, visit](std::span<const double> g) {
                           auto gx = Tensor(input).grad_mut();
                           if (gx.empty()) return;
                           visit([&](std::size_t o, std::size_t i, double wgt) { gx[i] += wgt * g[o]; });
                       });
}

// ---- finite differences -----------------------------------------------------

double finite_difference_check(const std::function<Tensor()>& loss, Tensor param, const FdOptions& options) {
    if (!(options.step > 0.0)) throw std::invalid_argument("finite_difference_check: step must be positive");
    if (!param.is_leaf()) throw std::invalid_argument("finite_difference_check: parameter must be a leaf tensor");
    const bool had_grad = param.requires_grad();
    std::vector<double> saved_grad(param.grad().begin(), param.grad().end());
    param.set_requires_grad(true);
    param.zero_grad();

    Tensor l = loss();
    if (l.numel() != 1) throw ShapeError("finite_difference_check: loss must be scalar");
    if (!std::isfinite(l.item())) throw std::domain_error("finite_difference_check: non-finite loss");
    l.backward();
    std::vector<double> analytic(param.grad().begin(), param.grad().end());

    const std::size_t n = param.numel();
    std::vector<std::size_t> probes(n);
    std::iota(probes.begin(), probes.end(), std::size_t{0});
    if (options.max_probes > 0 && n > static_cast<std::size_t>(options.max_probes)) {
        std::mt19937_64 rng(options.seed);
        std::shuffle(probes.begin(), probes.end(), rng);
        probes.resize(options.max_probes);
        std::sort(probes.begin(), probes.end());
    }

    double worst = 0.0;
    {
        NoGradGuard no_grad;
        auto v = param.values_mut();
        for (std::size_t i : probes) {
            const double orig = v[i];
            v[i] = orig + options.step;
            const double fp = loss().item();
            v[i] = orig - options.step;
            const double fm = loss().item();
            v[i] = orig;
            const double numeric = (fp - fm) / (2.0 * options.step);
            if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
                throw std::domain_error("finite_difference_check: non-finite value at coordinate " + std::to_string(i));
            }
            const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
            worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
        }
    }

    param.set_requires_grad(had_grad);
    if (had_grad) std::copy(saved_grad.begin(), saved_grad.end(), param.grad_mut().begin());
    return worst;
}

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                               const FdOptions& options) {
    Tensor x = point.detach();
    return finite_difference_check([&]() { return f(x); }, x, options);
}

}  // namespace gigp
