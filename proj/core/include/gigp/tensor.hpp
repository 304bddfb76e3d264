#pragma once

// Dense double-precision tensors with a reverse-mode differentiation graph.
//
// A Tensor is a cheap handle onto a shared node. Operations record their
// inputs and a backward closure only while gradient recording is enabled
// and at least one input requires a gradient; otherwise the result is a
// plain leaf. Layout is row-major (last axis fastest).

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gigp {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when operand shapes disagree; the message names the dimension.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using BackwardFn = std::function<void(std::span<const double> grad_out)>;

namespace detail {
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward_fn;
};
}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rank() const { return static_cast<int>(shape().size()); }
    int dim(int axis) const;
    std::size_t numel() const;

    std::span<const double> values() const;
    // Direct write access. Only meaningful on leaves (parameters, inputs).
    std::span<double> values_mut();
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool is_leaf() const;

    // Gradient buffer; empty span when the tensor does not require grad.
    std::span<const double> grad() const;
    std::span<double> grad_mut();
    void zero_grad();

    // Accumulates d(this)/d(node) into every reachable requires-grad node.
    // Intermediate gradients are rebuilt each call; leaf gradients accumulate.
    void backward() const;

    // Copy of the values with no graph attached.
    Tensor detach() const;

    // Internal: used by operation implementations.
    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Builds the result of an operation. The backward closure receives the
// output gradient and must add into each input's grad_mut() when non-empty.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   BackwardFn backward);

// ---- elementwise and broadcasting ------------------------------------------

// Binary ops broadcast numpy-style over equal-rank operands (extent 1 stretches).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor exp(const Tensor& a);
// log(max(a, floor)); gradient is zero where clamped.
Tensor log_clamped(const Tensor& a, double floor = 1e-12);

enum class ActivationKind { sigmoid, relu, leaky_relu, softmax, tanh, softplus };

struct Activation {
    ActivationKind kind = ActivationKind::relu;
    double slope = 0.01;  // leaky_relu
    int axis = 1;         // softmax
};

Tensor apply_activation(const Tensor& input, const Activation& activation);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor tanh(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor softmax(const Tensor& a, int axis);

// ---- reductions and layout -------------------------------------------------

Tensor sum(const Tensor& a);   // shape [1]
Tensor mean(const Tensor& a);  // shape [1]
// Sums over the listed axes, keeping them with extent 1.
Tensor sum_axes(const Tensor& a, const std::vector<int>& axes);

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int begin, int end);
// out[i] = a[index[i]]; index.size() must equal the product of shape.
Tensor gather(const Tensor& a, std::vector<std::size_t> index, Shape shape);

// Zero-mean, unit-variance over the listed axes (biased variance, eps inside sqrt).
Tensor normalize(const Tensor& a, const std::vector<int>& axes, double eps = 1e-5);

// ---- spatial ---------------------------------------------------------------

struct Conv3dOptions {
    std::array<int, 3> stride{1, 1, 1};
    std::array<int, 3> padding{0, 0, 0};
};

// Cross-correlation. input [B,Ci,D,H,W], kernel [Co,Ci,kd,kh,kw], bias [Co]
// (may be undefined).
Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              const Conv3dOptions& options = {});

// Trilinear resampling of the three spatial axes. With align_corners the
// corner voxel centers coincide; otherwise voxels are cells and samples sit at
// cell centers, clamped at the border.
Tensor resample_trilinear(const Tensor& input, const std::array<int, 3>& target, bool align_corners = true);

// ---- gradient checking -----------------------------------------------------

struct FdOptions {
    double step = 1e-5;
    int max_probes = 100;
    std::uint64_t seed = 0x5eed;
};

// Central-difference check of the gradient of `loss` with respect to the leaf
// `param`, which is perturbed in place and restored. Returns the maximum over
// probed coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|).
double finite_difference_check(const std::function<Tensor()>& loss, Tensor param,
                               const FdOptions& options = {});

// Convenience form: `f` is evaluated at a copy of `point`.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& point, const FdOptions& options = {});

}  // namespace gigp
