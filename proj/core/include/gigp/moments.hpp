#pragma once

// Second-order geometric moments of 3D feature maps: directional (partial
// reduction) moment maps, the multi-view moment attention gate, normalized
// moment vectors and the multi-scale moment consistency loss.
//
// Spatial axes of a rank-5 feature [B,C,H,W,L] are called h, w and l; the
// coordinates along them are x, y and z. The centroid is the geometric grid
// center ((H-1)/2, (W-1)/2, (L-1)/2) in index units.

#include "gigp/tensor.hpp"

#include <array>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace gigp::moments {

struct MomentIndex {
    int p = 0;
    int q = 0;
    int r = 0;
};

// The six admissible (p,q,r) with p+q+r = 2, in storage order.
inline constexpr std::array<MomentIndex, 6> kSecondOrder{{
    {2, 0, 0}, {0, 2, 0}, {0, 0, 2}, {1, 1, 0}, {1, 0, 1}, {0, 1, 1},
}};

int moment_slot(const MomentIndex& index);  // throws unless p+q+r == 2

enum class Axis { h = 0, w = 1, l = 2 };

Axis parse_axis(std::string_view name);

struct DirectionalMomentMap {
    Axis axis = Axis::h;
    // One rank-5 map per kSecondOrder entry; the reduced axis has extent 1.
    std::array<Tensor, 6> maps;
};

DirectionalMomentMap directional_moments(const Tensor& feature, Axis axis);

// The six maps stacked on the channel axis, channel index slot*C + c.
Tensor directional_moment_stack(const Tensor& feature, Axis axis);

struct MomentVector {
    Tensor values;      // shape [6], kSecondOrder order
    double mass = 0.0;  // sum of |field| before normalization

    double operator[](const MomentIndex& index) const { return values.values()[moment_slot(index)]; }
};

class DegenerateFieldError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

inline constexpr double kMassEpsilon = 1e-12;

// field: [1,1,D,H,W]. Coordinates are standardized per axis by the RMS index
// deviation from the grid center and the field is divided by sum |field|.
MomentVector normalized_moments(const Tensor& field);

struct MomentAttentionParams {
    std::array<Tensor, 3> kernel;  // [C, 6C, 1, 1, 1] per axis h, w, l
    std::array<Tensor, 3> bias;    // [C]
    Tensor lambda;                 // [1]
};

// z = P + lambda * P * prod_i sigmoid(conv_i(stack_i(P))).
Tensor mvma_attention(const Tensor& feature, const MomentAttentionParams& params);

// 1x1x1 projection of [B,C,D,H,W] onto one channel. weights: [C], bias: [1].
Tensor channel_collapse(const Tensor& feature, const Tensor& weights, const Tensor& bias);

struct LayerMoments {
    MomentVector encoder;
    MomentVector decoder;
};

// Sum over levels k and moment slots of
//   alpha_k |s_k - ns| + beta_k |s_k - gp|
// for encoder and decoder moments alike. Teacher vectors act as constants.
Tensor msgc_loss(std::span<const LayerMoments> student, const LayerMoments& teacher_ns,
                 const LayerMoments& teacher_gp, std::span<const double> alpha,
                 std::span<const double> beta);

namespace faults {
// Mutation fixture: flips the sign of the beta term in msgc_loss.
void set_msgc_sign_fault(bool enabled);
bool msgc_sign_fault();
}  // namespace faults

}  // namespace gigp::moments
