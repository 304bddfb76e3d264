#pragma once

// Compact 3D encoder-decoder. Encoder level k runs at input/2^k: a strided
// 2^3 downsampling conv (k > 0), one 3^3 conv block, then moment attention.
// The deepest level adds the GIIM block. Decoder level k upsamples level k+1
// trilinearly, projects it with a 1x1 conv, concatenates the encoder skip and
// runs one conv block. Conv blocks are conv -> instance norm -> leaky relu.

#include "gigp/parameters.hpp"
#include "gigp/tensor.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace gigp::net {

struct NetConfig {
    int depth = 3;
    int base_channels = 8;
    int growth = 2;
    int num_classes = 2;
    std::array<int, 3> input_shape{24, 24, 24};
    int ssm_state_dim = 4;
    double lambda1 = 0.5;
    double lambda2 = 0.5;
    double slope = 0.01;
    bool mvma_enabled = true;
    bool giim_enabled = true;

    // Throws std::invalid_argument naming the offending field or extent.
    void validate() const;
    int channels(int level) const;
    std::array<int, 3> level_shape(int level) const;
};

bool operator==(const NetConfig& a, const NetConfig& b);

// Deterministic in `seed`. Every parameter exists regardless of the ablation
// switches; parameters of disabled blocks are frozen (lambda_P stays 0).
ParameterSet build_network(const NetConfig& config, std::uint64_t seed);

enum class Mode { student, teacher };

struct ForwardOutputs {
    Tensor probs;                  // [B, classes, D, H, W]
    std::vector<Tensor> encoder;   // E_k, [B, c_k, input/2^k]
    std::vector<Tensor> decoder;   // D_k, [B, c_k, input/2^k]
};

// batch: [B, 1, D, H, W]; the first `num_labeled` samples are labeled (this
// only orders the inter-sample scan). Teacher mode records no graph.
ForwardOutputs forward(const NetConfig& config, const ParameterSet& params, const Tensor& batch, Mode mode,
                       int num_labeled = 0);

// One-channel projection of sample `sample` of level-k features using the
// collapse.{enc,dec}{k} parameters. Result: [1, 1, D, H, W].
Tensor collapse_level(const ParameterSet& params, const Tensor& feature, bool encoder, int level, int sample);

}  // namespace gigp::net
