#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "snarm/grid.hpp"
#include "snarm/layers.hpp"
#include "snarm/snmm.hpp"

namespace snarm {

inline constexpr std::array<int, 4> kDilationRates{3, 6, 12, 24};

/// One (dilation rate, scan direction) view: atrous 3×3 conv + GELU, then a 1×1 head to one logit,
/// bilinear upsampling of the logits and a sigmoid.
struct ViewBranch {
    int rate = 3;
    Conv3x3 atrous;
    Param head_weight;  // dim
    Param head_bias;    // 1

    ViewBranch() = default;
    ViewBranch(const std::string& name, int dim, int rate);

    void init(Rng& rng);
    void visit(const ParamVisitor& fn) {
        atrous.visit(fn);
        fn(head_weight);
        fn(head_bias);
    }
};

struct AnomalyMap {
    Map values;  // H_I × W_I × 1, within [0,1]
    double image_score = 0.0;
};

/// Dilated 3×3 convolution with zero padding (no activation).
Grid atrous_apply(const Grid& features, const ViewBranch& branch);

/// sigmoid(upsample(1×1 conv(features))).
AnomalyMap head_apply(const Grid& features, const ViewBranch& branch, int target_h, int target_w);

struct BranchCache {
    Grid input;
    Grid pre;     // atrous output before GELU
    Grid act;
    Map prob;     // upsampled sigmoid map
};

/// Full branch: head_apply(GELU(atrous_apply(o))).
Map branch_forward(const Grid& o, const ViewBranch& branch, int target_h, int target_w, BranchCache* cache = nullptr);
/// Accumulates branch gradients and returns dLoss/do.
Grid branch_backward(const BranchCache& cache, const Map& grad_prob, ViewBranch& branch);

/// 4 scale branches × 4 directional sub-branches, each with its own parameters.
struct Decoder {
    std::array<std::array<ViewBranch, 4>, 4> branches;  // [scale][direction]

    Decoder() = default;
    explicit Decoder(int dim);
    void init(Rng& rng);
    void visit(const ParamVisitor& fn) {
        for (auto& s : branches)
            for (auto& b : s) b.visit(fn);
    }
    void visit_scale(int scale, const ParamVisitor& fn) {
        for (auto& b : branches.at(scale)) b.visit(fn);
    }
};

/// All 16 maps in [scale][direction] order, flattened to scale*4 + direction.
std::vector<Map> decoder_forward(const DirectionalOutputs& outputs, const Decoder& decoder, int target_h, int target_w);

/// Per-pixel mean of exactly 16 equally sized maps.
Map ensemble(std::span<const Map> maps);

enum class ScoreReduction { max, top_q_mean };

/// max of pixels, or mean of the ⌈q·N⌉ largest pixels.
double image_score(const Map& map, ScoreReduction reduction, double q);

}  // namespace snarm
