#pragma once

#include <cstddef>
#include <vector>

#include "snarm/bank.hpp"
#include "snarm/grid.hpp"
#include "snarm/layers.hpp"

namespace snarm {

/// Residual Navigator: a 1×1 convolution d_f → 1 acting as a unary anomaly classifier.
/// Zero-initialized, so the untrained classifier outputs 0.5 everywhere.
struct NavigatorParams {
    Param weight;
    Param bias;

    NavigatorParams() = default;
    explicit NavigatorParams(int dim) : weight("navigator.weight", dim), bias("navigator.bias", 1) {}

    int dim() const { return static_cast<int>(weight.size()); }
    void visit(const ParamVisitor& fn) {
        fn(weight);
        fn(bias);
    }
};

/// q = sigmoid(classifier(R)), q_star = q + channel mean of R. Both h_f×w_f×1.
struct WaypointMap {
    Map q;
    Map q_star;
};

WaypointMap waypoint(const ResidualGrid& residuals, const NavigatorParams& params);
/// Same as waypoint() on an unchecked residual tensor (jittered training residuals may be negative).
WaypointMap waypoint_raw(const Grid& residuals, const NavigatorParams& params);

/// Accumulates classifier gradients given dLoss/dq.
void waypoint_backward(const Grid& residuals, const WaypointMap& wm, const Map& grad_q, NavigatorParams& params);

struct TrustedSet {
    std::vector<std::size_t> indices;  // ascending patch indices
    Grid features;                     // |indices| × 1 × d_f
};

/// Nearest-rank p-th percentile threshold of the values.
double nearest_rank_percentile(std::vector<double> values, double p);

/// Patches whose q_star is strictly below the nearest-rank p-th percentile. If that set is empty the
/// ⌈p·M/100⌉ lowest-scoring patches (ties by index) are used instead.
TrustedSet select_trusted(const WaypointMap& wm, const Grid& features, double p);

/// Re-match every patch against the trusted set (top-k mean by L2, self-match allowed).
ResidualGrid intra_residual_grid(const Grid& features, const TrustedSet& trusted, int theta, std::size_t k = 1);

/// Channel concatenation [inter ‖ intra].
ResidualGrid hybrid(const ResidualGrid& inter, const ResidualGrid& intra);

}  // namespace snarm
