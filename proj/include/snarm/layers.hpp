#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "snarm/grid.hpp"
#include "snarm/rng.hpp"

namespace snarm {

/// A trainable tensor with its accumulated gradient.
struct Param {
    std::string name;
    std::vector<double> value;
    std::vector<double> grad;

    Param() = default;
    Param(std::string n, std::size_t size, double fill = 0.0) : name(std::move(n)), value(size, fill), grad(size, 0.0) {}

    std::size_t size() const { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

using ParamVisitor = std::function<void(Param&)>;

inline double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double softplus_inverse(double y) { return std::log(std::expm1(y)); }
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
inline double gelu_grad(double x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

void fill_uniform(Param& p, Rng& rng, double bound);

enum class Padding { zero, reflect };

/// 3×3 convolution with the given dilation; spatial size is preserved.
/// Weight layout: [ky][kx][out][in].
struct Conv3x3 {
    Param weight;
    Param bias;
    int in_ch = 0;
    int out_ch = 0;
    int dilation = 1;
    Padding padding = Padding::zero;

    Conv3x3() = default;
    Conv3x3(std::string name, int in, int out, int dilation, Padding padding);

    void init(Rng& rng);
    Grid forward(const Grid& in) const;
    /// Accumulates parameter gradients and returns the input gradient.
    Grid backward(const Grid& in, const Grid& grad_out);
    void visit(const ParamVisitor& fn) {
        fn(weight);
        fn(bias);
    }
};

/// Per-cell affine map in → out channels. Weight layout: [out][in].
struct Linear {
    Param weight;
    Param bias;
    int in_ch = 0;
    int out_ch = 0;

    Linear() = default;
    Linear(std::string name, int in, int out);

    void init(Rng& rng);
    Grid forward(const Grid& in) const;
    Grid backward(const Grid& in, const Grid& grad_out);
    void visit(const ParamVisitor& fn) {
        fn(weight);
        fn(bias);
    }
};

}  // namespace snarm
