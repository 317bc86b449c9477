#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace snarm {

/// Dense h×w×c array stored row-major as (y, x, channel).
struct Grid {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<double> data;

    Grid() = default;
    Grid(int h_, int w_, int c_, double fill = 0.0);

    std::size_t cells() const { return static_cast<std::size_t>(h) * w; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Grid& o) const { return h == o.h && w == o.w && c == o.c; }

    std::size_t offset(int y, int x) const {
        return (static_cast<std::size_t>(y) * w + x) * c;
    }
    double& at(int y, int x, int k) { return data[offset(y, x) + k]; }
    double at(int y, int x, int k) const { return data[offset(y, x) + k]; }

    std::span<double> cell(int y, int x) { return {data.data() + offset(y, x), static_cast<std::size_t>(c)}; }
    std::span<const double> cell(int y, int x) const {
        return {data.data() + offset(y, x), static_cast<std::size_t>(c)};
    }
    // Flat patch index i = y*w + x.
    std::span<double> cell(std::size_t i) { return {data.data() + i * c, static_cast<std::size_t>(c)}; }
    std::span<const double> cell(std::size_t i) const {
        return {data.data() + i * c, static_cast<std::size_t>(c)};
    }

    bool all_finite() const;
};

/// Single-channel h×w map.
using Map = Grid;

/// Mirror index without repeating the edge (PyTorch "reflect"). A length-1 axis maps to 0.
int reflect_index(int i, int n);

/// One output sample of a 1-D linear interpolation: two source taps with weights.
struct Tap {
    int i0 = 0;
    int i1 = 0;
    double w0 = 1.0;
    double w1 = 0.0;
};

/// Per-axis bilinear taps, align-corners-false convention.
std::vector<Tap> bilinear_taps(int in, int out);

/// Bilinear resampler between fixed shapes; forward and adjoint.
class Resampler {
public:
    Resampler(int in_h, int in_w, int out_h, int out_w);

    int in_h() const { return in_h_; }
    int in_w() const { return in_w_; }
    int out_h() const { return out_h_; }
    int out_w() const { return out_w_; }

    Grid forward(const Grid& in) const;
    /// Adjoint of forward: scatters output gradients back to the input grid.
    Grid backward(const Grid& grad_out) const;

private:
    int in_h_, in_w_, out_h_, out_w_;
    std::vector<Tap> ty_, tx_;
};

inline Grid resize_bilinear(const Grid& in, int out_h, int out_w) {
    return Resampler(in.h, in.w, out_h, out_w).forward(in);
}

}  // namespace snarm
