#include "snarm/grid.hpp"

#include <algorithm>
#include <cmath>

#include "snarm/error.hpp"

namespace snarm {

Grid::Grid(int h_, int w_, int c_, double fill) : h(h_), w(w_), c(c_) {
    require(h_ >= 0 && w_ >= 0 && c_ >= 0, "grid dimensions must be nonnegative");
    data.assign(static_cast<std::size_t>(h_) * w_ * c_, fill);
}

bool Grid::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

std::vector<Tap> bilinear_taps(int in, int out) {
    require(in > 0 && out > 0, "bilinear_taps: sizes must be positive");
    std::vector<Tap> taps(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        int i0 = static_cast<int>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const int i1 = std::min(i0 + 1, in - 1);
        const double frac = i1 == i0 ? 0.0 : src - i0;
        taps[o] = Tap{i0, i1, 1.0 - frac, frac};
    }
    return taps;
}

Resampler::Resampler(int in_h, int in_w, int out_h, int out_w)
    : in_h_(in_h), in_w_(in_w), out_h_(out_h), out_w_(out_w),
      ty_(bilinear_taps(in_h, out_h)), tx_(bilinear_taps(in_w, out_w)) {}

Grid Resampler::forward(const Grid& in) const {
    require(in.h == in_h_ && in.w == in_w_, "Resampler::forward: input shape mismatch");
    Grid out(out_h_, out_w_, in.c);
    for (int y = 0; y < out_h_; ++y) {
        const Tap& a = ty_[y];
        for (int x = 0; x < out_w_; ++x) {
            const Tap& b = tx_[x];
            auto dst = out.cell(y, x);
            auto p00 = in.cell(a.i0, b.i0), p01 = in.cell(a.i0, b.i1);
            auto p10 = in.cell(a.i1, b.i0), p11 = in.cell(a.i1, b.i1);
            for (int k = 0; k < in.c; ++k) {
                dst[k] = a.w0 * (b.w0 * p00[k] + b.w1 * p01[k]) + a.w1 * (b.w0 * p10[k] + b.w1 * p11[k]);
            }
        }
    }
    return out;
}

Grid Resampler::backward(const Grid& g) const {
    require(g.h == out_h_ && g.w == out_w_, "Resampler::backward: gradient shape mismatch");
    Grid gin(in_h_, in_w_, g.c);
    for (int y = 0; y < out_h_; ++y) {
        const Tap& a = ty_[y];
        for (int x = 0; x < out_w_; ++x) {
            const Tap& b = tx_[x];
            auto src = g.cell(y, x);
            auto p00 = gin.cell(a.i0, b.i0), p01 = gin.cell(a.i0, b.i1);
            auto p10 = gin.cell(a.i1, b.i0), p11 = gin.cell(a.i1, b.i1);
            for (int k = 0; k < g.c; ++k) {
                p00[k] += a.w0 * b.w0 * src[k];
                p01[k] += a.w0 * b.w1 * src[k];
                p10[k] += a.w1 * b.w0 * src[k];
                p11[k] += a.w1 * b.w1 * src[k];
            }
        }
    }
    return gin;
}

}  // namespace snarm
