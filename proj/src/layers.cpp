#include "snarm/layers.hpp"

#include "snarm/error.hpp"

namespace snarm {

void fill_uniform(Param& p, Rng& rng, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : p.value) v = u(rng);
}

Conv3x3::Conv3x3(std::string name, int in, int out, int dil, Padding pad)
    : weight(name + ".weight", static_cast<std::size_t>(9) * in * out),
      bias(name + ".bias", static_cast<std::size_t>(out)),
      in_ch(in),
      out_ch(out),
      dilation(dil),
      padding(pad) {
    require(in > 0 && out > 0 && dil >= 1, "Conv3x3: invalid shape");
}

void Conv3x3::init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(9.0 * in_ch);
    fill_uniform(weight, rng, bound);
    fill_uniform(bias, rng, bound);
}

namespace {

// Source coordinate for a tap, or -1 when it falls in zero padding.
inline int tap_source(int pos, int offset, int n, Padding pad) {
    const int s = pos + offset;
    if (s >= 0 && s < n) return s;
    return pad == Padding::reflect ? reflect_index(s, n) : -1;
}

}  // namespace

Grid Conv3x3::forward(const Grid& in) const {
    require(in.c == in_ch, "Conv3x3::forward: channel mismatch");
    Grid out(in.h, in.w, out_ch);
    for (int y = 0; y < in.h; ++y) {
        for (int x = 0; x < in.w; ++x) {
            auto dst = out.cell(y, x);
            for (int o = 0; o < out_ch; ++o) dst[o] = bias.value[o];
            for (int ky = 0; ky < 3; ++ky) {
                const int sy = tap_source(y, (ky - 1) * dilation, in.h, padding);
                if (sy < 0) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int sx = tap_source(x, (kx - 1) * dilation, in.w, padding);
                    if (sx < 0) continue;
                    auto src = in.cell(sy, sx);
                    const double* wt = weight.value.data() + static_cast<std::size_t>(ky * 3 + kx) * out_ch * in_ch;
                    for (int o = 0; o < out_ch; ++o) {
                        const double* wrow = wt + static_cast<std::size_t>(o) * in_ch;
                        double acc = 0.0;
                        for (int i = 0; i < in_ch; ++i) acc += wrow[i] * src[i];
                        dst[o] += acc;
                    }
                }
            }
        }
    }
    return out;
}

Grid Conv3x3::backward(const Grid& in, const Grid& g) {
    require(in.c == in_ch && g.c == out_ch && g.h == in.h && g.w == in.w, "Conv3x3::backward: shape mismatch");
    Grid gin(in.h, in.w, in_ch);
    for (int y = 0; y < in.h; ++y) {
        for (int x = 0; x < in.w; ++x) {
            auto go = g.cell(y, x);
            for (int o = 0; o < out_ch; ++o) bias.grad[o] += go[o];
            for (int ky = 0; ky < 3; ++ky) {
                const int sy = tap_source(y, (ky - 1) * dilation, in.h, padding);
                if (sy < 0) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int sx = tap_source(x, (kx - 1) * dilation, in.w, padding);
                    if (sx < 0) continue;
                    auto src = in.cell(sy, sx);
                    auto gsrc = gin.cell(sy, sx);
                    const std::size_t toff = static_cast<std::size_t>(ky * 3 + kx) * out_ch * in_ch;
                    const double* wt = weight.value.data() + toff;
                    double* gw = weight.grad.data() + toff;
                    for (int o = 0; o < out_ch; ++o) {
                        const double go_o = go[o];
                        if (go_o == 0.0) continue;
                        const double* wrow = wt + static_cast<std::size_t>(o) * in_ch;
                        double* gwrow = gw + static_cast<std::size_t>(o) * in_ch;
                        for (int i = 0; i < in_ch; ++i) {
                            gwrow[i] += go_o * src[i];
                            gsrc[i] += go_o * wrow[i];
                        }
                    }
                }
            }
        }
    }
    return gin;
}

Linear::Linear(std::string name, int in, int out)
    : weight(name + ".weight", static_cast<std::size_t>(in) * out),
      bias(name + ".bias", static_cast<std::size_t>(out)),
      in_ch(in),
      out_ch(out) {
    require(in > 0 && out > 0, "Linear: invalid shape");
}

void Linear::init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch));
    fill_uniform(weight, rng, bound);
    fill_uniform(bias, rng, bound);
}

Grid Linear::forward(const Grid& in) const {
    require(in.c == in_ch, "Linear::forward: channel mismatch");
    Grid out(in.h, in.w, out_ch);
    for (std::size_t c = 0; c < in.cells(); ++c) {
        auto src = in.cell(c);
        auto dst = out.cell(c);
        for (int o = 0; o < out_ch; ++o) {
            const double* wrow = weight.value.data() + static_cast<std::size_t>(o) * in_ch;
            double acc = bias.value[o];
            for (int i = 0; i < in_ch; ++i) acc += wrow[i] * src[i];
            dst[o] = acc;
        }
    }
    return out;
}

Grid Linear::backward(const Grid& in, const Grid& g) {
    require(in.c == in_ch && g.c == out_ch && g.cells() == in.cells(), "Linear::backward: shape mismatch");
    Grid gin(in.h, in.w, in_ch);
    for (std::size_t c = 0; c < in.cells(); ++c) {
        auto src = in.cell(c);
        auto go = g.cell(c);
        auto gi = gin.cell(c);
        for (int o = 0; o < out_ch; ++o) {
            const double go_o = go[o];
            bias.grad[o] += go_o;
            if (go_o == 0.0) continue;
            const double* wrow = weight.value.data() + static_cast<std::size_t>(o) * in_ch;
            double* gwrow = weight.grad.data() + static_cast<std::size_t>(o) * in_ch;
            for (int i = 0; i < in_ch; ++i) {
                gwrow[i] += go_o * src[i];
                gi[i] += go_o * wrow[i];
            }
        }
    }
    return gin;
}

}  // namespace snarm
