#include "snarm/snmm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "snarm/error.hpp"

namespace snarm {

SSMParams::SSMParams(const std::string& name, int d, int n)
    : dim(d),
      state(n),
      a_log(name + ".a_log", static_cast<std::size_t>(d) * n),
      delta_w(name + ".delta_w", static_cast<std::size_t>(d)),
      delta_b(name + ".delta_b", 1),
      b_proj(name + ".b_proj", static_cast<std::size_t>(n) * d),
      c_proj(name + ".c_proj", static_cast<std::size_t>(n) * d),
      d_skip(name + ".d_skip", static_cast<std::size_t>(d)) {
    require(d > 0 && n > 0, "SSMParams: dim and state must be positive");
}

void SSMParams::init(Rng& rng) {
    // S4D-real initialisation: A = -(k+1).
    for (int d = 0; d < dim; ++d) {
        for (int k = 0; k < state; ++k) a_log.value[static_cast<std::size_t>(d) * state + k] = std::log(k + 1.0);
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    fill_uniform(delta_w, rng, 0.1 * bound);
    delta_b.value[0] = softplus_inverse(1.0);
    fill_uniform(b_proj, rng, bound);
    fill_uniform(c_proj, rng, bound);
    std::fill(d_skip.value.begin(), d_skip.value.end(), 1.0);
}

Grid selective_scan(const Grid& seq, const SSMParams& p, ScanCache* cache) {
    require(seq.cells() > 0, "selective_scan: empty sequence");
    require(seq.c == p.dim, "selective_scan: channel mismatch");
    const int L = static_cast<int>(seq.cells());
    const int D = p.dim;
    const int N = p.state;
    Grid y(L, 1, D);
    std::vector<double> h(static_cast<std::size_t>(D) * N, 0.0);
    std::vector<double> a(static_cast<std::size_t>(D) * N);
    for (int d = 0; d < D; ++d) {
        for (int k = 0; k < N; ++k) a[static_cast<std::size_t>(d) * N + k] = p.a(d, k);
    }
    std::vector<double> bv(N), cv(N);
    if (cache) {
        cache->x = seq;
        cache->z.assign(L, 0.0);
        cache->delta.assign(L, 0.0);
        cache->bv.assign(static_cast<std::size_t>(L) * N, 0.0);
        cache->cv.assign(static_cast<std::size_t>(L) * N, 0.0);
        cache->h.assign(static_cast<std::size_t>(L) * D * N, 0.0);
    }
    for (int t = 0; t < L; ++t) {
        const auto x = seq.cell(static_cast<std::size_t>(t));
        double z = p.delta_b.value[0];
        for (int d = 0; d < D; ++d) z += p.delta_w.value[d] * x[d];
        const double delta = softplus(z);
        for (int k = 0; k < N; ++k) {
            const double* brow = p.b_proj.value.data() + static_cast<std::size_t>(k) * D;
            const double* crow = p.c_proj.value.data() + static_cast<std::size_t>(k) * D;
            double bs = 0.0, cs = 0.0;
            for (int d = 0; d < D; ++d) {
                bs += brow[d] * x[d];
                cs += crow[d] * x[d];
            }
            bv[k] = bs;
            cv[k] = cs;
        }
        auto out = y.cell(static_cast<std::size_t>(t));
        for (int d = 0; d < D; ++d) {
            double acc = 0.0;
            double* hd = h.data() + static_cast<std::size_t>(d) * N;
            const double* ad = a.data() + static_cast<std::size_t>(d) * N;
            for (int k = 0; k < N; ++k) {
                hd[k] = std::exp(delta * ad[k]) * hd[k] + delta * bv[k] * x[d];
                acc += cv[k] * hd[k];
            }
            out[d] = acc + p.d_skip.value[d] * x[d];
        }
        if (cache) {
            cache->z[t] = z;
            cache->delta[t] = delta;
            std::copy(bv.begin(), bv.end(), cache->bv.begin() + static_cast<long>(t) * N);
            std::copy(cv.begin(), cv.end(), cache->cv.begin() + static_cast<long>(t) * N);
            std::copy(h.begin(), h.end(), cache->h.begin() + static_cast<long>(t) * D * N);
        }
    }
    return y;
}

Grid selective_scan_backward(const ScanCache& cache, const Grid& gy, SSMParams& p) {
    const Grid& xs = cache.x;
    const int L = static_cast<int>(xs.cells());
    const int D = p.dim;
    const int N = p.state;
    require(gy.cells() == xs.cells() && gy.c == D, "selective_scan_backward: shape mismatch");
    Grid gx(L, 1, D);
    std::vector<double> a(static_cast<std::size_t>(D) * N);
    for (int d = 0; d < D; ++d) {
        for (int k = 0; k < N; ++k) a[static_cast<std::size_t>(d) * N + k] = p.a(d, k);
    }
    std::vector<double> ga(a.size(), 0.0);
    std::vector<double> carry(a.size(), 0.0);  // dL/dh_t flowing from step t+1
    std::vector<double> gbv(N), gcv(N);
    for (int t = L - 1; t >= 0; --t) {
        const auto x = xs.cell(static_cast<std::size_t>(t));
        const auto g = gy.cell(static_cast<std::size_t>(t));
        auto gxt = gx.cell(static_cast<std::size_t>(t));
        const double delta = cache.delta[t];
        const double* bv = cache.bv.data() + static_cast<std::size_t>(t) * N;
        const double* cv = cache.cv.data() + static_cast<std::size_t>(t) * N;
        const double* ht = cache.h.data() + static_cast<std::size_t>(t) * D * N;
        const double* hprev = t > 0 ? cache.h.data() + static_cast<std::size_t>(t - 1) * D * N : nullptr;
        std::fill(gbv.begin(), gbv.end(), 0.0);
        std::fill(gcv.begin(), gcv.end(), 0.0);
        double gdelta = 0.0;
        for (int d = 0; d < D; ++d) {
            p.d_skip.grad[d] += g[d] * x[d];
            gxt[d] += g[d] * p.d_skip.value[d];
            for (int k = 0; k < N; ++k) {
                const std::size_t idx = static_cast<std::size_t>(d) * N + k;
                gcv[k] += g[d] * ht[idx];
                const double gh = g[d] * cv[k] + carry[idx];
                const double abar = std::exp(delta * a[idx]);
                const double hp = hprev ? hprev[idx] : 0.0;
                const double gabar = gh * hp;
                gdelta += gabar * abar * a[idx] + gh * bv[k] * x[d];
                ga[idx] += gabar * abar * delta;
                gbv[k] += gh * delta * x[d];
                gxt[d] += gh * delta * bv[k];
                carry[idx] = gh * abar;
            }
        }
        const double gz = gdelta * sigmoid(cache.z[t]);
        p.delta_b.grad[0] += gz;
        for (int d = 0; d < D; ++d) {
            p.delta_w.grad[d] += gz * x[d];
            gxt[d] += gz * p.delta_w.value[d];
        }
        for (int k = 0; k < N; ++k) {
            double* gb = p.b_proj.grad.data() + static_cast<std::size_t>(k) * D;
            double* gc = p.c_proj.grad.data() + static_cast<std::size_t>(k) * D;
            const double* brow = p.b_proj.value.data() + static_cast<std::size_t>(k) * D;
            const double* crow = p.c_proj.value.data() + static_cast<std::size_t>(k) * D;
            for (int d = 0; d < D; ++d) {
                gb[d] += gbv[k] * x[d];
                gc[d] += gcv[k] * x[d];
                gxt[d] += gbv[k] * brow[d] + gcv[k] * crow[d];
            }
        }
    }
    // dA/dA_log = A.
    for (std::size_t i = 0; i < ga.size(); ++i) p.a_log.grad[i] += ga[i] * a[i];
    return gx;
}

std::vector<std::size_t> scan_order(int h, int w, Direction dir) {
    std::vector<std::size_t> order;
    order.reserve(static_cast<std::size_t>(h) * w);
    auto idx = [w](int y, int x) { return static_cast<std::size_t>(y) * w + x; };
    switch (dir) {
        case Direction::right:
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) order.push_back(idx(y, x));
            break;
        case Direction::left:
            for (int y = 0; y < h; ++y)
                for (int x = w - 1; x >= 0; --x) order.push_back(idx(y, x));
            break;
        case Direction::down:
            for (int x = 0; x < w; ++x)
                for (int y = 0; y < h; ++y) order.push_back(idx(y, x));
            break;
        case Direction::up:
            for (int x = 0; x < w; ++x)
                for (int y = h - 1; y >= 0; --y) order.push_back(idx(y, x));
            break;
    }
    return order;
}

TokenGrid navigate_tokens(const TokenGrid& grid, const WaypointMap& wm, double keep_ratio) {
    require(keep_ratio > 0.0 && keep_ratio <= 1.0, "navigate_tokens: keep_ratio must be in (0, 1]");
    const std::size_t M = grid.tokens.cells();
    require(wm.q_star.cells() == M, "navigate_tokens: waypoint map shape mismatch");
    auto keep = static_cast<std::size_t>(std::ceil(keep_ratio * static_cast<double>(M) - 1e-12));
    keep = std::clamp<std::size_t>(keep, 1, M);
    std::vector<std::size_t> order(M);
    std::iota(order.begin(), order.end(), 0);
    const auto& qs = wm.q_star.data;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return qs[a] > qs[b]; });
    TokenGrid out{grid.tokens, std::vector<std::uint8_t>(M, 0)};
    for (std::size_t j = 0; j < keep; ++j) out.mask[order[j]] = 1;
    return out;
}

SMBBlock::SMBBlock(const std::string& name, int dim, int state) {
    static constexpr const char* kNames[4] = {"right", "left", "down", "up"};
    for (int d = 0; d < 4; ++d) {
        const std::string base = name + "." + kNames[d];
        dirs[d].conv = Conv3x3(base + ".conv", dim, dim, 1, Padding::reflect);
        dirs[d].ssm = SSMParams(base + ".ssm", dim, state);
    }
}

void SMBBlock::init(Rng& rng) {
    for (auto& d : dirs) {
        d.conv.init(rng);
        d.ssm.init(rng);
    }
}

DirectionalOutputs SMBBlock::forward(const Grid& x, const std::vector<std::uint8_t>& mask, SMBCache* cache) const {
    require(mask.size() == x.cells(), "SMBBlock: mask size mismatch");
    DirectionalOutputs out;
    if (cache) cache->input = x;
    for (int d = 0; d < 4; ++d) {
        const SMBDirection& dir = dirs[d];
        Grid c = dir.conv.forward(x);
        std::vector<std::size_t> seq;
        for (std::size_t cell : scan_order(x.h, x.w, kDirections[d])) {
            if (mask[cell]) seq.push_back(cell);
        }
        Grid s(static_cast<int>(seq.size()), 1, x.c);
        for (std::size_t j = 0; j < seq.size(); ++j) {
            auto src = c.cell(seq[j]);
            std::copy(src.begin(), src.end(), s.cell(j).begin());
        }
        Grid y = selective_scan(s, dir.ssm, cache ? &cache->scan[d] : nullptr);
        Grid o = c;
        for (std::size_t j = 0; j < seq.size(); ++j) {
            auto src = y.cell(j);
            std::copy(src.begin(), src.end(), o.cell(seq[j]).begin());
        }
        for (std::size_t i = 0; i < o.size(); ++i) o.data[i] += x.data[i];
        out[d] = std::move(o);
        if (cache) {
            cache->conv_out[d] = std::move(c);
            cache->seq[d] = std::move(seq);
        }
    }
    return out;
}

Grid SMBBlock::backward(const SMBCache& cache, const DirectionalOutputs& g) {
    const Grid& x = cache.input;
    Grid gx(x.h, x.w, x.c);
    for (int d = 0; d < 4; ++d) {
        const Grid& go = g[d];
        for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += go.data[i];
        Grid gc = go;  // unselected cells pass straight through to the conv output
        const auto& seq = cache.seq[d];
        Grid gy(static_cast<int>(seq.size()), 1, x.c);
        for (std::size_t j = 0; j < seq.size(); ++j) {
            auto src = go.cell(seq[j]);
            std::copy(src.begin(), src.end(), gy.cell(j).begin());
        }
        Grid gs = selective_scan_backward(cache.scan[d], gy, dirs[d].ssm);
        for (std::size_t j = 0; j < seq.size(); ++j) {
            auto src = gs.cell(j);
            std::copy(src.begin(), src.end(), gc.cell(seq[j]).begin());
        }
        Grid gin = dirs[d].conv.backward(x, gc);
        for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += gin.data[i];
    }
    return gx;
}

SNMM::SNMM(int in_channels, const SnmmConfig& cfg) : config(cfg), embed("snmm.embed", in_channels, cfg.dim) {
    if (cfg.blocks != 2) throw ConfigError("snmm.blocks must be 2");
    require(cfg.dim > 0 && cfg.state_dim > 0, "SNMM: dim and state_dim must be positive");
    for (int b = 0; b < cfg.blocks; ++b) blocks.emplace_back("snmm.block" + std::to_string(b), cfg.dim, cfg.state_dim);
}

void SNMM::init(Rng& rng) {
    embed.init(rng);
    for (auto& b : blocks) b.init(rng);
}

TokenGrid embed(const ResidualGrid& residual, const Linear& projection) {
    if (residual.kind != ResidualKind::hybrid) throw InvalidArgument("embed: expects hybrid residuals");
    Grid t = projection.forward(residual.values);
    return TokenGrid{std::move(t), std::vector<std::uint8_t>(residual.values.cells(), 1)};
}

DirectionalOutputs smb_forward(const TokenGrid& grid, const SMBBlock& block) { return block.forward(grid.tokens, grid.mask); }

DirectionalOutputs snmm_forward_raw(const Grid& residual, const WaypointMap& wm, const SNMM& model, SnmmCache* cache) {
    Grid tokens = model.embed.forward(residual);
    TokenGrid tg = navigate_tokens(TokenGrid{std::move(tokens), {}}, wm, model.config.keep_ratio);
    if (cache) {
        cache->input = residual;
        cache->mask = tg.mask;
        cache->blocks.assign(model.blocks.size(), SMBCache{});
    }
    Grid x = std::move(tg.tokens);
    DirectionalOutputs out;
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        out = model.blocks[b].forward(x, tg.mask, cache ? &cache->blocks[b] : nullptr);
        if (b + 1 < model.blocks.size()) {
            x = Grid(x.h, x.w, x.c);
            for (const Grid& o : out) {
                for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += 0.25 * o.data[i];
            }
        }
    }
    return out;
}

DirectionalOutputs snmm_forward(const ResidualGrid& residual, const WaypointMap& wm, const SNMM& model, SnmmCache* cache) {
    if (residual.kind != ResidualKind::hybrid) throw InvalidArgument("snmm_forward: expects hybrid residuals");
    return snmm_forward_raw(residual.values, wm, model, cache);
}

void snmm_backward(const SnmmCache& cache, const DirectionalOutputs& grad_out, SNMM& model) {
    DirectionalOutputs g = grad_out;
    Grid gx;
    for (std::size_t b = model.blocks.size(); b-- > 0;) {
        gx = model.blocks[b].backward(cache.blocks[b], g);
        if (b > 0) {
            for (auto& gd : g) {
                gd = gx;
                for (double& v : gd.data) v *= 0.25;
            }
        }
    }
    model.embed.backward(cache.input, gx);
}

}  // namespace snarm
