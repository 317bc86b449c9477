#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "snarm/bank.hpp"
#include "snarm/grid.hpp"
#include "snarm/layers.hpp"
#include "snarm/navigator.hpp"

namespace snarm {

/// Selective state-space parameters for a d-channel sequence with n-dimensional state per channel.
///   Δ_t = softplus(w_Δ·x_t + b_Δ),  Ā_t = exp(Δ_t·A),  A = -exp(A_log)
///   h_t = Ā_t ⊙ h_{t-1} + Δ_t·(B x_t) x_t,   y_t = (C x_t)·h_t + D ⊙ x_t
struct SSMParams {
    int dim = 0;
    int state = 0;
    Param a_log;    // dim × state
    Param delta_w;  // dim
    Param delta_b;  // 1
    Param b_proj;   // state × dim
    Param c_proj;   // state × dim
    Param d_skip;   // dim

    SSMParams() = default;
    SSMParams(const std::string& name, int dim, int state);

    void init(Rng& rng);
    double a(int d, int k) const { return -std::exp(a_log.value[static_cast<std::size_t>(d) * state + k]); }
    void visit(const ParamVisitor& fn) {
        fn(a_log);
        fn(delta_w);
        fn(delta_b);
        fn(b_proj);
        fn(c_proj);
        fn(d_skip);
    }
};

/// Forward intermediates kept for the backward pass.
struct ScanCache {
    Grid x;                       // L × 1 × d
    std::vector<double> z;        // L pre-softplus Δ
    std::vector<double> delta;    // L
    std::vector<double> bv, cv;   // L × n
    std::vector<double> h;        // L × d × n
};

/// Sequential scan over a sequence stored as an L×1×d grid (h_0 = 0).
Grid selective_scan(const Grid& sequence, const SSMParams& params, ScanCache* cache = nullptr);
/// Accumulates parameter gradients and returns dLoss/dsequence.
Grid selective_scan_backward(const ScanCache& cache, const Grid& grad_out, SSMParams& params);

struct TokenGrid {
    Grid tokens;
    std::vector<std::uint8_t> mask;  // 1 = scanned
};

enum class Direction { right = 0, left = 1, down = 2, up = 3 };
inline constexpr std::array<Direction, 4> kDirections{Direction::right, Direction::left, Direction::down, Direction::up};

/// Cell visiting order for a scan direction. right: row-major; left: rows top to bottom, each row
/// right to left; down: column-major; up: columns left to right, each column bottom to top.
std::vector<std::size_t> scan_order(int h, int w, Direction dir);

/// Marks the ⌈keep_ratio·M⌉ tokens with the highest q_star (ties by lower index) for scanning.
TokenGrid navigate_tokens(const TokenGrid& grid, const WaypointMap& wm, double keep_ratio);

using DirectionalOutputs = std::array<Grid, 4>;

struct SMBDirection {
    Conv3x3 conv;
    SSMParams ssm;
    void visit(const ParamVisitor& fn) {
        conv.visit(fn);
        ssm.visit(fn);
    }
};

struct SMBCache {
    Grid input;
    std::array<Grid, 4> conv_out;
    std::array<std::vector<std::size_t>, 4> seq;  // selected cells in scan order
    std::array<ScanCache, 4> scan;
};

/// Self-Navigated Mamba Block: per direction, 3×3 conv (reflect) → scan of the selected tokens in
/// that direction's order → scatter back; unselected cells keep the conv output. The block input is
/// added to every directional output.
struct SMBBlock {
    std::array<SMBDirection, 4> dirs;

    SMBBlock() = default;
    SMBBlock(const std::string& name, int dim, int state);
    void init(Rng& rng);
    DirectionalOutputs forward(const Grid& x, const std::vector<std::uint8_t>& mask, SMBCache* cache = nullptr) const;
    Grid backward(const SMBCache& cache, const DirectionalOutputs& grad_out);
    void visit(const ParamVisitor& fn) {
        for (auto& d : dirs) d.visit(fn);
    }
};

struct SnmmConfig {
    int dim = 256;
    int state_dim = 16;
    int blocks = 2;
    double keep_ratio = 1.0;
};

/// Embedding layer followed by stacked SMBs; block k+1 consumes the mean of block k's four outputs.
struct SNMM {
    SnmmConfig config;
    Linear embed;
    std::vector<SMBBlock> blocks;

    SNMM() = default;
    SNMM(int in_channels, const SnmmConfig& cfg);
    void init(Rng& rng);
    void visit(const ParamVisitor& fn) {
        embed.visit(fn);
        for (auto& b : blocks) b.visit(fn);
    }
};

struct SnmmCache {
    Grid input;
    std::vector<std::uint8_t> mask;
    std::vector<SMBCache> blocks;
};

/// Linear projection of the residual grid into tokens with an all-true mask.
TokenGrid embed(const ResidualGrid& residual, const Linear& projection);

DirectionalOutputs smb_forward(const TokenGrid& grid, const SMBBlock& block);

DirectionalOutputs snmm_forward(const ResidualGrid& residual, const WaypointMap& wm, const SNMM& model,
                                SnmmCache* cache = nullptr);
/// Raw variant used during training where residuals may have been jittered.
DirectionalOutputs snmm_forward_raw(const Grid& residual, const WaypointMap& wm, const SNMM& model,
                                    SnmmCache* cache = nullptr);
void snmm_backward(const SnmmCache& cache, const DirectionalOutputs& grad_out, SNMM& model);

}  // namespace snarm
