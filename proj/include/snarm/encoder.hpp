#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "snarm/grid.hpp"

namespace snarm {

/// RGB image, h×w×3 with values in [0,1].
struct Image {
    Grid pixels;
    std::string source_id;

    int height() const { return pixels.h; }
    int width() const { return pixels.w; }
    /// Throws DataError unless dimensions are positive and every value is finite and in [0,1].
    void validate() const;
};

/// Pixel rectangle [y0, y1) × [x0, x1).
struct PixelRect {
    int y0, y1, x0, x1;
};

/// Maps a feature-grid cell to the image pixels it covers.
struct PatchGeometry {
    int image_h = 0;
    int image_w = 0;
    int grid_h = 0;
    int grid_w = 0;

    PixelRect rect(int gy, int gx) const;
};

struct LayerFeatureStack {
    std::vector<Grid> layers;
    PatchGeometry geometry;
};

struct PatchFeatureGrid {
    Grid grid;
    PatchGeometry geometry;

    int dim() const { return grid.c; }
    std::size_t patches() const { return grid.cells(); }
};

struct PreprocessSpec {
    int resize = 448;
    int crop = 392;
};

/// Bilinear resize to resize×resize followed by a centered crop×crop window.
Image preprocess(const Image& image, int resize, int crop);

/// Pluggable feature extractor. Implementations must be deterministic.
class EncoderBackend {
public:
    virtual ~EncoderBackend() = default;
    virtual std::string name() const = 0;
    virtual PreprocessSpec preprocess_spec() const = 0;
    virtual bool thread_safe() const { return true; }
    /// Takes preprocessed pixels, returns the L per-block feature grids.
    virtual LayerFeatureStack encode(const Image& image) const = 0;
};

struct SyntheticEncoderOptions {
    int layers = 8;
    int channels = 32;
    int patch_size = 14;
    std::uint64_t seed = 0;
    PreprocessSpec preprocess;
};

/// Fixed-seed random projection of non-overlapping patches through tanh, one projection per layer.
class SyntheticEncoder final : public EncoderBackend {
public:
    explicit SyntheticEncoder(SyntheticEncoderOptions opts);

    std::string name() const override { return "synthetic"; }
    PreprocessSpec preprocess_spec() const override { return opts_.preprocess; }
    LayerFeatureStack encode(const Image& image) const override;

    const SyntheticEncoderOptions& options() const { return opts_; }

private:
    SyntheticEncoderOptions opts_;
    std::vector<std::vector<double>> weights_;  // per layer: channels × (3·p·p)
    std::vector<std::vector<double>> biases_;   // per layer: channels
};

struct EncoderConfig {
    std::string backend = "synthetic";
    int layers = 8;
    int channels = 32;
    int resize = 448;
    int crop = 392;
    int patch_size = 14;
    int pool = 3;
    std::uint64_t seed = 0;
};

using BackendFactory = std::function<std::unique_ptr<EncoderBackend>(const EncoderConfig&)>;

/// Name → factory. "synthetic" is registered by default.
class BackendRegistry {
public:
    static BackendRegistry& instance();
    void add(const std::string& name, BackendFactory factory);
    bool contains(const std::string& name) const;
    std::unique_ptr<EncoderBackend> create(const EncoderConfig& cfg) const;

private:
    BackendRegistry();
    std::map<std::string, BackendFactory> factories_;
};

/// Runs the backend; failures are rethrown as Error carrying the backend name.
LayerFeatureStack extract(const Image& image, const EncoderBackend& backend);

/// Averages the first and second halves of the layers, concatenates them channel-wise,
/// then applies pool×pool mean pooling (stride 1, reflect padding). pool = 1 disables pooling.
PatchFeatureGrid fuse(const LayerFeatureStack& stack, int pool = 3);

/// Bilinear upsample of the feature grid to target_h×target_w.
PatchFeatureGrid upsample_features(const PatchFeatureGrid& grid, int target_h, int target_w);

/// Upsample then flatten row-major into target_h·target_w descriptors.
std::vector<std::vector<double>> flatten_features(const PatchFeatureGrid& grid, int target_h, int target_w);

/// Little-endian header (h, w, d as u32) followed by row-major float32.
void write_feature_grid(std::ostream& os, const Grid& grid);
Grid read_feature_grid(std::istream& is);

/// Rounds every value to the nearest float32 so the grid survives the binary container exactly.
void quantize_to_float(Grid& grid);

}  // namespace snarm
