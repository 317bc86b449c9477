#include "snarm/encoder.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "binio.hpp"
#include "snarm/error.hpp"
#include "snarm/rng.hpp"

namespace snarm {

void Image::validate() const {
    if (pixels.h <= 0 || pixels.w <= 0 || pixels.c != 3) {
        throw DataError("image '" + source_id + "' must be h×w×3 with positive dimensions");
    }
    for (double v : pixels.data) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            throw DataError("image '" + source_id + "' has a pixel outside [0,1]");
        }
    }
}

PixelRect PatchGeometry::rect(int gy, int gx) const {
    return PixelRect{static_cast<int>(static_cast<long long>(gy) * image_h / grid_h),
                     static_cast<int>(static_cast<long long>(gy + 1) * image_h / grid_h),
                     static_cast<int>(static_cast<long long>(gx) * image_w / grid_w),
                     static_cast<int>(static_cast<long long>(gx + 1) * image_w / grid_w)};
}

Image preprocess(const Image& image, int resize, int crop) {
    require(resize >= crop && crop > 0, "preprocess: need resize >= crop > 0");
    if (image.height() < 2 || image.width() < 2) {
        throw InvalidArgument("preprocess: input '" + image.source_id + "' is smaller than 2×2");
    }
    Grid resized = (image.height() == resize && image.width() == resize)
                       ? image.pixels
                       : resize_bilinear(image.pixels, resize, resize);
    const int off = (resize - crop) / 2;
    Image out{Grid(crop, crop, 3), image.source_id};
    for (int y = 0; y < crop; ++y) {
        for (int x = 0; x < crop; ++x) {
            auto src = resized.cell(y + off, x + off);
            auto dst = out.pixels.cell(y, x);
            for (int k = 0; k < 3; ++k) dst[k] = src[k];
        }
    }
    return out;
}

SyntheticEncoder::SyntheticEncoder(SyntheticEncoderOptions opts) : opts_(opts) {
    require(opts_.layers >= 2, "synthetic encoder needs at least 2 layers");
    require(opts_.channels >= 1 && opts_.patch_size >= 1, "synthetic encoder: invalid channels/patch size");
    const int in_dim = 3 * opts_.patch_size * opts_.patch_size;
    Rng rng = substream(opts_.seed, "encoder.synthetic");
    std::normal_distribution<double> normal(0.0, 1.0);
    // Gain keeps pre-activations near unit variance for centered pixels.
    const double scale = 2.0 / std::sqrt(static_cast<double>(in_dim));
    weights_.resize(opts_.layers);
    biases_.resize(opts_.layers);
    for (int l = 0; l < opts_.layers; ++l) {
        weights_[l].resize(static_cast<std::size_t>(opts_.channels) * in_dim);
        for (double& v : weights_[l]) v = normal(rng) * scale;
        biases_[l].resize(opts_.channels);
        for (double& v : biases_[l]) v = 0.1 * normal(rng);
    }
}

LayerFeatureStack SyntheticEncoder::encode(const Image& image) const {
    const int p = opts_.patch_size;
    const int gh = image.height() / p;
    const int gw = image.width() / p;
    if (gh < 1 || gw < 1) {
        throw DataError("synthetic encoder: image smaller than one patch");
    }
    const int in_dim = 3 * p * p;
    LayerFeatureStack stack;
    stack.geometry = PatchGeometry{gh * p, gw * p, gh, gw};
    stack.layers.assign(opts_.layers, Grid(gh, gw, opts_.channels));
    std::vector<double> patch(in_dim);
    for (int gy = 0; gy < gh; ++gy) {
        for (int gx = 0; gx < gw; ++gx) {
            std::size_t n = 0;
            for (int y = 0; y < p; ++y) {
                for (int x = 0; x < p; ++x) {
                    auto px = image.pixels.cell(gy * p + y, gx * p + x);
                    for (int k = 0; k < 3; ++k) patch[n++] = 2.0 * px[k] - 1.0;
                }
            }
            for (int l = 0; l < opts_.layers; ++l) {
                auto out = stack.layers[l].cell(gy, gx);
                const double* wrow = weights_[l].data();
                for (int ch = 0; ch < opts_.channels; ++ch, wrow += in_dim) {
                    double acc = biases_[l][ch];
                    for (int i = 0; i < in_dim; ++i) acc += wrow[i] * patch[i];
                    out[ch] = std::tanh(acc);
                }
            }
        }
    }
    return stack;
}

BackendRegistry::BackendRegistry() {
    factories_["synthetic"] = [](const EncoderConfig& cfg) {
        SyntheticEncoderOptions o;
        o.layers = cfg.layers;
        o.channels = cfg.channels;
        o.patch_size = cfg.patch_size;
        o.seed = cfg.seed;
        o.preprocess = PreprocessSpec{cfg.resize, cfg.crop};
        return std::make_unique<SyntheticEncoder>(o);
    };
}

BackendRegistry& BackendRegistry::instance() {
    static BackendRegistry registry;
    return registry;
}

void BackendRegistry::add(const std::string& name, BackendFactory factory) { factories_[name] = std::move(factory); }

bool BackendRegistry::contains(const std::string& name) const { return factories_.count(name) != 0; }

std::unique_ptr<EncoderBackend> BackendRegistry::create(const EncoderConfig& cfg) const {
    auto it = factories_.find(cfg.backend);
    if (it == factories_.end()) throw ConfigError("unknown encoder backend '" + cfg.backend + "'");
    return it->second(cfg);
}

LayerFeatureStack extract(const Image& image, const EncoderBackend& backend) {
    LayerFeatureStack stack;
    try {
        stack = backend.encode(image);
    } catch (const std::exception& e) {
        throw Error("encoder backend '" + backend.name() + "' failed: " + e.what());
    }
    if (stack.layers.size() < 2) throw Error("encoder backend '" + backend.name() + "' returned fewer than 2 layers");
    for (const Grid& g : stack.layers) {
        if (!g.same_shape(stack.layers.front())) {
            throw Error("encoder backend '" + backend.name() + "' returned layers of differing shape");
        }
    }
    return stack;
}

namespace {

Grid mean_pool_reflect(const Grid& in, int pool) {
    if (pool <= 1) return in;
    const int r = pool / 2;
    Grid out(in.h, in.w, in.c);
    const double inv = 1.0 / (pool * pool);
    for (int y = 0; y < in.h; ++y) {
        for (int x = 0; x < in.w; ++x) {
            auto dst = out.cell(y, x);
            for (int dy = -r; dy <= r; ++dy) {
                const int sy = reflect_index(y + dy, in.h);
                for (int dx = -r; dx <= r; ++dx) {
                    auto src = in.cell(sy, reflect_index(x + dx, in.w));
                    for (int k = 0; k < in.c; ++k) dst[k] += src[k];
                }
            }
            for (int k = 0; k < in.c; ++k) dst[k] *= inv;
        }
    }
    return out;
}

}  // namespace

PatchFeatureGrid fuse(const LayerFeatureStack& stack, int pool) {
    const auto L = stack.layers.size();
    require(L >= 2 && L % 2 == 0, "fuse: layer count must be even and at least 2");
    const Grid& first = stack.layers.front();
    for (const Grid& g : stack.layers) require(g.same_shape(first), "fuse: layers must share shape");
    const int d = first.c;
    const std::size_t half = L / 2;
    Grid cat(first.h, first.w, 2 * d);
    for (std::size_t i = 0; i < first.cells(); ++i) {
        auto dst = cat.cell(i);
        for (std::size_t l = 0; l < L; ++l) {
            auto src = stack.layers[l].cell(i);
            const int base = l < half ? 0 : d;
            for (int k = 0; k < d; ++k) dst[base + k] += src[k];
        }
        for (int k = 0; k < 2 * d; ++k) dst[k] /= static_cast<double>(half);
    }
    return PatchFeatureGrid{mean_pool_reflect(cat, pool), stack.geometry};
}

PatchFeatureGrid upsample_features(const PatchFeatureGrid& grid, int target_h, int target_w) {
    require(target_h >= grid.grid.h && target_w >= grid.grid.w, "upsample_features: target smaller than source");
    PatchFeatureGrid out;
    out.grid = (target_h == grid.grid.h && target_w == grid.grid.w) ? grid.grid
                                                                    : resize_bilinear(grid.grid, target_h, target_w);
    out.geometry = grid.geometry;
    out.geometry.grid_h = target_h;
    out.geometry.grid_w = target_w;
    return out;
}

std::vector<std::vector<double>> flatten_features(const PatchFeatureGrid& grid, int target_h, int target_w) {
    const PatchFeatureGrid up = upsample_features(grid, target_h, target_w);
    std::vector<std::vector<double>> out;
    out.reserve(up.grid.cells());
    for (std::size_t i = 0; i < up.grid.cells(); ++i) {
        auto c = up.grid.cell(i);
        out.emplace_back(c.begin(), c.end());
    }
    return out;
}

void write_feature_grid(std::ostream& os, const Grid& grid) {
    binio::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(grid.h));
    binio::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(grid.w));
    binio::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(grid.c));
    for (double v : grid.data) binio::put_f32(os, static_cast<float>(v));
}

Grid read_feature_grid(std::istream& is) {
    const auto h = binio::get_le<std::uint32_t>(is);
    const auto w = binio::get_le<std::uint32_t>(is);
    const auto d = binio::get_le<std::uint32_t>(is);
    if (static_cast<std::uint64_t>(h) * w * d > (1ull << 32)) throw DataError("feature grid header too large");
    Grid g(static_cast<int>(h), static_cast<int>(w), static_cast<int>(d));
    for (double& v : g.data) v = binio::get_f32(is);
    return g;
}

void quantize_to_float(Grid& grid) {
    for (double& v : grid.data) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace snarm
