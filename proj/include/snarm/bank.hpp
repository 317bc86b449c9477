#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "snarm/encoder.hpp"
#include "snarm/grid.hpp"

namespace snarm {

struct PatchOrigin {
    std::uint32_t image = 0;
    std::uint32_t patch = 0;
    bool operator==(const PatchOrigin&) const = default;
};

/// Every patch descriptor of every normal training image, with provenance.
struct RawFeaturePool {
    int dim = 0;
    std::vector<double> vectors;  // size() × dim
    std::vector<PatchOrigin> origin;

    std::size_t size() const { return origin.size(); }
    std::span<const double> row(std::size_t i) const { return {vectors.data() + i * dim, static_cast<std::size_t>(dim)}; }
};

/// Coreset of the raw pool. Immutable once built; concurrent queries are safe.
struct PrototypeBank {
    int dim = 0;
    std::vector<double> prototypes;          // T × dim
    std::vector<std::uint32_t> selected;     // indices into the raw pool
    std::uint64_t seed = 0;

    std::size_t size() const { return selected.size(); }
    std::span<const double> row(std::size_t t) const {
        return {prototypes.data() + t * dim, static_cast<std::size_t>(dim)};
    }
    /// Training image a prototype came from, for pools built from equally sized grids.
    std::uint32_t origin_image(std::size_t t, std::size_t patches_per_image) const {
        return static_cast<std::uint32_t>(selected[t] / patches_per_image);
    }
    /// Content digest used to pair checkpoints with banks.
    std::uint64_t digest() const;
};

enum class ResidualKind { inter, intra, hybrid };

struct ResidualGrid {
    Grid values;
    int theta = 1;
    ResidualKind kind = ResidualKind::inter;
};

RawFeaturePool build_raw_pool(std::span<const PatchFeatureGrid> training_grids);

/// Greedy k-center (farthest point) selection. The first point is drawn from the seed.
PrototypeBank coreset_select(const RawFeaturePool& pool, std::size_t T, std::uint64_t seed);
/// Same as coreset_select with an explicit first point.
PrototypeBank coreset_select_from(const RawFeaturePool& pool, std::size_t T, std::size_t first, std::uint64_t seed = 0);

/// Largest distance from any pool vector to its nearest selected vector.
double covering_radius(const RawFeaturePool& pool, std::span<const std::uint32_t> selected);

struct Neighbor {
    std::size_t index = 0;
    double distance = 0.0;
};

double squared_distance(std::span<const double> a, std::span<const double> b);

Neighbor nearest(std::span<const double> query, const PrototypeBank& bank);

/// The k nearest prototypes by L2 distance, ties broken by lower index. Prototypes whose origin
/// image equals exclude_image are skipped (patches_per_image must then be set).
std::vector<Neighbor> topk_neighbors(std::span<const double> query, const PrototypeBank& bank, std::size_t k,
                                     long exclude_image = -1, std::size_t patches_per_image = 0);

std::vector<double> topk_reference(std::span<const double> query, const PrototypeBank& bank, std::size_t k,
                                   long exclude_image = -1, std::size_t patches_per_image = 0);

/// |query - reference|^theta elementwise, theta ∈ {1, 2}.
std::vector<double> inter_residual(std::span<const double> query, std::span<const double> reference, int theta);

struct InterMatchOptions {
    int theta = 1;
    std::size_t k = 3;
    long exclude_image = -1;
    std::size_t patches_per_image = 0;
};

ResidualGrid compute_inter_grid(const PatchFeatureGrid& grid, const PrototypeBank& bank, const InterMatchOptions& opt);
inline ResidualGrid compute_inter_grid(const PatchFeatureGrid& grid, const PrototypeBank& bank, int theta, std::size_t k) {
    return compute_inter_grid(grid, bank, InterMatchOptions{theta, k});
}

/// "SNRMBANK", version u16, T u32, d u32, seed u64, T×d float32, T u32 indices; little-endian.
void write_bank(std::ostream& os, const PrototypeBank& bank);
PrototypeBank read_bank(std::istream& is);
void save_bank(const std::filesystem::path& path, const PrototypeBank& bank);
PrototypeBank load_bank(const std::filesystem::path& path);

}  // namespace snarm
