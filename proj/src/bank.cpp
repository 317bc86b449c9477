#include "snarm/bank.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "binio.hpp"
#include "snarm/error.hpp"
#include "snarm/rng.hpp"

namespace snarm {

namespace {
constexpr char kBankMagic[8] = {'S', 'N', 'R', 'M', 'B', 'A', 'N', 'K'};
constexpr std::uint16_t kBankVersion = 1;
}  // namespace

std::uint64_t PrototypeBank::digest() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 0x100000001b3ull;
        }
    };
    mix(static_cast<std::uint64_t>(dim));
    mix(seed);
    for (double v : prototypes) mix(std::bit_cast<std::uint64_t>(v));
    for (auto s : selected) mix(s);
    return h;
}

RawFeaturePool build_raw_pool(std::span<const PatchFeatureGrid> grids) {
    require(!grids.empty(), "build_raw_pool: need at least one training grid");
    RawFeaturePool pool;
    pool.dim = grids.front().dim();
    std::size_t total = 0;
    for (const auto& g : grids) {
        if (g.dim() != pool.dim) throw InvalidArgument("build_raw_pool: inconsistent feature dimension");
        if (!g.grid.all_finite()) throw InvalidArgument("build_raw_pool: non-finite feature value");
        total += g.patches();
    }
    pool.vectors.reserve(total * pool.dim);
    pool.origin.reserve(total);
    for (std::size_t j = 0; j < grids.size(); ++j) {
        const Grid& g = grids[j].grid;
        pool.vectors.insert(pool.vectors.end(), g.data.begin(), g.data.end());
        for (std::size_t i = 0; i < g.cells(); ++i) {
            pool.origin.push_back(PatchOrigin{static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(i)});
        }
    }
    return pool;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

PrototypeBank coreset_select_from(const RawFeaturePool& pool, std::size_t T, std::size_t first, std::uint64_t seed) {
    const std::size_t n = pool.size();
    if (T < 1 || T > n) throw InvalidArgument("coreset_select: T must be in [1, pool size]");
    require(first < n, "coreset_select: first index out of range");
    PrototypeBank bank;
    bank.dim = pool.dim;
    bank.seed = seed;
    bank.selected.reserve(T);
    std::vector<double> mind(n, std::numeric_limits<double>::infinity());
    std::size_t next = first;
    for (std::size_t t = 0; t < T; ++t) {
        bank.selected.push_back(static_cast<std::uint32_t>(next));
        const auto c = pool.row(next);
        std::size_t best = 0;
        double best_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = squared_distance(pool.row(i), c);
            if (d < mind[i]) mind[i] = d;
            if (mind[i] > best_d) {
                best_d = mind[i];
                best = i;
            }
        }
        next = best;
    }
    bank.prototypes.reserve(T * pool.dim);
    for (auto s : bank.selected) {
        const auto r = pool.row(s);
        bank.prototypes.insert(bank.prototypes.end(), r.begin(), r.end());
    }
    return bank;
}

PrototypeBank coreset_select(const RawFeaturePool& pool, std::size_t T, std::uint64_t seed) {
    if (T < 1 || T > pool.size()) throw InvalidArgument("coreset_select: T must be in [1, pool size]");
    Rng rng = substream(seed, "bank.coreset");
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    return coreset_select_from(pool, T, pick(rng), seed);
}

double covering_radius(const RawFeaturePool& pool, std::span<const std::uint32_t> selected) {
    require(!selected.empty(), "covering_radius: empty selection");
    double radius = 0.0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        double m = std::numeric_limits<double>::infinity();
        for (auto s : selected) m = std::min(m, squared_distance(pool.row(i), pool.row(s)));
        radius = std::max(radius, m);
    }
    return std::sqrt(radius);
}

Neighbor nearest(std::span<const double> query, const PrototypeBank& bank) {
    require(bank.size() > 0, "nearest: empty bank");
    require(query.size() == static_cast<std::size_t>(bank.dim), "nearest: dimension mismatch");
    Neighbor best{0, std::numeric_limits<double>::infinity()};
    for (std::size_t t = 0; t < bank.size(); ++t) {
        const double d = squared_distance(query, bank.row(t));
        if (d < best.distance) best = Neighbor{t, d};
    }
    best.distance = std::sqrt(best.distance);
    return best;
}

std::vector<Neighbor> topk_neighbors(std::span<const double> query, const PrototypeBank& bank, std::size_t k,
                                     long exclude_image, std::size_t patches_per_image) {
    require(query.size() == static_cast<std::size_t>(bank.dim), "topk: dimension mismatch");
    if (k < 1 || k > bank.size()) throw InvalidArgument("topk: k must be in [1, T]");
    const bool excluding = exclude_image >= 0 && patches_per_image > 0;
    std::vector<Neighbor> cand;
    cand.reserve(bank.size());
    for (std::size_t t = 0; t < bank.size(); ++t) {
        if (excluding && bank.origin_image(t, patches_per_image) == static_cast<std::uint32_t>(exclude_image)) continue;
        cand.push_back(Neighbor{t, squared_distance(query, bank.row(t))});
    }
    if (cand.size() < k) throw InvalidArgument("topk: fewer than k prototypes after exclusion");
    auto less = [](const Neighbor& a, const Neighbor& b) {
        return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
    };
    std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(k), cand.end(), less);
    cand.resize(k);
    for (auto& c : cand) c.distance = std::sqrt(c.distance);
    return cand;
}

std::vector<double> topk_reference(std::span<const double> query, const PrototypeBank& bank, std::size_t k,
                                   long exclude_image, std::size_t patches_per_image) {
    const auto nn = topk_neighbors(query, bank, k, exclude_image, patches_per_image);
    std::vector<double> ref(bank.dim, 0.0);
    for (const auto& n : nn) {
        const auto r = bank.row(n.index);
        for (int i = 0; i < bank.dim; ++i) ref[i] += r[i];
    }
    if (k > 1) {
        for (double& v : ref) v /= static_cast<double>(k);
    }
    return ref;
}

std::vector<double> inter_residual(std::span<const double> query, std::span<const double> reference, int theta) {
    if (theta != 1 && theta != 2) throw InvalidArgument("residual exponent theta must be 1 or 2");
    require(query.size() == reference.size(), "inter_residual: dimension mismatch");
    std::vector<double> out(query.size());
    for (std::size_t i = 0; i < query.size(); ++i) {
        const double a = std::abs(query[i] - reference[i]);
        out[i] = theta == 1 ? a : a * a;
    }
    return out;
}

ResidualGrid compute_inter_grid(const PatchFeatureGrid& grid, const PrototypeBank& bank, const InterMatchOptions& opt) {
    if (opt.theta != 1 && opt.theta != 2) throw InvalidArgument("residual exponent theta must be 1 or 2");
    if (!grid.grid.all_finite()) throw InvalidArgument("compute_inter_grid: non-finite feature value");
    require(grid.dim() == bank.dim, "compute_inter_grid: feature/bank dimension mismatch");
    ResidualGrid out{Grid(grid.grid.h, grid.grid.w, grid.dim()), opt.theta, ResidualKind::inter};
    for (std::size_t i = 0; i < grid.patches(); ++i) {
        const auto f = grid.grid.cell(i);
        const auto ref = topk_reference(f, bank, opt.k, opt.exclude_image, opt.patches_per_image);
        const auto r = inter_residual(f, ref, opt.theta);
        std::copy(r.begin(), r.end(), out.values.cell(i).begin());
    }
    return out;
}

void write_bank(std::ostream& os, const PrototypeBank& bank) {
    os.write(kBankMagic, sizeof(kBankMagic));
    binio::put_le<std::uint16_t>(os, kBankVersion);
    binio::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(bank.size()));
    binio::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(bank.dim));
    binio::put_le<std::uint64_t>(os, bank.seed);
    for (double v : bank.prototypes) binio::put_f32(os, static_cast<float>(v));
    for (auto s : bank.selected) binio::put_le<std::uint32_t>(os, s);
    if (!os) throw DataError("failed writing bank");
}

PrototypeBank read_bank(std::istream& is) {
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kBankMagic, sizeof(magic)) != 0) {
        throw DataError("not a prototype bank file (bad magic)");
    }
    const auto version = binio::get_le<std::uint16_t>(is);
    if (version != kBankVersion) throw DataError("unsupported bank version " + std::to_string(version));
    const auto T = binio::get_le<std::uint32_t>(is);
    const auto d = binio::get_le<std::uint32_t>(is);
    PrototypeBank bank;
    bank.dim = static_cast<int>(d);
    bank.seed = binio::get_le<std::uint64_t>(is);
    bank.prototypes.resize(static_cast<std::size_t>(T) * d);
    for (double& v : bank.prototypes) v = binio::get_f32(is);
    bank.selected.resize(T);
    for (auto& s : bank.selected) s = binio::get_le<std::uint32_t>(is);
    return bank;
}

void save_bank(const std::filesystem::path& p, const PrototypeBank& bank) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary);
    if (!os) throw DataError("cannot write " + p.string());
    write_bank(os, bank);
}

PrototypeBank load_bank(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw DataError("cannot open bank " + p.string());
    return read_bank(is);
}

}  // namespace snarm
