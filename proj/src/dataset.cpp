#include "snarm/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "snarm/error.hpp"
#include "snarm/image_io.hpp"
#include "snarm/rng.hpp"

namespace snarm {

namespace fs = std::filesystem;

std::vector<const ImageEntry*> DatasetManifest::select(const std::string& category, bool train) const {
    std::vector<const ImageEntry*> out;
    for (const auto& e : entries)
        if (e.category == category && e.train == train) out.push_back(&e);
    return out;
}

namespace {

bool is_image(const fs::path& p) {
    const auto ext = p.extension().string();
    return ext == ".ppm" || ext == ".pgm";
}

std::vector<fs::path> sorted_children(const fs::path& dir, bool directories) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (name.empty() || name[0] == '.') continue;
        if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::string rel_id(const fs::path& root, const fs::path& p) { return fs::relative(p, root).generic_string(); }

}  // namespace

DatasetManifest load_manifest(const fs::path& root) {
    if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root.string());
    DatasetManifest m;
    m.root = root;
    for (const auto& cat_dir : sorted_children(root, true)) {
        const std::string cat = cat_dir.filename().string();
        for (const auto& f : sorted_children(cat_dir, false)) {
            if (is_image(f)) throw DataError("malformed layout: image directly under category directory: " + f.string());
        }
        const fs::path good = cat_dir / "train" / "good";
        if (!fs::is_directory(good)) throw DataError("malformed layout: missing " + good.string());
        for (const auto& sub : sorted_children(cat_dir / "train", true)) {
            if (sub.filename() != "good") {
                throw DataError("malformed layout: training split may only hold good images: " + sub.string());
            }
        }
        m.categories.push_back(cat);
        for (const auto& f : sorted_children(good, false)) {
            if (!is_image(f)) continue;
            m.entries.push_back({f, rel_id(root, f), cat, true, 0, "good", {}, false});
        }
        const fs::path test = cat_dir / "test";
        if (!fs::is_directory(test)) continue;
        for (const auto& f : sorted_children(test, false)) {
            if (is_image(f)) throw DataError("malformed layout: test image outside a defect directory: " + f.string());
        }
        for (const auto& defect_dir : sorted_children(test, true)) {
            const std::string defect = defect_dir.filename().string();
            for (const auto& f : sorted_children(defect_dir, false)) {
                if (!is_image(f)) continue;
                ImageEntry e{f, rel_id(root, f), cat, false, defect == "good" ? 0 : 1, defect, {}, false};
                if (e.label) {
                    const fs::path mask = cat_dir / "ground_truth" / defect / (f.stem().string() + "_mask.pgm");
                    if (fs::is_regular_file(mask)) {
                        e.mask = mask;
                    } else {
                        e.mask_missing = true;
                        m.warnings.push_back("missing mask for " + e.id);
                    }
                }
                m.entries.push_back(std::move(e));
            }
        }
    }
    if (m.categories.empty()) throw DataError("dataset root holds no category directories: " + root.string());
    return m;
}

namespace {

constexpr std::array<const char*, 3> kTextures{"striped", "speckled", "blobbed"};
constexpr std::array<const char*, 3> kDefects{"block", "scratch", "spot"};

std::array<double, 3> category_color(int category_index) {
    Rng rng(substream_seed(0x5eed, "palette." + std::to_string(category_index)));
    std::uniform_real_distribution<double> u(0.3, 0.7);
    return {u(rng), u(rng), u(rng)};
}

Map defect_shape(const std::string& kind, int size, double min_area, double max_area, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double total = static_cast<double>(size) * size;
    const double target = (min_area + (max_area - min_area) * u(rng)) * total;
    const double cy = size * (0.2 + 0.6 * u(rng)), cx = size * (0.2 + 0.6 * u(rng));
    const double angle = u(rng) * M_PI;
    const double aspect = kind == "scratch" ? 6.0 + 4.0 * u(rng) : 0.6 + 0.8 * u(rng);
    double scale = 1.0;
    for (int attempt = 0; attempt < 200; ++attempt) {
        // half-extents of the shape along its own axes, sized so the area hits the target
        const double a = std::sqrt(target * aspect / (kind == "spot" ? M_PI : 4.0)) * scale;
        const double b = a / aspect;
        Map mask(size, size, 1);
        double area = 0;
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
                const double p = dx * std::cos(angle) + dy * std::sin(angle);
                const double q = -dx * std::sin(angle) + dy * std::cos(angle);
                const bool in = kind == "spot" ? (p * p) / (a * a) + (q * q) / (b * b) <= 1.0
                                               : std::abs(p) <= a && std::abs(q) <= b;
                if (in) {
                    mask.at(y, x, 0) = 1.0;
                    area += 1;
                }
            }
        }
        if (area >= min_area * total && area <= max_area * total) return mask;
        scale *= area < min_area * total ? 1.05 : 0.95;
    }
    throw Error("synthetic defect could not meet the configured area bounds");
}

void write_image_file(const fs::path& path, const Grid& rgb) {
    fs::create_directories(path.parent_path());
    write_ppm(path, rgb);
}

std::string numbered(int i) {
    std::ostringstream os;
    os << std::setw(3) << std::setfill('0') << i;
    return os.str();
}

}  // namespace

Grid synth_texture(const std::string& texture, int category_index, int size, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    const auto base = category_color(category_index);
    Grid img(size, size, 3);
    auto add = [&](int y, int x, double v) {
        for (int k = 0; k < 3; ++k) img.at(y, x, k) = std::clamp(base[k] + v * (k == category_index % 3 ? 1.0 : 0.6), 0.0, 1.0);
    };
    if (texture == "striped") {
        const double period = 6.0 + 2.0 * (category_index % 3);
        const double phase = u(rng) * 2 * M_PI;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) add(y, x, 0.15 * std::sin(2 * M_PI * (x + 0.5 * y) / period + phase) + 0.02 * n(rng));
    } else if (texture == "speckled") {
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) add(y, x, (u(rng) < 0.15 ? 0.15 : 0.0) + 0.03 * n(rng));
    } else if (texture == "blobbed") {
        std::vector<std::array<double, 3>> blobs;
        const int count = size * size / 256;
        for (int b = 0; b < count; ++b) blobs.push_back({u(rng) * size, u(rng) * size, 3.0 + 2.0 * u(rng)});
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                double v = 0;
                for (const auto& bl : blobs) {
                    const double d2 = (y - bl[0]) * (y - bl[0]) + (x - bl[1]) * (x - bl[1]);
                    v += std::exp(-d2 / (2 * bl[2] * bl[2]));
                }
                add(y, x, 0.15 * std::min(v, 1.5) + 0.02 * n(rng));
            }
        }
    } else {
        throw InvalidArgument("synth_texture: unknown texture '" + texture + "'");
    }
    return img;
}

DatasetManifest generate_synthetic_dataset(const SynthSpec& spec, std::uint64_t seed, const fs::path& root) {
    require(spec.categories >= 1 && spec.image_size >= 8, "generate_synthetic_dataset: invalid spec");
    require(spec.defect_min_area > 0 && spec.defect_min_area <= spec.defect_max_area && spec.defect_max_area < 1,
            "generate_synthetic_dataset: invalid defect area bounds");
    fs::create_directories(root);
    const int S = spec.image_size;
    for (int c = 0; c < spec.categories; ++c) {
        const std::string texture = kTextures[c % kTextures.size()];
        const std::string cat = c < static_cast<int>(kTextures.size()) ? texture : texture + std::to_string(c);
        const fs::path cat_dir = root / cat;
        fs::remove_all(cat_dir);
        for (int i = 0; i < spec.train_per_category; ++i) {
            const auto s = substream_seed(seed, "synth." + cat + ".train." + std::to_string(i));
            write_image_file(cat_dir / "train" / "good" / (numbered(i) + ".ppm"), synth_texture(texture, c, S, s));
        }
        Rng pick = substream(seed, "synth." + cat + ".defects");
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const int anomalous = static_cast<int>(std::lround(spec.anomaly_fraction * spec.test_per_category));
        std::map<std::string, int> counters;
        for (int i = 0; i < spec.test_per_category; ++i) {
            const auto s = substream_seed(seed, "synth." + cat + ".test." + std::to_string(i));
            Grid img = synth_texture(texture, c, S, s);
            if (i >= anomalous) {
                write_image_file(cat_dir / "test" / "good" / (numbered(counters["good"]++) + ".ppm"), img);
                continue;
            }
            const std::string kind = kDefects[pick() % kDefects.size()];
            const Map mask = defect_shape(kind, S, spec.defect_min_area, spec.defect_max_area, pick);
            std::array<double, 3> color{};
            for (double& v : color) v = u(pick) < 0.5 ? 0.05 + 0.15 * u(pick) : 0.8 + 0.15 * u(pick);
            for (int y = 0; y < S; ++y) {
                for (int x = 0; x < S; ++x) {
                    if (mask.at(y, x, 0) == 0.0) continue;
                    for (int k = 0; k < 3; ++k) img.at(y, x, k) = std::clamp(color[k] + 0.05 * (u(pick) - 0.5), 0.0, 1.0);
                }
            }
            const std::string stem = numbered(counters[kind]++);
            write_image_file(cat_dir / "test" / kind / (stem + ".ppm"), img);
            fs::create_directories(cat_dir / "ground_truth" / kind);
            write_mask(cat_dir / "ground_truth" / kind / (stem + "_mask.pgm"), mask);
        }
    }
    return load_manifest(root);
}

}  // namespace snarm
