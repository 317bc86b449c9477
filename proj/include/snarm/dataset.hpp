#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "snarm/config.hpp"

namespace snarm {

struct ImageEntry {
    std::filesystem::path path;
    std::string id;  // path relative to the dataset root, '/'-separated
    std::string category;
    bool train = true;
    int label = 0;           // 1 = anomalous
    std::string defect;      // "good" for normal images
    std::filesystem::path mask;  // empty when label == 0 or the mask is missing
    bool mask_missing = false;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<std::string> categories;
    std::vector<ImageEntry> entries;  // per category: train entries, then test entries, lexicographic
    std::vector<std::string> warnings;

    std::vector<const ImageEntry*> select(const std::string& category, bool train) const;
};

/// Reads `<cat>/train/good`, `<cat>/test/<defect>`, `<cat>/ground_truth/<defect>/<stem>_mask.pgm`.
/// Images are binary PPM/PGM. Throws DataError naming the offending path on a malformed layout.
DatasetManifest load_manifest(const std::filesystem::path& root);

/// Writes a procedural dataset in the layout above and returns its manifest. Category textures cycle
/// through striped, speckled and blobbed; defects are blocks, spots or scratches with exact masks
/// whose area lies in [defect_min_area, defect_max_area] of the image.
DatasetManifest generate_synthetic_dataset(const SynthSpec& spec, std::uint64_t seed,
                                           const std::filesystem::path& root);

/// Texture generator for one normal image, exposed for tests.
Grid synth_texture(const std::string& texture, int category_index, int size, std::uint64_t seed);

}  // namespace snarm
