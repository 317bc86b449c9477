#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snarm/bank.hpp"
#include "snarm/config.hpp"
#include "snarm/dataset.hpp"
#include "snarm/metrics.hpp"
#include "snarm/model.hpp"
#include "snarm/train.hpp"

namespace snarm {

/// preprocess → encode → fuse → float32 quantisation, with an optional on-disk cache keyed by the
/// encoder config and the image file's bytes. The cache directory defaults to $SNARM_CACHE.
class FeatureExtractor {
public:
    explicit FeatureExtractor(const EncoderConfig& cfg, std::optional<std::filesystem::path> cache_dir = std::nullopt);

    PatchFeatureGrid operator()(const std::filesystem::path& image_path) const;
    PatchFeatureGrid from_image(const Image& image) const;
    /// Brings a full-resolution mask onto the feature grid's pixel footprint (same resize/crop).
    Map prepare_mask(const Map& mask) const;

    const EncoderBackend& backend() const { return *backend_; }
    std::size_t cache_hits() const { return hits_; }

private:
    EncoderConfig cfg_;
    std::unique_ptr<EncoderBackend> backend_;
    std::optional<std::filesystem::path> cache_;
    std::uint64_t salt_ = 0;
    mutable std::size_t hits_ = 0;
};

struct TestItem {
    std::string id;
    std::string category;
    std::string defect;
    PatchFeatureGrid features;
    int label = 0;
    Map mask;  // empty for normal images and missing masks
    bool mask_missing = false;
};

struct CategoryFeatures {
    std::string name;
    std::vector<std::string> train_ids;
    std::vector<PatchFeatureGrid> train;
    std::vector<TestItem> test;
};

std::vector<CategoryFeatures> extract_dataset(const DatasetManifest& manifest, const FeatureExtractor& fx,
                                              bool with_test = true);

/// Training grids of the given categories in order, at most `limit` per category when limit > 0.
std::vector<PatchFeatureGrid> pool_training(std::span<const CategoryFeatures> cats, int limit = 0);

/// Coreset bank over the pooled training grids (global, or one coreset per category concatenated).
/// Selected indices always refer to the pooled order of pool_training(cats, limit).
PrototypeBank build_bank(const RunConfig& cfg, std::span<const CategoryFeatures> cats, int limit = 0);

struct TrainedModel {
    Model model;
    TrainState state;
    TrainLog log;
};

TrainedModel train_model(const RunConfig& cfg, const PrototypeBank& bank, std::span<const PatchFeatureGrid> normals,
                         const StepCallback& on_step = {});

struct ScoredItem {
    std::string id;
    std::string category;
    Map anomaly;
    double score = 0.0;
};

std::vector<ScoredItem> infer(const Model& model, const PrototypeBank& bank, std::span<const TestItem> items);

/// `<dir>/maps/<id>.pgm` (16-bit) and `<dir>/scores.csv` with header image_id,image_score.
void write_predictions(const std::filesystem::path& dir, std::span<const ScoredItem> items);

/// Overlap between the top-N scoring pixels (N = mask area, ties by index) and the mask.
double defect_iou(const Map& scores, const Map& mask);

struct CategoryReport {
    std::string name;
    MetricReport metrics;
    double mean_iou = 0.0;  // over anomalous images with masks
    std::size_t n_test = 0;
};

CategoryReport evaluate_category(const std::string& name, std::span<const TestItem> items,
                                 std::span<const ScoredItem> scored, const ProOptions& opt);

struct RunSummary {
    std::string label;  // "multi", "single:<cat>", "cross:<held-out>", "fewshot"
    std::vector<std::string> train_categories;
    std::vector<CategoryReport> categories;
    TrainLog log;
    std::size_t bank_size = 0;
    std::size_t pool_size = 0;
};

struct RunReport {
    Regime regime = Regime::multi;
    std::uint64_t config_hash = 0;
    std::vector<RunSummary> runs;
    MetricReport overall;  // mean over every evaluated category
    double overall_iou = 0.0;
    double seconds = 0.0;
};

struct RunHooks {
    std::function<void(const std::string& msg)> log;
    /// Called once per trained model, e.g. to write checkpoints and predictions.
    std::function<void(const RunSummary&, const TrainedModel&, const PrototypeBank&, std::span<const ScoredItem>)>
        on_model;
};

/// Throws ConfigError / DataError for regime-data mismatches before any training happens.
void validate_regime(const RunConfig& cfg, std::span<const CategoryFeatures> cats);

RunReport run_regime(const RunConfig& cfg, std::span<const CategoryFeatures> cats, const RunHooks& hooks = {});

/// Fills `overall` and `overall_iou` with the mean over every category of every run.
void summarize_overall(RunReport& report);

/// Evaluates a prediction directory laid out as write_predictions() writes it against a dataset's
/// test split. Masks whose size differs from the maps are passed through `fx->prepare_mask` when given.
std::vector<CategoryReport> evaluate_predictions(const DatasetManifest& manifest, const std::filesystem::path& pred_dir,
                                                 const ProOptions& opt, const FeatureExtractor* fx = nullptr);

std::string report_to_json(const RunReport& report);

}  // namespace snarm
