#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "snarm/bank.hpp"
#include "snarm/encoder.hpp"
#include "snarm/layers.hpp"
#include "snarm/model.hpp"

namespace snarm {

struct LossConfig {
    double alpha_nav = 0.5;
    double gamma_nav = 4.0;
    double alpha_branch = 0.25;
    double gamma_branch = 4.0;
    double lr = 0.001;
    double weight_decay = 0.05;
    int cycle_length = 100;  // K
    double jitter_lambda = 30.0;

    void validate() const;
};

inline constexpr double kProbClamp = 1e-7;

/// −Σ[α(1−M)^γ Y log M + (1−α) M^γ (1−Y) log(1−M)], predictions clamped to [1e-7, 1−1e-7].
double focal_loss(const Map& pred, const Map& target, double alpha, double gamma);
/// dLoss/dpred (zero where the clamp is active).
Map focal_loss_grad(const Map& pred, const Map& target, double alpha, double gamma);

/// focal(Up(Q), Y; α_nav) + ¼·Σ_j focal(m[active·4 + j], Y; α_branch). branch_maps holds all 16 views.
double total_loss(const Map& nav_q, std::span<const Map> branch_maps, const Map& target, const LossConfig& cfg,
                  int active_branch);

/// f̃ = f + λ(‖f‖/d)ε and r̃ = r + λ(‖r‖/d)ε with the same ε.
std::pair<std::vector<double>, std::vector<double>> consistent_jitter(std::span<const double> f,
                                                                      std::span<const double> r, double lambda,
                                                                      std::span<const double> noise);

struct TrainSample {
    PatchFeatureGrid features;
    Map label;  // image resolution, {0,1}
    bool is_synthetic = false;
    long source_image = -1;  // index into the training pool, used to exclude self-matches
};

struct SynthesisOptions {
    double min_area = 0.01;
    double max_area = 0.20;
    double noise_min = 0.5;
    double noise_max = 1.5;
};

/// Feature-level pseudo-anomaly: a random rectangle or ellipse of patches is replaced by patches of a
/// donor grid (spatially shifted) plus scaled Gaussian noise, or by scaled noise alone when no donor
/// is given. The label is 1 on the pixels those patches cover.
TrainSample synthesize_anomaly(const TrainSample& normal, const PatchFeatureGrid* donor, std::uint64_t seed,
                               const SynthesisOptions& opt = {});

/// Adam with L2 weight decay added to the gradient; per-parameter step counts.
class Adam {
public:
    Adam(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(Param& p);

    struct Slot {
        std::vector<double> m, v;
        std::uint64_t t = 0;
    };
    std::map<std::string, Slot>& state() { return state_; }
    const std::map<std::string, Slot>& state() const { return state_; }
    double lr() const { return lr_; }

private:
    double lr_, wd_, b1_, b2_, eps_;
    std::map<std::string, Slot> state_;
};

struct TrainConfig {
    LossConfig loss;
    int cycles = 2;
    int batch = 4;
    double anomaly_prob = 0.5;
    double jitter_prob = 1.0;
    bool update_snmm = true;
    int probe_samples = 8;
    SynthesisOptions synthesis;
};

struct TrainLog {
    std::vector<double> step_loss;                   // mean batch loss per step
    /// (step, fixed-probe-set loss) every cycle_length steps and at the end, scored against the branch
    /// updated by the preceding step (branch 0 at step 0).
    std::vector<std::pair<int, double>> probe_loss;
};

/// Forward + backward for one sample against the active scale branch. Returns the total loss and
/// accumulates gradients into the navigator, SNMM and the active branch's four heads.
double sample_loss_and_grad(Model& model, const PrototypeBank& bank, const TrainSample& sample,
                            const TrainConfig& cfg, int active_branch, Rng* jitter_rng);

/// Loss only, no jitter, no gradients.
double sample_loss(const Model& model, const PrototypeBank& bank, const TrainSample& sample, const LossConfig& cfg,
                   int active_branch);

/// Optimizer and RNG substreams; everything needed to resume or audit a run.
struct TrainState {
    Adam optimizer{0.001, 0.05};
    std::uint64_t step = 0;
    Rng sample_rng;
    Rng synthesis_rng;
    Rng jitter_rng;
};

using StepCallback = std::function<void(int step, double loss)>;

/// Cycles over the four scale branches, cycle_length steps each; navigator (and SNMM unless disabled)
/// update every step, inactive branches stay frozen.
TrainLog cyclic_train(Model& model, const PrototypeBank& bank, std::span<const PatchFeatureGrid> normals,
                      const TrainConfig& cfg, std::uint64_t seed, TrainState* state = nullptr,
                      const StepCallback& on_step = {});

/// Fixed evaluation set: probe_samples/2 clean samples and the rest synthetic, drawn from a dedicated seed.
std::vector<TrainSample> make_probe_set(std::span<const PatchFeatureGrid> normals, int count, std::uint64_t seed,
                                        const SynthesisOptions& opt);

/// Label map for a clean sample.
Map empty_label(const PatchGeometry& g);

}  // namespace snarm
