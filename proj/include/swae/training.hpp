#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "swae/data.hpp"
#include "swae/model.hpp"
#include "swae/rng.hpp"

namespace swae {

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double lambda_adv = 10.0;
    double w_scalar = 1.0;
    std::uint64_t seed = 0;
    // Off by default so that trainlog.csv is reproducible byte for byte.
    bool record_wall_time = false;

    void validate() const;
};

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamHyper from(const TrainConfig& cfg) { return {cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps}; }
};

struct AdamState {
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    std::uint64_t t = 0;
};

/// One Adam step over `params` using the matching entries of `grads`.
/// Moments are allocated on first use.
void adam_update(std::vector<Tensor>& params, const std::vector<std::vector<float>>& grads, AdamState& state,
                 const AdamHyper& hyper);

/// i.i.d. standard normal (n, d) batch.
Tensor sample_prior(std::size_t n, std::size_t d, Rng& rng);

struct StepLosses {
    double disc_loss = 0.0;
    double recon_image = 0.0;
    double recon_scalar = 0.0;
    double adv_loss = 0.0;
    double total = 0.0;
    // Largest | |z~| - 1 | over the generator inputs of this step.
    double gen_input_norm_dev = 0.0;
};

enum class StepPhase { kDiscriminator, kAutoencoder };

/// WAE-GAN optimizer state for one model. Phase 1 updates only the
/// discriminator on detached encodings vs prior draws; phase 2 updates only
/// the encoder and generator on reconstruction through the sphere projection
/// plus the adversarial term on the unprojected encodings.
class WaeGanTrainer {
public:
    WaeGanTrainer(Model<float>& model, const TrainConfig& cfg, std::uint64_t prior_seed);

    /// `images` (N, C, H, W) in [0, 1]; `scalars` (N, S), standardized.
    /// `after_phase` (optional) is invoked after each phase's update.
    StepLosses step(const Tensor& images, const Tensor& scalars,
                    const std::function<void(StepPhase)>& after_phase = {});

    const AdamState& disc_state() const { return disc_state_; }
    const AdamState& ae_state() const { return ae_state_; }

    /// Tags the current epoch/batch for error diagnostics.
    void set_position(std::size_t epoch, std::size_t batch) {
        epoch_ = epoch;
        batch_ = batch;
    }

private:
    void check_loss(const char* which, double value) const;

    Model<float>& model_;
    TrainConfig cfg_;
    Rng prior_rng_;
    AdamState disc_state_;
    AdamState ae_state_;
    std::size_t epoch_ = 0;
    std::size_t batch_ = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double recon_image_mse = 0.0;
    double recon_scalar_mse = 0.0;
    double adv_loss = 0.0;
    double disc_loss = 0.0;
    double wall_ms = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> records;

    std::string to_csv() const;
    void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
    Model<float> model;
    TrainLog log;
    ScalarStandardizer standardizer;
};

/// Batch boundaries for one epoch: consecutive slices of `batch_size`, with a
/// trailing batch of one merged into its predecessor.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Full training run. Seeds for init, shuffling and prior draws derive from
/// cfg.seed.
TrainResult train(const std::vector<SampleRecord>& train_set, const DataShape& shape, const ArchConfig& arch,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace swae
