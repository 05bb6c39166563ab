#include "swae/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "swae/errors.hpp"

namespace swae {

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ConfigError("train: adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("train: adam eps must be > 0");
    if (!(lambda_adv >= 0.0)) throw ConfigError("train: lambda_adv must be >= 0");
    if (!(w_scalar >= 0.0)) throw ConfigError("train: w_scalar must be >= 0");
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2 (batch norm)");
}

void adam_update(std::vector<Tensor>& params, const std::vector<std::vector<float>>& grads, AdamState& state,
                 const AdamHyper& hyper) {
    if (grads.size() != params.size())
        throw ShapeError("adam_update: " + std::to_string(params.size()) + " params but " +
                         std::to_string(grads.size()) + " gradients");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.numel(), 0.0f);
            state.v.emplace_back(p.numel(), 0.0f);
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam_update: optimizer state has a different param count");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].size() != params[i].numel() || state.m[i].size() != params[i].numel())
            throw ShapeError("adam_update: gradient shape mismatch for parameter " + std::to_string(i) + " " +
                             shape_str(params[i].shape()));
    }

    state.t += 1;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.t));
    const double b1 = hyper.beta1, b2 = hyper.beta2;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto theta = params[i].data();
        auto& m = state.m[i];
        auto& v = state.v[i];
        const auto& g = grads[i];
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double gj = g[j];
            m[j] = static_cast<float>(b1 * m[j] + (1.0 - b1) * gj);
            v[j] = static_cast<float>(b2 * v[j] + (1.0 - b2) * gj * gj);
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            theta[j] = static_cast<float>(theta[j] - hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps));
        }
    }
}

Tensor sample_prior(std::size_t n, std::size_t d, Rng& rng) {
    if (n < 1 || d < 1) throw ShapeError("sample_prior: n and d must be >= 1");
    std::vector<float> v(n * d);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return Tensor(Shape{n, d}, std::move(v));
}

namespace {

std::vector<std::vector<float>> collect_grads(const std::vector<Tensor>& params) {
    std::vector<std::vector<float>> grads;
    grads.reserve(params.size());
    for (const auto& p : params) grads.push_back(p.grad());
    return grads;
}

}  // namespace

WaeGanTrainer::WaeGanTrainer(Model<float>& model, const TrainConfig& cfg, std::uint64_t prior_seed)
    : model_(model), cfg_(cfg), prior_rng_(prior_seed) {
    cfg_.validate();
}

void WaeGanTrainer::check_loss(const char* which, double value) const {
    if (!std::isfinite(value))
        throw NumericalError("non-finite " + std::string(which) + " loss at epoch " + std::to_string(epoch_) +
                             ", batch " + std::to_string(batch_));
}

StepLosses WaeGanTrainer::step(const Tensor& images, const Tensor& scalars,
                               const std::function<void(StepPhase)>& after_phase) {
    const std::size_t n = images.dim(0);
    const auto hyper = AdamHyper::from(cfg_);
    StepLosses out;

    model_.zero_grads();
    // One encoding serves both phases: phase 1 sees it detached.
    const Tensor z = model_.encode(images, scalars, ops::NormMode::kTrain);

    // Phase 1: discriminator, prior draws are "real", encodings "fake".
    {
        const Tensor z_real = sample_prior(n, model_.arch().latent_dim, prior_rng_);
        const Tensor z_fake = z.detach();
        const auto ones = Tensor::full(Shape{n, 1}, 1.0f);
        const auto zeros = Tensor::zeros(Shape{n, 1});
        const auto disc_loss = ops::add(ops::bce_loss(model_.discriminate(z_real), ones),
                                        ops::bce_loss(model_.discriminate(z_fake), zeros));
        out.disc_loss = disc_loss.item();
        check_loss("discriminator", out.disc_loss);
        backward(disc_loss);
        auto disc = model_.group(ParamGroup::kDiscriminator);
        adam_update(disc, collect_grads(disc), disc_state_, hyper);
        if (after_phase) after_phase(StepPhase::kDiscriminator);
    }

    // Phase 2: encoder + generator. The discriminator is frozen.
    model_.zero_grads();
    model_.set_requires_grad(ParamGroup::kDiscriminator, false);
    try {
        const Tensor z_sphere = project_to_sphere(z);
        for (std::size_t r = 0; r < n; ++r) {
            double sq = 0.0;
            for (std::size_t j = 0; j < z_sphere.dim(1); ++j) {
                const double v = z_sphere.data()[r * z_sphere.dim(1) + j];
                sq += v * v;
            }
            out.gen_input_norm_dev = std::max(out.gen_input_norm_dev, std::abs(std::sqrt(sq) - 1.0));
        }
        const auto [img_hat, sc_hat] = model_.generate(z_sphere, ops::NormMode::kTrain);
        const auto recon_img = ops::mse_loss(img_hat, images);
        const auto recon_sc = ops::mse_loss(sc_hat, scalars);
        const auto ones = Tensor::full(Shape{n, 1}, 1.0f);
        const auto adv = ops::bce_loss(model_.discriminate(z), ones);
        const auto total = ops::add(ops::add(recon_img, ops::scale(recon_sc, static_cast<float>(cfg_.w_scalar))),
                                    ops::scale(adv, static_cast<float>(cfg_.lambda_adv)));
        out.recon_image = recon_img.item();
        out.recon_scalar = recon_sc.item();
        out.adv_loss = adv.item();
        out.total = total.item();
        check_loss("image reconstruction", out.recon_image);
        check_loss("scalar reconstruction", out.recon_scalar);
        check_loss("adversarial", out.adv_loss);
        backward(total);
    } catch (...) {
        model_.set_requires_grad(ParamGroup::kDiscriminator, true);
        throw;
    }
    model_.set_requires_grad(ParamGroup::kDiscriminator, true);

    auto ae = model_.group(ParamGroup::kEncoder);
    for (auto& t : model_.group(ParamGroup::kGenerator)) ae.push_back(t);
    adam_update(ae, collect_grads(ae), ae_state_, hyper);
    model_.zero_grads();
    if (after_phase) after_phase(StepPhase::kAutoencoder);
    return out;
}

std::string TrainLog::to_csv() const {
    std::ostringstream os;
    os << "epoch,recon_image_mse,recon_scalar_mse,adv_loss,disc_loss,wall_ms\n";
    os.precision(9);
    for (const auto& r : records) {
        os << r.epoch << ',' << r.recon_image_mse << ',' << r.recon_scalar_mse << ',' << r.adv_loss << ','
           << r.disc_loss << ',' << r.wall_ms << '\n';
    }
    return os.str();
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << to_csv();
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t start = 0; start < n; start += batch_size) out.emplace_back(start, std::min(n, start + batch_size));
    if (out.size() > 1 && out.back().second - out.back().first == 1) {
        out[out.size() - 2].second = n;
        out.pop_back();
    }
    return out;
}

TrainResult train(const std::vector<SampleRecord>& train_set, const DataShape& shape, const ArchConfig& arch,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
    if (train_set.empty()) throw ConfigError("train: empty dataset");
    if (train_set.size() < 2) throw ConfigError("train: batch norm needs at least 2 training samples");
    cfg.validate();

    TrainResult result{Model<float>(arch, shape, derive_seed(cfg.seed, "init")), {},
                       ScalarStandardizer::fit(train_set)};
    WaeGanTrainer trainer(result.model, cfg, derive_seed(cfg.seed, "prior"));
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto ranges = batch_ranges(order.size(), cfg.batch_size);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.below(i + 1)]);

        EpochRecord rec;
        rec.epoch = epoch;
        for (std::size_t b = 0; b < ranges.size(); ++b) {
            std::vector<const SampleRecord*> batch;
            for (std::size_t k = ranges[b].first; k < ranges[b].second; ++k) batch.push_back(&train_set[order[k]]);
            const auto [images, scalars] = make_batch<float>(batch, shape, &result.standardizer);
            trainer.set_position(epoch, b);
            const auto losses = trainer.step(images, scalars);
            rec.recon_image_mse += losses.recon_image;
            rec.recon_scalar_mse += losses.recon_scalar;
            rec.adv_loss += losses.adv_loss;
            rec.disc_loss += losses.disc_loss;
        }
        const double nb = static_cast<double>(ranges.size());
        rec.recon_image_mse /= nb;
        rec.recon_scalar_mse /= nb;
        rec.adv_loss /= nb;
        rec.disc_loss /= nb;
        if (cfg.record_wall_time) {
            rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        }
        result.log.records.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return result;
}

}  // namespace swae
