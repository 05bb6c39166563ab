#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "swae/data.hpp"
#include "swae/errors.hpp"
#include "swae/rng.hpp"

namespace swae {

namespace {

constexpr std::array<double, 4> kChannelWeights{1.0, 0.8, 0.6, 0.4};
constexpr double kTailGain = 0.3;

struct Hidden {
    double amplitude, cx, cy, sigma, theta;
};

double channel_weight(std::size_t c) {
    // Channels past the fourth repeat the weight ladder.
    return kChannelWeights[c % kChannelWeights.size()];
}

/// Blob value at normalized coordinates (x, y).
double blob(const Hidden& h, double x, double y) {
    const double dx = x - h.cx, dy = y - h.cy;
    return std::exp(-(dx * dx + dy * dy) / (2.0 * h.sigma * h.sigma));
}

/// Elongated lobe centred 2 sigma from the blob centre along theta; 1.5 sigma
/// wide along theta, 0.5 sigma across.
double tail(const Hidden& h, double x, double y) {
    const double ux = std::cos(h.theta), uy = std::sin(h.theta);
    const double tx = h.cx + 2.0 * h.sigma * ux, ty = h.cy + 2.0 * h.sigma * uy;
    const double dx = x - tx, dy = y - ty;
    const double along = dx * ux + dy * uy;
    const double across = -dx * uy + dy * ux;
    const double sa = 1.5 * h.sigma, sc = 0.5 * h.sigma;
    return std::exp(-0.5 * (along * along / (sa * sa) + across * across / (sc * sc)));
}

std::vector<double> derived_scalars(const Hidden& h) {
    const double s = std::sin(h.theta), c = std::cos(h.theta);
    return {h.amplitude,       h.cx,          h.cy,         h.sigma,     s,
            c,                 h.amplitude * h.sigma, h.amplitude * h.amplitude, h.cx * h.cy,
            h.sigma * h.sigma, h.amplitude * s, h.amplitude * c, h.cx * h.cx, h.cy * h.cy};
}

}  // namespace

void SyntheticConfig::validate() const {
    if (n_samples < 1 || height < 1 || width < 1 || channels < 1 || n_scalars < 1)
        throw ConfigError("synthetic config: all counts must be >= 1");
    if (!(constraint_noise >= 0.0)) throw ConfigError("synthetic config: constraint_noise must be >= 0");
    if (!(amplitude_min <= amplitude_max)) throw ConfigError("synthetic config: amplitude_min > amplitude_max");
    if (n_samples > UINT32_MAX || height * width * channels > UINT32_MAX || n_scalars > UINT32_MAX)
        throw ConfigError("synthetic config: dimensions exceed the 32-bit file format");
}

double image_temperature(std::span<const float> image) {
    double acc = 0.0;
    for (float v : image) acc += v;
    return image.empty() ? 0.0 : acc / static_cast<double>(image.size());
}

Dataset generate_dataset(const SyntheticConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.header = {static_cast<std::uint32_t>(cfg.n_samples), static_cast<std::uint32_t>(cfg.height),
                 static_cast<std::uint32_t>(cfg.width), static_cast<std::uint32_t>(cfg.channels),
                 static_cast<std::uint32_t>(cfg.n_scalars)};
    ds.records.resize(cfg.n_samples);

    const std::size_t hw = cfg.height * cfg.width;
    for (std::size_t i = 0; i < cfg.n_samples; ++i) {
        // Per-sample substream, so samples can be produced in any order.
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
        Hidden h;
        h.amplitude = rng.uniform(cfg.amplitude_min, cfg.amplitude_max);
        h.cx = rng.uniform(0.3, 0.7);
        h.cy = rng.uniform(0.3, 0.7);
        h.sigma = rng.uniform(0.08, 0.2);
        h.theta = rng.uniform(0.0, 2.0 * std::numbers::pi);

        SampleRecord& rec = ds.records[i];
        rec.image.resize(cfg.channels * hw);
        for (std::size_t y = 0; y < cfg.height; ++y) {
            const double py = (static_cast<double>(y) + 0.5) / static_cast<double>(cfg.height);
            for (std::size_t x = 0; x < cfg.width; ++x) {
                const double px = (static_cast<double>(x) + 0.5) / static_cast<double>(cfg.width);
                const double base = blob(h, px, py) + kTailGain * tail(h, px, py);
                for (std::size_t c = 0; c < cfg.channels; ++c) {
                    const double v = h.amplitude * channel_weight(c) * base;
                    rec.image[c * hw + y * cfg.width + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
        }

        const double noise = cfg.constraint_noise > 0.0 ? cfg.constraint_noise * rng.normal() : 0.0;
        rec.scalars.resize(cfg.n_scalars);
        rec.scalars[0] = static_cast<float>(cfg.constraint_slope * image_temperature(rec.image) +
                                            cfg.constraint_intercept + noise);
        const auto extra = derived_scalars(h);
        for (std::size_t s = 1; s < cfg.n_scalars; ++s) rec.scalars[s] = static_cast<float>(extra[(s - 1) % extra.size()]);
    }
    return ds;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double train_fraction,
                                                                            std::uint64_t seed) {
    if (n == 0) throw ConfigError("split: empty input");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("split: train_fraction must be in (0, 1)");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Fisher-Yates with the portable generator.
    Rng rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction));
    std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    return {std::move(train), std::move(test)};
}

std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> split_dataset(
    const std::vector<SampleRecord>& records, double train_fraction, std::uint64_t seed) {
    auto [train_idx, test_idx] = split_indices(records.size(), train_fraction, seed);
    std::vector<SampleRecord> train, test;
    train.reserve(train_idx.size());
    test.reserve(test_idx.size());
    for (auto i : train_idx) train.push_back(records[i]);
    for (auto i : test_idx) test.push_back(records[i]);
    return {std::move(train), std::move(test)};
}

}  // namespace swae
