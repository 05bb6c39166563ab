#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace swae {

/// One multimodal sample: a (C, H, W) image volume with values in [0, 1] and a
/// scalar vector whose first entry is the ion temperature.
struct SampleRecord {
    std::vector<float> image;
    std::vector<float> scalars;

    bool operator==(const SampleRecord&) const = default;
};

struct SyntheticConfig {
    std::size_t n_samples = 2000;
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t channels = 4;
    std::size_t n_scalars = 15;
    double constraint_slope = 1.0;
    double constraint_intercept = 0.0;
    double constraint_noise = 0.01;
    // Range of the hidden blob amplitude.
    double amplitude_min = 0.2;
    double amplitude_max = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct DatasetHeader {
    std::uint32_t n_samples = 0;
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t channels = 0;
    std::uint32_t n_scalars = 0;

    std::size_t image_size() const { return std::size_t(height) * width * channels; }
    bool operator==(const DatasetHeader&) const = default;
};

struct Dataset {
    DatasetHeader header;
    std::vector<SampleRecord> records;
};

inline constexpr std::uint32_t kJagsVersion = 1;
inline constexpr std::size_t kJagsHeaderBytes = 32;

/// Mean over all pixels and channels.
double image_temperature(std::span<const float> image);

/// Synthetic surrogate: each sample is a Gaussian blob with an oriented tail,
/// and scalars[0] = slope * image_temperature + intercept + N(0, noise^2).
Dataset generate_dataset(const SyntheticConfig& cfg);

/// `.jags` layout: "JAGS", version, n_samples, height, width, channels,
/// n_scalars, reserved (all u32 little-endian), then per record the image
/// (C, H, W) followed by the scalars, as little-endian f32.
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& path);

std::uint64_t jags_file_size(const DatasetHeader& header);

/// Seeded shuffle then split; train gets floor(n * train_fraction) records.
std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> split_dataset(
    const std::vector<SampleRecord>& records, double train_fraction, std::uint64_t seed);

/// Indices (into `records`) of the train and test parts, same rule as split_dataset.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double train_fraction,
                                                                            std::uint64_t seed);

}  // namespace swae
