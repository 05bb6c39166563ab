#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "swae/data.hpp"
#include "swae/ops.hpp"
#include "swae/rng.hpp"
#include "swae/tensor.hpp"

namespace swae {

/// One strided convolution of the encoder; the generator mirrors the ladder.
/// Stride 2 uses a 4x4 kernel, stride 1 a 3x3 kernel, both with padding 1.
struct ConvStage {
    std::size_t out_channels = 32;
    std::size_t stride = 2;

    bool operator==(const ConvStage&) const = default;
};

struct ArchConfig {
    std::size_t latent_dim = 16;
    std::vector<ConvStage> conv_ladder{{32, 2}, {64, 2}};
    std::size_t scalar_width = 64;
    std::size_t fusion_width = 128;
    std::vector<std::size_t> disc_widths{128, 128, 128};
    double leaky_slope = 0.2;

    bool operator==(const ArchConfig&) const = default;
};

/// Input geometry the networks are built for.
struct DataShape {
    std::size_t channels = 4;
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t n_scalars = 15;

    bool operator==(const DataShape&) const = default;
    static DataShape from_header(const DatasetHeader& h) { return {h.channels, h.height, h.width, h.n_scalars}; }
};

void validate_arch(const ArchConfig& arch, const DataShape& shape);

enum class ParamGroup { kEncoder, kGenerator, kDiscriminator };

template <typename T>
struct NamedParam {
    std::string name;
    ParamGroup group;
    BasicTensor<T> tensor;
};

/// Encoder, generator and latent discriminator with their parameters.
/// Parameters are registered in a fixed order that defines the checkpoint
/// layout.
template <typename T>
class Model {
public:
    Model(const ArchConfig& arch, const DataShape& shape, std::uint64_t seed);

    const ArchConfig& arch() const { return arch_; }
    const DataShape& shape() const { return shape_; }

    /// images (N, C, H, W), scalars (N, S) -> pre-projection latents (N, d).
    BasicTensor<T> encode(const BasicTensor<T>& images, const BasicTensor<T>& scalars, ops::NormMode mode);
    /// Latents (N, d), not necessarily unit norm -> (images (N, C, H, W), scalars (N, S)).
    std::pair<BasicTensor<T>, BasicTensor<T>> generate(const BasicTensor<T>& latent, ops::NormMode mode);
    /// Pre-projection latents or prior samples (N, d) -> probabilities (N, 1).
    BasicTensor<T> discriminate(const BasicTensor<T>& latent);

    std::vector<NamedParam<T>>& params() { return params_; }
    const std::vector<NamedParam<T>>& params() const { return params_; }
    std::vector<BasicTensor<T>> group(ParamGroup g) const;
    BasicTensor<T>& param(const std::string& name);
    const BasicTensor<T>& param(const std::string& name) const;

    /// Batch-norm running statistics, in registration order.
    std::vector<std::pair<std::string, BasicTensor<T>>> buffers() const;

    void zero_grads();
    void set_requires_grad(ParamGroup g, bool on);

    /// Values of every parameter and buffer, for bitwise comparisons.
    std::vector<std::pair<std::string, std::vector<T>>> state() const;

private:
    struct BnLayer {
        std::string name;
        ops::BatchNormState<T> state;
    };

    BasicTensor<T>& add_param(const std::string& name, ParamGroup g, Shape shape, std::size_t fan_in, Rng& rng,
                              bool zero);
    BnLayer& add_bn(const std::string& name, ParamGroup g, std::size_t channels);
    BasicTensor<T> apply_bn(std::size_t index, const BasicTensor<T>& x, ops::NormMode mode);

    ArchConfig arch_;
    DataShape shape_;
    std::vector<NamedParam<T>> params_;
    std::map<std::string, std::size_t> index_;
    std::vector<BnLayer> bns_;
    std::size_t enc_bn_count_ = 0;
};

/// Per-scalar z-scoring with training-set statistics. A scalar with zero
/// spread keeps unit scale.
struct ScalarStandardizer {
    std::vector<float> mean;
    std::vector<float> std;

    static ScalarStandardizer fit(const std::vector<SampleRecord>& records);
    std::vector<float> apply(std::span<const float> scalars) const;
    std::vector<float> invert(std::span<const float> standardized) const;
};

/// OLS line of the ion temperature against the image temperature.
struct ScientificLine {
    double slope = 0.0;
    double intercept = 0.0;
    double train_residual_std = 0.0;
    std::size_t n_fit = 0;
};

/// Everything a trained run persists.
struct Checkpoint {
    Model<float> model;
    ScalarStandardizer standardizer;
    std::optional<ScientificLine> line;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Loads with the architecture recorded in the file.
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Loads and checks every tensor against the layout `arch`/`shape` would
/// produce; the first mismatch raises ArchMismatchError naming the tensor.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ArchConfig& arch, const DataShape& shape);

/// Row-wise z / |z|. Rows with norm <= 1e-8 raise "degenerate latent at row i".
template <typename T>
BasicTensor<T> project_to_sphere(const BasicTensor<T>& z);

inline constexpr double kNormFloor = 1e-8;

/// Packs records into (N, C, H, W) images and (N, S) scalars. When a
/// standardizer is given the scalars are z-scored.
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> make_batch(const std::vector<const SampleRecord*>& records,
                                                     const DataShape& shape,
                                                     const ScalarStandardizer* standardizer);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace swae
