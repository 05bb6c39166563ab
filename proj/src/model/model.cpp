#include "swae/model.hpp"

#include <cmath>
#include <numeric>

#include "swae/errors.hpp"

namespace swae {

namespace {

ops::ConvGeometry stage_geometry(std::size_t stride) { return {stride, 1}; }
std::size_t stage_kernel(std::size_t stride) { return stride == 1 ? 3 : 4; }

std::string idx(std::size_t i) { return std::to_string(i + 1); }

}  // namespace

void validate_arch(const ArchConfig& arch, const DataShape& shape) {
    if (arch.latent_dim < 1 || arch.scalar_width < 1 || arch.fusion_width < 1)
        throw ConfigError("arch: widths must be >= 1");
    if (shape.channels < 1 || shape.height < 1 || shape.width < 1 || shape.n_scalars < 1)
        throw ConfigError("arch: data shape has a zero dimension");
    if (arch.conv_ladder.empty()) throw ConfigError("arch: conv ladder is empty");
    std::size_t h = shape.height, w = shape.width;
    for (const auto& s : arch.conv_ladder) {
        if (s.out_channels < 1) throw ConfigError("arch: conv stage with zero channels");
        if (s.stride != 1 && s.stride != 2) throw ConfigError("arch: conv stride must be 1 or 2");
        if (h % s.stride != 0 || w % s.stride != 0)
            throw ConfigError("arch: image size " + std::to_string(shape.height) + "x" + std::to_string(shape.width) +
                              " is not divisible by the conv ladder strides");
        h /= s.stride;
        w /= s.stride;
    }
    if (h < 1 || w < 1) throw ConfigError("arch: conv ladder reduces the image below 1x1");
    for (auto d : arch.disc_widths)
        if (d < 1) throw ConfigError("arch: discriminator widths must be >= 1");
    if (!(arch.leaky_slope >= 0.0)) throw ConfigError("arch: leaky slope must be >= 0");
}

template <typename T>
BasicTensor<T>& Model<T>::add_param(const std::string& name, ParamGroup g, Shape shape, std::size_t fan_in, Rng& rng,
                                    bool zero) {
    const std::size_t n = numel_of(shape);
    std::vector<T> values(n, T(0));
    if (!zero) {
        // He-style uniform bound for ReLU-family activations.
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
    }
    index_[name] = params_.size();
    params_.push_back({name, g, BasicTensor<T>(std::move(shape), std::move(values), true)});
    return params_.back().tensor;
}

template <typename T>
typename Model<T>::BnLayer& Model<T>::add_bn(const std::string& name, ParamGroup g, std::size_t channels) {
    auto add_const = [&](const std::string& suffix, T value) {
        index_[name + suffix] = params_.size();
        params_.push_back({name + suffix, g, BasicTensor<T>::full(Shape{channels}, value, true)});
    };
    add_const(".gamma", T(1));
    add_const(".beta", T(0));
    BnLayer layer{name, {}};
    layer.state.running_mean = BasicTensor<T>::zeros(Shape{channels});
    layer.state.running_var = BasicTensor<T>::full(Shape{channels}, T(1));
    bns_.push_back(std::move(layer));
    return bns_.back();
}

template <typename T>
Model<T>::Model(const ArchConfig& arch, const DataShape& shape, std::uint64_t seed) : arch_(arch), shape_(shape) {
    validate_arch(arch, shape);
    Rng rng(seed);
    const auto& ladder = arch.conv_ladder;
    const std::size_t d = arch.latent_dim;

    // Encoder.
    std::size_t ch = shape.channels, h = shape.height, w = shape.width;
    for (std::size_t i = 0; i < ladder.size(); ++i) {
        const std::size_t k = stage_kernel(ladder[i].stride);
        add_param("enc.conv" + idx(i) + ".w", ParamGroup::kEncoder, {ladder[i].out_channels, ch, k, k}, ch * k * k, rng,
                  false);
        add_param("enc.conv" + idx(i) + ".b", ParamGroup::kEncoder, {ladder[i].out_channels}, 1, rng, true);
        add_bn("enc.bn" + idx(i), ParamGroup::kEncoder, ladder[i].out_channels);
        ch = ladder[i].out_channels;
        h /= ladder[i].stride;
        w /= ladder[i].stride;
    }
    enc_bn_count_ = bns_.size();
    const std::size_t img_features = ch * h * w;
    add_param("enc.scalar.w", ParamGroup::kEncoder, {shape.n_scalars, arch.scalar_width}, shape.n_scalars, rng, false);
    add_param("enc.scalar.b", ParamGroup::kEncoder, {arch.scalar_width}, 1, rng, true);
    const std::size_t fused_in = img_features + arch.scalar_width;
    add_param("enc.fuse.w", ParamGroup::kEncoder, {fused_in, arch.fusion_width}, fused_in, rng, false);
    add_param("enc.fuse.b", ParamGroup::kEncoder, {arch.fusion_width}, 1, rng, true);
    add_param("enc.latent.w", ParamGroup::kEncoder, {arch.fusion_width, d}, arch.fusion_width, rng, false);
    add_param("enc.latent.b", ParamGroup::kEncoder, {d}, 1, rng, true);

    // Generator mirrors the ladder: dense -> (C_last, h, w) -> transposed convs.
    add_param("gen.dense.w", ParamGroup::kGenerator, {d, img_features}, d, rng, false);
    add_param("gen.dense.b", ParamGroup::kGenerator, {img_features}, 1, rng, true);
    for (std::size_t j = 0; j < ladder.size(); ++j) {
        const std::size_t i = ladder.size() - 1 - j;
        const std::size_t out_ch = i > 0 ? ladder[i - 1].out_channels : ladder[0].out_channels;
        const std::size_t s = ladder[i].stride;
        const std::size_t k = stage_kernel(s);
        add_param("gen.deconv" + idx(j) + ".w", ParamGroup::kGenerator, {ch, out_ch, k, k},
                  std::max<std::size_t>(1, ch * k * k / (s * s)), rng, false);
        add_param("gen.deconv" + idx(j) + ".b", ParamGroup::kGenerator, {out_ch}, 1, rng, true);
        add_bn("gen.bn" + idx(j), ParamGroup::kGenerator, out_ch);
        ch = out_ch;
    }
    add_param("gen.out.w", ParamGroup::kGenerator, {shape.channels, ch, 1, 1}, ch, rng, false);
    add_param("gen.out.b", ParamGroup::kGenerator, {shape.channels}, 1, rng, true);
    add_param("gen.scalar1.w", ParamGroup::kGenerator, {d, arch.scalar_width}, d, rng, false);
    add_param("gen.scalar1.b", ParamGroup::kGenerator, {arch.scalar_width}, 1, rng, true);
    add_param("gen.scalar2.w", ParamGroup::kGenerator, {arch.scalar_width, shape.n_scalars}, arch.scalar_width, rng,
              false);
    add_param("gen.scalar2.b", ParamGroup::kGenerator, {shape.n_scalars}, 1, rng, true);

    // Discriminator on Euclidean latents.
    std::size_t in = d;
    for (std::size_t i = 0; i < arch.disc_widths.size(); ++i) {
        add_param("disc.fc" + idx(i) + ".w", ParamGroup::kDiscriminator, {in, arch.disc_widths[i]}, in, rng, false);
        add_param("disc.fc" + idx(i) + ".b", ParamGroup::kDiscriminator, {arch.disc_widths[i]}, 1, rng, true);
        in = arch.disc_widths[i];
    }
    add_param("disc.out.w", ParamGroup::kDiscriminator, {in, 1}, in, rng, false);
    add_param("disc.out.b", ParamGroup::kDiscriminator, {1}, 1, rng, true);
}

template <typename T>
BasicTensor<T>& Model<T>::param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("model: no parameter named " + name);
    return params_[it->second].tensor;
}

template <typename T>
const BasicTensor<T>& Model<T>::param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("model: no parameter named " + name);
    return params_[it->second].tensor;
}

template <typename T>
std::vector<BasicTensor<T>> Model<T>::group(ParamGroup g) const {
    std::vector<BasicTensor<T>> out;
    for (const auto& p : params_)
        if (p.group == g) out.push_back(p.tensor);
    return out;
}

template <typename T>
std::vector<std::pair<std::string, BasicTensor<T>>> Model<T>::buffers() const {
    std::vector<std::pair<std::string, BasicTensor<T>>> out;
    for (const auto& bn : bns_) {
        out.emplace_back(bn.name + ".running_mean", bn.state.running_mean);
        out.emplace_back(bn.name + ".running_var", bn.state.running_var);
    }
    return out;
}

template <typename T>
void Model<T>::zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
void Model<T>::set_requires_grad(ParamGroup g, bool on) {
    for (auto& p : params_)
        if (p.group == g) p.tensor.set_requires_grad(on);
}

template <typename T>
std::vector<std::pair<std::string, std::vector<T>>> Model<T>::state() const {
    std::vector<std::pair<std::string, std::vector<T>>> out;
    for (const auto& p : params_) out.emplace_back(p.name, p.tensor.values());
    for (const auto& [name, t] : buffers()) out.emplace_back(name, t.values());
    return out;
}

template <typename T>
BasicTensor<T> Model<T>::apply_bn(std::size_t i, const BasicTensor<T>& x, ops::NormMode mode) {
    auto& bn = bns_[i];
    return ops::batch_norm(x, param(bn.name + ".gamma"), param(bn.name + ".beta"), bn.state, mode);
}

template <typename T>
BasicTensor<T> Model<T>::encode(const BasicTensor<T>& images, const BasicTensor<T>& scalars, ops::NormMode mode) {
    const Shape img_shape{images.rank() == 4 ? images.dim(0) : 0, shape_.channels, shape_.height, shape_.width};
    if (images.shape() != img_shape)
        throw ShapeError("encode: expected images " + shape_str(img_shape) + ", got " + shape_str(images.shape()));
    if (scalars.rank() != 2 || scalars.dim(0) != images.dim(0) || scalars.dim(1) != shape_.n_scalars)
        throw ShapeError("encode: scalars " + shape_str(scalars.shape()) + " do not match images " +
                         shape_str(images.shape()));

    BasicTensor<T> x = images;
    for (std::size_t i = 0; i < arch_.conv_ladder.size(); ++i) {
        const auto s = arch_.conv_ladder[i].stride;
        x = ops::conv2d(x, param("enc.conv" + idx(i) + ".w"), std::optional(param("enc.conv" + idx(i) + ".b")),
                        stage_geometry(s));
        x = ops::relu(apply_bn(i, x, mode));
    }
    const auto img_features = ops::flatten(x);
    const auto scalar_features = ops::relu(ops::linear(scalars, param("enc.scalar.w"), param("enc.scalar.b")));
    const auto fused = ops::relu(
        ops::linear(ops::concat<T>({img_features, scalar_features}), param("enc.fuse.w"), param("enc.fuse.b")));
    return ops::linear(fused, param("enc.latent.w"), param("enc.latent.b"));
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> Model<T>::generate(const BasicTensor<T>& latent, ops::NormMode mode) {
    if (latent.rank() != 2 || latent.dim(1) != arch_.latent_dim)
        throw ShapeError("generate: expected latents (N, " + std::to_string(arch_.latent_dim) + "), got " +
                         shape_str(latent.shape()));
    const std::size_t n = latent.dim(0);
    const auto& ladder = arch_.conv_ladder;
    std::size_t h = shape_.height, w = shape_.width;
    for (const auto& s : ladder) {
        h /= s.stride;
        w /= s.stride;
    }
    auto x = ops::linear(latent, param("gen.dense.w"), param("gen.dense.b"));
    x = ops::reshape(x, Shape{n, ladder.back().out_channels, h, w});
    for (std::size_t j = 0; j < ladder.size(); ++j) {
        const auto s = ladder[ladder.size() - 1 - j].stride;
        x = ops::conv_transpose2d(x, param("gen.deconv" + idx(j) + ".w"),
                                  std::optional(param("gen.deconv" + idx(j) + ".b")), stage_geometry(s));
        x = ops::relu(apply_bn(enc_bn_count_ + j, x, mode));
    }
    auto images = ops::sigmoid(ops::conv2d(x, param("gen.out.w"), std::optional(param("gen.out.b")), {1, 0}));
    auto hidden = ops::relu(ops::linear(latent, param("gen.scalar1.w"), param("gen.scalar1.b")));
    auto scalars = ops::linear(hidden, param("gen.scalar2.w"), param("gen.scalar2.b"));
    return {std::move(images), std::move(scalars)};
}

template <typename T>
BasicTensor<T> Model<T>::discriminate(const BasicTensor<T>& latent) {
    if (latent.on_sphere())
        throw ShapeError("discriminate: input is derived from a sphere projection; the discriminator only sees "
                         "Euclidean latents");
    if (latent.rank() != 2 || latent.dim(1) != arch_.latent_dim)
        throw ShapeError("discriminate: expected latents (N, " + std::to_string(arch_.latent_dim) + "), got " +
                         shape_str(latent.shape()));
    BasicTensor<T> x = latent;
    const T slope = static_cast<T>(arch_.leaky_slope);
    for (std::size_t i = 0; i < arch_.disc_widths.size(); ++i)
        x = ops::leaky_relu(ops::linear(x, param("disc.fc" + idx(i) + ".w"), param("disc.fc" + idx(i) + ".b")), slope);
    return ops::sigmoid(ops::linear(x, param("disc.out.w"), param("disc.out.b")));
}

template <typename T>
BasicTensor<T> project_to_sphere(const BasicTensor<T>& z) {
    return ops::normalize_rows(z, static_cast<T>(kNormFloor));
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> make_batch(const std::vector<const SampleRecord*>& records,
                                                     const DataShape& shape,
                                                     const ScalarStandardizer* standardizer) {
    if (records.empty()) throw ShapeError("make_batch: empty batch");
    const std::size_t img = shape.channels * shape.height * shape.width;
    std::vector<T> images, scalars;
    images.reserve(records.size() * img);
    scalars.reserve(records.size() * shape.n_scalars);
    for (const auto* r : records) {
        if (r->image.size() != img || r->scalars.size() != shape.n_scalars)
            throw ShapeError("make_batch: record does not match data shape");
        images.insert(images.end(), r->image.begin(), r->image.end());
        if (standardizer) {
            const auto s = standardizer->apply(r->scalars);
            scalars.insert(scalars.end(), s.begin(), s.end());
        } else {
            scalars.insert(scalars.end(), r->scalars.begin(), r->scalars.end());
        }
    }
    const std::size_t n = records.size();
    return {BasicTensor<T>(Shape{n, shape.channels, shape.height, shape.width}, std::move(images)),
            BasicTensor<T>(Shape{n, shape.n_scalars}, std::move(scalars))};
}

ScalarStandardizer ScalarStandardizer::fit(const std::vector<SampleRecord>& records) {
    if (records.empty()) throw ConfigError("standardizer: no records");
    const std::size_t s = records[0].scalars.size();
    std::vector<double> mean(s, 0.0), sq(s, 0.0);
    for (const auto& r : records)
        for (std::size_t j = 0; j < s; ++j) mean[j] += r.scalars[j];
    for (auto& m : mean) m /= static_cast<double>(records.size());
    for (const auto& r : records)
        for (std::size_t j = 0; j < s; ++j) sq[j] += (r.scalars[j] - mean[j]) * (r.scalars[j] - mean[j]);
    ScalarStandardizer out;
    for (std::size_t j = 0; j < s; ++j) {
        const double sd = std::sqrt(sq[j] / static_cast<double>(records.size()));
        out.mean.push_back(static_cast<float>(mean[j]));
        out.std.push_back(sd > 0.0 ? static_cast<float>(sd) : 1.0f);
    }
    return out;
}

std::vector<float> ScalarStandardizer::apply(std::span<const float> scalars) const {
    if (scalars.size() != mean.size()) throw ShapeError("standardizer: scalar count mismatch");
    std::vector<float> out(scalars.size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = (scalars[j] - mean[j]) / std[j];
    return out;
}

std::vector<float> ScalarStandardizer::invert(std::span<const float> standardized) const {
    if (standardized.size() != mean.size()) throw ShapeError("standardizer: scalar count mismatch");
    std::vector<float> out(standardized.size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = standardized[j] * std[j] + mean[j];
    return out;
}

template class Model<float>;
template class Model<double>;
template BasicTensor<float> project_to_sphere(const BasicTensor<float>&);
template BasicTensor<double> project_to_sphere(const BasicTensor<double>&);
template std::pair<BasicTensor<float>, BasicTensor<float>> make_batch(const std::vector<const SampleRecord*>&,
                                                                      const DataShape&, const ScalarStandardizer*);
template std::pair<BasicTensor<double>, BasicTensor<double>> make_batch(const std::vector<const SampleRecord*>&,
                                                                        const DataShape&, const ScalarStandardizer*);

}  // namespace swae
