#pragma once

#include <cstddef>
#include <optional>
#include <type_traits>
#include <vector>

#include "swae/tensor.hpp"

namespace swae::ops {

// Elementwise binary ops. Operands either have equal shapes, or the smaller
// one is a scalar (one element) or matches the larger one without its leading
// batch axis.
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T factor);

/// (n, k) x (k, m) -> (n, m)
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// x (n, in) * weight (in, out) + bias (out)
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

struct ConvGeometry {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

/// x (N, Cin, H, W), weight (Cout, Cin, k, k), optional bias (Cout).
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const std::optional<std::type_identity_t<BasicTensor<T>>>& bias, ConvGeometry geom);

/// x (N, Cin, H, W), weight (Cin, Cout, k, k), optional bias (Cout). Output
/// spatial size is (H - 1) * stride - 2 * padding + k. This is the adjoint of
/// conv2d with the same weight and geometry.
template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                                const std::optional<std::type_identity_t<BasicTensor<T>>>& bias, ConvGeometry geom);

template <typename T> BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope);
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> tanh(const BasicTensor<T>& x);

enum class NormMode { kTrain, kEval };

/// Running statistics owned by a batch-norm layer. Updated in place in train
/// mode; variance is the unbiased batch estimate.
template <typename T>
struct BatchNormState {
    BasicTensor<T> running_mean;
    BasicTensor<T> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);
};

/// Per-channel normalization over axis 1 of a (N, C) or (N, C, H, W) input.
template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          BatchNormState<T>& state, NormMode mode);

template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
/// (N, ...) -> (N, prod(...))
template <typename T> BasicTensor<T> flatten(const BasicTensor<T>& x);
/// Concatenates 2-axis tensors along the feature axis.
template <typename T> BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts);

template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x);

/// Row norms of a (N, d) tensor, shape (N, 1).
template <typename T> BasicTensor<T> l2_norm(const BasicTensor<T>& x);
/// Divides each row of a (N, d) tensor by its L2 norm. Rows with norm at or
/// below `norm_floor` raise NumericalError naming the row.
template <typename T> BasicTensor<T> normalize_rows(const BasicTensor<T>& x, T norm_floor);

template <typename T> BasicTensor<T> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target);
/// Binary cross entropy on probabilities, clamped to [1e-7, 1 - 1e-7].
template <typename T> BasicTensor<T> bce_loss(const BasicTensor<T>& prob, const BasicTensor<T>& target);

inline constexpr double kBceClamp = 1e-7;

}  // namespace swae::ops
