#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "swae/errors.hpp"
#include "swae/tensor.hpp"

namespace swae {

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps). The relative error
/// of each entry uses max(|analytic|, |numeric|, 1e-6) as the denominator.
/// Runs in double precision; `x` is not modified.
inline GradCheckReport grad_check(const std::function<Tensor64(const Tensor64&)>& f, const Tensor64& x,
                                  double eps, double tol) {
    if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be positive");
    Tensor64 probe(x.shape(), x.values(), true);
    const Tensor64 out = f(probe);
    if (out.numel() != 1) throw ShapeError("grad_check: function output must be scalar, got " + shape_str(out.shape()));
    backward(out);
    const std::vector<double> analytic = probe.grad();

    GradCheckReport report;
    NoGradGuard no_grad;
    std::vector<double> shifted = x.values();
    for (std::size_t i = 0; i < shifted.size(); ++i) {
        const double orig = shifted[i];
        shifted[i] = orig + eps;
        const double plus = f(Tensor64(x.shape(), shifted)).item();
        shifted[i] = orig - eps;
        const double minus = f(Tensor64(x.shape(), shifted)).item();
        shifted[i] = orig;
        const double numeric = (plus - minus) / (2.0 * eps);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
        report.max_rel_err = std::max(report.max_rel_err, std::abs(analytic[i] - numeric) / denom);
    }
    report.pass = report.max_rel_err <= tol;
    return report;
}

}  // namespace swae
