#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "swae/data.hpp"
#include "swae/model.hpp"

namespace swae {

// ---------------------------------------------------------------------------
// Reconstruction quality

struct ReconMetrics {
    double image_mse = 0.0;
    // Per scalar; nullopt where the test set has no spread.
    std::vector<std::optional<double>> r2;
    // Mean over the defined entries of r2.
    double r2_mean = 0.0;
};

/// Mean squared error over every image element of every sample.
double image_mse(const std::vector<SampleRecord>& truth, const std::vector<SampleRecord>& pred);
/// 1 - SS_res / SS_tot, SS_tot taken about the mean of `y`. nullopt when
/// SS_tot == 0.
std::optional<double> r_squared(std::span<const double> y, std::span<const double> y_hat);
std::vector<std::optional<double>> r_squared(const std::vector<SampleRecord>& truth,
                                             const std::vector<SampleRecord>& pred);

/// Eval-mode encode -> project -> generate for every record; scalars are
/// returned in original units.
std::vector<SampleRecord> reconstruct(Model<float>& model, const ScalarStandardizer& standardizer,
                                      const std::vector<SampleRecord>& records);

ReconMetrics evaluate_reconstruction(Model<float>& model, const ScalarStandardizer& standardizer,
                                     const std::vector<SampleRecord>& test_set);

// ---------------------------------------------------------------------------
// Scientific constraint

struct LinePoint {
    double t_ion = 0.0;
    double image_temp = 0.0;
};

LinePoint line_point(const SampleRecord& rec);
std::vector<LinePoint> line_points(const std::vector<SampleRecord>& records);

/// OLS of t_ion on image_temp. Residual std uses n - 2 degrees of freedom and
/// is 0 for an exact two-point fit.
ScientificLine fit_scientific_line(std::span<const LinePoint> points);

double constraint_residual(const ScientificLine& line, const LinePoint& p);
double constraint_residual(const ScientificLine& line, const SampleRecord& rec);

/// Fraction of samples with |residual| <= threshold.
double valid_fraction(const ScientificLine& line, std::span<const LinePoint> points, double threshold);
std::size_t count_valid(const ScientificLine& line, std::span<const LinePoint> points, double threshold);

/// Default threshold grid in units of the training residual std.
inline const std::vector<double> kDefaultThresholdSigmas{0.5, 1.0, 2.0, 3.0};
std::vector<double> thresholds_from_sigmas(const ScientificLine& line, std::span<const double> sigmas);

// ---------------------------------------------------------------------------
// Sampling

/// z ~ N(0, prior_scale^2 I), z~ = z / |z|, generator fed radius * z~.
/// Scalars come back in original units.
std::vector<SampleRecord> generate_samples(Model<float>& model, const ScalarStandardizer& standardizer,
                                           std::size_t n, double radius, std::uint64_t seed,
                                           double prior_scale = 1.0);

/// The sphere points (unscaled) that generate_samples feeds the generator.
Tensor sphere_latents(std::size_t n, std::size_t d, std::uint64_t seed, double prior_scale = 1.0);

struct ValidityRow {
    double radius = 0.0;
    double threshold = 0.0;
    std::size_t n_valid = 0;
    std::size_t n_total = 0;
};

std::vector<ValidityRow> score_samples(const ScientificLine& line, const std::vector<SampleRecord>& samples,
                                       double radius, std::span<const double> thresholds);

std::vector<ValidityRow> generate_and_score(Model<float>& model, const ScalarStandardizer& standardizer,
                                            const ScientificLine& line, std::size_t n, double radius,
                                            std::span<const double> thresholds, std::uint64_t seed,
                                            double prior_scale = 1.0);

struct InterpPoint {
    double t = 0.0;
    SampleRecord sample;
    double residual = 0.0;
    double image_temp = 0.0;
    double t_ion = 0.0;
};

/// Linear path between the encodings of `a` and `b`; each point is projected
/// and generated on its own (batch of one, eval mode).
std::vector<InterpPoint> interpolate_latent(Model<float>& model, const ScalarStandardizer& standardizer,
                                            const ScientificLine& line, const SampleRecord& a,
                                            const SampleRecord& b, std::size_t n_steps);

/// encode -> project -> generate of one record, batch of one, eval mode.
SampleRecord autoencode_one(Model<float>& model, const ScalarStandardizer& standardizer, const SampleRecord& rec);

struct LocalSpread {
    std::size_t center_id = 0;
    double res_mean = 0.0;
    double res_std = 0.0;
    std::vector<double> latent_mean;  // empirical mean of the drawn latents
    std::vector<double> center;       // encoding of the centre sample
};

/// Draws n_per_center latents from N(encode(center), variance I) around each
/// centre, generates through the projection and summarizes the residuals.
std::vector<LocalSpread> local_sample(Model<float>& model, const ScalarStandardizer& standardizer,
                                     const ScientificLine& line, const std::vector<SampleRecord>& centers,
                                     std::size_t n_per_center, double variance, std::uint64_t seed);

/// Mean resultant length |(1/n) sum x_i| of unit vectors given as an (n, d)
/// tensor. Rows must have unit norm within 1e-4.
double uniformity_statistic(const Tensor& points);

// ---------------------------------------------------------------------------
// Output files

void write_validity_csv(const std::filesystem::path& path, const std::vector<ValidityRow>& rows);
void write_interp_csv(const std::filesystem::path& path, const std::vector<InterpPoint>& points);
void write_local_csv(const std::filesystem::path& path, const std::vector<LocalSpread>& spreads);
void write_recon_json(const std::filesystem::path& path, const ReconMetrics& metrics);
/// `line` is the fit on the training data; `reconstructed`, when given, is the
/// same fit on the training reconstructions.
void write_line_json(const std::filesystem::path& path, const ScientificLine& line,
                     const std::optional<ScientificLine>& reconstructed = std::nullopt);
/// index,image_temp,t_ion,residual per sample.
void write_residual_csv(const std::filesystem::path& path, const ScientificLine& line,
                        const std::vector<SampleRecord>& samples);

/// Binary PGM (P5), values in [0, 1] mapped to 0..255.
void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const float> pixels);
/// One grid_ch{c}.pgm per channel; `rows` is a grid of samples laid out row by row.
void write_image_grids(const std::filesystem::path& dir, const DataShape& shape,
                       const std::vector<std::vector<SampleRecord>>& rows);

}  // namespace swae
