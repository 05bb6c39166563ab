#include "swae/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include <nlohmann/json.hpp>

#include "swae/errors.hpp"
#include "swae/rng.hpp"
#include "swae/training.hpp"

namespace swae {

namespace {

constexpr std::size_t kEvalBatch = 256;

std::vector<const SampleRecord*> pointers(const std::vector<SampleRecord>& records, std::size_t begin,
                                          std::size_t end) {
    std::vector<const SampleRecord*> out;
    for (std::size_t i = begin; i < end; ++i) out.push_back(&records[i]);
    return out;
}

/// Splits generator output tensors back into records with de-standardized scalars.
void append_records(const Tensor& images, const Tensor& scalars, const ScalarStandardizer& standardizer,
                    std::vector<SampleRecord>& out) {
    const std::size_t n = images.dim(0);
    const std::size_t img = images.numel() / n;
    const std::size_t s = scalars.dim(1);
    for (std::size_t r = 0; r < n; ++r) {
        SampleRecord rec;
        rec.image.assign(images.data().begin() + static_cast<std::ptrdiff_t>(r * img),
                         images.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * img));
        rec.scalars = standardizer.invert(scalars.data().subspan(r * s, s));
        out.push_back(std::move(rec));
    }
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.precision(9);
    return out;
}

void check_written(const std::ofstream& out, const std::filesystem::path& path) {
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

double image_mse(const std::vector<SampleRecord>& truth, const std::vector<SampleRecord>& pred) {
    if (truth.empty() || truth.size() != pred.size()) throw ShapeError("image_mse: sample counts differ or are zero");
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i].image.size() != pred[i].image.size()) throw ShapeError("image_mse: image sizes differ");
        for (std::size_t j = 0; j < truth[i].image.size(); ++j) {
            const double d = double(pred[i].image[j]) - double(truth[i].image[j]);
            acc += d * d;
        }
        count += truth[i].image.size();
    }
    return acc / static_cast<double>(count);
}

std::optional<double> r_squared(std::span<const double> y, std::span<const double> y_hat) {
    if (y.empty() || y.size() != y_hat.size()) throw ShapeError("r_squared: length mismatch or empty");
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        ss_res += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
        ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    if (ss_tot == 0.0) return std::nullopt;
    return 1.0 - ss_res / ss_tot;
}

std::vector<std::optional<double>> r_squared(const std::vector<SampleRecord>& truth,
                                             const std::vector<SampleRecord>& pred) {
    if (truth.empty() || truth.size() != pred.size()) throw ShapeError("r_squared: sample counts differ or are zero");
    const std::size_t s = truth[0].scalars.size();
    std::vector<std::optional<double>> out;
    for (std::size_t j = 0; j < s; ++j) {
        std::vector<double> y, y_hat;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            y.push_back(truth[i].scalars.at(j));
            y_hat.push_back(pred[i].scalars.at(j));
        }
        out.push_back(r_squared(y, y_hat));
    }
    return out;
}

std::vector<SampleRecord> reconstruct(Model<float>& model, const ScalarStandardizer& standardizer,
                                      const std::vector<SampleRecord>& records) {
    NoGradGuard no_grad;
    std::vector<SampleRecord> out;
    out.reserve(records.size());
    for (std::size_t start = 0; start < records.size(); start += kEvalBatch) {
        const auto end = std::min(records.size(), start + kEvalBatch);
        const auto [images, scalars] = make_batch<float>(pointers(records, start, end), model.shape(), &standardizer);
        const auto z = model.encode(images, scalars, ops::NormMode::kEval);
        const auto [img_hat, sc_hat] = model.generate(project_to_sphere(z), ops::NormMode::kEval);
        append_records(img_hat, sc_hat, standardizer, out);
    }
    return out;
}

ReconMetrics evaluate_reconstruction(Model<float>& model, const ScalarStandardizer& standardizer,
                                     const std::vector<SampleRecord>& test_set) {
    if (test_set.empty()) throw ConfigError("evaluate_reconstruction: empty test set");
    const auto recon = reconstruct(model, standardizer, test_set);
    ReconMetrics m;
    m.image_mse = image_mse(test_set, recon);
    m.r2 = r_squared(test_set, recon);
    double acc = 0.0;
    std::size_t defined = 0;
    for (const auto& r : m.r2) {
        if (r) {
            acc += *r;
            ++defined;
        }
    }
    m.r2_mean = defined ? acc / static_cast<double>(defined) : 0.0;
    return m;
}

LinePoint line_point(const SampleRecord& rec) {
    if (rec.scalars.empty()) throw ShapeError("line_point: record has no scalars");
    return {rec.scalars[0], image_temperature(rec.image)};
}

std::vector<LinePoint> line_points(const std::vector<SampleRecord>& records) {
    std::vector<LinePoint> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(line_point(r));
    return out;
}

ScientificLine fit_scientific_line(std::span<const LinePoint> points) {
    if (points.size() < 2) throw ConfigError("fit_scientific_line: need at least 2 points");
    const double n = static_cast<double>(points.size());
    double mx = 0.0, my = 0.0;
    for (const auto& p : points) {
        mx += p.image_temp;
        my += p.t_ion;
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (const auto& p : points) {
        sxx += (p.image_temp - mx) * (p.image_temp - mx);
        sxy += (p.image_temp - mx) * (p.t_ion - my);
    }
    if (!(sxx > 0.0)) throw NumericalError("fit_scientific_line: image temperatures have zero variance");
    ScientificLine line;
    line.slope = sxy / sxx;
    line.intercept = my - line.slope * mx;
    line.n_fit = points.size();
    if (points.size() > 2) {
        double ss = 0.0;
        for (const auto& p : points) {
            const double r = constraint_residual(line, p);
            ss += r * r;
        }
        line.train_residual_std = std::sqrt(ss / (n - 2.0));
    }
    return line;
}

double constraint_residual(const ScientificLine& line, const LinePoint& p) {
    return p.t_ion - (line.slope * p.image_temp + line.intercept);
}

double constraint_residual(const ScientificLine& line, const SampleRecord& rec) {
    return constraint_residual(line, line_point(rec));
}

std::size_t count_valid(const ScientificLine& line, std::span<const LinePoint> points, double threshold) {
    if (!(threshold >= 0.0)) throw ConfigError("valid_fraction: threshold must be >= 0");
    std::size_t n = 0;
    for (const auto& p : points)
        if (std::abs(constraint_residual(line, p)) <= threshold) ++n;
    return n;
}

double valid_fraction(const ScientificLine& line, std::span<const LinePoint> points, double threshold) {
    if (points.empty()) throw ConfigError("valid_fraction: no samples");
    return static_cast<double>(count_valid(line, points, threshold)) / static_cast<double>(points.size());
}

std::vector<double> thresholds_from_sigmas(const ScientificLine& line, std::span<const double> sigmas) {
    std::vector<double> out;
    for (double s : sigmas) out.push_back(s * line.train_residual_std);
    return out;
}

Tensor sphere_latents(std::size_t n, std::size_t d, std::uint64_t seed, double prior_scale) {
    if (!(prior_scale > 0.0)) throw ConfigError("prior scale must be > 0");
    Rng rng(seed);
    Tensor z = sample_prior(n, d, rng);
    if (prior_scale != 1.0) z = ops::scale(z, static_cast<float>(prior_scale));
    return project_to_sphere(z);
}

std::vector<SampleRecord> generate_samples(Model<float>& model, const ScalarStandardizer& standardizer,
                                           std::size_t n, double radius, std::uint64_t seed, double prior_scale) {
    if (n < 1) throw ConfigError("generate_samples: n must be >= 1");
    if (!(radius > 0.0)) throw ConfigError("generate_samples: radius must be > 0");
    NoGradGuard no_grad;
    const std::size_t d = model.arch().latent_dim;
    const Tensor sphere = sphere_latents(n, d, seed, prior_scale);
    std::vector<SampleRecord> out;
    out.reserve(n);
    for (std::size_t start = 0; start < n; start += kEvalBatch) {
        const auto end = std::min(n, start + kEvalBatch);
        std::vector<float> rows(sphere.data().begin() + static_cast<std::ptrdiff_t>(start * d),
                                sphere.data().begin() + static_cast<std::ptrdiff_t>(end * d));
        for (auto& v : rows) v = static_cast<float>(v * radius);
        const auto [images, scalars] = model.generate(Tensor(Shape{end - start, d}, std::move(rows)), ops::NormMode::kEval);
        append_records(images, scalars, standardizer, out);
    }
    return out;
}

std::vector<ValidityRow> score_samples(const ScientificLine& line, const std::vector<SampleRecord>& samples,
                                       double radius, std::span<const double> thresholds) {
    const auto pts = line_points(samples);
    std::vector<ValidityRow> rows;
    for (double t : thresholds) rows.push_back({radius, t, count_valid(line, pts, t), pts.size()});
    return rows;
}

std::vector<ValidityRow> generate_and_score(Model<float>& model, const ScalarStandardizer& standardizer,
                                            const ScientificLine& line, std::size_t n, double radius,
                                            std::span<const double> thresholds, std::uint64_t seed,
                                            double prior_scale) {
    return score_samples(line, generate_samples(model, standardizer, n, radius, seed, prior_scale), radius, thresholds);
}

SampleRecord autoencode_one(Model<float>& model, const ScalarStandardizer& standardizer, const SampleRecord& rec) {
    NoGradGuard no_grad;
    const auto [images, scalars] = make_batch<float>({&rec}, model.shape(), &standardizer);
    const auto z = model.encode(images, scalars, ops::NormMode::kEval);
    const auto [img_hat, sc_hat] = model.generate(project_to_sphere(z), ops::NormMode::kEval);
    std::vector<SampleRecord> out;
    append_records(img_hat, sc_hat, standardizer, out);
    return out.front();
}

std::vector<InterpPoint> interpolate_latent(Model<float>& model, const ScalarStandardizer& standardizer,
                                            const ScientificLine& line, const SampleRecord& a,
                                            const SampleRecord& b, std::size_t n_steps) {
    if (n_steps < 2) throw ConfigError("interpolate_latent: n_steps must be >= 2");
    NoGradGuard no_grad;
    const auto encode_one = [&](const SampleRecord& rec) {
        const auto [images, scalars] = make_batch<float>({&rec}, model.shape(), &standardizer);
        return model.encode(images, scalars, ops::NormMode::kEval).values();
    };
    const auto za = encode_one(a);
    const auto zb = encode_one(b);
    const std::size_t d = za.size();

    std::vector<InterpPoint> out;
    for (std::size_t i = 0; i < n_steps; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(n_steps - 1);
        std::vector<float> zt(d);
        for (std::size_t j = 0; j < d; ++j)
            zt[j] = static_cast<float>((1.0 - t) * za[j] + t * zb[j]);
        Tensor sphere;
        try {
            sphere = project_to_sphere(Tensor(Shape{1, d}, std::move(zt)));
        } catch (const NumericalError&) {
            throw NumericalError("interpolate_latent: degenerate latent at t=" + std::to_string(t));
        }
        const auto [images, scalars] = model.generate(sphere, ops::NormMode::kEval);
        std::vector<SampleRecord> recs;
        append_records(images, scalars, standardizer, recs);
        InterpPoint p;
        p.t = t;
        p.sample = std::move(recs.front());
        const auto lp = line_point(p.sample);
        p.image_temp = lp.image_temp;
        p.t_ion = lp.t_ion;
        p.residual = constraint_residual(line, lp);
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<LocalSpread> local_sample(Model<float>& model, const ScalarStandardizer& standardizer,
                                      const ScientificLine& line, const std::vector<SampleRecord>& centers,
                                      std::size_t n_per_center, double variance, std::uint64_t seed) {
    if (n_per_center < 2) throw ConfigError("local_sample: n_per_center must be >= 2");
    if (!(variance > 0.0)) throw ConfigError("local_sample: variance must be > 0");
    NoGradGuard no_grad;
    const std::size_t d = model.arch().latent_dim;
    const double sd = std::sqrt(variance);
    std::vector<LocalSpread> out;
    for (std::size_t c = 0; c < centers.size(); ++c) {
        const auto [images, scalars] = make_batch<float>({&centers[c]}, model.shape(), &standardizer);
        const auto zc = model.encode(images, scalars, ops::NormMode::kEval).values();

        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
        LocalSpread spread;
        spread.center_id = c;
        spread.center.assign(zc.begin(), zc.end());
        spread.latent_mean.assign(d, 0.0);
        std::vector<double> residuals;
        for (std::size_t start = 0; start < n_per_center; start += kEvalBatch) {
            const auto end = std::min(n_per_center, start + kEvalBatch);
            std::vector<float> z((end - start) * d);
            for (std::size_t r = 0; r < end - start; ++r)
                for (std::size_t j = 0; j < d; ++j) {
                    z[r * d + j] = static_cast<float>(zc[j] + sd * rng.normal());
                    spread.latent_mean[j] += z[r * d + j];
                }
            const auto sphere = project_to_sphere(Tensor(Shape{end - start, d}, std::move(z)));
            const auto [img_hat, sc_hat] = model.generate(sphere, ops::NormMode::kEval);
            std::vector<SampleRecord> recs;
            append_records(img_hat, sc_hat, standardizer, recs);
            for (const auto& r : recs) residuals.push_back(constraint_residual(line, r));
        }
        for (auto& m : spread.latent_mean) m /= static_cast<double>(n_per_center);
        const double n = static_cast<double>(residuals.size());
        spread.res_mean = std::accumulate(residuals.begin(), residuals.end(), 0.0) / n;
        double ss = 0.0;
        for (double r : residuals) ss += (r - spread.res_mean) * (r - spread.res_mean);
        spread.res_std = std::sqrt(ss / (n - 1.0));
        out.push_back(std::move(spread));
    }
    return out;
}

double uniformity_statistic(const Tensor& points) {
    if (points.rank() != 2) throw ShapeError("uniformity_statistic: points must be (n, d), got " + shape_str(points.shape()));
    const std::size_t n = points.dim(0), d = points.dim(1);
    std::vector<double> acc(d, 0.0);
    const auto v = points.data();
    for (std::size_t r = 0; r < n; ++r) {
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            sq += double(v[r * d + j]) * double(v[r * d + j]);
            acc[j] += v[r * d + j];
        }
        if (std::abs(std::sqrt(sq) - 1.0) > 1e-4)
            throw ConfigError("uniformity_statistic: row " + std::to_string(r) + " is not unit norm");
    }
    double sq = 0.0;
    for (double a : acc) sq += (a / static_cast<double>(n)) * (a / static_cast<double>(n));
    return std::sqrt(sq);
}

void write_validity_csv(const std::filesystem::path& path, const std::vector<ValidityRow>& rows) {
    auto out = open_out(path);
    out << "radius,threshold,n_valid,n_total\n";
    for (const auto& r : rows) out << r.radius << ',' << r.threshold << ',' << r.n_valid << ',' << r.n_total << '\n';
    check_written(out, path);
}

void write_interp_csv(const std::filesystem::path& path, const std::vector<InterpPoint>& points) {
    auto out = open_out(path);
    out << "t,residual,image_temp,t_ion\n";
    for (const auto& p : points) out << p.t << ',' << p.residual << ',' << p.image_temp << ',' << p.t_ion << '\n';
    check_written(out, path);
}

void write_local_csv(const std::filesystem::path& path, const std::vector<LocalSpread>& spreads) {
    auto out = open_out(path);
    out << "center_id,res_mean,res_std\n";
    for (const auto& s : spreads) out << s.center_id << ',' << s.res_mean << ',' << s.res_std << '\n';
    check_written(out, path);
}

void write_recon_json(const std::filesystem::path& path, const ReconMetrics& metrics) {
    nlohmann::json j;
    j["mse"] = metrics.image_mse;
    auto r2 = nlohmann::json::array();
    for (const auto& r : metrics.r2) r2.push_back(r ? nlohmann::json(*r) : nlohmann::json(nullptr));
    j["r2"] = r2;
    j["r2_mean"] = metrics.r2_mean;
    auto out = open_out(path);
    out << j.dump(2) << '\n';
    check_written(out, path);
}

namespace {
nlohmann::json line_json(const ScientificLine& line) {
    return {{"slope", line.slope},
            {"intercept", line.intercept},
            {"train_residual_std", line.train_residual_std},
            {"n_fit", line.n_fit}};
}
}  // namespace

void write_line_json(const std::filesystem::path& path, const ScientificLine& line,
                     const std::optional<ScientificLine>& reconstructed) {
    nlohmann::json j = line_json(line);
    if (reconstructed) j["reconstructed"] = line_json(*reconstructed);
    auto out = open_out(path);
    out << j.dump(2) << '\n';
    check_written(out, path);
}

void write_residual_csv(const std::filesystem::path& path, const ScientificLine& line,
                        const std::vector<SampleRecord>& samples) {
    auto out = open_out(path);
    out << std::setprecision(9) << "index,image_temp,t_ion,residual\n";
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto p = line_point(samples[i]);
        out << i << ',' << p.image_temp << ',' << p.t_ion << ',' << constraint_residual(line, p) << '\n';
    }
    check_written(out, path);
}

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const float> pixels) {
    if (pixels.size() != width * height) throw ShapeError("write_pgm: pixel count does not match size");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "P5\n" << width << ' ' << height << "\n255\n";
    std::vector<unsigned char> bytes(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i)
        bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(pixels[i], 0.0f, 1.0f) * 255.0f));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    check_written(out, path);
}

void write_image_grids(const std::filesystem::path& dir, const DataShape& shape,
                       const std::vector<std::vector<SampleRecord>>& rows) {
    if (rows.empty()) throw ShapeError("write_image_grids: no rows");
    std::size_t cols = 0;
    for (const auto& r : rows) cols = std::max(cols, r.size());
    const std::size_t h = shape.height, w = shape.width;
    const std::size_t gw = cols * w, gh = rows.size() * h;
    for (std::size_t c = 0; c < shape.channels; ++c) {
        std::vector<float> grid(gw * gh, 0.0f);
        for (std::size_t gr = 0; gr < rows.size(); ++gr)
            for (std::size_t gc = 0; gc < rows[gr].size(); ++gc) {
                const auto& img = rows[gr][gc].image;
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x)
                        grid[(gr * h + y) * gw + gc * w + x] = img[c * h * w + y * w + x];
            }
        write_pgm(dir / ("grid_ch" + std::to_string(c) + ".pgm"), gw, gh, grid);
    }
}

}  // namespace swae
