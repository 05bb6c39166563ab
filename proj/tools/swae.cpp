// swae: command-line driver for data generation, training and evaluation of
// the hyperspherical WAE-GAN.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "swae/config.hpp"
#include "swae/data.hpp"
#include "swae/errors.hpp"
#include "swae/evaluation.hpp"
#include "swae/model.hpp"
#include "swae/training.hpp"

namespace fs = std::filesystem;
using namespace swae;

namespace {

const char* code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::kConfig: return "config_error";
        case ErrorCode::kIo: return "io_error";
        case ErrorCode::kShape: return "shape_error";
        case ErrorCode::kNumerical: return "numerical_error";
    }
    return "error";
}

template <typename T>
void apply_flag(const std::optional<T>& v, T& dst) {
    if (v) dst = *v;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

RunConfig base_config(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

void require_file(const fs::path& p, const char* what) {
    if (!fs::is_regular_file(p)) throw IoError(std::string(what) + " not found: " + p.string());
}

std::string shape_str(const DataShape& s) {
    return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width) + "+" +
           std::to_string(s.n_scalars);
}

Dataset load_data(const fs::path& path) {
    require_file(path, "data file");
    return read_dataset(path);
}

/// Loads a checkpoint, checking it against the data shape and, when a config
/// file was given, against the configured architecture.
Checkpoint load_model(const fs::path& path, const std::optional<DataShape>& data_shape,
                      const std::optional<ArchConfig>& arch) {
    require_file(path, "checkpoint");
    Checkpoint ck = load_checkpoint(path);
    if (data_shape && ck.model.shape() != *data_shape)
        throw ShapeError("checkpoint expects data " + shape_str(ck.model.shape()) + ", data file has " +
                         shape_str(*data_shape));
    if (arch && !(ck.model.arch() == *arch)) {
        // Re-load against the configured layout to name the offending tensor.
        load_checkpoint(path, *arch, ck.model.shape());
        throw ArchMismatchError("checkpoint architecture differs from config", "");
    }
    return ck;
}

/// Validates that the configured architecture can be built for a data file.
void check_arch_for_data(const ArchConfig& arch, const DataShape& shape) {
    try {
        validate_arch(arch, shape);
    } catch (const ConfigError& e) {
        throw ShapeError("data shape " + shape_str(shape) + " incompatible with arch: " + e.what());
    }
}

ScientificLine line_of(const Checkpoint& ck, const RunConfig& cfg, const Dataset* data) {
    if (ck.line) return *ck.line;
    if (!data) throw ConfigError("checkpoint has no scientific line; pass --data to fit one");
    const auto [train_set, _] = split_dataset(data->records, cfg.train_fraction, cfg.split_seed());
    return fit_scientific_line(line_points(train_set));
}

std::vector<double> thresholds(const ScientificLine& line, const RunConfig& cfg) {
    return thresholds_from_sigmas(line, cfg.eval.threshold_sigmas);
}

void write_resolved(const fs::path& dir, const RunConfig& cfg) { save_run_config(dir / "resolved-config.json", cfg); }

const SampleRecord& record_at(const Dataset& ds, std::size_t i, const char* flag) {
    if (i >= ds.records.size())
        throw ConfigError(std::string(flag) + " " + std::to_string(i) + " out of range (dataset has " +
                          std::to_string(ds.records.size()) + " samples)");
    return ds.records[i];
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::string config, out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> n_samples;
    std::optional<double> noise;
};

int run_gen_data(const GenDataArgs& a) {
    RunConfig cfg = base_config(a.config);
    apply_flag(a.seed, cfg.seed);
    apply_flag(a.n_samples, cfg.data.n_samples);
    apply_flag(a.noise, cfg.data.constraint_noise);
    if (!a.out.empty()) cfg.data_path = a.out;
    cfg.validate();

    const Dataset ds = generate_dataset(cfg.synthetic());
    const fs::path out = cfg.data_path;
    if (out.has_parent_path()) ensure_dir(out.parent_path());
    write_dataset(out, ds);

    const auto pts = line_points(ds.records);
    double mean = 0.0, sq = 0.0;
    for (const auto& p : pts) mean += p.image_temp;
    mean /= static_cast<double>(pts.size());
    for (const auto& p : pts) sq += (p.image_temp - mean) * (p.image_temp - mean);
    const double stdev = std::sqrt(sq / static_cast<double>(pts.size()));

    nlohmann::json summary{{"path", out.string()},
                           {"bytes", jags_file_size(ds.header)},
                           {"n_samples", ds.header.n_samples},
                           {"channels", ds.header.channels},
                           {"height", ds.header.height},
                           {"width", ds.header.width},
                           {"n_scalars", ds.header.n_scalars},
                           {"image_temp_mean", mean},
                           {"image_temp_std", stdev},
                           {"config", nlohmann::json::parse(to_json_string(cfg))}};
    fs::path summary_path = out;
    summary_path.replace_extension(".summary.json");
    std::ofstream s(summary_path, std::ios::trunc);
    if (!s) throw IoError("cannot open " + summary_path.string() + " for writing");
    s << summary.dump(2) << '\n';
    if (!s) throw IoError("write failed for " + summary_path.string());

    std::cout << "wrote " << out.string() << ": " << ds.header.n_samples << " samples, "
              << ds.header.channels << "x" << ds.header.height << "x" << ds.header.width << " images, "
              << ds.header.n_scalars << " scalars, " << jags_file_size(ds.header) << " bytes\n";
    return 0;
}

struct TrainArgs {
    std::string config, data, out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs, batch_size, latent_dim;
    std::optional<double> lr, lambda_adv, w_scalar;
    bool wall_time = false;
    bool quiet = false;
};

int run_train(const TrainArgs& a) {
    RunConfig cfg = base_config(a.config);
    apply_flag(a.seed, cfg.seed);
    apply_flag(a.epochs, cfg.train.epochs);
    apply_flag(a.batch_size, cfg.train.batch_size);
    apply_flag(a.latent_dim, cfg.arch.latent_dim);
    apply_flag(a.lr, cfg.train.lr);
    apply_flag(a.lambda_adv, cfg.train.lambda_adv);
    apply_flag(a.w_scalar, cfg.train.w_scalar);
    if (a.wall_time) cfg.train.record_wall_time = true;
    if (!a.data.empty()) cfg.data_path = a.data;
    if (!a.out.empty()) cfg.output_dir = a.out;
    cfg.validate();

    const Dataset ds = load_data(cfg.data_path);
    const DataShape shape = DataShape::from_header(ds.header);
    check_arch_for_data(cfg.arch, shape);
    const auto [train_set, test_set] = split_dataset(ds.records, cfg.train_fraction, cfg.split_seed());
    if (train_set.size() < 2) throw ConfigError("training split has fewer than 2 samples");

    const fs::path dir = cfg.output_dir;
    ensure_dir(dir);
    write_resolved(dir, cfg);

    auto result = train(train_set, shape, cfg.arch, cfg.training(), [&](const EpochRecord& r) {
        if (!a.quiet)
            std::cerr << "epoch " << r.epoch << " img " << r.recon_image_mse << " scalar " << r.recon_scalar_mse
                      << " adv " << r.adv_loss << " disc " << r.disc_loss << '\n';
    });
    result.log.write_csv(dir / "trainlog.csv");
    Checkpoint ck{std::move(result.model), std::move(result.standardizer),
                  fit_scientific_line(line_points(train_set))};
    save_checkpoint(dir / "checkpoint.swae", ck);
    std::cout << "wrote " << (dir / "checkpoint.swae").string() << " after " << cfg.train.epochs << " epochs\n";
    return 0;
}

struct EvalArgs {
    std::string config, checkpoint, data, out;
};

int run_eval(const EvalArgs& a) {
    RunConfig cfg = base_config(a.config);
    if (!a.data.empty()) cfg.data_path = a.data;
    if (!a.out.empty()) cfg.output_dir = a.out;
    const Dataset ds = load_data(cfg.data_path);
    auto ck = load_model(a.checkpoint, DataShape::from_header(ds.header),
                         a.config.empty() ? std::nullopt : std::optional(cfg.arch));
    if (a.config.empty()) cfg.arch = ck.model.arch();

    const auto [train_set, test_set] = split_dataset(ds.records, cfg.train_fraction, cfg.split_seed());
    if (test_set.empty()) throw ConfigError("test split is empty");
    const fs::path dir = cfg.output_dir;
    ensure_dir(dir);
    write_resolved(dir, cfg);

    const auto metrics = evaluate_reconstruction(ck.model, ck.standardizer, test_set);
    write_recon_json(dir / "recon_metrics.json", metrics);

    const ScientificLine line = line_of(ck, cfg, &ds);
    const auto recon_train = reconstruct(ck.model, ck.standardizer, train_set);
    write_line_json(dir / "scientific-line.json", line, fit_scientific_line(line_points(recon_train)));

    const std::size_t n_grid = std::min(cfg.eval.grid_samples, test_set.size());
    std::vector<SampleRecord> originals(test_set.begin(), test_set.begin() + static_cast<std::ptrdiff_t>(n_grid));
    write_image_grids(dir, ck.model.shape(), {originals, reconstruct(ck.model, ck.standardizer, originals)});

    std::cout << "test image mse " << metrics.image_mse << ", r2[0] ";
    if (metrics.r2.at(0)) std::cout << *metrics.r2[0];
    else std::cout << "undefined";
    std::cout << ", r2 mean " << metrics.r2_mean << '\n';
    return 0;
}

struct SampleArgs {
    std::string config, checkpoint, out;
    std::optional<std::size_t> n;
    std::optional<double> radius;
    std::optional<std::uint64_t> seed;
};

int run_sample(const SampleArgs& a) {
    RunConfig cfg = base_config(a.config);
    apply_flag(a.n, cfg.eval.n_generate);
    if (!a.out.empty()) cfg.output_dir = a.out;
    const double radius = a.radius.value_or(1.0);
    if (!(radius > 0.0)) throw ConfigError("--radius must be > 0");
    cfg.validate();
    auto ck = load_model(a.checkpoint, std::nullopt, a.config.empty() ? std::nullopt : std::optional(cfg.arch));
    if (a.config.empty()) cfg.arch = ck.model.arch();
    const ScientificLine line = line_of(ck, cfg, nullptr);
    const std::uint64_t seed = a.seed.value_or(cfg.eval_seed());

    const fs::path dir = cfg.output_dir;
    ensure_dir(dir);
    write_resolved(dir, cfg);

    const auto samples = generate_samples(ck.model, ck.standardizer, cfg.eval.n_generate, radius, seed);
    const auto& s = ck.model.shape();
    Dataset out{{static_cast<std::uint32_t>(samples.size()), static_cast<std::uint32_t>(s.height),
                 static_cast<std::uint32_t>(s.width), static_cast<std::uint32_t>(s.channels),
                 static_cast<std::uint32_t>(s.n_scalars)},
                samples};
    write_dataset(dir / "samples.jags", out);
    write_residual_csv(dir / "residuals.csv", line, samples);
    const auto th = thresholds(line, cfg);
    write_validity_csv(dir / "validity.csv", score_samples(line, samples, radius, th));
    std::cout << "wrote " << samples.size() << " samples at radius " << radius << " to " << dir.string() << '\n';
    return 0;
}

struct InterpArgs {
    std::string config, checkpoint, data, out;
    std::optional<std::size_t> index_a, index_b, steps;
};

int run_interpolate(const InterpArgs& a) {
    RunConfig cfg = base_config(a.config);
    apply_flag(a.steps, cfg.eval.interp_steps);
    if (!a.data.empty()) cfg.data_path = a.data;
    if (!a.out.empty()) cfg.output_dir = a.out;
    std::pair<std::size_t, std::size_t> pair =
        cfg.eval.interp_pairs.empty() ? std::pair<std::size_t, std::size_t>{0, 1} : cfg.eval.interp_pairs.front();
    apply_flag(a.index_a, pair.first);
    apply_flag(a.index_b, pair.second);
    cfg.eval.interp_pairs = {pair};
    cfg.validate();

    const Dataset ds = load_data(cfg.data_path);
    auto ck = load_model(a.checkpoint, DataShape::from_header(ds.header),
                         a.config.empty() ? std::nullopt : std::optional(cfg.arch));
    if (a.config.empty()) cfg.arch = ck.model.arch();
    const auto& ra = record_at(ds, pair.first, "--index-a");
    const auto& rb = record_at(ds, pair.second, "--index-b");
    const ScientificLine line = line_of(ck, cfg, &ds);

    const fs::path dir = cfg.output_dir;
    ensure_dir(dir);
    write_resolved(dir, cfg);

    const auto path = interpolate_latent(ck.model, ck.standardizer, line, ra, rb, cfg.eval.interp_steps);
    write_interp_csv(dir / "interp_path.csv", path);
    std::vector<SampleRecord> strip;
    for (const auto& p : path) strip.push_back(p.sample);
    write_image_grids(dir, ck.model.shape(), {strip});
    std::cout << "wrote " << path.size() << " interpolation steps between samples " << pair.first << " and "
              << pair.second << '\n';
    return 0;
}

struct AblateArgs {
    std::string config, checkpoint, data, out;
    std::vector<double> radii;
    std::optional<std::size_t> n;
    std::optional<std::uint64_t> seed;
};

int run_ablate(const AblateArgs& a) {
    RunConfig cfg = base_config(a.config);
    if (!a.radii.empty()) cfg.eval.radii = a.radii;
    apply_flag(a.n, cfg.eval.n_generate);
    if (!a.data.empty()) cfg.data_path = a.data;
    if (!a.out.empty()) cfg.output_dir = a.out;
    cfg.validate();

    std::optional<Dataset> ds;
    if (!a.data.empty()) ds = load_data(cfg.data_path);
    auto ck = load_model(a.checkpoint, ds ? std::optional(DataShape::from_header(ds->header)) : std::nullopt,
                         a.config.empty() ? std::nullopt : std::optional(cfg.arch));
    if (a.config.empty()) cfg.arch = ck.model.arch();
    const ScientificLine line = line_of(ck, cfg, ds ? &*ds : nullptr);
    const std::uint64_t seed = a.seed.value_or(cfg.eval_seed());

    const fs::path dir = cfg.output_dir;
    ensure_dir(dir);
    write_resolved(dir, cfg);

    const auto th = thresholds(line, cfg);
    std::vector<ValidityRow> rows;
    for (double r : cfg.eval.radii) {
        auto part = generate_and_score(ck.model, ck.standardizer, line, cfg.eval.n_generate, r, th, seed);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    write_validity_csv(dir / "validity_curve.csv", rows);
    std::cout << "wrote " << rows.size() << " rows to " << (dir / "validity_curve.csv").string() << '\n';
    return 0;
}

struct LocalArgs {
    std::string config, checkpoint, data, out;
    std::optional<std::size_t> centers, n_per_center;
    std::optional<double> variance;
    std::optional<std::uint64_t> seed;
};

int run_local(const LocalArgs& a) {
    RunConfig cfg = base_config(a.config);
    apply_flag(a.centers, cfg.eval.local_centers);
    apply_flag(a.n_per_center, cfg.eval.local_n_per_center);
    apply_flag(a.variance, cfg.eval.local_variance);
    if (!a.data.empty()) cfg.data_path = a.data;
    if (!a.out.empty()) cfg.output_dir = a.out;
    cfg.validate();

    const Dataset ds = load_data(cfg.data_path);
    auto ck = load_model(a.checkpoint, DataShape::from_header(ds.header),
                         a.config.empty() ? std::nullopt : std::optional(cfg.arch));
    if (a.config.empty()) cfg.arch = ck.model.arch();
    if (cfg.eval.local_centers > ds.records.size())
        throw ConfigError("--centers exceeds the dataset size " + std::to_string(ds.records.size()));
    const ScientificLine line = line_of(ck, cfg, &ds);
    const std::uint64_t seed = a.seed.value_or(cfg.local_seed());

    const fs::path dir = cfg.output_dir;
    ensure_dir(dir);
    write_resolved(dir, cfg);

    // Centres are the first records of the data file; center_id is the record index.
    std::vector<SampleRecord> centers(ds.records.begin(),
                                      ds.records.begin() + static_cast<std::ptrdiff_t>(cfg.eval.local_centers));
    const auto spreads = local_sample(ck.model, ck.standardizer, line, centers, cfg.eval.local_n_per_center,
                                      cfg.eval.local_variance, seed);
    write_local_csv(dir / "local_sampling.csv", spreads);
    std::cout << "wrote " << spreads.size() << " centres to " << (dir / "local_sampling.csv").string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hyperspherical WAE-GAN for multimodal surrogate data"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Print help for every subcommand");

    GenDataArgs gd;
    auto* c_gen = app.add_subcommand("gen-data", "Generate a synthetic .jags dataset");
    c_gen->add_option("--config", gd.config, "JSON run config (defaults apply to missing keys)");
    c_gen->add_option("--out", gd.out, "Output .jags path (overrides data.path); a .summary.json is written next to it");
    c_gen->add_option("--seed", gd.seed, "Root seed (overrides seed)");
    c_gen->add_option("--n-samples", gd.n_samples, "Number of samples (overrides data.n_samples)");
    c_gen->add_option("--noise", gd.noise, "Constraint noise std (overrides data.constraint_noise)");

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "Train a model; writes checkpoint.swae, trainlog.csv, resolved-config.json");
    c_train->add_option("--config", tr.config, "JSON run config");
    c_train->add_option("--data", tr.data, "Input .jags file (overrides data.path)");
    c_train->add_option("--out", tr.out, "Output directory (overrides output_dir)");
    c_train->add_option("--seed", tr.seed, "Root seed (overrides seed)");
    c_train->add_option("--epochs", tr.epochs, "Training epochs (overrides train.epochs; 0 saves the initial model)");
    c_train->add_option("--batch-size", tr.batch_size, "Minibatch size (overrides train.batch_size)");
    c_train->add_option("--lr", tr.lr, "Adam learning rate (overrides train.lr)");
    c_train->add_option("--latent-dim", tr.latent_dim, "Latent dimension (overrides arch.latent_dim)");
    c_train->add_option("--lambda-adv", tr.lambda_adv, "Adversarial loss weight (overrides train.lambda_adv)");
    c_train->add_option("--w-scalar", tr.w_scalar, "Scalar reconstruction weight (overrides train.w_scalar)");
    c_train->add_flag("--wall-time", tr.wall_time, "Record wall_ms in trainlog.csv (otherwise 0, keeping the log deterministic)");
    c_train->add_flag("--quiet", tr.quiet, "Do not print per-epoch losses to stderr");

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "Reconstruction metrics, scientific line fits and PGM grids");
    c_eval->add_option("--config", ev.config, "JSON run config (use the run's resolved-config.json to reproduce its split)");
    c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
    c_eval->add_option("--data", ev.data, "Input .jags file (overrides data.path)");
    c_eval->add_option("--out", ev.out, "Output directory (overrides output_dir)");

    SampleArgs sa;
    auto* c_sample = app.add_subcommand("sample", "Generate samples from radius-scaled sphere points");
    c_sample->add_option("--config", sa.config, "JSON run config (threshold grid, arch check)");
    c_sample->add_option("--checkpoint", sa.checkpoint, "Checkpoint file")->required();
    c_sample->add_option("--n", sa.n, "Number of samples (overrides eval.n_generate)");
    c_sample->add_option("--radius", sa.radius, "Radius applied to the sphere points (default 1)");
    c_sample->add_option("--seed", sa.seed, "Sampling seed (default: derived from the root seed)");
    c_sample->add_option("--out", sa.out, "Output directory: samples.jags, residuals.csv, validity.csv");

    InterpArgs ip;
    auto* c_interp = app.add_subcommand("interpolate", "Linear latent interpolation between two data samples");
    c_interp->add_option("--config", ip.config, "JSON run config");
    c_interp->add_option("--checkpoint", ip.checkpoint, "Checkpoint file")->required();
    c_interp->add_option("--data", ip.data, "Input .jags file (overrides data.path)");
    c_interp->add_option("--index-a", ip.index_a, "Record index of the start sample (default: first eval.interp_pairs entry)");
    c_interp->add_option("--index-b", ip.index_b, "Record index of the end sample");
    c_interp->add_option("--steps", ip.steps, "Points on the path including both ends (overrides eval.interp_steps)");
    c_interp->add_option("--out", ip.out, "Output directory: interp_path.csv, grid_ch{c}.pgm");

    AblateArgs ab;
    auto* c_ablate = app.add_subcommand("ablate-radius", "Valid-sample counts versus generator input radius");
    c_ablate->add_option("--config", ab.config, "JSON run config");
    c_ablate->add_option("--checkpoint", ab.checkpoint, "Checkpoint file")->required();
    c_ablate->add_option("--data", ab.data, "Optional .jags file, checked against the checkpoint shape");
    c_ablate->add_option("--radii", ab.radii, "Radii to evaluate (overrides eval.radii)")->delimiter(',');
    c_ablate->add_option("--n", ab.n, "Samples per radius (overrides eval.n_generate)");
    c_ablate->add_option("--seed", ab.seed, "Sampling seed, shared by every radius (default: derived from the root seed)");
    c_ablate->add_option("--out", ab.out, "Output directory: validity_curve.csv");

    LocalArgs lo;
    auto* c_local = app.add_subcommand("local-sample", "Residual spread of samples drawn around encoded data points");
    c_local->add_option("--config", lo.config, "JSON run config");
    c_local->add_option("--checkpoint", lo.checkpoint, "Checkpoint file")->required();
    c_local->add_option("--data", lo.data, "Input .jags file (overrides data.path)");
    c_local->add_option("--centers", lo.centers, "Number of centres, taken as the first records (overrides eval.local_centers)");
    c_local->add_option("--n-per-center", lo.n_per_center, "Draws per centre (overrides eval.local_n_per_center)");
    c_local->add_option("--variance", lo.variance, "Variance of the latent perturbation (overrides eval.local_variance)");
    c_local->add_option("--seed", lo.seed, "Sampling seed (default: derived from the root seed)");
    c_local->add_option("--out", lo.out, "Output directory: local_sampling.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << code_name(ErrorCode::kConfig) << ": " << e.what() << '\n';
        return static_cast<int>(ErrorCode::kConfig);
    }

    try {
        if (*c_gen) return run_gen_data(gd);
        if (*c_train) return run_train(tr);
        if (*c_eval) return run_eval(ev);
        if (*c_sample) return run_sample(sa);
        if (*c_interp) return run_interpolate(ip);
        if (*c_ablate) return run_ablate(ab);
        if (*c_local) return run_local(lo);
    } catch (const Error& e) {
        std::cerr << code_name(e.code()) << ": " << e.what() << '\n';
        return static_cast<int>(e.code());
    } catch (const fs::filesystem_error& e) {
        std::cerr << code_name(ErrorCode::kIo) << ": " << e.what() << '\n';
        return static_cast<int>(ErrorCode::kIo);
    } catch (const std::exception& e) {
        std::cerr << "internal_error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
