#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "swae/data.hpp"
#include "swae/model.hpp"
#include "swae/training.hpp"

namespace swae {

struct EvalConfig {
    std::vector<double> threshold_sigmas{0.5, 1.0, 2.0, 3.0};
    std::vector<double> radii{0.25, 0.5, 1.0, 2.0, 4.0};
    std::size_t n_generate = 1000;
    std::vector<std::pair<std::size_t, std::size_t>> interp_pairs{{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}};
    std::size_t interp_steps = 8;
    std::size_t local_centers = 5;
    std::size_t local_n_per_center = 200;
    double local_variance = 1.0;
    std::size_t grid_samples = 8;

    bool operator==(const EvalConfig&) const = default;
};

/// Complete description of an experiment. Every component seed derives from
/// `seed`:
///   data generation  derive_seed(seed, "data")
///   train/test split derive_seed(seed, "split")
///   parameter init   derive_seed(seed, "init")
///   epoch shuffling  derive_seed(seed, "shuffle")
///   training prior   derive_seed(seed, "prior")
///   eval sampling    derive_seed(seed, "eval-prior")
///   local sampling   derive_seed(seed, "local-sample")
struct RunConfig {
    std::uint64_t seed = 0;
    SyntheticConfig data;
    double train_fraction = 0.9;
    std::string data_path = "data.jags";
    ArchConfig arch;
    TrainConfig train;
    EvalConfig eval;
    std::string output_dir = "run";

    SyntheticConfig synthetic() const;
    TrainConfig training() const;
    std::uint64_t split_seed() const;
    std::uint64_t eval_seed() const;
    std::uint64_t local_seed() const;

    void validate() const;
};

std::string to_json_string(const RunConfig& cfg);
/// Missing keys take defaults; unknown keys raise ConfigError.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace swae
