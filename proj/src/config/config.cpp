#include "swae/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "swae/errors.hpp"
#include "swae/rng.hpp"

namespace swae {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& section, std::initializer_list<const char*> known) {
    if (!j.is_object()) throw ConfigError("config: section '" + section + "' must be an object");
    std::set<std::string> allowed(known.begin(), known.end());
    for (const auto& [key, _] : j.items()) {
        if (!allowed.count(key)) throw ConfigError("config: unknown key '" + key + "' in section '" + section + "'");
    }
}

template <typename V>
void read(const json& j, const char* key, V& dst, const std::string& section) {
    if (!j.contains(key)) return;
    try {
        dst = j.at(key).get<V>();
    } catch (const json::exception& e) {
        throw ConfigError("config: bad value for '" + section + "." + key + "': " + e.what());
    }
}

json data_json(const RunConfig& c) {
    const auto& d = c.data;
    return {{"n_samples", d.n_samples},
            {"height", d.height},
            {"width", d.width},
            {"channels", d.channels},
            {"n_scalars", d.n_scalars},
            {"constraint_slope", d.constraint_slope},
            {"constraint_intercept", d.constraint_intercept},
            {"constraint_noise", d.constraint_noise},
            {"amplitude_min", d.amplitude_min},
            {"amplitude_max", d.amplitude_max},
            {"train_fraction", c.train_fraction},
            {"path", c.data_path}};
}

json arch_json(const ArchConfig& a) {
    json ladder = json::array();
    for (const auto& s : a.conv_ladder) ladder.push_back({{"out_channels", s.out_channels}, {"stride", s.stride}});
    return {{"latent_dim", a.latent_dim},     {"conv_ladder", ladder},          {"scalar_width", a.scalar_width},
            {"fusion_width", a.fusion_width}, {"disc_widths", a.disc_widths}, {"leaky_slope", a.leaky_slope}};
}

json train_json(const TrainConfig& t) {
    return {{"epochs", t.epochs},         {"batch_size", t.batch_size}, {"lr", t.lr},
            {"beta1", t.beta1},           {"beta2", t.beta2},           {"adam_eps", t.adam_eps},
            {"lambda_adv", t.lambda_adv}, {"w_scalar", t.w_scalar},     {"record_wall_time", t.record_wall_time}};
}

json eval_json(const EvalConfig& e) {
    json pairs = json::array();
    for (const auto& [a, b] : e.interp_pairs) pairs.push_back({a, b});
    return {{"threshold_sigmas", e.threshold_sigmas},
            {"radii", e.radii},
            {"n_generate", e.n_generate},
            {"interp_pairs", pairs},
            {"interp_steps", e.interp_steps},
            {"local_centers", e.local_centers},
            {"local_n_per_center", e.local_n_per_center},
            {"local_variance", e.local_variance},
            {"grid_samples", e.grid_samples}};
}

}  // namespace

SyntheticConfig RunConfig::synthetic() const {
    SyntheticConfig s = data;
    s.seed = derive_seed(seed, "data");
    return s;
}

TrainConfig RunConfig::training() const {
    TrainConfig t = train;
    t.seed = seed;
    return t;
}

std::uint64_t RunConfig::split_seed() const { return derive_seed(seed, "split"); }
std::uint64_t RunConfig::eval_seed() const { return derive_seed(seed, "eval-prior"); }
std::uint64_t RunConfig::local_seed() const { return derive_seed(seed, "local-sample"); }

void RunConfig::validate() const {
    data.validate();
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("config: train_fraction must be in (0, 1)");
    validate_arch(arch, DataShape{data.channels, data.height, data.width, data.n_scalars});
    train.validate();
    for (double r : eval.radii)
        if (!(r > 0.0)) throw ConfigError("config: radii must be > 0");
    for (double s : eval.threshold_sigmas)
        if (!(s >= 0.0)) throw ConfigError("config: threshold sigmas must be >= 0");
    if (eval.interp_steps < 2) throw ConfigError("config: interp_steps must be >= 2");
    if (eval.local_n_per_center < 2) throw ConfigError("config: local_n_per_center must be >= 2");
    if (!(eval.local_variance > 0.0)) throw ConfigError("config: local_variance must be > 0");
    if (eval.n_generate < 1) throw ConfigError("config: n_generate must be >= 1");
}

std::string to_json_string(const RunConfig& cfg) {
    json j{{"seed", cfg.seed},
           {"data", data_json(cfg)},
           {"arch", arch_json(cfg.arch)},
           {"train", train_json(cfg.train)},
           {"eval", eval_json(cfg.eval)},
           {"output_dir", cfg.output_dir}};
    return j.dump(2) + "\n";
}

RunConfig parse_run_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: parse error: ") + e.what());
    }
    RunConfig c;
    reject_unknown(j, "<root>", {"seed", "data", "arch", "train", "eval", "output_dir"});
    read(j, "seed", c.seed, "<root>");
    read(j, "output_dir", c.output_dir, "<root>");

    if (j.contains("data")) {
        const auto& d = j["data"];
        reject_unknown(d, "data",
                       {"n_samples", "height", "width", "channels", "n_scalars", "constraint_slope",
                        "constraint_intercept", "constraint_noise", "amplitude_min", "amplitude_max",
                        "train_fraction", "path"});
        read(d, "n_samples", c.data.n_samples, "data");
        read(d, "height", c.data.height, "data");
        read(d, "width", c.data.width, "data");
        read(d, "channels", c.data.channels, "data");
        read(d, "n_scalars", c.data.n_scalars, "data");
        read(d, "constraint_slope", c.data.constraint_slope, "data");
        read(d, "constraint_intercept", c.data.constraint_intercept, "data");
        read(d, "constraint_noise", c.data.constraint_noise, "data");
        read(d, "amplitude_min", c.data.amplitude_min, "data");
        read(d, "amplitude_max", c.data.amplitude_max, "data");
        read(d, "train_fraction", c.train_fraction, "data");
        read(d, "path", c.data_path, "data");
    }
    if (j.contains("arch")) {
        const auto& a = j["arch"];
        reject_unknown(a, "arch",
                       {"latent_dim", "conv_ladder", "scalar_width", "fusion_width", "disc_widths", "leaky_slope"});
        read(a, "latent_dim", c.arch.latent_dim, "arch");
        if (a.contains("conv_ladder")) {
            if (!a["conv_ladder"].is_array()) throw ConfigError("config: arch.conv_ladder must be an array");
            c.arch.conv_ladder.clear();
            for (const auto& s : a["conv_ladder"]) {
                reject_unknown(s, "arch.conv_ladder", {"out_channels", "stride"});
                ConvStage st;
                read(s, "out_channels", st.out_channels, "arch.conv_ladder");
                read(s, "stride", st.stride, "arch.conv_ladder");
                c.arch.conv_ladder.push_back(st);
            }
        }
        read(a, "scalar_width", c.arch.scalar_width, "arch");
        read(a, "fusion_width", c.arch.fusion_width, "arch");
        read(a, "disc_widths", c.arch.disc_widths, "arch");
        read(a, "leaky_slope", c.arch.leaky_slope, "arch");
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        reject_unknown(t, "train",
                       {"epochs", "batch_size", "lr", "beta1", "beta2", "adam_eps", "lambda_adv", "w_scalar",
                        "record_wall_time"});
        read(t, "epochs", c.train.epochs, "train");
        read(t, "batch_size", c.train.batch_size, "train");
        read(t, "lr", c.train.lr, "train");
        read(t, "beta1", c.train.beta1, "train");
        read(t, "beta2", c.train.beta2, "train");
        read(t, "adam_eps", c.train.adam_eps, "train");
        read(t, "lambda_adv", c.train.lambda_adv, "train");
        read(t, "w_scalar", c.train.w_scalar, "train");
        read(t, "record_wall_time", c.train.record_wall_time, "train");
    }
    if (j.contains("eval")) {
        const auto& e = j["eval"];
        reject_unknown(e, "eval",
                       {"threshold_sigmas", "radii", "n_generate", "interp_pairs", "interp_steps", "local_centers",
                        "local_n_per_center", "local_variance", "grid_samples"});
        read(e, "threshold_sigmas", c.eval.threshold_sigmas, "eval");
        read(e, "radii", c.eval.radii, "eval");
        read(e, "n_generate", c.eval.n_generate, "eval");
        read(e, "interp_pairs", c.eval.interp_pairs, "eval");
        read(e, "interp_steps", c.eval.interp_steps, "eval");
        read(e, "local_centers", c.eval.local_centers, "eval");
        read(e, "local_n_per_center", c.eval.local_n_per_center, "eval");
        read(e, "local_variance", c.eval.local_variance, "eval");
        read(e, "grid_samples", c.eval.grid_samples, "eval");
    }
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << to_json_string(cfg);
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace swae
