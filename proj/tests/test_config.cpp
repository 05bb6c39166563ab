#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "support/temp_dir.hpp"
#include "swae/config.hpp"
#include "swae/errors.hpp"

using namespace swae;

TEST(RunConfig, DefaultsRoundTrip) {
    RunConfig c;
    const auto text = to_json_string(c);
    EXPECT_EQ(to_json_string(parse_run_config(text)), text);
}

TEST(RunConfig, EveryDefaultIsMaterialized) {
    const auto j = nlohmann::json::parse(to_json_string(RunConfig{}));
    for (const char* k : {"seed", "data", "arch", "train", "eval", "output_dir"}) EXPECT_TRUE(j.contains(k)) << k;
    EXPECT_EQ(j["train"]["beta1"], 0.5);
    EXPECT_EQ(j["train"]["beta2"], 0.999);
    EXPECT_EQ(j["train"]["lr"], 1e-3);
    EXPECT_EQ(j["arch"]["latent_dim"], 16);
    EXPECT_EQ(j["eval"]["radii"], (std::vector<double>{0.25, 0.5, 1, 2, 4}));
    EXPECT_EQ(j["data"]["train_fraction"], 0.9);
}

TEST(RunConfig, NonDefaultRoundTrip) {
    RunConfig c;
    c.seed = 123456789012345ull;
    c.data.n_samples = 77;
    c.data.constraint_noise = 0.125;
    c.train_fraction = 0.75;
    c.arch.latent_dim = 8;
    c.arch.conv_ladder = {{16, 2}, {8, 1}};
    c.arch.disc_widths = {7};
    c.train.epochs = 3;
    c.train.lr = 3.3e-4;
    c.eval.radii = {0.1, 10};
    c.eval.interp_pairs = {{4, 9}};
    c.output_dir = "x/y";
    const auto back = parse_run_config(to_json_string(c));
    EXPECT_EQ(to_json_string(back), to_json_string(c));
    EXPECT_EQ(back.seed, c.seed);
    EXPECT_EQ(back.arch, c.arch);
    EXPECT_EQ(back.eval, c.eval);
    EXPECT_EQ(back.train.lr, c.train.lr);
}

TEST(RunConfig, PartialDocumentTakesDefaults) {
    const auto c = parse_run_config(R"({"seed": 5, "train": {"epochs": 7}})");
    EXPECT_EQ(c.seed, 5u);
    EXPECT_EQ(c.train.epochs, 7u);
    EXPECT_EQ(c.train.batch_size, 64u);
    EXPECT_EQ(c.arch, ArchConfig{});
}

TEST(RunConfig, Errors) {
    EXPECT_THROW(parse_run_config("{not json"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"sed": 1})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"train": {"epoch": 1}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"train": {"epochs": "many"}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"train": {"batch_size": 1}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"data": {"train_fraction": 1.5}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"eval": {"radii": [1, -1]}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"data": {"height": 10}})"), ConfigError);
    EXPECT_THROW(load_run_config("/nonexistent/cfg.json"), IoError);
}

TEST(RunConfig, FileRoundTrip) {
    TempDir dir;
    RunConfig c;
    c.seed = 9;
    save_run_config(dir / "c.json", c);
    EXPECT_EQ(to_json_string(load_run_config(dir / "c.json")), to_json_string(c));
}

TEST(RunConfig, ComponentSeedsAreDistinctAndStable) {
    RunConfig c;
    c.seed = 42;
    std::set<std::uint64_t> seeds{c.synthetic().seed, c.split_seed(), c.eval_seed(), c.local_seed(),
                                  derive_seed(42, "init"), derive_seed(42, "shuffle"), derive_seed(42, "prior")};
    EXPECT_EQ(seeds.size(), 7u);
    EXPECT_EQ(c.synthetic().seed, derive_seed(42, "data"));
    EXPECT_EQ(c.training().seed, 42u);
    RunConfig d;
    d.seed = 43;
    EXPECT_NE(d.split_seed(), c.split_seed());
}

TEST(Rng, Reproducible) {
    Rng a(1), b(1);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
    Rng c(2);
    for (int i = 0; i < 1000; ++i) {
        const double u = c.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
        EXPECT_LT(c.below(7), 7u);
    }
    EXPECT_NE(derive_seed(1, "data"), derive_seed(1, "init"));
    EXPECT_NE(derive_seed(1, std::uint64_t{0}), derive_seed(1, std::uint64_t{1}));
}
