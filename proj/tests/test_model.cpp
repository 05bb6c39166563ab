#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <gtest/gtest.h>

#include "support/composite.hpp"
#include "support/op_catalog.hpp"
#include "support/temp_dir.hpp"
#include "swae/errors.hpp"
#include "swae/model.hpp"
#include "swae/training.hpp"

using namespace swae;

namespace {

Tensor random_images(Rng& rng, std::size_t n, const DataShape& s) {
    std::vector<float> v(n * s.channels * s.height * s.width);
    for (auto& x : v) x = static_cast<float>(rng.uniform());
    return Tensor({n, s.channels, s.height, s.width}, std::move(v));
}

Tensor random_rows(Rng& rng, std::size_t n, std::size_t d) {
    std::vector<float> v(n * d);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return Tensor({n, d}, std::move(v));
}

std::vector<float> row(const Tensor& t, std::size_t r) {
    const auto d = t.numel() / t.dim(0);
    return {t.values().begin() + long(r * d), t.values().begin() + long((r + 1) * d)};
}

}  // namespace

TEST(Encoder, OutputShape) {
    Model<float> m(ArchConfig{}, DataShape{}, 1);
    Rng rng(1);
    auto z = m.encode(random_images(rng, 8, DataShape{}), random_rows(rng, 8, 15), ops::NormMode::kTrain);
    EXPECT_EQ(z.shape(), (Shape{8, 16}));
}

TEST(Encoder, ZeroInputStaysFinite) {
    Model<float> m(ArchConfig{}, DataShape{}, 2);
    auto z = m.encode(Tensor::zeros({4, 4, 16, 16}), Tensor::zeros({4, 15}), ops::NormMode::kTrain);
    for (float v : z.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Encoder, EvalModeRowsIndependent) {
    Model<float> m(ArchConfig{}, DataShape{}, 3);
    Rng rng(3);
    auto one = random_images(rng, 1, DataShape{});
    auto sc = random_rows(rng, 1, 15);
    std::vector<float> img2(one.values());
    img2.insert(img2.end(), one.values().begin(), one.values().end());
    std::vector<float> sc2(sc.values());
    sc2.insert(sc2.end(), sc.values().begin(), sc.values().end());
    auto z = m.encode(Tensor({2, 4, 16, 16}, img2), Tensor({2, 15}, sc2), ops::NormMode::kEval);
    EXPECT_EQ(row(z, 0), row(z, 1));
}

TEST(Encoder, RejectsWrongShape) {
    Model<float> m(ArchConfig{}, DataShape{}, 3);
    EXPECT_THROW(m.encode(Tensor::zeros({2, 3, 16, 16}), Tensor::zeros({2, 15}), ops::NormMode::kEval), ShapeError);
    EXPECT_THROW(m.encode(Tensor::zeros({2, 4, 16, 16}), Tensor::zeros({2, 14}), ops::NormMode::kEval), ShapeError);
}

TEST(Projection, HandCase) {
    auto p = project_to_sphere(Tensor64({1, 5}, {3, 4, 0, 0, 0}));
    EXPECT_EQ(p.values(), (std::vector<double>{0.6, 0.8, 0, 0, 0}));
    EXPECT_TRUE(p.on_sphere());
}

TEST(Projection, IdempotentAndScaleInvariant) {
    Rng rng(4);
    auto z = random_rows(rng, 50, 16);
    auto p = project_to_sphere(z);
    auto pp = project_to_sphere(p);
    for (std::size_t i = 0; i < p.numel(); ++i) EXPECT_NEAR(pp.values()[i], p.values()[i], 1e-7);
    auto p5 = project_to_sphere(ops::scale(z, 5.0f));
    for (std::size_t i = 0; i < p.numel(); ++i) EXPECT_NEAR(p5.values()[i], p.values()[i], 1e-7);
}

TEST(Projection, DegenerateRowNamed) {
    try {
        project_to_sphere(Tensor64({3, 2}, {1, 0, 0, 0, 0, 1}));
        FAIL();
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("degenerate latent at row 1"), std::string::npos) << e.what();
    }
}

TEST(Generator, ShapesAndRange) {
    Model<float> m(ArchConfig{}, DataShape{}, 5);
    Rng rng(5);
    auto [img, sc] = m.generate(project_to_sphere(random_rows(rng, 8, 16)), ops::NormMode::kTrain);
    EXPECT_EQ(img.shape(), (Shape{8, 4, 16, 16}));
    EXPECT_EQ(sc.shape(), (Shape{8, 15}));
    for (float v : img.values()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(Generator, ScaledInputsRun) {
    Model<float> m(ArchConfig{}, DataShape{}, 6);
    Rng rng(6);
    auto p = project_to_sphere(random_rows(rng, 8, 16));
    for (float r : {0.25f, 4.0f}) {
        auto [img, sc] = m.generate(ops::scale(p, r), ops::NormMode::kEval);
        for (float v : sc.values()) EXPECT_TRUE(std::isfinite(v));
    }
}

TEST(Generator, EvalModeDeterministic) {
    Model<float> m(ArchConfig{}, DataShape{}, 7);
    Rng rng(7);
    auto p = project_to_sphere(random_rows(rng, 8, 16));
    auto a = m.generate(p, ops::NormMode::kEval);
    auto b = m.generate(p, ops::NormMode::kEval);
    EXPECT_EQ(a.first.values(), b.first.values());
    EXPECT_EQ(a.second.values(), b.second.values());
}

TEST(Discriminator, OutputsInOpenUnitInterval) {
    Model<float> m(ArchConfig{}, DataShape{}, 8);
    Rng rng(8);
    auto d = m.discriminate(random_rows(rng, 8, 16));
    EXPECT_EQ(d.shape(), (Shape{8, 1}));
    for (float v : d.values()) {
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
    }
}

TEST(Discriminator, ZeroFinalLayerGivesHalf) {
    Model<float> m(ArchConfig{}, DataShape{}, 9);
    for (auto& v : m.param("disc.out.w").values()) v = 0.0f;
    for (auto& v : m.param("disc.out.b").values()) v = 0.0f;
    Rng rng(9);
    const auto d = m.discriminate(random_rows(rng, 8, 16));
    for (float v : d.values()) EXPECT_EQ(v, 0.5f);
}

TEST(Discriminator, PermutationEquivariant) {
    Model<float> m(ArchConfig{}, DataShape{}, 10);
    Rng rng(10);
    auto z = random_rows(rng, 6, 16);
    const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    std::vector<float> pz;
    for (auto i : perm) {
        auto r = row(z, i);
        pz.insert(pz.end(), r.begin(), r.end());
    }
    auto d = m.discriminate(z);
    auto dp = m.discriminate(Tensor({6, 16}, pz));
    for (std::size_t k = 0; k < perm.size(); ++k) EXPECT_EQ(dp.values()[k], d.values()[perm[k]]);
}

TEST(Discriminator, RejectsProjectedLatents) {
    Model<float> m(ArchConfig{}, DataShape{}, 11);
    Rng rng(11);
    auto p = project_to_sphere(random_rows(rng, 4, 16));
    EXPECT_THROW(m.discriminate(p), ShapeError);
    // Provenance survives further ops.
    EXPECT_THROW(m.discriminate(ops::scale(p, 2.0f)), ShapeError);
}

TEST(ModelInit, SameSeedSameParams) {
    Model<float> a(ArchConfig{}, DataShape{}, 12), b(ArchConfig{}, DataShape{}, 12), c(ArchConfig{}, DataShape{}, 13);
    EXPECT_EQ(a.state(), b.state());
    EXPECT_NE(a.state(), c.state());
}

TEST(ModelInit, ParamGroupsPartition) {
    Model<float> m(ArchConfig{}, DataShape{}, 1);
    std::size_t n = 0;
    for (auto g : {ParamGroup::kEncoder, ParamGroup::kGenerator, ParamGroup::kDiscriminator}) n += m.group(g).size();
    EXPECT_EQ(n, m.params().size());
    for (const auto& p : m.params()) {
        const auto prefix = p.name.substr(0, 4);
        const auto want = p.group == ParamGroup::kEncoder ? "enc." : p.group == ParamGroup::kGenerator ? "gen." : "disc";
        EXPECT_EQ(prefix, want) << p.name;
    }
}

TEST(ModelInit, RejectsIndivisibleImage) {
    EXPECT_THROW(Model<float>(ArchConfig{}, DataShape{4, 10, 10, 15}, 1), ConfigError);
}

TEST(Checkpoint, RoundtripBitwise) {
    TempDir dir;
    Model<float> m(ArchConfig{}, DataShape{}, 14);
    // Perturb the running stats so buffers are exercised too.
    Rng rng(14);
    m.encode(random_images(rng, 4, DataShape{}), random_rows(rng, 4, 15), ops::NormMode::kTrain);
    ScalarStandardizer st{std::vector<float>(15, 0.25f), std::vector<float>(15, 2.0f)};
    Checkpoint ck{m, st, ScientificLine{1.01, -0.002, 0.0099, 1800}};
    save_checkpoint(dir / "a.swae", ck);
    auto back = load_checkpoint(dir / "a.swae");
    EXPECT_EQ(back.model.state(), m.state());
    EXPECT_EQ(back.model.arch(), m.arch());
    EXPECT_EQ(back.model.shape(), m.shape());
    EXPECT_EQ(back.standardizer.mean, st.mean);
    EXPECT_EQ(back.standardizer.std, st.std);
    ASSERT_TRUE(back.line.has_value());
    EXPECT_EQ(back.line->slope, static_cast<float>(1.01));
    save_checkpoint(dir / "b.swae", back);
    std::ifstream fa(dir / "a.swae", std::ios::binary), fb(dir / "b.swae", std::ios::binary);
    EXPECT_EQ(std::string(std::istreambuf_iterator<char>(fa), {}), std::string(std::istreambuf_iterator<char>(fb), {}));
}

TEST(Checkpoint, LatentMismatchNamesLatentLayer) {
    TempDir dir;
    ArchConfig small;
    small.latent_dim = 8;
    Model<float> m(small, DataShape{}, 15);
    save_checkpoint(dir / "l8.swae", Checkpoint{m, ScalarStandardizer{std::vector<float>(15, 0.f), std::vector<float>(15, 1.f)}, std::nullopt});
    try {
        load_checkpoint(dir / "l8.swae", ArchConfig{}, DataShape{});
        FAIL();
    } catch (const ArchMismatchError& e) {
        EXPECT_EQ(e.tensor_name(), "enc.latent.w");
        EXPECT_NE(std::string(e.what()).find("enc.latent"), std::string::npos) << e.what();
        EXPECT_EQ(e.code(), ErrorCode::kShape);
    }
}

TEST(Checkpoint, BadMagicAndTruncation) {
    TempDir dir;
    Model<float> m(ArchConfig{}, DataShape{}, 16);
    save_checkpoint(dir / "c.swae", Checkpoint{m, ScalarStandardizer{std::vector<float>(15, 0.f), std::vector<float>(15, 1.f)}, std::nullopt});
    std::ifstream in(dir / "c.swae", std::ios::binary);
    std::string bytes(std::istreambuf_iterator<char>(in), {});
    in.close();
    std::string bad = bytes;
    bad[0] = 'X';
    std::ofstream(dir / "bad.swae", std::ios::binary) << bad;
    EXPECT_THROW(load_checkpoint(dir / "bad.swae"), FormatError);
    std::ofstream(dir / "short.swae", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    EXPECT_THROW(load_checkpoint(dir / "short.swae"), FormatError);
    EXPECT_THROW(load_checkpoint(dir / "missing.swae"), IoError);
}

TEST(Standardizer, FitApplyInvert) {
    std::vector<SampleRecord> recs;
    for (int i = 0; i < 4; ++i) recs.push_back({{0.f}, {float(i), 5.f}});
    auto st = ScalarStandardizer::fit(recs);
    EXPECT_FLOAT_EQ(st.mean[0], 1.5f);
    EXPECT_FLOAT_EQ(st.std[0], std::sqrt(1.25f));  // population std
    EXPECT_EQ(st.std[1], 1.0f);                    // constant column keeps unit scale
    const std::vector<float> x{3.f, 5.f};
    auto z = st.apply(x);
    EXPECT_EQ(z[1], 0.0f);
    auto back = st.invert(z);
    EXPECT_NEAR(back[0], 3.f, 1e-6);
    EXPECT_EQ(back[1], 5.f);
}

TEST(MakeBatch, PacksRecords) {
    DataShape s{1, 2, 2, 2};
    SampleRecord a{{1, 2, 3, 4}, {10, 20}}, b{{5, 6, 7, 8}, {30, 40}};
    auto [img, sc] = make_batch<float>({&a, &b}, s, nullptr);
    EXPECT_EQ(img.shape(), (Shape{2, 1, 2, 2}));
    EXPECT_EQ(img.values(), (std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8}));
    EXPECT_EQ(sc.values(), (std::vector<float>{10, 20, 30, 40}));
}

TEST(Composite, EncoderProjectGeneratorLossGradients) {
    auto r = swae::testing::composite_grad_check(17, swae::testing::kOpEps);
    EXPECT_GT(r.n_checked, 100u);
    EXPECT_LT(r.max_rel_err, 1e-3) << r.worst_name;
}
