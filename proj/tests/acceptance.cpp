// Acceptance suite: one PASS/FAIL line per criterion, printed in order at the
// end. Diagnostic lines start with "# ". Exit status is 0 only if every
// criterion passes.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "support/composite.hpp"
#include "support/op_catalog.hpp"
#include "support/temp_dir.hpp"
#include "swae/config.hpp"
#include "swae/evaluation.hpp"
#include "swae/training.hpp"

using namespace swae;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
    bool pass = false;
    std::string summary;
};

std::map<int, Verdict> verdicts;

void record(int id, bool pass, const std::string& summary) {
    verdicts[id] = {pass, summary};
    std::cout << "# criterion " << id << (pass ? " passed: " : " failed: ") << summary << std::endl;
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// Independent least squares slope/intercept.
std::pair<double, double> ols(const std::vector<LinePoint>& pts) {
    double mx = 0, my = 0;
    for (const auto& p : pts) {
        mx += p.image_temp;
        my += p.t_ion;
    }
    mx /= double(pts.size());
    my /= double(pts.size());
    double sxy = 0, sxx = 0;
    for (const auto& p : pts) {
        sxy += (p.image_temp - mx) * (p.t_ion - my);
        sxx += (p.image_temp - mx) * (p.image_temp - mx);
    }
    return {sxy / sxx, my - sxy / sxx * mx};
}

// ---------------------------------------------------------------------------

void criterion1() {
    const auto t0 = Clock::now();
    Rng rng(derive_seed(1, "acceptance-gradcheck"));
    bool ok = true;
    std::size_t n_ops = 0;
    std::string worst_op;
    double worst_ratio = 0.0;
    for (const auto& c : swae::testing::op_catalog_cases()) {
        ++n_ops;
        for (int i = 0; i < 20; ++i) {
            const auto r = c.run(rng);
            ok = ok && r.pass;
            if (r.max_rel_err / c.tol > worst_ratio) {
                worst_ratio = r.max_rel_err / c.tol;
                worst_op = c.name + " err " + fmt(r.max_rel_err, 3);
            }
        }
    }
    const auto comp = swae::testing::composite_grad_check(derive_seed(1, "acceptance-composite"), swae::testing::kOpEps);
    const bool comp_ok = comp.max_rel_err < 1e-3;
    const double secs = seconds_since(t0);
    record(1, ok && comp_ok && secs < 60.0,
           std::to_string(n_ops) + " ops x 20 instances, worst " + worst_op + "; composite max rel err " +
               fmt(comp.max_rel_err, 3) + " over " + std::to_string(comp.n_checked) + " entries; " + fmt(secs, 3) +
               " s");
}

void criterion2() {
    Rng rng(derive_seed(2, "acceptance-projection"));
    const std::size_t n = 100000, d = 16;
    std::vector<float> v(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        const double mag = std::pow(10.0, rng.uniform(-3, 3));
        for (std::size_t j = 0; j < d; ++j) v[i * d + j] = static_cast<float>(mag * rng.normal());
    }
    const Tensor z({n, d}, v);
    const Tensor p = project_to_sphere(z);
    double worst_norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += double(p.values()[i * d + j]) * p.values()[i * d + j];
        worst_norm = std::max(worst_norm, std::abs(std::sqrt(s) - 1.0));
    }
    double worst_scale = 0.0;
    for (float k : {1e-3f, 1.0f, 1e3f}) {
        const Tensor pk = project_to_sphere(ops::scale(z, k));
        for (std::size_t i = 0; i < n * d; ++i)
            worst_scale = std::max(worst_scale, double(std::abs(pk.values()[i] - p.values()[i])));
    }
    record(2, worst_norm <= 1e-6 && worst_scale <= 1e-6,
           "1e5 vectors: max |norm-1| " + fmt(worst_norm, 3) + ", max |P(kz)-P(z)| " + fmt(worst_scale, 3));
}

void criterion3() {
    bool ok = true;
    std::string detail;
    for (std::size_t d : {3, 16, 64}) {
        Rng rng(derive_seed(3, d));
        const double r = uniformity_statistic(project_to_sphere(sample_prior(10000, d, rng)));
        ok = ok && r < 0.03;
        detail += "d=" + std::to_string(d) + " R=" + fmt(r, 3) + " ";
    }
    record(3, ok, detail + "(bound 0.03)");
}

// ---------------------------------------------------------------------------
// Desk-scale training runs shared by criteria 4-8.

struct Run {
    std::uint64_t seed;
    RunConfig cfg;
    std::vector<SampleRecord> train_set, test_set;
    Model<float> model;
    ScalarStandardizer standardizer;
    ScientificLine line;
    double minutes = 0;
};

RunConfig desk_config(std::uint64_t seed) {
    RunConfig c;  // 2000 samples, 16x16x4, 15 scalars, noise 0.01, d = 16
    c.seed = seed;
    c.train.epochs = 200;
    // The default adversarial weight of 10 swamps the scalar reconstruction
    // term at this scale; 1.0 keeps the prior match while R2 climbs.
    c.train.lambda_adv = 1.0;
    if (const char* e = std::getenv("SWAE_ACCEPT_EPOCHS")) c.train.epochs = std::stoul(e);
    return c;
}

Run train_run(std::uint64_t seed) {
    const auto t0 = Clock::now();
    RunConfig cfg = desk_config(seed);
    const Dataset ds = generate_dataset(cfg.synthetic());
    auto [train_set, test_set] = split_dataset(ds.records, cfg.train_fraction, cfg.split_seed());
    auto res = train(train_set, DataShape::from_header(ds.header), cfg.arch, cfg.training(), [&](const EpochRecord& r) {
        if (r.epoch % 25 == 0)
            std::cout << "#   seed " << seed << " epoch " << r.epoch << " img " << fmt(r.recon_image_mse)
                      << " scalar " << fmt(r.recon_scalar_mse) << " adv " << fmt(r.adv_loss) << " disc "
                      << fmt(r.disc_loss) << std::endl;
    });
    Run run{seed, cfg, std::move(train_set), std::move(test_set), std::move(res.model), std::move(res.standardizer),
            {}, 0};
    run.line = fit_scientific_line(line_points(run.train_set));
    run.minutes = seconds_since(t0) / 60.0;
    return run;
}

void criteria_4_to_8(std::vector<Run>& runs) {
    // 4: reconstruction quality.
    int ok4 = 0;
    double worst_minutes = 0;
    std::string d4;
    for (auto& r : runs) {
        const auto m = evaluate_reconstruction(r.model, r.standardizer, r.test_set);
        const double r2 = m.r2.at(0).value_or(-INFINITY);
        const bool ok = m.image_mse < 0.01 && r2 > 0.9;
        ok4 += ok;
        worst_minutes = std::max(worst_minutes, r.minutes);
        d4 += "seed " + std::to_string(r.seed) + ": mse " + fmt(m.image_mse, 3) + " r2[0] " + fmt(r2, 3) +
              (ok ? " ok; " : " miss; ");
        std::cout << "#   seed " << r.seed << " r2 per scalar:";
        for (const auto& v : m.r2) std::cout << ' ' << (v ? fmt(*v, 3) : "nan");
        std::cout << std::endl;
    }
    record(4, ok4 >= 2, d4 + std::to_string(ok4) + "/3 seeds pass (need 2); slowest run " + fmt(worst_minutes, 3) + " min");

    // 5: line recovered from training reconstructions.
    int ok5 = 0;
    std::string d5;
    for (auto& r : runs) {
        const auto raw = ols(line_points(r.train_set));
        const auto rec = fit_scientific_line(line_points(reconstruct(r.model, r.standardizer, r.train_set)));
        const bool ok = std::abs(rec.slope - 1.0) <= 0.1;
        ok5 += ok;
        d5 += "seed " + std::to_string(r.seed) + ": raw slope " + fmt(raw.first) + ", recon slope " + fmt(rec.slope) +
              (ok ? " ok; " : " miss; ");
    }
    record(5, ok5 == 3, d5 + "tolerance +-0.1 of 1.0 on every seed");

    // 6 and 7: radius ablation.
    const std::vector<double> radii{0.25, 0.5, 1.0, 2.0, 4.0};
    bool mono = true;
    int ok7 = 0;
    std::string d7;
    for (auto& r : runs) {
        const auto th = thresholds_from_sigmas(r.line, kDefaultThresholdSigmas);
        std::map<double, std::size_t> at1sigma;
        std::cout << "#   seed " << r.seed << " n_valid at thresholds {0.5,1,2,3} sigma:";
        for (double radius : radii) {
            const auto rows = generate_and_score(r.model, r.standardizer, r.line, 1000, radius, th, r.cfg.eval_seed());
            for (std::size_t i = 1; i < rows.size(); ++i) mono = mono && rows[i].n_valid >= rows[i - 1].n_valid;
            at1sigma[radius] = rows[1].n_valid;
            std::cout << " r=" << radius << "[";
            for (std::size_t i = 0; i < rows.size(); ++i) std::cout << (i ? "," : "") << rows[i].n_valid;
            std::cout << "]";
        }
        std::cout << std::endl;
        const bool ok = at1sigma[1.0] >= at1sigma[0.25] && at1sigma[1.0] >= at1sigma[4.0];
        ok7 += ok;
        d7 += "seed " + std::to_string(r.seed) + ": n_valid(0.25/1/4) " + std::to_string(at1sigma[0.25]) + "/" +
              std::to_string(at1sigma[1.0]) + "/" + std::to_string(at1sigma[4.0]) + (ok ? " ok; " : " miss; ");
    }
    record(6, mono, "n_valid non-decreasing over the threshold grid for every model and radius");
    record(7, ok7 >= 2, d7 + std::to_string(ok7) + "/3 seeds (need 2)");

    // 8: interpolation endpoints.
    auto& r = runs.front();
    bool exact = true;
    std::size_t pairs = 0, interior = 0, interior_valid = 0;
    double interior_abs = 0;
    for (const auto& [a, b] : r.cfg.eval.interp_pairs) {
        const auto& ra = r.test_set.at(a);
        const auto& rb = r.test_set.at(b);
        const auto path = interpolate_latent(r.model, r.standardizer, r.line, ra, rb, r.cfg.eval.interp_steps);
        exact = exact && path.front().sample == autoencode_one(r.model, r.standardizer, ra) &&
                path.back().sample == autoencode_one(r.model, r.standardizer, rb);
        for (std::size_t i = 1; i + 1 < path.size(); ++i) {
            ++interior;
            interior_abs += std::abs(path[i].residual);
            interior_valid += std::abs(path[i].residual) <= r.line.train_residual_std;
        }
        std::cout << "#   pair (" << a << "," << b << ") residuals:";
        for (const auto& p : path) std::cout << ' ' << fmt(p.residual, 3);
        std::cout << std::endl;
        ++pairs;
    }
    record(8, exact && pairs >= 5,
           std::to_string(pairs) + " pairs, endpoints bit-identical: " + (exact ? "yes" : "no") +
               "; interior mean |residual| " + fmt(interior_abs / double(interior), 3) + ", " +
               std::to_string(interior_valid) + "/" + std::to_string(interior) + " interior points within 1 sigma (" +
               fmt(r.line.train_residual_std, 3) + ")");
}

// ---------------------------------------------------------------------------

void criterion9() {
    TempDir dir;
    bool ok = true;
    std::string detail;

    // Two identical short runs: trainlog.csv and validity_curve.csv bytes.
    auto short_run = [&](const std::string& tag) {
        RunConfig cfg = desk_config(9);
        cfg.train.epochs = 2;
        const Dataset ds = generate_dataset(cfg.synthetic());
        const auto [tr, te] = split_dataset(ds.records, cfg.train_fraction, cfg.split_seed());
        auto res = train(tr, DataShape::from_header(ds.header), cfg.arch, cfg.training());
        res.log.write_csv(dir / (tag + "-trainlog.csv"));
        const auto line = fit_scientific_line(line_points(tr));
        const auto th = thresholds_from_sigmas(line, cfg.eval.threshold_sigmas);
        std::vector<ValidityRow> rows;
        for (double r : cfg.eval.radii) {
            auto part = generate_and_score(res.model, res.standardizer, line, 200, r, th, cfg.eval_seed());
            rows.insert(rows.end(), part.begin(), part.end());
        }
        write_validity_csv(dir / (tag + "-validity_curve.csv"), rows);
    };
    short_run("a");
    short_run("b");
    const bool same_log = read_bytes(dir / "a-trainlog.csv") == read_bytes(dir / "b-trainlog.csv");
    const bool same_curve = read_bytes(dir / "a-validity_curve.csv") == read_bytes(dir / "b-validity_curve.csv");
    ok = ok && same_log && same_curve;
    detail += std::string("trainlog identical ") + (same_log ? "yes" : "no") + ", validity_curve identical " +
              (same_curve ? "yes" : "no");

    // .jags roundtrip and size.
    const Dataset ds = generate_dataset(desk_config(9).synthetic());
    write_dataset(dir / "d.jags", ds);
    const auto size = fs::file_size(dir / "d.jags");
    const Dataset back = read_dataset(dir / "d.jags");
    bool jags_same = back.header == ds.header && back.records.size() == ds.records.size();
    for (std::size_t i = 0; jags_same && i < ds.records.size(); ++i)
        jags_same = std::memcmp(back.records[i].image.data(), ds.records[i].image.data(), ds.records[i].image.size() * 4) == 0 &&
                    std::memcmp(back.records[i].scalars.data(), ds.records[i].scalars.data(), ds.records[i].scalars.size() * 4) == 0;
    write_dataset(dir / "d2.jags", back);
    jags_same = jags_same && read_bytes(dir / "d.jags") == read_bytes(dir / "d2.jags");
    ok = ok && jags_same && size == 8312032u;
    detail += std::string("; jags roundtrip ") + (jags_same ? "exact" : "differs") + ", size " + std::to_string(size);

    // Checkpoint roundtrip.
    Model<float> m(ArchConfig{}, DataShape{}, 9);
    {
        Rng rng(9);
        std::vector<float> img(8 * 1024), sc(8 * 15);
        for (auto& v : img) v = static_cast<float>(rng.uniform());
        for (auto& v : sc) v = static_cast<float>(rng.normal());
        m.encode(Tensor({8, 4, 16, 16}, img), Tensor({8, 15}, sc), ops::NormMode::kTrain);  // moves BN buffers
    }
    save_checkpoint(dir / "c.swae", Checkpoint{m, ScalarStandardizer::fit(ds.records), ScientificLine{1, 0, 0.01, 2000}});
    const auto ck = load_checkpoint(dir / "c.swae");
    save_checkpoint(dir / "c2.swae", ck);
    const bool ck_same = ck.model.state() == m.state() && read_bytes(dir / "c.swae") == read_bytes(dir / "c2.swae");
    ok = ok && ck_same;
    detail += std::string("; checkpoint roundtrip ") + (ck_same ? "exact" : "differs");
    record(9, ok, detail);
}

void criterion10() {
    RunConfig cfg = desk_config(10);
    cfg.data.n_samples = 256;
    const Dataset ds = generate_dataset(cfg.synthetic());
    const auto st = ScalarStandardizer::fit(ds.records);
    Model<float> model(cfg.arch, DataShape::from_header(ds.header), derive_seed(10, "init"));
    WaeGanTrainer trainer(model, cfg.training(), derive_seed(10, "prior"));

    auto snapshot = [&] {
        std::vector<std::vector<float>> s;
        for (const auto& p : model.params()) s.push_back(p.tensor.values());
        return s;
    };
    bool iso = true;
    double worst_dev = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start + 64 <= ds.records.size(); start += 64) {
        std::vector<const SampleRecord*> ptrs;
        for (std::size_t i = start; i < start + 64; ++i) ptrs.push_back(&ds.records[i]);
        const auto [img, sc] = make_batch<float>(ptrs, DataShape::from_header(ds.header), &st);
        auto before = snapshot();
        auto mid = before;
        const auto losses = trainer.step(img, sc, [&](StepPhase ph) {
            const auto now = snapshot();
            const auto& ref = ph == StepPhase::kDiscriminator ? before : mid;
            bool any = false;
            for (std::size_t i = 0; i < now.size(); ++i) {
                const bool changed = now[i] != ref[i];
                const bool is_disc = model.params()[i].group == ParamGroup::kDiscriminator;
                any = any || changed;
                if (changed && (ph == StepPhase::kDiscriminator) != is_disc) iso = false;
            }
            if (!any) iso = false;
            if (ph == StepPhase::kDiscriminator) mid = now;
        });
        worst_dev = std::max(worst_dev, losses.gen_input_norm_dev);
        ++steps;
    }
    // The discriminator refuses tensors derived from the projection.
    bool guard = false;
    try {
        Rng rng(10);
        model.discriminate(project_to_sphere(sample_prior(4, cfg.arch.latent_dim, rng)));
    } catch (const ShapeError&) {
        guard = true;
    }
    record(10, iso && worst_dev <= 1e-6 && guard,
           std::to_string(steps) + " instrumented steps: phase isolation " + (iso ? "held" : "violated") +
               ", max generator-input |norm-1| " + fmt(worst_dev, 3) + ", projected-input guard " +
               (guard ? "active" : "missing"));
}

}  // namespace

int main() {
    const auto t0 = Clock::now();
    std::cout << "# acceptance suite, " << desk_config(1).train.epochs << " epochs per seed, lambda_adv "
              << desk_config(1).train.lambda_adv << std::endl;
    criterion1();
    criterion2();
    criterion3();
    criterion9();
    criterion10();

    std::vector<Run> runs;
    for (std::uint64_t seed : {1, 2, 3}) {
        runs.push_back(train_run(seed));
        std::cout << "# seed " << seed << " trained in " << fmt(runs.back().minutes, 3) << " min" << std::endl;
    }
    criteria_4_to_8(runs);

    std::cout << "# total " << fmt(seconds_since(t0) / 60.0, 3) << " min" << std::endl;
    const char* names[] = {"",
                           "gradient correctness",
                           "projection invariants",
                           "projected-prior uniformity",
                           "desk-scale training",
                           "scientific-line recovery",
                           "validity monotonicity",
                           "radius ablation shape",
                           "interpolation endpoint identity",
                           "determinism and formats",
                           "phase isolation"};
    bool all = true;
    for (int id = 1; id <= 10; ++id) {
        const auto& v = verdicts[id];
        all = all && v.pass;
        std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << names[id] << "): " << v.summary
                  << std::endl;
    }
    return all ? 0 : 1;
}
