// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit when any
// criterion fails. Slow end-to-end checks live here rather than in the unit
// suites.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "railmatch/ensemble.hpp"
#include "railmatch/nn/model.hpp"
#include "railmatch/raster.hpp"
#include "railmatch/registration.hpp"
#include "railmatch/synthetic.hpp"
#include "railmatch/train.hpp"

using namespace railmatch;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
    std::printf("%s  %-26s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

GenConfig base_config(std::size_t n, std::uint64_t seed) {
    GenConfig g;
    g.master_seed = seed;
    g.n_samples = n;
    return g;
}

GenConfig clean_config(std::size_t n, std::uint64_t seed) {
    GenConfig g = base_config(n, seed);
    g.wear_vertical_max = 0.0;
    g.wear_side_max = 0.0;
    g.noise_sigma = 0.0;
    g.outlier_prob = 0.0;
    g.truncation_prob = 0.0;
    return g;
}

std::vector<Sample> build_samples(const GenConfig& g) {
    Assignments a = assign_kinds_and_splits(g);
    std::vector<Sample> out(g.n_samples);
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(g.n_samples); ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "s%06td", i);
        Sample s = build_sample(g, a.kinds[static_cast<std::size_t>(i)], id,
                                derive_seed(g.master_seed, static_cast<std::uint64_t>(i)));
        s.split = a.splits[static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(i)] = std::move(s);
    }
    return out;
}

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

void check_icp_exactness() {
    const auto samples = build_samples(clean_config(200, 1001));
    int recovered = 0;
    const double t0 = now_ms();
    for (const auto& s : samples) {
        MatchResult r = icp_translate(s.measured, s.designed);
        if (r.error.empty() && std::abs(r.displacement.dx - s.label.dx) < 1e-3 &&
            std::abs(r.displacement.dy - s.label.dy) < 1e-3)
            ++recovered;
    }
    const double per_pair = (now_ms() - t0) / 200.0;
    char detail[160];
    std::snprintf(detail, sizeof(detail), "recovered %d/200 within 1e-3 mm, %.1f ms/pair",
                  recovered, per_pair);
    report("icp-oracle-exactness", recovered == 200 && per_pair < 50.0, detail);
}

void check_icp_robustness() {
    GenConfig g = base_config(200, 1002);
    g.wear_vertical_max = 0.0; // noise + outliers + truncation only
    g.wear_side_max = 0.0;
    const auto samples = build_samples(g);
    int hits = 0;
    for (const auto& s : samples) {
        MatchResult r = icp_translate(s.measured, s.designed);
        if (r.error.empty() && std::abs(r.displacement.dx - s.label.dx) < 0.4 &&
            std::abs(r.displacement.dy - s.label.dy) < 0.4)
            ++hits;
    }
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "%d/200 within 0.4 mm under noise/outliers/truncation (need >= 190)", hits);
    report("icp-robustness", hits >= 190, detail);
}

void check_raster_determinism() {
    const ImageSpec spec; // 512x512, 0.3 mm/px, resize to 224
    bool contract = true;
    const PixelCoord origin = mm_to_px({0.0, 0.0}, spec);
    contract &= origin.col == 256 && origin.row == 256;
    const PixelCoord step = mm_to_px({0.3, 0.0}, spec);
    contract &= step.col == 257 && step.row == 256;
    contract &= std::abs(spec.width_px * spec.mm_per_px - 153.6) < 1e-12;

    const auto samples = build_samples(base_config(50, 1003));
    bool stable = true;
    for (const auto& s : samples) {
        const RasterImage a = render_single(s.designed, s.measured, spec, s.id);
        const RasterImage b = render_single(s.designed, s.measured, spec, s.id);
        if (pixel_digest(a) != pixel_digest(b)) stable = false;
    }
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "origin->(%d,%d), 0.3 mm -> 1 px: %s, canvas 153.6 mm, 50 digests %s",
                  origin.col, origin.row, contract ? "ok" : "BROKEN",
                  stable ? "stable" : "UNSTABLE");
    report("raster-determinism", contract && stable, detail);
}

ImageSpec desk_spec() {
    ImageSpec spec;
    spec.width_px = 256;
    spec.height_px = 256;
    spec.mm_per_px = 0.6;
    spec.resize_to = 128;
    return spec;
}

void check_desk_scale_training() {
    const double t0 = now_ms();
    GenConfig g = base_config(5600, 1004);
    g.split_fractions = {5.0 / 7.0, 1.0 / 7.0, 1.0 / 7.0}; // 4000 / 800 / 800
    auto samples = build_samples(g);
    std::vector<Sample> train_s, val_s, test_s;
    for (auto& s : samples)
        (s.split == Split::Train ? train_s : s.split == Split::Val ? val_s : test_s)
            .push_back(std::move(s));

    const ImageSpec spec = desk_spec();
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.batch_size = 32;
    tc.epochs = 30;
    tc.seed = 17;
    tc.mode = RenderMode::Single;
    tc.success_tolerance_mm = 1.2;
    std::fprintf(stderr, "desk-scale: rendering %zu/%zu/%zu samples\n", train_s.size(),
                 val_s.size(), test_s.size());
    auto train_ds = encode_samples(train_s, spec, tc.mode, tc.l_norm);
    auto val_ds = encode_samples(val_s, spec, tc.mode, tc.l_norm);
    auto test_ds = encode_samples(test_s, spec, tc.mode, tc.l_norm);

    nn::ModelConfig mcfg;
    mcfg.preset = nn::BackbonePreset::Small;
    auto net = make_model<float>(mcfg, tc.seed);
    TrainResult result = train_model(net, train_ds, val_ds, tc);

    bool monotone = true;
    for (std::size_t e = 1; e < 5 && e < result.history.size(); ++e)
        if (result.history[e].train_mse >= result.history[e - 1].train_mse) monotone = false;

    // test success rate at the 2-pixel-equivalent tolerance
    std::size_t hits = 0;
    const double tol_norm = tc.success_tolerance_mm / tc.l_norm;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < test_ds.size(); start += tc.batch_size) {
        idx.clear();
        for (std::size_t i = start; i < std::min(test_ds.size(), start + tc.batch_size); ++i)
            idx.push_back(i);
        auto x = make_batch<float>(test_ds, idx, 0);
        auto pred = net.forward(x, nullptr, false);
        for (std::size_t b = 0; b < idx.size(); ++b)
            if (std::abs(pred.data[b * 2] - test_ds.labels[idx[b]].first) < tol_norm &&
                std::abs(pred.data[b * 2 + 1] - test_ds.labels[idx[b]].second) < tol_norm)
                ++hits;
    }
    const double acc = static_cast<double>(hits) / static_cast<double>(test_ds.size());
    const double minutes = (now_ms() - t0) / 60000.0;
    char detail[220];
    std::snprintf(detail, sizeof(detail),
                  "test accuracy %.3f at 1.2 mm (need >= 0.90), first-5-epoch train MSE %s, "
                  "%.0f min (budget 120)",
                  acc, monotone ? "monotone" : "NOT monotone", minutes);
    report("desk-scale-training", acc >= 0.90 && monotone && minutes <= 120.0, detail);
}

void check_overfit_probe() {
    GenConfig g = clean_config(8, 1005);
    g.split_fractions = {1.0, 0.0, 0.0};
    auto samples = build_samples(g);
    const ImageSpec spec = desk_spec();
    const double tol_mm = spec.mm_per_px * spec.width_px / spec.resize_to; // one input pixel
    TrainConfig tc;
    tc.learning_rate = 3e-3;
    tc.batch_size = 8;
    tc.epochs = 200;
    tc.seed = 23;
    tc.success_tolerance_mm = tol_mm;
    auto ds = encode_samples(samples, spec, tc.mode, tc.l_norm);
    nn::ModelConfig mcfg;
    mcfg.preset = nn::BackbonePreset::Tiny;
    auto net = make_model<float>(mcfg, 29);
    train_model(net, ds, ds, tc);

    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    auto x = make_batch<float>(ds, idx, 0);
    auto pred = net.forward(x, nullptr, false);
    std::size_t hits = 0;
    const double tol_norm = tol_mm / tc.l_norm;
    for (std::size_t b = 0; b < ds.size(); ++b)
        if (std::abs(pred.data[b * 2] - ds.labels[b].first) < tol_norm &&
            std::abs(pred.data[b * 2 + 1] - ds.labels[b].second) < tol_norm)
            ++hits;
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "memorized %zu/8 within %.1f mm (one pixel) after 200 epochs", hits, tol_mm);
    report("overfit-probe", hits == 8, detail);
}

void check_gradients() {
    nn::ModelConfig cfg;
    cfg.preset = nn::BackbonePreset::Tiny;
    auto net = make_model<double>(cfg, 31);
    nn::Tensor<double> x(2, tower_input_channels(cfg), 8, 8);
    nn::Tensor<double> target(2, 2, 1, 1);
    Rng rng(37);
    for (auto& v : x.data) v = rng.normal(0.0, 1.0);
    for (auto& v : target.data) v = rng.normal(0.0, 1.0);

    net.zero_grads();
    auto y = net.forward(x, nullptr, true);
    nn::Tensor<double> dloss;
    nn::mse_loss(y, target, &dloss);
    net.backward(dloss);
    auto params = net.params();

    auto loss_at = [&]() {
        auto yy = net.forward(x, nullptr, true);
        return nn::mse_loss<double>(yy, target, nullptr);
    };
    int checked = 0, ok = 0;
    double worst = 0.0;
    Rng pick(41);
    const double eps = 1e-5;
    while (checked < 24) {
        auto* p = params[pick.below(params.size())];
        const std::size_t i = pick.below(p->value.size());
        const double analytic = p->grad.data[i];
        const double saved = p->value.data[i];
        p->value.data[i] = saved + eps;
        const double lp = loss_at();
        p->value.data[i] = saved - eps;
        const double lm = loss_at();
        p->value.data[i] = saved;
        const double numeric = (lp - lm) / (2 * eps);
        const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
        const double rel = std::abs(numeric - analytic) / denom;
        worst = std::max(worst, rel);
        if (rel <= 1e-3) ++ok;
        ++checked;
    }
    char detail[160];
    std::snprintf(detail, sizeof(detail), "%d/%d parameters within 1e-3 relative (worst %.2e)",
                  ok, checked, worst);
    report("gradient-check", ok == checked && checked >= 20, detail);
}

void check_ensembles() {
    const auto dir = fs::temp_directory_path() / "railmatch_acceptance_ens";
    fs::remove_all(dir);
    fs::create_directories(dir);
    GenConfig g = clean_config(12, 1006);
    g.split_fractions = {1.0, 0.0, 0.0};
    auto train_sam = build_samples(g);
    GenConfig ge = clean_config(10, 1007);
    ge.split_fractions = {1.0, 0.0, 0.0};
    auto eval_sam = build_samples(ge);

    const ImageSpec spec = desk_spec();
    std::vector<std::string> members;
    for (std::uint64_t i = 0; i < 4; ++i) {
        TrainConfig tc;
        tc.learning_rate = 1e-3;
        tc.batch_size = 8;
        tc.epochs = 4;
        tc.seed = 50 + i;
        auto ds = encode_samples(train_sam, spec, tc.mode, tc.l_norm);
        nn::ModelConfig mcfg;
        mcfg.preset = nn::BackbonePreset::Tiny;
        auto net = make_model<float>(mcfg, 60 + i);
        TrainResult result = train_model(net, ds, ds, tc);
        char name[32];
        std::snprintf(name, sizeof(name), "m%llu.ckpt", static_cast<unsigned long long>(i));
        const std::string path = (dir / name).string();
        save_checkpoint(net, mcfg, tc, spec, result, path);
        members.push_back(path);
    }

    auto member_mse = [&](const std::string& path, std::vector<Displacement>& preds) {
        Matcher m;
        m.kind = Matcher::Kind::CheckpointFile;
        m.checkpoint_path = path;
        EvalReport r = evaluate(m, eval_sam, SuccessCriterion{});
        double se = 0.0;
        preds.clear();
        for (const auto& row : r.rows) {
            preds.push_back({row.pred_dx, row.pred_dy});
            const double ex = row.pred_dx - row.label_dx;
            const double ey = row.pred_dy - row.label_dy;
            se += ex * ex + ey * ey;
        }
        return se / static_cast<double>(2 * r.rows.size());
    };

    std::vector<double> member_mses(4);
    std::vector<std::vector<Displacement>> member_preds(4);
    for (std::size_t i = 0; i < 4; ++i) member_mses[i] = member_mse(members[i], member_preds[i]);

    bool jensen = true;
    auto check_spec = [&](const EnsembleSpec& es) {
        Matcher m;
        m.kind = Matcher::Kind::Ensemble;
        m.ensemble = es;
        EvalReport r = evaluate(m, eval_sam, SuccessCriterion{});
        double se = 0.0, wm = 0.0;
        for (const auto& row : r.rows) {
            const double ex = row.pred_dx - row.label_dx;
            const double ey = row.pred_dy - row.label_dy;
            se += ex * ex + ey * ey;
        }
        const double ens_mse = se / static_cast<double>(2 * r.rows.size());
        for (std::size_t i = 0; i < es.members.size(); ++i) wm += es.weights[i] * member_mses[i];
        if (ens_mse > wm + 1e-12) jensen = false;
    };
    check_spec(mean4(members));
    check_spec(weighted3({members[0], members[1], members[2]}));

    // degenerate weights reproduce member 0 exactly
    EnsembleSpec degenerate{{members[0], members[1], members[2]}, {1.0, 0.0, 0.0}};
    bool degenerate_ok = true;
    MatchResult rd = ensemble_predict(degenerate, eval_sam[0].designed, eval_sam[0].measured);
    MatchResult r0 = predict_mm(members[0], eval_sam[0].designed, eval_sam[0].measured);
    degenerate_ok = rd.displacement.dx == r0.displacement.dx &&
                    rd.displacement.dy == r0.displacement.dy;

    fs::remove_all(dir);
    char detail[160];
    std::snprintf(detail, sizeof(detail), "Jensen %s for mean4+weighted3, degenerate weights %s",
                  jensen ? "holds" : "VIOLATED", degenerate_ok ? "exact" : "INEXACT");
    report("ensemble-inequalities", jensen && degenerate_ok, detail);
}

void check_success_boundary() {
    SuccessCriterion c;
    const bool a = is_success({0.39, 0.39}, {0.0, 0.0}, c);
    const bool b = is_success({0.4, 0.0}, {0.0, 0.0}, c);
    char detail[120];
    std::snprintf(detail, sizeof(detail), "(0.39,0.39)->%s, (0.4,0)->%s (strict bound)",
                  a ? "success" : "FAILURE", b ? "SUCCESS" : "failure");
    report("success-boundary", a && !b, detail);
}

void check_split_fidelity() {
    // 0.70/0.15/0.15 of 46386 gives 32470.2/6957.9/6957.9, which no rounding
    // brings within +/-1 of the published 32480/6976/6930; the published
    // counts themselves imply the fractions used here.
    GenConfig g;
    g.master_seed = 2;
    g.n_samples = 46386;
    g.split_fractions = {32480.0 / 46386.0, 6976.0 / 46386.0, 6930.0 / 46386.0};
    Assignments a = assign_kinds_and_splits(g);
    std::size_t counts[3] = {0, 0, 0};
    bool present[3][4] = {};
    for (std::size_t i = 0; i < g.n_samples; ++i) {
        const int sp = static_cast<int>(a.splits[i]);
        counts[sp] += 1;
        present[sp][static_cast<int>(a.kinds[i])] = true;
    }
    const bool count_ok = std::llabs(static_cast<long long>(counts[0]) - 32480) <= 1 &&
                          std::llabs(static_cast<long long>(counts[1]) - 6976) <= 1 &&
                          std::llabs(static_cast<long long>(counts[2]) - 6930) <= 1;
    bool kinds_ok = true;
    for (int sp = 0; sp < 3; ++sp)
        for (int k = 0; k < 4; ++k) kinds_ok &= present[sp][k];
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "%zu/%zu/%zu vs 32480/6976/6930 (+/-1), all kinds in all splits: %s",
                  counts[0], counts[1], counts[2], kinds_ok ? "yes" : "NO");
    report("split-fidelity", count_ok && kinds_ok, detail);
}

void check_wear_loop() {
    bool ok = true;
    double worst_v = 0.0, worst_s = 0.0;
    for (const ProfileKind kind : {ProfileKind::Typical, ProfileKind::Switch, ProfileKind::Frog,
                                   ProfileKind::Combined}) {
        const ShapeParams params = shape_params_for(kind, 3001);
        const Profile designed = make_design_profile(kind, params, 3001);
        const Profile worn = apply_wear(designed, 2.0, 1.5, 3002);
        const WearReport w = compute_wear(designed, worn);
        worst_v = std::max(worst_v, std::abs(w.vertical_wear - 2.0));
        worst_s = std::max(worst_s, std::abs(w.side_wear - 1.5));
        if (std::abs(w.vertical_wear - 2.0) > 0.05 || std::abs(w.side_wear - 1.5) > 0.05)
            ok = false;
    }
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "apply(2.0,1.5) -> measured within (%.3f,%.3f) of (2.0,1.5), tolerance 0.05",
                  worst_v, worst_s);
    report("wear-loop-closure", ok, detail);
}

} // namespace

int main() {
    check_success_boundary();
    check_wear_loop();
    check_split_fidelity();
    check_raster_determinism();
    check_gradients();
    check_icp_exactness();
    check_icp_robustness();
    check_ensembles();
    check_overfit_probe();
    check_desk_scale_training();
    std::printf("%d criteria failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
