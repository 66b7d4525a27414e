#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "railmatch/ensemble.hpp"
#include "railmatch/profile_io.hpp"
#include "railmatch/raster.hpp"
#include "railmatch/registration.hpp"
#include "railmatch/synthetic.hpp"
#include "railmatch/train.hpp"

using namespace railmatch;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// RAILMATCH_SEED trumps config files and flags so whole pipelines can be
// re-seeded from the environment.
bool env_seed(std::uint64_t& out) {
    const char* s = std::getenv("RAILMATCH_SEED");
    if (!s || !*s) return false;
    out = std::strtoull(s, nullptr, 10);
    return true;
}

GenConfig gen_config_from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path);
    json j = json::parse(f);
    GenConfig c;
    c.master_seed = j.value("master_seed", c.master_seed);
    c.n_samples = j.value("n_samples", c.n_samples);
    if (j.contains("kind_mix")) c.kind_mix = j.at("kind_mix");
    c.placement_side = j.value("placement_side", c.placement_side);
    if (j.contains("wear_vertical_range")) {
        c.wear_vertical_min = j.at("wear_vertical_range")[0];
        c.wear_vertical_max = j.at("wear_vertical_range")[1];
    }
    if (j.contains("wear_side_range")) {
        c.wear_side_min = j.at("wear_side_range")[0];
        c.wear_side_max = j.at("wear_side_range")[1];
    }
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.outlier_prob = j.value("outlier_prob", c.outlier_prob);
    c.outlier_magnitude = j.value("outlier_magnitude", c.outlier_magnitude);
    c.truncation_prob = j.value("truncation_prob", c.truncation_prob);
    if (j.contains("split_fractions")) c.split_fractions = j.at("split_fractions");
    return c;
}

void add_spec_flags(CLI::App* cmd, ImageSpec& spec) {
    cmd->add_option("--width-px", spec.width_px, "canvas width in pixels");
    cmd->add_option("--height-px", spec.height_px, "canvas height in pixels");
    cmd->add_option("--mm-per-px", spec.mm_per_px, "millimetres per pixel");
    cmd->add_option("--line-width", spec.line_width_px, "stroke width in pixels");
    cmd->add_option("--resize-to", spec.resize_to, "downscale target (0 = no resize)");
}

Split parse_split(const std::string& s) { return split_from_string(s); }

int cmd_gen(const GenConfig& cfg, const std::string& out_dir) {
    DatasetManifest m = generate_dataset(cfg, out_dir);
    std::size_t train = 0, val = 0, test = 0;
    for (const auto& r : m.records)
        (r.split == Split::Train ? train : r.split == Split::Val ? val : test) += 1;
    json out{{"manifest", (fs::path(out_dir) / "manifest.jsonl").string()},
             {"n_samples", m.records.size()},
             {"train", train},
             {"val", val},
             {"test", test},
             {"master_seed", cfg.master_seed}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_render(const std::string& manifest_path, const std::string& data_dir,
               const std::string& out_dir, const ImageSpec& spec, const std::string& mode_str,
               bool check, std::size_t limit) {
    validate(spec);
    const RenderMode mode = render_mode_from_string(mode_str);
    DatasetManifest m = read_manifest(manifest_path);
    fs::create_directories(out_dir);
    json digests = json::array();
    std::size_t count = 0;
    for (const auto& rec : m.records) {
        if (limit && count >= limit) break;
        Profile designed = read_profile_csv((fs::path(data_dir) / rec.designed_path).string());
        Profile measured = read_profile_csv((fs::path(data_dir) / rec.measured_path).string());
        RenderedSample r = encode_sample(designed, measured, {rec.dx_mm, rec.dy_mm}, spec, mode,
                                         kDefaultLabelNormMm, rec.id);
        json entry{{"id", rec.id}};
        for (std::size_t i = 0; i < r.images.size(); ++i) {
            const std::string suffix = r.images.size() > 1 ? (i == 0 ? "_designed" : "_measured")
                                                           : "";
            const std::string path = (fs::path(out_dir) / (rec.id + suffix + ".png")).string();
            write_png(r.images[i], path);
            if (check) entry["digests"].push_back(pixel_digest(r.images[i]));
        }
        if (check) digests.push_back(entry);
        ++count;
        if (count % 100 == 0) std::fprintf(stderr, "rendered %zu samples\n", count);
    }
    json out{{"rendered", count}, {"mode", mode_str}, {"spec_digest", spec_digest(spec)}};
    if (check) out["samples"] = digests;
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& data_dir,
              const std::string& out_path, const ImageSpec& spec, const std::string& mode_str,
              const std::string& preset, bool dual, TrainConfig tc) {
    validate(spec);
    tc.mode = render_mode_from_string(mode_str);
    std::uint64_t env;
    if (env_seed(env)) tc.seed = env;
    if (dual && tc.mode != RenderMode::Separate)
        throw std::runtime_error("--dual-branch requires --mode separate");

    DatasetManifest m = read_manifest(manifest_path);
    std::fprintf(stderr, "loading splits...\n");
    auto train_samples = load_split(m, data_dir, Split::Train);
    auto val_samples = load_split(m, data_dir, Split::Val);
    std::fprintf(stderr, "rendering %zu train / %zu val samples...\n", train_samples.size(),
                 val_samples.size());
    auto train_ds = encode_samples(train_samples, spec, tc.mode, tc.l_norm);
    auto val_ds = encode_samples(val_samples, spec, tc.mode, tc.l_norm);

    nn::ModelConfig mcfg;
    mcfg.preset = nn::backbone_preset_from_string(preset);
    mcfg.dual_branch = dual;
    auto net = make_model<float>(mcfg, tc.seed);
    if (!tc.init_from.empty()) net.load_weights(tc.init_from);

    TrainResult result = train_model(net, train_ds, val_ds, tc);
    save_checkpoint(net, mcfg, tc, spec, result, out_path);
    write_history_csv(result.history, out_path + ".history.csv");

    json out{{"checkpoint", out_path},
             {"metadata", out_path + ".json"},
             {"history_csv", out_path + ".history.csv"},
             {"best_epoch", result.best_epoch},
             {"best_val_mse", result.best_val_mse},
             {"final_val_accuracy", result.history.back().val_accuracy}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

Matcher build_matcher(const std::string& method, const std::string& checkpoint,
                      const std::string& ensemble_path, std::uint64_t seed) {
    Matcher m;
    if (method == "icp") {
        m.kind = Matcher::Kind::Icp;
    } else if (method == "ransac") {
        m.kind = Matcher::Kind::Ransac;
        m.ransac.seed = seed;
    } else if (method == "checkpoint") {
        if (checkpoint.empty()) throw std::runtime_error("--checkpoint required");
        m.kind = Matcher::Kind::CheckpointFile;
        m.checkpoint_path = checkpoint;
    } else if (method == "ensemble") {
        if (ensemble_path.empty()) throw std::runtime_error("--ensemble required");
        m.kind = Matcher::Kind::Ensemble;
        m.ensemble = read_ensemble_spec(ensemble_path);
    } else {
        throw std::runtime_error("unknown method: " + method);
    }
    return m;
}

int cmd_eval(const std::string& manifest_path, const std::string& data_dir,
             const std::string& method, const std::string& checkpoint,
             const std::string& ensemble_path, const std::string& split_str, double tolerance,
             const std::string& out_path) {
    std::uint64_t seed = 1;
    env_seed(seed);
    Matcher matcher = build_matcher(method, checkpoint, ensemble_path, seed);
    DatasetManifest m = read_manifest(manifest_path);
    auto samples = load_split(m, data_dir, parse_split(split_str));
    SuccessCriterion c;
    c.tolerance_mm = tolerance;
    EvalReport report = evaluate(matcher, samples, c, split_str);
    if (!out_path.empty()) write_eval_report(report, out_path);
    std::cout << eval_report_to_json(report) << "\n";
    return 0;
}

int cmd_match(const std::string& designed_path, const std::string& measured_path,
              const std::string& method, const std::string& checkpoint, bool wear) {
    Profile designed = read_profile_csv(designed_path);
    Profile measured = read_profile_csv(measured_path);
    std::uint64_t seed = 1;
    env_seed(seed);

    MatchResult r;
    if (method == "icp") {
        r = icp_translate(measured, designed);
    } else if (method == "ransac") {
        RansacConfig rc;
        rc.seed = seed;
        r = ransac_translate(measured, designed, rc);
    } else if (method == "checkpoint") {
        if (checkpoint.empty()) throw std::runtime_error("--checkpoint required");
        r = predict_mm(checkpoint, designed, measured);
    } else {
        throw std::runtime_error("unknown method: " + method);
    }

    json out = json::parse(match_result_to_json(r));
    if (wear && r.error.empty()) {
        Profile aligned = translate(measured, r.displacement);
        WearReport w = compute_wear(designed, aligned);
        out["wear"] = {{"vertical_wear_mm", w.vertical_wear}, {"side_wear_mm", w.side_wear},
                       {"crown_x_mm", w.crown_x},             {"side_y_mm", w.side_y},
                       {"vertical_missing", w.vertical_missing},
                       {"side_missing", w.side_missing}};
    }
    std::cout << out.dump(2) << "\n";
    return r.error.empty() ? 0 : 1;
}

int cmd_plot(const std::string& report_path, const std::string& out_csv,
             const std::string& out_svg) {
    EvalReport r = read_eval_report(report_path);
    error_scatter_export(r, out_csv, out_svg);
    json out{{"csv", out_csv}, {"svg", out_svg}, {"samples", r.rows.size()}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"rail profile registration toolkit"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    std::string gen_config, gen_out;
    std::uint64_t gen_seed = 0;
    gen->add_option("--config", gen_config, "GenConfig JSON file");
    gen->add_option("--out", gen_out, "output directory")->required();
    auto* seed_opt = gen->add_option("--seed", gen_seed, "master seed");
    std::size_t gen_n = 0;
    auto* n_opt = gen->add_option("--n", gen_n, "sample count override");

    // render
    auto* render = app.add_subcommand("render", "render manifest samples to PNG");
    std::string ren_manifest, ren_data, ren_out, ren_mode = "single";
    bool ren_check = false;
    std::size_t ren_limit = 0;
    ImageSpec ren_spec;
    render->add_option("--manifest", ren_manifest, "manifest.jsonl path")->required();
    render->add_option("--data", ren_data, "dataset base directory")->required();
    render->add_option("--out", ren_out, "output directory")->required();
    render->add_option("--mode", ren_mode, "single | separate");
    render->add_flag("--check", ren_check, "emit per-image SHA-256 digests");
    render->add_option("--limit", ren_limit, "render at most N samples (0 = all)");
    add_spec_flags(render, ren_spec);

    // train
    auto* train = app.add_subcommand("train", "train a translation regressor");
    std::string tr_manifest, tr_data, tr_out, tr_mode = "single", tr_preset = "small";
    bool tr_dual = false;
    ImageSpec tr_spec;
    TrainConfig tr_cfg;
    train->add_option("--manifest", tr_manifest, "manifest.jsonl path")->required();
    train->add_option("--data", tr_data, "dataset base directory")->required();
    train->add_option("--out", tr_out, "checkpoint output path")->required();
    train->add_option("--mode", tr_mode, "single | separate");
    train->add_option("--preset", tr_preset, "tiny | small | resnet18-like");
    train->add_flag("--dual-branch", tr_dual, "two towers merged by a linear layer");
    train->add_option("--lr", tr_cfg.learning_rate, "learning rate");
    train->add_option("--batch-size", tr_cfg.batch_size, "minibatch size");
    train->add_option("--epochs", tr_cfg.epochs, "epoch count");
    train->add_option("--seed", tr_cfg.seed, "training seed");
    train->add_option("--l-norm", tr_cfg.l_norm, "label normalization constant, mm");
    train->add_option("--tolerance", tr_cfg.success_tolerance_mm,
                      "success tolerance for val accuracy, mm");
    train->add_option("--init-from", tr_cfg.init_from, "warm-start weights file");
    add_spec_flags(train, tr_spec);

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a matcher on a split");
    std::string ev_manifest, ev_data, ev_method = "icp", ev_ckpt, ev_ens, ev_split = "test",
                               ev_out;
    double ev_tol = 0.4;
    eval->add_option("--manifest", ev_manifest, "manifest.jsonl path")->required();
    eval->add_option("--data", ev_data, "dataset base directory")->required();
    eval->add_option("--method", ev_method, "icp | ransac | checkpoint | ensemble");
    eval->add_option("--checkpoint", ev_ckpt, "checkpoint path (method=checkpoint)");
    eval->add_option("--ensemble", ev_ens, "ensemble spec JSON (method=ensemble)");
    eval->add_option("--split", ev_split, "train | val | test");
    eval->add_option("--tolerance", ev_tol, "success tolerance, mm");
    eval->add_option("--out", ev_out, "write the report JSON here too");

    // match
    auto* match = app.add_subcommand("match", "register one measured profile");
    std::string ma_designed, ma_measured, ma_method = "icp", ma_ckpt;
    bool ma_wear = false;
    match->add_option("--designed", ma_designed, "designed profile CSV")->required();
    match->add_option("--measured", ma_measured, "measured profile CSV")->required();
    match->add_option("--method", ma_method, "icp | ransac | checkpoint");
    match->add_option("--checkpoint", ma_ckpt, "checkpoint path (method=checkpoint)");
    match->add_flag("--wear", ma_wear, "append a wear report after alignment");

    // ensemble
    auto* ens = app.add_subcommand("ensemble", "evaluate an ensemble spec on a split");
    std::string en_manifest, en_data, en_spec, en_split = "test", en_out;
    double en_tol = 0.4;
    ens->add_option("--manifest", en_manifest, "manifest.jsonl path")->required();
    ens->add_option("--data", en_data, "dataset base directory")->required();
    ens->add_option("--spec", en_spec, "ensemble spec JSON")->required();
    ens->add_option("--split", en_split, "train | val | test");
    ens->add_option("--tolerance", en_tol, "success tolerance, mm");
    ens->add_option("--out", en_out, "write the report JSON here too");

    // plot
    auto* plot = app.add_subcommand("plot", "export an error scatter from a report");
    std::string pl_report, pl_csv, pl_svg;
    plot->add_option("--report", pl_report, "EvalReport JSON")->required();
    plot->add_option("--out-csv", pl_csv, "CSV output path")->required();
    plot->add_option("--out-svg", pl_svg, "SVG output path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            GenConfig c = gen_config.empty() ? GenConfig{} : gen_config_from_file(gen_config);
            if (!n_opt->empty()) c.n_samples = gen_n;
            if (!seed_opt->empty()) c.master_seed = gen_seed;
            std::uint64_t env;
            if (env_seed(env)) c.master_seed = env;
            return cmd_gen(c, gen_out);
        }
        if (render->parsed())
            return cmd_render(ren_manifest, ren_data, ren_out, ren_spec, ren_mode, ren_check,
                              ren_limit);
        if (train->parsed())
            return cmd_train(tr_manifest, tr_data, tr_out, tr_spec, tr_mode, tr_preset, tr_dual,
                             tr_cfg);
        if (eval->parsed())
            return cmd_eval(ev_manifest, ev_data, ev_method, ev_ckpt, ev_ens, ev_split, ev_tol,
                            ev_out);
        if (match->parsed()) return cmd_match(ma_designed, ma_measured, ma_method, ma_ckpt,
                                              ma_wear);
        if (ens->parsed()) {
            std::uint64_t seed = 1;
            env_seed(seed);
            return cmd_eval(en_manifest, en_data, "ensemble", "", en_spec, en_split, en_tol,
                            en_out);
        }
        if (plot->parsed()) return cmd_plot(pl_report, pl_csv, pl_svg);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
