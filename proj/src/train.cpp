#include "railmatch/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "railmatch/profile_io.hpp"

namespace railmatch {

using nlohmann::json;

void validate(const TrainConfig& c) {
    if (!(c.learning_rate >= 0.0)) throw std::runtime_error("learning_rate must be >= 0");
    if (c.batch_size < 1) throw std::runtime_error("batch_size must be >= 1");
    if (c.epochs < 1) throw std::runtime_error("epochs must be >= 1");
    if (!(c.l_norm > 0.0)) throw std::runtime_error("l_norm must be positive");
}

EncodedDataset encode_samples(const std::vector<Sample>& samples, const ImageSpec& spec,
                              RenderMode mode, double l_norm) {
    EncodedDataset ds;
    ds.images_per_sample = mode == RenderMode::Separate ? 2 : 1;
    ds.images.resize(samples.size());
    ds.labels.resize(samples.size());
    ds.ids.resize(samples.size());
    std::string first_error;
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(samples.size()); ++i) {
        const Sample& s = samples[static_cast<std::size_t>(i)];
        try {
            RenderedSample r = encode_sample(s.designed, s.measured, s.label, spec, mode, l_norm,
                                             s.id);
            std::vector<std::uint8_t> buf;
            for (const auto& img : r.images)
                buf.insert(buf.end(), img.rgb.begin(), img.rgb.end());
            ds.images[static_cast<std::size_t>(i)] = std::move(buf);
            ds.labels[static_cast<std::size_t>(i)] = {r.label_nx, r.label_ny};
            ds.ids[static_cast<std::size_t>(i)] = s.id;
        } catch (const std::exception& e) {
#pragma omp critical
            if (first_error.empty()) first_error = e.what();
        }
    }
    if (!first_error.empty()) throw std::runtime_error(first_error);
    ds.image_px = spec.resize_to > 0 ? spec.resize_to : spec.width_px;
    return ds;
}

std::vector<Sample> load_split(const DatasetManifest& manifest, const std::string& base_dir,
                               Split split) {
    namespace fs = std::filesystem;
    std::vector<Sample> out;
    for (const auto& rec : manifest.records) {
        if (rec.split != split) continue;
        Sample s;
        s.id = rec.id;
        s.kind = rec.kind;
        s.split = rec.split;
        s.designed = read_profile_csv((fs::path(base_dir) / rec.designed_path).string());
        s.measured = read_profile_csv((fs::path(base_dir) / rec.measured_path).string());
        s.label = {rec.dx_mm, rec.dy_mm};
        out.push_back(std::move(s));
    }
    return out;
}

template <typename T>
nn::Tensor<T> make_batch(const EncodedDataset& ds, const std::vector<std::size_t>& idx,
                         std::size_t image_index) {
    const std::size_t px = static_cast<std::size_t>(ds.image_px);
    const std::size_t plane = px * px;
    const std::size_t image_bytes = plane * 3;
    nn::Tensor<T> x(idx.size(), 3, px, px);
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& buf = ds.images[idx[b]];
        if (buf.size() != image_bytes * ds.images_per_sample)
            throw std::runtime_error("encoded image size mismatch for sample " + ds.ids[idx[b]]);
        const std::uint8_t* img = buf.data() + image_index * image_bytes;
        for (std::size_t p = 0; p < plane; ++p)
            for (std::size_t c = 0; c < 3; ++c)
                x.data[((b * 3 + c) * plane) + p] =
                    static_cast<T>(255 - img[p * 3 + c]) / static_cast<T>(255);
    }
    return x;
}

template nn::Tensor<float> make_batch<float>(const EncodedDataset&,
                                             const std::vector<std::size_t>&, std::size_t);
template nn::Tensor<double> make_batch<double>(const EncodedDataset&,
                                               const std::vector<std::size_t>&, std::size_t);

namespace {

nn::Tensor<float> label_batch(const EncodedDataset& ds, const std::vector<std::size_t>& idx) {
    nn::Tensor<float> y(idx.size(), 2, 1, 1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
        y.data[b * 2] = static_cast<float>(ds.labels[idx[b]].first);
        y.data[b * 2 + 1] = static_cast<float>(ds.labels[idx[b]].second);
    }
    return y;
}

struct EvalAccum {
    double mse = 0.0;
    double accuracy = 0.0;
};

EvalAccum eval_split(nn::Network<float>& net, const EncodedDataset& ds, const TrainConfig& cfg) {
    EvalAccum acc;
    if (ds.size() == 0) return acc;
    const bool dual = net.config().dual_branch;
    const double tol_norm = cfg.success_tolerance_mm / cfg.l_norm;
    std::size_t hits = 0;
    double se = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += cfg.batch_size) {
        idx.clear();
        for (std::size_t i = start; i < std::min(ds.size(), start + cfg.batch_size); ++i)
            idx.push_back(i);
        nn::Tensor<float> xa = make_batch<float>(ds, idx, 0);
        nn::Tensor<float> xb;
        if (dual) xb = make_batch<float>(ds, idx, 1);
        nn::Tensor<float> pred = net.forward(xa, dual ? &xb : nullptr, false);
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const double ex = pred.data[b * 2] - ds.labels[idx[b]].first;
            const double ey = pred.data[b * 2 + 1] - ds.labels[idx[b]].second;
            se += ex * ex + ey * ey;
            if (std::abs(ex) < tol_norm && std::abs(ey) < tol_norm) ++hits;
        }
    }
    acc.mse = se / static_cast<double>(2 * ds.size());
    acc.accuracy = static_cast<double>(hits) / static_cast<double>(ds.size());
    return acc;
}

struct Snapshot {
    std::vector<std::vector<float>> params, buffers;
};

Snapshot snapshot_of(nn::Network<float>& net) {
    Snapshot s;
    for (auto* p : net.params()) s.params.push_back(p->value.data);
    for (auto* b : net.buffers()) s.buffers.push_back(*b);
    return s;
}

void restore(nn::Network<float>& net, const Snapshot& s) {
    auto ps = net.params();
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value.data = s.params[i];
    auto bs = net.buffers();
    for (std::size_t i = 0; i < bs.size(); ++i) *bs[i] = s.buffers[i];
}

} // namespace

TrainResult train_model(nn::Network<float>& net, const EncodedDataset& train_set,
                        const EncodedDataset& val_set, const TrainConfig& cfg) {
    validate(cfg);
    if (train_set.size() == 0) throw std::runtime_error("train split is empty");
    if (val_set.size() == 0) throw std::runtime_error("val split is empty");
    const bool dual = net.config().dual_branch;
    nn::Adam<float> opt(static_cast<float>(cfg.learning_rate));
    auto params = net.params();

    TrainResult result;
    Snapshot best;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, 0xE90C000 + epoch));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);

        double train_se = 0.0;
        std::size_t seen = 0;
        std::vector<std::size_t> idx;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                       order.begin() +
                           static_cast<std::ptrdiff_t>(
                               std::min(order.size(), start + cfg.batch_size)));
            nn::Tensor<float> xa = make_batch<float>(train_set, idx, 0);
            nn::Tensor<float> xb;
            if (dual) xb = make_batch<float>(train_set, idx, 1);
            nn::Tensor<float> y = label_batch(train_set, idx);
            net.zero_grads();
            nn::Tensor<float> pred = net.forward(xa, dual ? &xb : nullptr, true);
            nn::Tensor<float> dloss;
            const float loss = nn::mse_loss(pred, y, &dloss);
            if (!std::isfinite(loss)) {
                std::ostringstream msg;
                msg << "non-finite training loss at epoch " << epoch << ", batch starting at "
                    << start << " (first sample " << train_set.ids[idx[0]] << ")";
                throw std::runtime_error(msg.str());
            }
            net.backward(dloss);
            opt.step(params);
            train_se += static_cast<double>(loss) * static_cast<double>(idx.size());
            seen += idx.size();
        }

        EpochStats st;
        st.epoch = epoch;
        st.train_mse = train_se / static_cast<double>(seen);
        const EvalAccum val = eval_split(net, val_set, cfg);
        st.val_mse = val.mse;
        st.val_accuracy = val.accuracy;
        result.history.push_back(st);
        if (epoch == 0 || st.val_mse < result.best_val_mse) {
            result.best_val_mse = st.val_mse;
            result.best_epoch = epoch;
            best = snapshot_of(net);
        }
        std::fprintf(stderr, "epoch %zu train_mse %.6g val_mse %.6g val_acc %.4f\n", epoch,
                     st.train_mse, st.val_mse, st.val_accuracy);
    }
    restore(net, best);
    return result;
}

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << "epoch,train_mse,val_mse,val_accuracy\n";
    char line[160];
    for (const auto& st : history) {
        std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g,%.9g\n", st.epoch, st.train_mse,
                      st.val_mse, st.val_accuracy);
        f << line;
    }
}

namespace {

json spec_to_json(const ImageSpec& s) {
    return json{{"width_px", s.width_px},
                {"height_px", s.height_px},
                {"mm_per_px", s.mm_per_px},
                {"background", {s.background[0], s.background[1], s.background[2]}},
                {"designed_color", {s.designed_color[0], s.designed_color[1], s.designed_color[2]}},
                {"measured_color", {s.measured_color[0], s.measured_color[1], s.measured_color[2]}},
                {"line_width_px", s.line_width_px},
                {"resize_to", s.resize_to}};
}

ImageSpec spec_from_json(const json& j) {
    ImageSpec s;
    s.width_px = j.at("width_px");
    s.height_px = j.at("height_px");
    s.mm_per_px = j.at("mm_per_px");
    for (int i = 0; i < 3; ++i) {
        s.background[static_cast<std::size_t>(i)] = j.at("background")[i];
        s.designed_color[static_cast<std::size_t>(i)] = j.at("designed_color")[i];
        s.measured_color[static_cast<std::size_t>(i)] = j.at("measured_color")[i];
    }
    s.line_width_px = j.at("line_width_px");
    s.resize_to = j.at("resize_to");
    return s;
}

} // namespace

void save_checkpoint(nn::Network<float>& net, const nn::ModelConfig& mcfg,
                     const TrainConfig& tcfg, const ImageSpec& spec, const TrainResult& result,
                     const std::string& path) {
    net.save_weights(path);
    json hist = json::array();
    for (const auto& st : result.history)
        hist.push_back({{"epoch", st.epoch},
                        {"train_mse", st.train_mse},
                        {"val_mse", st.val_mse},
                        {"val_accuracy", st.val_accuracy}});
    json meta{
        {"model",
         {{"preset", nn::backbone_preset_name(mcfg.preset)},
          {"input_channels", mcfg.input_channels},
          {"dual_branch", mcfg.dual_branch},
          {"output_dim", mcfg.output_dim}}},
        {"train",
         {{"learning_rate", tcfg.learning_rate},
          {"batch_size", tcfg.batch_size},
          {"epochs", tcfg.epochs},
          {"seed", tcfg.seed},
          {"mode", to_string(tcfg.mode)},
          {"l_norm", tcfg.l_norm},
          {"success_tolerance_mm", tcfg.success_tolerance_mm}}},
        {"image_spec", spec_to_json(spec)},
        {"image_spec_digest", spec_digest(spec)},
        // pixel standardization applied before the network: (255 - v) / 255,
        // so the white background maps to 0 and ink to positive values
        {"standardization", {{"pixel_offset", 255}, {"pixel_scale", -1.0 / 255.0}}},
        {"best_epoch", result.best_epoch},
        {"best_val_mse", result.best_val_mse},
        {"history", hist}};
    std::ofstream f(path + ".json");
    if (!f) throw std::runtime_error("cannot open " + path + ".json for writing");
    f << meta.dump(2) << "\n";
}

Checkpoint load_checkpoint_meta(const std::string& path) {
    std::ifstream f(path + ".json");
    if (!f) throw std::runtime_error("cannot open checkpoint metadata " + path + ".json");
    json meta = json::parse(f);
    Checkpoint c;
    c.weights_path = path;
    c.model.preset = nn::backbone_preset_from_string(meta.at("model").at("preset"));
    c.model.input_channels = meta.at("model").at("input_channels");
    c.model.dual_branch = meta.at("model").at("dual_branch");
    c.model.output_dim = meta.at("model").at("output_dim");
    c.train.learning_rate = meta.at("train").at("learning_rate");
    c.train.batch_size = meta.at("train").at("batch_size");
    c.train.epochs = meta.at("train").at("epochs");
    c.train.seed = meta.at("train").at("seed");
    c.train.mode = render_mode_from_string(meta.at("train").at("mode"));
    c.train.l_norm = meta.at("train").at("l_norm");
    c.train.success_tolerance_mm = meta.at("train").at("success_tolerance_mm");
    c.spec = spec_from_json(meta.at("image_spec"));
    c.result.best_epoch = meta.at("best_epoch");
    c.result.best_val_mse = meta.at("best_val_mse");
    for (const auto& h : meta.at("history")) {
        EpochStats st;
        st.epoch = h.at("epoch");
        st.train_mse = h.at("train_mse");
        st.val_mse = h.at("val_mse");
        st.val_accuracy = h.at("val_accuracy");
        c.result.history.push_back(st);
    }
    return c;
}

nn::Network<float> load_checkpoint_network(const Checkpoint& ckpt) {
    nn::ModelConfig mcfg = ckpt.model;
    nn::ModelConfig tower_cfg = mcfg;
    tower_cfg.input_channels = tower_input_channels(mcfg);
    nn::Network<float> net(tower_cfg, ckpt.train.seed);
    net.load_weights(ckpt.weights_path);
    return net;
}

MatchResult predict_mm(const Checkpoint& ckpt, nn::Network<float>& net, const Profile& designed,
                       const Profile& measured) {
    MatchResult r;
    try {
        RenderedSample rendered = encode_sample(designed, measured, {0.0, 0.0}, ckpt.spec,
                                                ckpt.train.mode, ckpt.train.l_norm, "");
        EncodedDataset ds;
        ds.image_px = ckpt.spec.resize_to > 0 ? ckpt.spec.resize_to : ckpt.spec.width_px;
        ds.images_per_sample = rendered.images.size();
        std::vector<std::uint8_t> buf;
        for (const auto& img : rendered.images)
            buf.insert(buf.end(), img.rgb.begin(), img.rgb.end());
        ds.images.push_back(std::move(buf));
        ds.labels.push_back({0.0, 0.0});
        ds.ids.push_back("query");
        const std::vector<std::size_t> idx{0};
        nn::Tensor<float> xa = make_batch<float>(ds, idx, 0);
        nn::Tensor<float> xb;
        const bool dual = net.config().dual_branch;
        if (dual) xb = make_batch<float>(ds, idx, 1);
        nn::Tensor<float> pred = net.forward(xa, dual ? &xb : nullptr, false);
        r.displacement = denormalize_label(pred.data[0], pred.data[1], ckpt.train.l_norm);
        r.converged = true;
        r.iterations_used = 1;
    } catch (const std::exception& e) {
        r.error = e.what();
    }
    return r;
}

MatchResult predict_mm(const std::string& checkpoint_path, const Profile& designed,
                       const Profile& measured) {
    Checkpoint ckpt = load_checkpoint_meta(checkpoint_path);
    nn::Network<float> net = load_checkpoint_network(ckpt);
    return predict_mm(ckpt, net, designed, measured);
}

} // namespace railmatch
