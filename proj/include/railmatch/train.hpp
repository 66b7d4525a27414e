#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "railmatch/nn/model.hpp"
#include "railmatch/raster.hpp"
#include "railmatch/registration.hpp"
#include "railmatch/synthetic.hpp"

namespace railmatch {

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t batch_size = 32;
    std::size_t epochs = 20;
    std::uint64_t seed = 1;
    RenderMode mode = RenderMode::Single;
    double l_norm = kDefaultLabelNormMm;
    double success_tolerance_mm = 0.4; // val accuracy bookkeeping only
    std::string init_from; // optional checkpoint weights to warm-start from
};

void validate(const TrainConfig& c);

/// Pre-rendered split: uint8 images (byte-exact rasterizer output) plus
/// normalized labels. Rendering once up front keeps epochs cheap.
struct EncodedDataset {
    int image_px = 0;
    std::size_t images_per_sample = 1;
    std::vector<std::vector<std::uint8_t>> images; // per sample, images concatenated
    std::vector<std::pair<double, double>> labels; // normalized
    std::vector<std::string> ids;

    std::size_t size() const { return labels.size(); }
};

EncodedDataset encode_samples(const std::vector<Sample>& samples, const ImageSpec& spec,
                              RenderMode mode, double l_norm);

/// Reads the profile CSVs behind manifest records of one split.
std::vector<Sample> load_split(const DatasetManifest& manifest, const std::string& base_dir,
                               Split split);

/// Batch input: pixels inverted and scaled so the white background maps to 0
/// and full ink to 1. The displacement label is invariant under a common
/// translation of both curves, so no position encoding is added: the network
/// is forced to learn relative features, which is what generalizes.
template <typename T>
nn::Tensor<T> make_batch(const EncodedDataset& ds, const std::vector<std::size_t>& idx,
                         std::size_t image_index);

/// Channels the network actually consumes for a given model config.
inline std::size_t tower_input_channels(const nn::ModelConfig& cfg) {
    return cfg.input_channels;
}

template <typename T>
nn::Network<T> make_model(const nn::ModelConfig& cfg, std::uint64_t seed) {
    return nn::Network<T>(cfg, seed);
}

struct EpochStats {
    std::size_t epoch = 0;
    double train_mse = 0.0; // normalized units
    double val_mse = 0.0;
    double val_accuracy = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;
    double best_val_mse = 0.0;
};

/// Seeded-minibatch MSE training with Adam; after every epoch the validation
/// MSE is measured and the lowest-val-MSE weights are kept (ties -> earliest
/// epoch). The network holds the best weights when this returns. Throws on a
/// non-finite loss, naming the epoch and batch.
TrainResult train_model(nn::Network<float>& net, const EncodedDataset& train_set,
                        const EncodedDataset& val_set, const TrainConfig& cfg);

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path);

/// Checkpoint = weights blob at `path` plus a `path + ".json"` sidecar with
/// everything needed to rebuild preprocessing: model config, train config,
/// image spec (fields and digest), label normalization, history.
void save_checkpoint(nn::Network<float>& net, const nn::ModelConfig& mcfg,
                     const TrainConfig& tcfg, const ImageSpec& spec,
                     const TrainResult& result, const std::string& path);

struct Checkpoint {
    nn::ModelConfig model;
    TrainConfig train;
    ImageSpec spec;
    TrainResult result;
    std::string weights_path;
};

Checkpoint load_checkpoint_meta(const std::string& path);
nn::Network<float> load_checkpoint_network(const Checkpoint& ckpt);

/// Renders the pair per the checkpoint metadata, forwards, denormalizes.
MatchResult predict_mm(const Checkpoint& ckpt, nn::Network<float>& net, const Profile& designed,
                       const Profile& measured);

MatchResult predict_mm(const std::string& checkpoint_path, const Profile& designed,
                       const Profile& measured);

} // namespace railmatch
