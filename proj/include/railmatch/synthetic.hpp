#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "railmatch/geometry.hpp"
#include "railmatch/rng.hpp"

namespace railmatch {

/// Geometric parameters of a rail cross-section, millimetres.
/// The canonical pose puts the foot bottom on y = 0 and the crown apex on x = 0.
struct ShapeParams {
    double total_height = 84.0;
    double head_half_left = 32.0;  // apex to working-side face
    double head_half_right = 32.0; // apex to field-side face
    double head_height = 32.0;     // face bottom depth below the apex
    double web_thickness = 18.0;
    double foot_width = 96.0;
    double foot_height = 10.0;
    double crown_radius = 300.0;
    double corner_radius = 9.0;
    double jaw_drop = 8.0;   // head underside slope height
    double taper_rise = 8.0; // foot-to-web taper height
};

/// Randomized parameters for a profile kind. Typical stays left-right
/// symmetric; switch and combined variants are asymmetric, frog heads are
/// lower and flatter.
ShapeParams shape_params_for(ProfileKind kind, std::uint64_t seed);

/// Closed, simple rail-section polyline in canonical pose. Deterministic in
/// (kind, params, seed); the seed only drives symmetry-preserving jitter.
/// Throws if the parameters produce a self-intersecting outline.
Profile make_design_profile(ProfileKind kind, const ShapeParams& params, std::uint64_t seed);

/// Smooth wear bumps: crown lowered by `vertical` at the apex line, working
/// edge recessed by `side` at 16 mm below the apex. Throws when the requested
/// wear exceeds the head dimensions.
Profile apply_wear(const Profile& profile, double vertical, double side, std::uint64_t seed);

/// Drops every point below waist_y; the result is an open polyline.
/// Throws if fewer than 2 points remain.
Profile truncate_below_waist(const Profile& profile, double waist_y);

/// I.i.d. Gaussian jitter per coordinate plus sparse large outliers.
Profile add_sensor_noise(const Profile& profile, double sigma, double outlier_prob,
                         double outlier_magnitude, std::uint64_t seed);

struct Placement {
    Point2 designed_target;
    Point2 measured_target;
};

/// Centroid targets uniform on the centered square of side `side` mm.
Placement sample_placement(Rng& rng, double side);

enum class Split { Train, Val, Test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct GenConfig {
    std::uint64_t master_seed = 1;
    std::size_t n_samples = 0;
    // typical, switch, frog, combined
    std::array<double, 4> kind_mix{0.55, 0.20, 0.15, 0.10};
    double placement_side = 40.0;
    double wear_vertical_min = 0.0, wear_vertical_max = 2.5;
    double wear_side_min = 0.0, wear_side_max = 2.0;
    double noise_sigma = 0.05;
    double outlier_prob = 0.02;
    double outlier_magnitude = 2.0;
    double truncation_prob = 0.3;
    std::array<double, 3> split_fractions{0.70, 0.15, 0.15};
};

void validate(const GenConfig& c);

struct Sample {
    std::string id;
    ProfileKind kind = ProfileKind::Typical;
    Profile designed;
    Profile measured;
    Displacement label; // translation mapping measured back onto its designed-frame pose
    Split split = Split::Train;
};

struct SampleRecord {
    std::string id;
    ProfileKind kind = ProfileKind::Typical;
    std::string designed_path;
    std::string measured_path;
    double dx_mm = 0.0;
    double dy_mm = 0.0;
    Split split = Split::Train;
};

struct DatasetManifest {
    GenConfig config;
    std::vector<SampleRecord> records;
};

/// Kind and split assignment for every index, stratified so each kind hits
/// its split fractions within rounding while the per-split totals match the
/// global largest-remainder targets.
struct Assignments {
    std::vector<ProfileKind> kinds;
    std::vector<Split> splits;
};
Assignments assign_kinds_and_splits(const GenConfig& config);

/// Builds one fully degraded sample. Deterministic in (config, kind, seed).
Sample build_sample(const GenConfig& config, ProfileKind kind, const std::string& id,
                    std::uint64_t seed);

/// The whole dataset plan (labels included) without touching the filesystem.
DatasetManifest plan_dataset(const GenConfig& config);

/// plan_dataset plus profile CSVs and manifest.jsonl under out_dir.
DatasetManifest generate_dataset(const GenConfig& config, const std::string& out_dir);

void write_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

} // namespace railmatch
