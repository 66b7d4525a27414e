#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "railmatch/profile_io.hpp"
#include "railmatch/synthetic.hpp"

using namespace railmatch;

namespace {

const std::array<ProfileKind, 4> kAllKinds{ProfileKind::Typical, ProfileKind::Switch,
                                           ProfileKind::Frog, ProfileKind::Combined};

std::string manifest_string(const DatasetManifest& m) {
    const auto path = std::filesystem::temp_directory_path() / "railmatch_manifest_tmp.jsonl";
    write_manifest(m, path.string());
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("typical symmetric profile is centered") {
    const ShapeParams params; // defaults are symmetric
    const Profile p = make_design_profile(ProfileKind::Typical, params, 42);
    CHECK(std::abs(centroid(p).x) < 1e-6);
}

TEST_CASE("design profiles are closed, simple and inside the construction box") {
    for (const auto kind : kAllKinds) {
        for (std::uint64_t seed = 1; seed <= 8; ++seed) {
            const ShapeParams params = shape_params_for(kind, seed);
            const Profile p = make_design_profile(kind, params, seed);
            CHECK(p.closed);
            CHECK(is_simple(p));
            const BBox bb = bounding_box(p);
            const double head_width = params.head_half_left + params.head_half_right;
            CHECK(bb.min_x >= -head_width - 1e-9);
            CHECK(bb.max_x <= head_width + 1e-9);
            CHECK(bb.min_y >= -1e-9);
            CHECK(bb.max_y <= params.total_height + 1e-9);
        }
    }
}

TEST_CASE("design profile generation is deterministic") {
    const ShapeParams params = shape_params_for(ProfileKind::Switch, 5);
    const Profile a = make_design_profile(ProfileKind::Switch, params, 5);
    const Profile b = make_design_profile(ProfileKind::Switch, params, 5);
    REQUIRE(a.points.size() == b.points.size());
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        CHECK(a.points[i].x == b.points[i].x);
        CHECK(a.points[i].y == b.points[i].y);
    }
}

TEST_CASE("degenerate shape parameters are rejected") {
    ShapeParams params;
    params.head_half_left = params.corner_radius; // no room for the corner arc
    CHECK_THROWS(make_design_profile(ProfileKind::Typical, params, 1));
}

TEST_CASE("zero wear is the identity") {
    const Profile p = make_design_profile(ProfileKind::Typical, ShapeParams{}, 3);
    const Profile w = apply_wear(p, 0.0, 0.0, 9);
    REQUIRE(w.points.size() == p.points.size());
    for (std::size_t i = 0; i < p.points.size(); ++i) {
        CHECK(w.points[i].x == p.points[i].x);
        CHECK(w.points[i].y == p.points[i].y);
    }
}

TEST_CASE("wear loop closes against the geometry oracle") {
    for (const auto kind : kAllKinds) {
        const ShapeParams params = shape_params_for(kind, 17);
        const Profile p = resample(make_design_profile(kind, params, 17), 1.0);

        const Profile worn_v = apply_wear(p, 2.0, 0.0, 4);
        const WearReport wv = compute_wear(p, worn_v);
        CHECK(std::abs(wv.vertical_wear - 2.0) < 0.05);
        CHECK(std::abs(wv.side_wear) < 0.05);

        const Profile worn_s = apply_wear(p, 0.0, 1.5, 4);
        const WearReport ws = compute_wear(p, worn_s);
        CHECK(std::abs(ws.side_wear - 1.5) < 0.05);
        CHECK(std::abs(ws.vertical_wear) < 0.05);

        CHECK(is_simple(apply_wear(p, 2.0, 1.5, 4)));
    }
}

TEST_CASE("excessive wear is rejected") {
    const Profile p = make_design_profile(ProfileKind::Typical, ShapeParams{}, 3);
    CHECK_THROWS(apply_wear(p, 20.0, 0.0, 1));
    CHECK_THROWS(apply_wear(p, 0.0, 30.0, 1));
    CHECK_THROWS(apply_wear(p, -1.0, 0.0, 1));
}

TEST_CASE("truncation keeps only the points above the waist") {
    const Profile p = resample(make_design_profile(ProfileKind::Typical, ShapeParams{}, 3), 1.0);

    const Profile all = truncate_below_waist(p, -5.0);
    CHECK_FALSE(all.closed);
    CHECK(all.points.size() == p.points.size());

    const double waist = ShapeParams{}.total_height / 2.0;
    const Profile cut = truncate_below_waist(p, waist);
    CHECK_FALSE(cut.closed);
    for (const auto& pt : cut.points) CHECK(pt.y >= waist);
    CHECK(arc_length(cut) < arc_length(p));

    CHECK_THROWS(truncate_below_waist(p, 1e6));
}

TEST_CASE("sensor noise statistics and determinism") {
    Profile line;
    for (int i = 0; i < 10000; ++i) line.points.push_back({static_cast<double>(i), 0.0});

    const Profile clean = add_sensor_noise(line, 0.0, 0.0, 2.0, 7);
    for (std::size_t i = 0; i < line.points.size(); ++i) {
        CHECK(clean.points[i].x == line.points[i].x);
        CHECK(clean.points[i].y == line.points[i].y);
    }

    const Profile noisy = add_sensor_noise(line, 0.05, 0.0, 0.0, 7);
    double sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < line.points.size(); ++i) {
        const double ex = noisy.points[i].x - line.points[i].x;
        const double ey = noisy.points[i].y - line.points[i].y;
        sx += ex * ex;
        sy += ey * ey;
    }
    const double std_x = std::sqrt(sx / 10000.0);
    const double std_y = std::sqrt(sy / 10000.0);
    CHECK(std_x > 0.045);
    CHECK(std_x < 0.055);
    CHECK(std_y > 0.045);
    CHECK(std_y < 0.055);

    const Profile again = add_sensor_noise(line, 0.05, 0.02, 2.0, 123);
    const Profile again2 = add_sensor_noise(line, 0.05, 0.02, 2.0, 123);
    for (std::size_t i = 0; i < line.points.size(); ++i) {
        CHECK(again.points[i].x == again2.points[i].x);
        CHECK(again.points[i].y == again2.points[i].y);
    }
}

TEST_CASE("placement targets are centered on average") {
    Rng rng(99);
    double mx = 0.0, my = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const Placement p = sample_placement(rng, 40.0);
        mx += p.designed_target.x + p.measured_target.x;
        my += p.designed_target.y + p.measured_target.y;
        CHECK(std::abs(p.designed_target.x) <= 20.0);
        CHECK(std::abs(p.measured_target.y) <= 20.0);
    }
    CHECK(std::abs(mx / (2 * n)) < 0.5);
    CHECK(std::abs(my / (2 * n)) < 0.5);
}

TEST_CASE("pure-translation samples have exact labels") {
    GenConfig cfg;
    cfg.master_seed = 57;
    cfg.wear_vertical_max = cfg.wear_vertical_min = 0.0;
    cfg.wear_side_max = cfg.wear_side_min = 0.0;
    cfg.noise_sigma = 0.0;
    cfg.outlier_prob = 0.0;
    cfg.truncation_prob = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const Sample s = build_sample(cfg, ProfileKind::Typical, "t", seed);
        const Profile back = translate(s.measured, s.label);
        REQUIRE(back.points.size() == s.designed.points.size());
        for (std::size_t i = 0; i < back.points.size(); ++i) {
            CHECK(std::abs(back.points[i].x - s.designed.points[i].x) < 1e-9);
            CHECK(std::abs(back.points[i].y - s.designed.points[i].y) < 1e-9);
        }
    }
}

TEST_CASE("degraded samples keep labels inside the envelope") {
    GenConfig cfg;
    cfg.master_seed = 31;
    for (std::uint64_t seed = 1; seed <= 40; ++seed) {
        const auto kind = kAllKinds[seed % 4];
        const Sample s = build_sample(cfg, kind, "d", seed);
        CHECK(std::abs(s.label.dx) < cfg.placement_side);
        CHECK(std::abs(s.label.dy) < cfg.placement_side);
        const Point2 cm = centroid(s.measured);
        CHECK(std::abs(cm.x) <= cfg.placement_side / 2.0 + 1e-6);
        CHECK(std::abs(cm.y) <= cfg.placement_side / 2.0 + 1e-6);
    }
}

TEST_CASE("dataset plan is deterministic") {
    GenConfig cfg;
    cfg.master_seed = 77;
    cfg.n_samples = 60;
    const std::string a = manifest_string(plan_dataset(cfg));
    const std::string b = manifest_string(plan_dataset(cfg));
    CHECK(a == b);
    CHECK(!a.empty());
}

TEST_CASE("degenerate kind mix yields a single kind") {
    GenConfig cfg;
    cfg.master_seed = 5;
    cfg.n_samples = 25;
    cfg.kind_mix = {1.0, 0.0, 0.0, 0.0};
    const DatasetManifest m = plan_dataset(cfg);
    for (const auto& r : m.records) CHECK(r.kind == ProfileKind::Typical);
}

TEST_CASE("every kind lands in every split") {
    GenConfig cfg;
    cfg.master_seed = 8;
    cfg.n_samples = 200;
    const Assignments a = assign_kinds_and_splits(cfg);
    std::set<std::pair<int, int>> seen;
    for (std::size_t i = 0; i < cfg.n_samples; ++i)
        seen.insert({static_cast<int>(a.kinds[i]), static_cast<int>(a.splits[i])});
    CHECK(seen.size() == 12);
}

TEST_CASE("split counts follow the fractions within rounding") {
    GenConfig cfg;
    cfg.master_seed = 21;
    cfg.n_samples = 1000;
    const Assignments a = assign_kinds_and_splits(cfg);
    std::array<std::size_t, 3> counts{};
    for (const auto s : a.splits) counts[static_cast<std::size_t>(s)]++;
    CHECK(counts[0] == 700);
    CHECK(counts[1] == 150);
    CHECK(counts[2] == 150);
}

TEST_CASE("generated dataset round-trips through the filesystem") {
    GenConfig cfg;
    cfg.master_seed = 3;
    cfg.n_samples = 12;
    const auto dir = std::filesystem::temp_directory_path() / "railmatch_gen_test";
    std::filesystem::remove_all(dir);
    const DatasetManifest m = generate_dataset(cfg, dir.string());
    REQUIRE(m.records.size() == 12);

    const DatasetManifest back = read_manifest((dir / "manifest.jsonl").string());
    REQUIRE(back.records.size() == 12);
    CHECK(back.config.master_seed == cfg.master_seed);
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(back.records[i].id == m.records[i].id);
        CHECK(back.records[i].dx_mm == m.records[i].dx_mm);
        const Profile designed = read_profile_csv((dir / back.records[i].designed_path).string());
        const Profile measured = read_profile_csv((dir / back.records[i].measured_path).string());
        CHECK(designed.closed);
        CHECK(designed.points.size() > 100);
        CHECK(measured.points.size() > 10);
    }
    std::filesystem::remove_all(dir);
}
