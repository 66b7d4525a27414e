#include "railmatch/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "railmatch/profile_io.hpp"

namespace railmatch {

namespace {

double crown_y(double x, double height, double radius) {
    return height - (radius - std::sqrt(radius * radius - x * x));
}

void append_crown_half(std::vector<Point2>& pts, double half_width, double corner_radius,
                       double height, double radius, double sign, bool from_apex) {
    const double xs = half_width - corner_radius; // shoulder abscissa
    const auto n_arc = static_cast<int>(std::ceil(xs / 1.5));
    std::vector<Point2> half;
    for (int k = 1; k <= n_arc; ++k) {
        const double x = xs * static_cast<double>(k) / n_arc;
        half.push_back({sign * x, crown_y(x, height, radius)});
    }
    const double y_shoulder = crown_y(xs, height, radius);
    const int n_corner = 6;
    for (int j = 1; j <= n_corner; ++j) {
        const double a = (M_PI / 2.0) * static_cast<double>(j) / n_corner;
        half.push_back({sign * (xs + corner_radius * std::sin(a)),
                        y_shoulder - corner_radius * (1.0 - std::cos(a))});
    }
    if (!from_apex) std::reverse(half.begin(), half.end());
    pts.insert(pts.end(), half.begin(), half.end());
}

} // namespace

ShapeParams shape_params_for(ProfileKind kind, std::uint64_t seed) {
    Rng r(seed);
    ShapeParams p;
    p.total_height = 84.0 + r.uniform(-4.0, 4.0);
    const double head_half = 32.0 + r.uniform(-3.0, 3.0);
    p.head_height = 32.0 + r.uniform(-3.0, 3.0);
    p.web_thickness = 18.0 + r.uniform(-2.0, 2.0);
    p.foot_width = 96.0 + r.uniform(-6.0, 6.0);
    p.crown_radius = 300.0 * (1.0 + r.uniform(-0.2, 0.2));
    p.corner_radius = 9.0 + r.uniform(-1.0, 1.0);
    p.head_half_left = p.head_half_right = head_half;
    switch (kind) {
        case ProfileKind::Typical:
            break;
        case ProfileKind::Switch:
            p.head_half_left = head_half * r.uniform(0.55, 0.80);
            p.head_half_right = head_half * r.uniform(0.95, 1.10);
            p.head_height -= 2.0;
            break;
        case ProfileKind::Frog:
            p.total_height -= 6.0;
            p.head_height = 24.0 + r.uniform(-1.5, 1.5);
            p.crown_radius = 700.0 * (1.0 + r.uniform(-0.2, 0.2));
            p.head_half_left = p.head_half_right = head_half + r.uniform(2.0, 6.0);
            break;
        case ProfileKind::Combined:
            p.head_half_left = head_half * r.uniform(0.75, 0.90);
            p.head_half_right = head_half * r.uniform(1.05, 1.20);
            p.web_thickness += 4.0;
            p.foot_width += r.uniform(0.0, 8.0);
            break;
    }
    // the foot must stay inside the head-width construction box
    p.foot_width = std::min(p.foot_width, 1.9 * (p.head_half_left + p.head_half_right));
    return p;
}

Profile make_design_profile(ProfileKind kind, const ShapeParams& params, std::uint64_t seed) {
    ShapeParams p = params;
    {
        // seed-driven jitter that preserves left-right symmetry
        Rng r(seed);
        p.crown_radius *= 1.0 + r.uniform(-0.05, 0.05);
        p.foot_height += r.uniform(-1.0, 1.0);
    }
    const double H = p.total_height;
    if (p.head_half_left <= p.corner_radius + 2.0 || p.head_half_right <= p.corner_radius + 2.0)
        throw std::invalid_argument("head half-width too small for the corner radius");
    if (p.head_height < kSideWearDepthMm + 5.0)
        throw std::invalid_argument("head height must exceed the side-wear depth");
    const double web_top = H - p.head_height - p.jaw_drop;
    const double web_bot = p.foot_height + p.taper_rise;
    if (web_top <= web_bot + 5.0)
        throw std::invalid_argument("no room for the web");

    Profile out;
    out.kind = kind;
    out.closed = true;
    out.working_edge = WorkingEdge::Left;
    auto& v = out.points;

    v.push_back({0.0, H}); // crown apex, exact vertex
    append_crown_half(v, p.head_half_left, p.corner_radius, H, p.crown_radius, -1.0, true);
    v.push_back({-p.head_half_left, H - kSideWearDepthMm}); // gauge point, exact vertex
    v.push_back({-p.head_half_left, H - p.head_height});
    v.push_back({-p.web_thickness / 2.0, web_top});
    v.push_back({-p.web_thickness / 2.0, web_bot});
    v.push_back({-p.foot_width / 2.0, p.foot_height});
    v.push_back({-p.foot_width / 2.0, 0.0});
    v.push_back({p.foot_width / 2.0, 0.0});
    v.push_back({p.foot_width / 2.0, p.foot_height});
    v.push_back({p.web_thickness / 2.0, web_bot});
    v.push_back({p.web_thickness / 2.0, web_top});
    v.push_back({p.head_half_right, H - p.head_height});
    v.push_back({p.head_half_right, H - kSideWearDepthMm});
    append_crown_half(v, p.head_half_right, p.corner_radius, H, p.crown_radius, 1.0, false);

    validate(out);
    if (!is_simple(out))
        throw std::invalid_argument("shape parameters produce a self-intersecting profile");
    return out;
}

Profile apply_wear(const Profile& profile, double vertical, double side, std::uint64_t seed) {
    validate(profile);
    if (vertical < 0.0 || side < 0.0)
        throw std::invalid_argument("wear must be non-negative");

    std::size_t apex = 0;
    for (std::size_t i = 1; i < profile.points.size(); ++i)
        if (profile.points[i].y > profile.points[apex].y) apex = i;
    const double apex_x = profile.points[apex].x;
    const double apex_y = profile.points[apex].y;
    const double side_y = apex_y - kSideWearDepthMm;

    // head half-widths measured on the profile itself
    double w_left = 0.0, w_right = 0.0;
    for (std::size_t i = 0; i < profile.segment_count(); ++i) {
        const Point2 a = profile.segment_a(i);
        const Point2 b = profile.segment_b(i);
        if ((a.y - side_y) * (b.y - side_y) > 0.0) continue;
        const double t = (a.y == b.y) ? 0.0 : (side_y - a.y) / (b.y - a.y);
        const double x = a.x + t * (b.x - a.x);
        w_left = std::max(w_left, apex_x - x);
        w_right = std::max(w_right, x - apex_x);
    }
    if (w_left <= 0.0 || w_right <= 0.0)
        throw std::invalid_argument("profile has no head at the side-wear depth");
    const double w_min = std::min(w_left, w_right);
    if (vertical > 8.0 || side > 0.5 * w_min)
        throw std::invalid_argument("requested wear exceeds the head dimensions");

    Rng r(seed);
    const double w_c = 0.55 * w_min * (1.0 + r.uniform(-0.1, 0.1));
    const double h_c = 9.0 * (1.0 + r.uniform(-0.1, 0.1));
    const bool left = profile.working_edge == WorkingEdge::Left;
    const double face_x = left ? apex_x - 0.5 * w_left : apex_x + 0.5 * w_right;

    auto bump = [](double u) {
        const double c = std::cos(M_PI / 2.0 * u);
        return c * c;
    };

    Profile out = profile;
    for (auto& pt : out.points) {
        if (vertical > 0.0 && pt.y > apex_y - (kSideWearDepthMm - 2.0) &&
            std::abs(pt.x - apex_x) < w_c) {
            pt.y -= vertical * bump((pt.x - apex_x) / w_c);
        }
        const bool on_face = left ? pt.x < face_x : pt.x > face_x;
        if (side > 0.0 && on_face && std::abs(pt.y - side_y) < h_c) {
            const double shift = side * bump((pt.y - side_y) / h_c);
            pt.x += left ? shift : -shift;
        }
    }
    return out;
}

Profile truncate_below_waist(const Profile& profile, double waist_y) {
    validate(profile);
    const std::size_t n = profile.points.size();
    std::vector<Point2> order;
    order.reserve(n);
    if (profile.closed) {
        std::size_t start = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (profile.points[i].y < waist_y) {
                start = i;
                break;
            }
        for (std::size_t i = 0; i < n; ++i) order.push_back(profile.points[(start + i) % n]);
    } else {
        order = profile.points;
    }

    // longest contiguous run of points above the waist
    std::vector<Point2> best, cur;
    for (const auto& pt : order) {
        if (pt.y >= waist_y) {
            cur.push_back(pt);
        } else {
            if (cur.size() > best.size()) best = cur;
            cur.clear();
        }
    }
    if (cur.size() > best.size()) best = std::move(cur);
    if (best.size() < 2)
        throw std::invalid_argument("truncation leaves fewer than 2 points");

    Profile out;
    out.kind = profile.kind;
    out.working_edge = profile.working_edge;
    out.closed = false;
    out.points = std::move(best);
    return out;
}

Profile add_sensor_noise(const Profile& profile, double sigma, double outlier_prob,
                         double outlier_magnitude, std::uint64_t seed) {
    validate(profile);
    if (sigma < 0.0 || outlier_prob < 0.0 || outlier_prob > 1.0)
        throw std::invalid_argument("bad noise parameters");
    Rng r(seed);
    Profile out = profile;
    for (auto& pt : out.points) {
        if (sigma > 0.0) {
            pt.x += r.normal(0.0, sigma);
            pt.y += r.normal(0.0, sigma);
        }
        if (outlier_prob > 0.0 && r.uniform() < outlier_prob) {
            const double a = r.uniform(0.0, 2.0 * M_PI);
            const double m = r.uniform(0.0, outlier_magnitude);
            pt.x += m * std::cos(a);
            pt.y += m * std::sin(a);
        }
    }
    return out;
}

Placement sample_placement(Rng& rng, double side) {
    const double h = side / 2.0;
    Placement p;
    p.designed_target = {rng.uniform(-h, h), rng.uniform(-h, h)};
    p.measured_target = {rng.uniform(-h, h), rng.uniform(-h, h)};
    return p;
}

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw std::invalid_argument("unknown split: " + s);
}

void validate(const GenConfig& c) {
    auto check_fracs = [](const auto& fr, const char* what) {
        double sum = 0.0;
        for (double f : fr) {
            if (f < 0.0 || f > 1.0) throw std::invalid_argument(std::string(what) + " out of [0,1]");
            sum += f;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw std::invalid_argument(std::string(what) + " must sum to 1");
    };
    check_fracs(c.kind_mix, "kind_mix");
    check_fracs(c.split_fractions, "split_fractions");
    if (!(c.placement_side > 0.0)) throw std::invalid_argument("placement_side must be positive");
    if (c.wear_vertical_min < 0.0 || c.wear_vertical_max < c.wear_vertical_min ||
        c.wear_side_min < 0.0 || c.wear_side_max < c.wear_side_min)
        throw std::invalid_argument("wear ranges must be non-negative intervals");
    if (c.noise_sigma < 0.0 || c.outlier_prob < 0.0 || c.outlier_prob > 1.0 ||
        c.truncation_prob < 0.0 || c.truncation_prob > 1.0)
        throw std::invalid_argument("bad noise/truncation parameters");
}

namespace {

/// Largest-remainder rounding of total * weights[i] to integers summing to total.
std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<double>& weights) {
    const std::size_t n = weights.size();
    std::vector<std::size_t> counts(n);
    std::vector<std::pair<double, std::size_t>> rema(n);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double exact = static_cast<double>(total) * weights[i];
        counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-12));
        rema[i] = {exact - static_cast<double>(counts[i]), i};
        assigned += counts[i];
    }
    std::stable_sort(rema.begin(), rema.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < total; ++k, ++assigned) counts[rema[k % n].second]++;
    return counts;
}

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.below(i)]);
}

} // namespace

Assignments assign_kinds_and_splits(const GenConfig& config) {
    validate(config);
    const std::size_t n = config.n_samples;
    Assignments out;
    out.kinds.resize(n);
    out.splits.resize(n, Split::Train);

    const std::vector<double> mix(config.kind_mix.begin(), config.kind_mix.end());
    const auto kind_counts = largest_remainder(n, mix);
    {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(derive_seed(config.master_seed, 0xC0DE0001ULL));
        shuffle_indices(idx, rng);
        std::size_t at = 0;
        for (std::size_t k = 0; k < 4; ++k)
            for (std::size_t c = 0; c < kind_counts[k]; ++c)
                out.kinds[idx[at++]] = static_cast<ProfileKind>(k);
    }

    // Global split targets; per-kind quotas rounded so both margins hold.
    const std::vector<double> fr(config.split_fractions.begin(), config.split_fractions.end());
    const auto split_targets = largest_remainder(n, fr);

    std::array<std::array<std::size_t, 3>, 4> quota{};
    std::array<std::size_t, 4> kind_left{};
    std::array<long long, 3> split_deficit{};
    for (std::size_t s = 0; s < 3; ++s) split_deficit[s] = static_cast<long long>(split_targets[s]);
    std::vector<std::tuple<double, std::size_t, std::size_t>> cells;
    for (std::size_t k = 0; k < 4; ++k) {
        std::size_t placed = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            const double exact = static_cast<double>(kind_counts[k]) * fr[s];
            quota[k][s] = static_cast<std::size_t>(std::floor(exact + 1e-12));
            split_deficit[s] -= static_cast<long long>(quota[k][s]);
            placed += quota[k][s];
            cells.emplace_back(exact - static_cast<double>(quota[k][s]), k, s);
        }
        kind_left[k] = kind_counts[k] - placed;
    }
    std::stable_sort(cells.begin(), cells.end(),
                     [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
    for (const auto& [frac, k, s] : cells) {
        if (kind_left[k] > 0 && split_deficit[s] > 0) {
            quota[k][s]++;
            kind_left[k]--;
            split_deficit[s]--;
        }
    }
    for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t s = 0; kind_left[k] > 0 && s < 3; ++s)
            while (kind_left[k] > 0 && split_deficit[s] > 0) {
                quota[k][s]++;
                kind_left[k]--;
                split_deficit[s]--;
            }

    for (std::size_t k = 0; k < 4; ++k) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < n; ++i)
            if (out.kinds[i] == static_cast<ProfileKind>(k)) members.push_back(i);
        Rng rng(derive_seed(config.master_seed, 0xC0DE0010ULL + k));
        shuffle_indices(members, rng);
        std::size_t at = 0;
        for (std::size_t s = 0; s < 3; ++s)
            for (std::size_t c = 0; c < quota[k][s] && at < members.size(); ++c)
                out.splits[members[at++]] = static_cast<Split>(s);
    }
    return out;
}

Sample build_sample(const GenConfig& config, ProfileKind kind, const std::string& id,
                    std::uint64_t seed) {
    Rng rng(seed);
    const std::uint64_t params_seed = rng.next_u64();
    const ShapeParams params = shape_params_for(kind, params_seed);
    Profile designed = resample(make_design_profile(kind, params, rng.next_u64()), 1.0);

    const double v = rng.uniform(config.wear_vertical_min, config.wear_vertical_max);
    const double s = rng.uniform(config.wear_side_min, config.wear_side_max);
    Profile degraded = apply_wear(designed, v, s, rng.next_u64());
    if (rng.uniform() < config.truncation_prob) {
        const double lo = params.foot_height + params.taper_rise + 4.0;
        const double hi = params.total_height - params.head_height - params.jaw_drop - 4.0;
        degraded = truncate_below_waist(degraded, rng.uniform(lo, hi));
    }
    degraded = add_sensor_noise(degraded, config.noise_sigma, config.outlier_prob,
                                config.outlier_magnitude, rng.next_u64());

    const Point2 c_des = centroid(designed);
    const Point2 delta = centroid(degraded) - c_des;

    // Reject placements whose exact label leaves the design envelope.
    Displacement label;
    Placement pl;
    bool ok = false;
    for (int attempt = 0; attempt < 10000; ++attempt) {
        pl = sample_placement(rng, config.placement_side);
        label = {pl.designed_target.x - pl.measured_target.x + delta.x,
                 pl.designed_target.y - pl.measured_target.y + delta.y};
        if (std::abs(label.dx) < config.placement_side - 1e-9 &&
            std::abs(label.dy) < config.placement_side - 1e-9) {
            ok = true;
            break;
        }
    }
    if (!ok) throw std::runtime_error("could not place sample " + id + " inside the envelope");

    const Displacement to_frame{pl.designed_target.x - c_des.x, pl.designed_target.y - c_des.y};
    Sample out;
    out.id = id;
    out.kind = kind;
    out.designed = translate(designed, to_frame);
    out.measured = translate(translate(degraded, to_frame), {-label.dx, -label.dy});
    out.label = label;
    return out;
}

namespace {

std::string sample_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "s%06zu", i);
    return buf;
}

DatasetManifest build_all(const GenConfig& config, const std::string* out_dir) {
    const Assignments assign = assign_kinds_and_splits(config);
    const std::size_t n = config.n_samples;
    DatasetManifest m;
    m.config = config;
    m.records.resize(n);

    if (out_dir)
        std::filesystem::create_directories(std::filesystem::path(*out_dir) / "profiles");

    std::exception_ptr first_error;
#pragma omp parallel for schedule(dynamic, 16)
    for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        try {
            const std::string id = sample_id(i);
            Sample s = build_sample(config, assign.kinds[i], id, derive_seed(config.master_seed, i));
            s.split = assign.splits[i];
            SampleRecord& r = m.records[i];
            r.id = id;
            r.kind = s.kind;
            r.split = s.split;
            r.dx_mm = s.label.dx;
            r.dy_mm = s.label.dy;
            r.designed_path = "profiles/" + id + "_designed.csv";
            r.measured_path = "profiles/" + id + "_measured.csv";
            if (out_dir) {
                write_profile_csv(s.designed, (std::filesystem::path(*out_dir) / r.designed_path).string());
                write_profile_csv(s.measured, (std::filesystem::path(*out_dir) / r.measured_path).string());
            }
        } catch (...) {
#pragma omp critical
            if (!first_error) first_error = std::current_exception();
        }
    }
    if (first_error) std::rethrow_exception(first_error);
    return m;
}

} // namespace

DatasetManifest plan_dataset(const GenConfig& config) { return build_all(config, nullptr); }

DatasetManifest generate_dataset(const GenConfig& config, const std::string& out_dir) {
    DatasetManifest m = build_all(config, &out_dir);
    write_manifest(m, (std::filesystem::path(out_dir) / "manifest.jsonl").string());
    return m;
}

namespace {

nlohmann::json config_to_json(const GenConfig& c) {
    nlohmann::json j;
    j["type"] = "gen_config";
    j["master_seed"] = c.master_seed;
    j["n_samples"] = c.n_samples;
    j["kind_mix"] = c.kind_mix;
    j["placement_side"] = c.placement_side;
    j["wear_vertical_range"] = {c.wear_vertical_min, c.wear_vertical_max};
    j["wear_side_range"] = {c.wear_side_min, c.wear_side_max};
    j["noise_sigma"] = c.noise_sigma;
    j["outlier_prob"] = c.outlier_prob;
    j["outlier_magnitude"] = c.outlier_magnitude;
    j["truncation_prob"] = c.truncation_prob;
    j["split_fractions"] = c.split_fractions;
    return j;
}

GenConfig config_from_json(const nlohmann::json& j) {
    GenConfig c;
    c.master_seed = j.value("master_seed", std::uint64_t{1});
    c.n_samples = j.value("n_samples", std::size_t{0});
    if (j.contains("kind_mix")) c.kind_mix = j["kind_mix"].get<std::array<double, 4>>();
    c.placement_side = j.value("placement_side", 40.0);
    if (j.contains("wear_vertical_range")) {
        c.wear_vertical_min = j["wear_vertical_range"][0].get<double>();
        c.wear_vertical_max = j["wear_vertical_range"][1].get<double>();
    }
    if (j.contains("wear_side_range")) {
        c.wear_side_min = j["wear_side_range"][0].get<double>();
        c.wear_side_max = j["wear_side_range"][1].get<double>();
    }
    c.noise_sigma = j.value("noise_sigma", 0.05);
    c.outlier_prob = j.value("outlier_prob", 0.02);
    c.outlier_magnitude = j.value("outlier_magnitude", 2.0);
    c.truncation_prob = j.value("truncation_prob", 0.3);
    if (j.contains("split_fractions"))
        c.split_fractions = j["split_fractions"].get<std::array<double, 3>>();
    return c;
}

} // namespace

void write_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << config_to_json(m.config).dump() << "\n";
    for (const auto& r : m.records) {
        nlohmann::json j;
        j["id"] = r.id;
        j["kind"] = to_string(r.kind);
        j["designed_path"] = r.designed_path;
        j["measured_path"] = r.measured_path;
        j["dx_mm"] = r.dx_mm;
        j["dy_mm"] = r.dy_mm;
        j["split"] = to_string(r.split);
        f << j.dump() << "\n";
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest: " + path);
    DatasetManifest m;
    std::string line;
    bool have_config = false;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        if (j.value("type", "") == "gen_config") {
            m.config = config_from_json(j);
            have_config = true;
            continue;
        }
        SampleRecord r;
        r.id = j.at("id").get<std::string>();
        r.kind = profile_kind_from_string(j.at("kind").get<std::string>());
        r.designed_path = j.at("designed_path").get<std::string>();
        r.measured_path = j.at("measured_path").get<std::string>();
        r.dx_mm = j.at("dx_mm").get<double>();
        r.dy_mm = j.at("dy_mm").get<double>();
        r.split = split_from_string(j.at("split").get<std::string>());
        m.records.push_back(std::move(r));
    }
    if (!have_config) throw std::runtime_error("manifest missing gen_config header: " + path);
    return m;
}

} // namespace railmatch
