#include "railmatch/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "railmatch/rng.hpp"

namespace railmatch {

std::string match_result_to_json(const MatchResult& r) {
    nlohmann::json j;
    j["dx_mm"] = r.displacement.dx;
    j["dy_mm"] = r.displacement.dy;
    j["residual_rms_mm"] = r.residual_rms;
    j["iterations_used"] = r.iterations_used;
    j["converged"] = r.converged;
    if (r.inlier_fraction) j["inlier_fraction"] = *r.inlier_fraction;
    if (!r.error.empty()) j["error"] = r.error;
    return j.dump(2);
}

SegmentIndex::SegmentIndex(const Profile& p, double cell_size) : cell_(cell_size) {
    validate(p);
    const std::size_t nseg = p.segment_count();
    seg_a_.reserve(nseg);
    seg_b_.reserve(nseg);
    for (std::size_t i = 0; i < nseg; ++i) {
        seg_a_.push_back(p.segment_a(i));
        seg_b_.push_back(p.segment_b(i));
    }
    const BBox bb = bounding_box(p);
    min_x_ = bb.min_x - cell_;
    min_y_ = bb.min_y - cell_;
    nx_ = static_cast<int>((bb.max_x - min_x_) / cell_) + 2;
    ny_ = static_cast<int>((bb.max_y - min_y_) / cell_) + 2;
    cells_.resize(static_cast<std::size_t>(nx_) * ny_);
    for (std::size_t i = 0; i < nseg; ++i) {
        const Point2 a = seg_a_[i], b = seg_b_[i];
        const int c0 = static_cast<int>((std::min(a.x, b.x) - min_x_) / cell_);
        const int c1 = static_cast<int>((std::max(a.x, b.x) - min_x_) / cell_);
        const int r0 = static_cast<int>((std::min(a.y, b.y) - min_y_) / cell_);
        const int r1 = static_cast<int>((std::max(a.y, b.y) - min_y_) / cell_);
        for (int r = r0; r <= r1; ++r)
            for (int c = c0; c <= c1; ++c)
                cells_[static_cast<std::size_t>(r) * nx_ + c].push_back(static_cast<std::uint32_t>(i));
    }
    stamp_.assign(nseg, 0);
}

PolylineHit SegmentIndex::seg_hit(const Point2& p, std::size_t i) const {
    const Point2 a = seg_a_[i], b = seg_b_[i];
    const Point2 ab = b - a;
    const double len2 = ab.x * ab.x + ab.y * ab.y;
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp(((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2, 0.0, 1.0);
    const Point2 foot = a + ab * t;
    return {(p - foot).norm(), foot};
}

std::optional<PolylineHit> SegmentIndex::nearest(const Point2& p, double max_dist) const {
    const int pc = static_cast<int>((p.x - min_x_) / cell_);
    const int pr = static_cast<int>((p.y - min_y_) / cell_);
    ++stamp_gen_;
    PolylineHit best{std::numeric_limits<double>::max(), {}};
    const int ring_cap = std::max(nx_, ny_) + 1;
    const int limit = max_dist < 0.0 ? ring_cap
                                     : std::min(ring_cap, static_cast<int>(max_dist / cell_) + 2);
    for (int ring = 0; ring <= limit; ++ring) {
        // every unexplored segment is at least (ring - 1) * cell away
        if (best.distance <= (ring - 1) * cell_) break;
        for (int r = pr - ring; r <= pr + ring; ++r) {
            if (r < 0 || r >= ny_) continue;
            for (int c = pc - ring; c <= pc + ring; ++c) {
                if (c < 0 || c >= nx_) continue;
                if (std::max(std::abs(r - pr), std::abs(c - pc)) != ring) continue;
                for (const std::uint32_t i : cells_[static_cast<std::size_t>(r) * nx_ + c]) {
                    if (stamp_[i] == stamp_gen_) continue;
                    stamp_[i] = stamp_gen_;
                    const PolylineHit h = seg_hit(p, i);
                    if (h.distance < best.distance) best = h;
                }
            }
        }
    }
    if (best.distance == std::numeric_limits<double>::max() && max_dist < 0.0) {
        for (std::size_t i = 0; i < seg_a_.size(); ++i) {
            const PolylineHit h = seg_hit(p, i);
            if (h.distance < best.distance) best = h;
        }
    }
    if (best.distance == std::numeric_limits<double>::max()) return std::nullopt;
    if (max_dist >= 0.0 && best.distance > max_dist) return std::nullopt;
    return best;
}

namespace {

double trimmed_objective(const std::vector<Point2>& pts, const SegmentIndex& index,
                         const Displacement& d, double trim_ratio) {
    std::vector<double> sq;
    sq.reserve(pts.size());
    for (const auto& p : pts) {
        const auto h = index.nearest({p.x + d.dx, p.y + d.dy}, -1.0);
        sq.push_back(h->distance * h->distance);
    }
    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(trim_ratio * static_cast<double>(sq.size()))));
    std::nth_element(sq.begin(), sq.begin() + static_cast<long>(keep) - 1, sq.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < keep; ++i) sum += sq[i];
    return sum / static_cast<double>(keep);
}

Point2 top_point(const Profile& p) {
    Point2 best = p.points.front();
    for (const auto& pt : p.points)
        if (pt.y > best.y) best = pt;
    return best;
}

struct IcpRun {
    Displacement d;
    double obj = std::numeric_limits<double>::max();
    double rms = 0.0;
    int iterations = 0;
    bool converged = false;
    bool empty_correspondences = false;
    std::vector<Displacement> iterates;
};

IcpRun icp_from(const std::vector<Point2>& pts, const SegmentIndex& index,
                Displacement d, const IcpConfig& cfg) {
    IcpRun run;
    double obj = trimmed_objective(pts, index, d, cfg.trim_ratio);
    run.iterates.push_back(d);
    for (int it = 0; it < cfg.max_iterations; ++it) {
        run.iterations = it + 1;
        std::vector<std::pair<double, Point2>> corr; // (distance, residual)
        corr.reserve(pts.size());
        for (const auto& p : pts) {
            const Point2 q{p.x + d.dx, p.y + d.dy};
            const auto h = index.nearest(q, cfg.max_corr_dist);
            if (h) corr.emplace_back(h->distance, h->foot - q);
        }
        if (corr.empty()) {
            run.empty_correspondences = true;
            break;
        }
        const auto keep = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(cfg.trim_ratio * static_cast<double>(corr.size()))));
        std::nth_element(corr.begin(), corr.begin() + static_cast<long>(keep) - 1, corr.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        Point2 mean{0.0, 0.0};
        for (std::size_t i = 0; i < keep; ++i) mean = mean + corr[i].second;
        mean = mean * (1.0 / static_cast<double>(keep));

        const Displacement d_new{d.dx + mean.x, d.dy + mean.y};
        const double obj_new = trimmed_objective(pts, index, d_new, cfg.trim_ratio);
        if (obj_new > obj + 1e-15) break; // stalled; keep the monotone iterate
        d = d_new;
        obj = obj_new;
        run.iterates.push_back(d);
        if (mean.norm() < cfg.convergence_eps) {
            run.converged = true;
            break;
        }
    }
    run.d = d;
    run.obj = obj;
    run.rms = std::sqrt(obj);
    return run;
}

} // namespace

double objective(const Profile& measured, const Profile& designed, const Displacement& d,
                 double trim_ratio) {
    validate(measured);
    if (!(trim_ratio > 0.0 && trim_ratio <= 1.0))
        throw std::invalid_argument("trim_ratio must be in (0,1]");
    const SegmentIndex index(designed);
    return trimmed_objective(measured.points, index, d, trim_ratio);
}

MatchResult icp_translate(const Profile& measured, const Profile& designed,
                          const IcpConfig& config) {
    validate(measured);
    validate(designed);
    const Profile m = resample(measured, config.resample_spacing);
    const SegmentIndex index(designed);

    const Point2 cm = centroid(m);
    const Point2 cd = centroid(designed);
    const std::vector<Displacement> inits{
        {cd.x - cm.x, cd.y - cm.y},
        [&] {
            const Point2 td = top_point(designed), tm = top_point(m);
            return Displacement{td.x - tm.x, td.y - tm.y};
        }(),
    };

    IcpRun best;
    bool any_empty = false;
    for (const auto& init : inits) {
        IcpRun run = icp_from(m.points, index, init, config);
        any_empty = any_empty || run.empty_correspondences;
        if (run.obj < best.obj) best = std::move(run);
    }

    MatchResult r;
    r.displacement = best.d;
    r.residual_rms = best.rms;
    r.iterations_used = best.iterations;
    r.converged = best.converged;
    r.iterates = std::move(best.iterates);
    if (!best.converged && any_empty) r.error = "correspondence set empty";
    return r;
}

MatchResult ransac_translate(const Profile& measured, const Profile& designed,
                             const RansacConfig& config) {
    validate(measured);
    validate(designed);
    if (config.iterations < 1) throw std::invalid_argument("ransac needs >= 1 iteration");
    if (!(config.inlier_threshold > 0.0))
        throw std::invalid_argument("inlier_threshold must be positive");

    const SegmentIndex index(designed);
    const Profile designed_pts = resample(designed, 1.0);
    const auto& mp = measured.points;

    // hypothesis 0 is the centroid difference; the rest are random point pairs
    Rng rng(config.seed);
    std::vector<Displacement> hyps;
    hyps.reserve(static_cast<std::size_t>(config.iterations) + 1);
    {
        const Point2 cm = centroid(measured), cd = centroid(designed);
        hyps.push_back({cd.x - cm.x, cd.y - cm.y});
    }
    for (int i = 0; i < config.iterations; ++i) {
        const Point2 a = mp[rng.below(mp.size())];
        const Point2 b = designed_pts.points[rng.below(designed_pts.points.size())];
        hyps.push_back({b.x - a.x, b.y - a.y});
    }

    auto count_inliers = [&](const Displacement& d) {
        std::size_t n = 0;
        for (const auto& p : mp)
            if (index.nearest({p.x + d.dx, p.y + d.dy}, config.inlier_threshold)) ++n;
        return n;
    };

    std::size_t best_count = 0;
    std::size_t best_i = 0;
    std::vector<std::size_t> counts(hyps.size(), 0);
#pragma omp parallel for schedule(dynamic, 8)
    for (long long i = 0; i < static_cast<long long>(hyps.size()); ++i)
        counts[static_cast<std::size_t>(i)] = count_inliers(hyps[static_cast<std::size_t>(i)]);
    for (std::size_t i = 0; i < hyps.size(); ++i)
        if (counts[i] > best_count) {
            best_count = counts[i];
            best_i = i;
        }

    // local optimization of the winning hypothesis: least-squares translation
    // over the inliers, with the gate shrinking toward the final threshold
    Displacement d = hyps[best_i];
    for (const double gate_mult : {4.0, 2.5, 1.5, 1.0, 1.0}) {
        Point2 mean{0.0, 0.0};
        std::size_t n_in = 0;
        for (const auto& p : mp) {
            const Point2 q{p.x + d.dx, p.y + d.dy};
            const auto h = index.nearest(q, gate_mult * config.inlier_threshold);
            if (!h) continue;
            mean = mean + (h->foot - q);
            ++n_in;
        }
        if (n_in == 0) break;
        mean = mean * (1.0 / static_cast<double>(n_in));
        d.dx += mean.x;
        d.dy += mean.y;
    }
    double sq_sum = 0.0;
    std::size_t final_count = 0;
    for (const auto& p : mp) {
        const Point2 q{p.x + d.dx, p.y + d.dy};
        const auto h = index.nearest(q, config.inlier_threshold);
        if (!h) continue;
        ++final_count;
        sq_sum += h->distance * h->distance;
    }

    MatchResult r;
    r.displacement = d;
    r.iterations_used = config.iterations;
    r.inlier_fraction = static_cast<double>(std::max(best_count, final_count)) /
                        static_cast<double>(mp.size());
    r.residual_rms = final_count > 0 ? std::sqrt(sq_sum / static_cast<double>(final_count)) : 0.0;
    r.converged = *r.inlier_fraction >= config.min_inlier_fraction;
    if (!r.converged) r.error = "best inlier fraction below the configured minimum";
    return r;
}

} // namespace railmatch
