#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "railmatch/geometry.hpp"

namespace railmatch {

struct IcpConfig {
    int max_iterations = 100;
    double convergence_eps = 1e-6; // mm change in translation
    double trim_ratio = 0.8;       // fraction of closest correspondences kept
    double max_corr_dist = 10.0;   // mm
    double resample_spacing = 0.5; // mm
};

struct RansacConfig {
    int iterations = 500;
    double inlier_threshold = 0.3; // mm
    double min_inlier_fraction = 0.3;
    std::uint64_t seed = 1;
};

/// Shared output contract of classical and neural matchers.
struct MatchResult {
    Displacement displacement; // translation to apply to the measured profile
    double residual_rms = 0.0; // mm
    int iterations_used = 0;
    bool converged = false;
    std::optional<double> inlier_fraction; // RANSAC only
    std::string error;                     // non-empty if matching failed
    // ICP iterate trail of the winning run (init first), for diagnostics
    std::vector<Displacement> iterates;
};

std::string match_result_to_json(const MatchResult& r);

/// Nearest-segment queries on a fixed polyline via a uniform grid.
class SegmentIndex {
public:
    explicit SegmentIndex(const Profile& p, double cell_size = 2.0);

    /// Closest point on the polyline. max_dist < 0 means unbounded (falls
    /// back to a full scan if the grid search misses).
    std::optional<PolylineHit> nearest(const Point2& p, double max_dist) const;

private:
    std::vector<Point2> seg_a_, seg_b_;
    double cell_ = 2.0;
    double min_x_ = 0.0, min_y_ = 0.0;
    int nx_ = 0, ny_ = 0;
    std::vector<std::vector<std::uint32_t>> cells_;
    mutable std::vector<std::uint32_t> stamp_;
    mutable std::uint32_t stamp_gen_ = 0;

    PolylineHit seg_hit(const Point2& p, std::size_t i) const;
};

/// Trimmed mean of the smallest squared point-to-polyline distances from
/// translate(measured, d) to designed. Units mm^2.
double objective(const Profile& measured, const Profile& designed, const Displacement& d,
                 double trim_ratio);

/// Translation-only trimmed ICP. Initialized from the centroid difference and
/// the crown-apex difference; the better basin wins.
MatchResult icp_translate(const Profile& measured, const Profile& designed,
                          const IcpConfig& config = {});

/// Translation hypotheses from random point pairs, inlier counting, one
/// least-squares refinement of the best hypothesis. Deterministic in seed.
MatchResult ransac_translate(const Profile& measured, const Profile& designed,
                             const RansacConfig& config = {});

} // namespace railmatch
