#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace railmatch {

/// 2D point in millimetres. +x toward the gauge side, +y up.
struct Point2 {
    double x = 0.0;
    double y = 0.0;

    Point2 operator+(const Point2& o) const { return {x + o.x, y + o.y}; }
    Point2 operator-(const Point2& o) const { return {x - o.x, y - o.y}; }
    Point2 operator*(double s) const { return {x * s, y * s}; }
    double norm() const;
};

/// Translation in millimetres applied to a measured profile.
struct Displacement {
    double dx = 0.0;
    double dy = 0.0;
};

enum class ProfileKind { Typical, Switch, Frog, Combined };

enum class WorkingEdge { Left, Right };

std::string to_string(ProfileKind k);
ProfileKind profile_kind_from_string(const std::string& s);

/// Ordered 2D polyline of a rail cross-section, millimetres.
struct Profile {
    ProfileKind kind = ProfileKind::Typical;
    std::vector<Point2> points;
    bool closed = false;
    WorkingEdge working_edge = WorkingEdge::Left;

    std::size_t segment_count() const {
        return closed ? points.size() : points.size() - 1;
    }
    // segment i runs from points[i] to points[(i+1) % size]
    Point2 segment_a(std::size_t i) const { return points[i]; }
    Point2 segment_b(std::size_t i) const { return points[(i + 1) % points.size()]; }
};

/// Throws std::invalid_argument if the profile breaks its invariants
/// (>= 2 points, finite coordinates, no identical consecutive points).
void validate(const Profile& p);

struct WearReport {
    double vertical_wear = 0.0; // mm, clamped >= 0
    double side_wear = 0.0;     // mm, clamped >= 0
    double crown_x = 0.0;       // abscissa of the vertical measurement line
    double side_y = 0.0;        // ordinate of the side measurement line
    // raw signed values before clamping, for diagnostics
    double vertical_raw = 0.0;
    double side_raw = 0.0;
    // measurement line missed the measured profile entirely
    bool vertical_missing = false;
    bool side_missing = false;
};

struct PolylineHit {
    double distance = 0.0;
    Point2 foot;
};

double arc_length(const Profile& p);

struct BBox {
    double min_x, min_y, max_x, max_y;
};
BBox bounding_box(const Profile& p);

/// Arc-length-weighted centroid of the polyline. Throws on zero total length.
Point2 centroid(const Profile& p);

Profile translate(const Profile& p, const Displacement& d);

/// Subdivides every segment so point spacing is <= `spacing` mm.
/// Original vertices are always retained. Throws on spacing <= 0.
Profile resample(const Profile& p, double spacing);

/// Minimum distance from p to the polyline (point-to-segment) and the foot point.
PolylineHit point_to_polyline_distance(const Point2& p, const Profile& profile);

/// True if no two non-adjacent segments intersect.
bool is_simple(const Profile& p);

/// Wear of a measured profile already aligned into the designed frame.
/// Vertical wear is height loss on the vertical line through the designed
/// crown apex; side wear is working-edge recession at 16 mm below the apex.
WearReport compute_wear(const Profile& designed, const Profile& measured_aligned);

/// Depth below the crown apex at which side wear is measured.
inline constexpr double kSideWearDepthMm = 16.0;

} // namespace railmatch
