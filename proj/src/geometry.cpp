#include "railmatch/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace railmatch {

double Point2::norm() const { return std::hypot(x, y); }

std::string to_string(ProfileKind k) {
    switch (k) {
        case ProfileKind::Typical: return "typical";
        case ProfileKind::Switch: return "switch";
        case ProfileKind::Frog: return "frog";
        case ProfileKind::Combined: return "combined";
    }
    return "typical";
}

ProfileKind profile_kind_from_string(const std::string& s) {
    if (s == "typical") return ProfileKind::Typical;
    if (s == "switch") return ProfileKind::Switch;
    if (s == "frog") return ProfileKind::Frog;
    if (s == "combined") return ProfileKind::Combined;
    throw std::invalid_argument("unknown profile kind: " + s);
}

void validate(const Profile& p) {
    if (p.points.size() < 2)
        throw std::invalid_argument("profile needs at least 2 points");
    for (const auto& pt : p.points) {
        if (!std::isfinite(pt.x) || !std::isfinite(pt.y))
            throw std::invalid_argument("profile contains non-finite coordinates");
    }
    const std::size_t n = p.points.size();
    const std::size_t nseg = p.closed ? n : n - 1;
    for (std::size_t i = 0; i < nseg; ++i) {
        const Point2 a = p.points[i];
        const Point2 b = p.points[(i + 1) % n];
        if (a.x == b.x && a.y == b.y)
            throw std::invalid_argument("profile has identical consecutive points");
    }
}

double arc_length(const Profile& p) {
    double total = 0.0;
    for (std::size_t i = 0; i < p.segment_count(); ++i)
        total += (p.segment_b(i) - p.segment_a(i)).norm();
    return total;
}

BBox bounding_box(const Profile& p) {
    BBox b{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
           std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest()};
    for (const auto& pt : p.points) {
        b.min_x = std::min(b.min_x, pt.x);
        b.min_y = std::min(b.min_y, pt.y);
        b.max_x = std::max(b.max_x, pt.x);
        b.max_y = std::max(b.max_y, pt.y);
    }
    return b;
}

Point2 centroid(const Profile& p) {
    validate(p);
    double total = 0.0;
    Point2 acc{0.0, 0.0};
    for (std::size_t i = 0; i < p.segment_count(); ++i) {
        const Point2 a = p.segment_a(i);
        const Point2 b = p.segment_b(i);
        const double len = (b - a).norm();
        acc = acc + (a + b) * (0.5 * len);
        total += len;
    }
    if (total <= 0.0)
        throw std::invalid_argument("degenerate profile: total arc length is zero");
    return acc * (1.0 / total);
}

Profile translate(const Profile& p, const Displacement& d) {
    if (!std::isfinite(d.dx) || !std::isfinite(d.dy))
        throw std::invalid_argument("non-finite displacement");
    Profile out = p;
    for (auto& pt : out.points) {
        pt.x += d.dx;
        pt.y += d.dy;
    }
    return out;
}

Profile resample(const Profile& p, double spacing) {
    if (!(spacing > 0.0))
        throw std::invalid_argument("resample spacing must be positive");
    validate(p);
    Profile out = p;
    out.points.clear();
    const std::size_t nseg = p.segment_count();
    for (std::size_t i = 0; i < nseg; ++i) {
        const Point2 a = p.segment_a(i);
        const Point2 b = p.segment_b(i);
        out.points.push_back(a);
        const double len = (b - a).norm();
        const auto pieces = static_cast<std::size_t>(std::ceil(len / spacing));
        for (std::size_t k = 1; k < pieces; ++k) {
            const double t = static_cast<double>(k) / static_cast<double>(pieces);
            out.points.push_back(a + (b - a) * t);
        }
    }
    if (!p.closed)
        out.points.push_back(p.points.back());
    return out;
}

namespace {

PolylineHit point_to_segment(const Point2& p, const Point2& a, const Point2& b) {
    const Point2 ab = b - a;
    const double len2 = ab.x * ab.x + ab.y * ab.y;
    double t = 0.0;
    if (len2 > 0.0) {
        t = ((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2;
        t = std::clamp(t, 0.0, 1.0);
    }
    const Point2 foot = a + ab * t;
    return {(p - foot).norm(), foot};
}

int orientation(const Point2& a, const Point2& b, const Point2& c) {
    const double v = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    if (v > 1e-12) return 1;
    if (v < -1e-12) return -1;
    return 0;
}

bool segments_cross(const Point2& a, const Point2& b, const Point2& c, const Point2& d) {
    const int o1 = orientation(a, b, c);
    const int o2 = orientation(a, b, d);
    const int o3 = orientation(c, d, a);
    const int o4 = orientation(c, d, b);
    return o1 != o2 && o3 != o4 && o1 != 0 && o2 != 0 && o3 != 0 && o4 != 0;
}

} // namespace

PolylineHit point_to_polyline_distance(const Point2& p, const Profile& profile) {
    validate(profile);
    PolylineHit best{std::numeric_limits<double>::max(), {}};
    for (std::size_t i = 0; i < profile.segment_count(); ++i) {
        const PolylineHit h = point_to_segment(p, profile.segment_a(i), profile.segment_b(i));
        if (h.distance < best.distance) best = h;
    }
    return best;
}

bool is_simple(const Profile& p) {
    const std::size_t n = p.points.size();
    const std::size_t nseg = p.segment_count();
    for (std::size_t i = 0; i < nseg; ++i) {
        for (std::size_t j = i + 2; j < nseg; ++j) {
            // skip the pair of segments sharing the wrap-around vertex
            if (p.closed && i == 0 && j == nseg - 1) continue;
            if (segments_cross(p.points[i], p.points[(i + 1) % n],
                               p.points[j], p.points[(j + 1) % n]))
                return false;
        }
    }
    return true;
}

namespace {

/// Intersections of the profile with the vertical line x = c, returned as y values.
std::vector<double> vertical_line_hits(const Profile& p, double c) {
    std::vector<double> ys;
    for (std::size_t i = 0; i < p.segment_count(); ++i) {
        const Point2 a = p.segment_a(i);
        const Point2 b = p.segment_b(i);
        if ((a.x - c) * (b.x - c) > 0.0) continue;
        if (a.x == b.x) {
            if (a.x == c) {
                ys.push_back(a.y);
                ys.push_back(b.y);
            }
            continue;
        }
        const double t = (c - a.x) / (b.x - a.x);
        if (t < 0.0 || t > 1.0) continue;
        ys.push_back(a.y + t * (b.y - a.y));
    }
    return ys;
}

/// Intersections with the horizontal line y = c, returned as x values.
std::vector<double> horizontal_line_hits(const Profile& p, double c) {
    std::vector<double> xs;
    for (std::size_t i = 0; i < p.segment_count(); ++i) {
        const Point2 a = p.segment_a(i);
        const Point2 b = p.segment_b(i);
        if ((a.y - c) * (b.y - c) > 0.0) continue;
        if (a.y == b.y) {
            if (a.y == c) {
                xs.push_back(a.x);
                xs.push_back(b.x);
            }
            continue;
        }
        const double t = (c - a.y) / (b.y - a.y);
        if (t < 0.0 || t > 1.0) continue;
        xs.push_back(a.x + t * (b.x - a.x));
    }
    return xs;
}

} // namespace

WearReport compute_wear(const Profile& designed, const Profile& measured_aligned) {
    validate(designed);
    validate(measured_aligned);

    // crown apex of the designed profile: vertex with maximal y
    std::size_t apex = 0;
    for (std::size_t i = 1; i < designed.points.size(); ++i)
        if (designed.points[i].y > designed.points[apex].y) apex = i;
    const double apex_y = designed.points[apex].y;

    WearReport r;
    r.crown_x = designed.points[apex].x;
    r.side_y = apex_y - kSideWearDepthMm;

    const auto des_v = vertical_line_hits(designed, r.crown_x);
    const auto mea_v = vertical_line_hits(measured_aligned, r.crown_x);
    if (mea_v.empty()) {
        r.vertical_missing = true;
    } else {
        const double des_top = *std::max_element(des_v.begin(), des_v.end());
        const double mea_top = *std::max_element(mea_v.begin(), mea_v.end());
        r.vertical_raw = des_top - mea_top;
        r.vertical_wear = std::max(0.0, r.vertical_raw);
    }

    const auto des_h = horizontal_line_hits(designed, r.side_y);
    const auto mea_h = horizontal_line_hits(measured_aligned, r.side_y);
    if (des_h.empty() || mea_h.empty()) {
        r.side_missing = true;
    } else if (designed.working_edge == WorkingEdge::Left) {
        const double des_edge = *std::min_element(des_h.begin(), des_h.end());
        const double mea_edge = *std::min_element(mea_h.begin(), mea_h.end());
        r.side_raw = mea_edge - des_edge; // recession toward the non-working side
        r.side_wear = std::max(0.0, r.side_raw);
    } else {
        const double des_edge = *std::max_element(des_h.begin(), des_h.end());
        const double mea_edge = *std::max_element(mea_h.begin(), mea_h.end());
        r.side_raw = des_edge - mea_edge;
        r.side_wear = std::max(0.0, r.side_raw);
    }
    return r;
}

} // namespace railmatch
