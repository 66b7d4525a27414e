#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "railmatch/geometry.hpp"

namespace railmatch {

using Rgb = std::array<std::uint8_t, 3>;

struct ImageSpec {
    int width_px = 512;
    int height_px = 512;
    double mm_per_px = 0.3;
    Rgb background{255, 255, 255};
    Rgb designed_color{0, 0, 0};
    Rgb measured_color{255, 0, 0};
    int line_width_px = 2;
    int resize_to = 224; // 0 disables the resize step
};

void validate(const ImageSpec& s);

struct RasterImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb; // row-major, row 0 at top, 3 bytes per pixel

    RasterImage() = default;
    RasterImage(int w, int h, Rgb fill);

    std::uint8_t* at(int col, int row) { return rgb.data() + 3 * (static_cast<std::size_t>(row) * width + col); }
    const std::uint8_t* at(int col, int row) const {
        return rgb.data() + 3 * (static_cast<std::size_t>(row) * width + col);
    }
    void set(int col, int row, Rgb c) {
        auto* p = at(col, row);
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
    }
    bool is(int col, int row, Rgb c) const {
        const auto* p = at(col, row);
        return p[0] == c[0] && p[1] == c[1] && p[2] == c[2];
    }
};

struct PixelCoord {
    int col = 0;
    int row = 0;
};

/// Millimetre point to pixel, origin at the image center, +x right, +y up.
PixelCoord mm_to_px(const Point2& p, const ImageSpec& spec);

/// Bresenham stroke; each line pixel stamps a w x w square anchored at its
/// top-left corner. Stamps are clipped at the canvas edge.
void draw_polyline(RasterImage& canvas, const std::vector<PixelCoord>& points, Rgb color,
                   int line_width_px);

/// One combined image: designed drawn first, measured second (red wins on overlap).
/// Throws if any profile vertex falls off the canvas; `sample_id` names the
/// offender in the message.
RasterImage render_single(const Profile& designed, const Profile& measured, const ImageSpec& spec,
                          const std::string& sample_id = "");

/// Two images, one profile each, each in its own color on the background.
std::pair<RasterImage, RasterImage> render_separate(const Profile& designed,
                                                    const Profile& measured,
                                                    const ImageSpec& spec,
                                                    const std::string& sample_id = "");

/// Default normalization constant for labels: both centroids live in the
/// 40 mm placement square, so displacements stay within +/-40 mm.
inline constexpr double kDefaultLabelNormMm = 40.0;

/// Linear map of a mm displacement into [-1,1]^2. Throws when |d| > l_norm.
std::pair<double, double> normalize_label(const Displacement& d, double l_norm);
Displacement denormalize_label(double nx, double ny, double l_norm);

/// Bilinear downscale (upscaling is rejected).
RasterImage resize(const RasterImage& image, int target_px);

struct RenderedSample {
    std::vector<RasterImage> images; // one (single mode) or two (separate mode)
    double label_nx = 0.0;
    double label_ny = 0.0;
    std::string sample_id;
};

enum class RenderMode { Single, Separate };
std::string to_string(RenderMode m);
RenderMode render_mode_from_string(const std::string& s);

/// Full encoding of a sample: render, optional resize, label normalization.
RenderedSample encode_sample(const Profile& designed, const Profile& measured,
                             const Displacement& label, const ImageSpec& spec, RenderMode mode,
                             double l_norm, const std::string& sample_id);

void write_png(const RasterImage& img, const std::string& path);

/// SHA-256 of the raw pixel buffer, lowercase hex.
std::string pixel_digest(const RasterImage& img);

/// Digest of the spec fields that affect rendering, for checkpoint metadata.
std::string spec_digest(const ImageSpec& spec);

} // namespace railmatch
