#include "railmatch/raster.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <tuple>
#include <stdexcept>

#include <openssl/evp.h>
#include <zlib.h>

namespace railmatch {

void validate(const ImageSpec& s) {
    if (s.width_px <= 0 || s.height_px <= 0 || s.width_px != s.height_px)
        throw std::invalid_argument("image must be square with positive size");
    if (!(s.mm_per_px > 0.0)) throw std::invalid_argument("mm_per_px must be positive");
    if (s.line_width_px < 1) throw std::invalid_argument("line_width_px must be >= 1");
    if (s.designed_color == s.background || s.measured_color == s.background)
        throw std::invalid_argument("stroke colors must differ from the background");
}

RasterImage::RasterImage(int w, int h, Rgb fill) : width(w), height(h) {
    rgb.resize(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < rgb.size(); i += 3) {
        rgb[i] = fill[0];
        rgb[i + 1] = fill[1];
        rgb[i + 2] = fill[2];
    }
}

PixelCoord mm_to_px(const Point2& p, const ImageSpec& spec) {
    return {static_cast<int>(std::floor(p.x / spec.mm_per_px + spec.width_px / 2.0)),
            static_cast<int>(std::floor(spec.height_px / 2.0 - p.y / spec.mm_per_px))};
}

void draw_polyline(RasterImage& canvas, const std::vector<PixelCoord>& points, Rgb color,
                   int line_width_px) {
    if (points.empty()) return;
    const int w = line_width_px;
    auto stamp = [&](int c, int r) {
        for (int dr = 0; dr < w; ++dr)
            for (int dc = 0; dc < w; ++dc) {
                const int cc = c + dc, rr = r + dr;
                if (cc >= 0 && cc < canvas.width && rr >= 0 && rr < canvas.height)
                    canvas.set(cc, rr, color);
            }
    };
    if (points.size() == 1) {
        stamp(points[0].col, points[0].row);
        return;
    }
    for (std::size_t i = 0; i + 1 < points.size(); ++i) {
        int x0 = points[i].col, y0 = points[i].row;
        const int x1 = points[i + 1].col, y1 = points[i + 1].row;
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            stamp(x0, y0);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }
}

namespace {

std::vector<PixelCoord> profile_to_px(const Profile& p, const ImageSpec& spec,
                                      const std::string& sample_id) {
    std::vector<PixelCoord> px;
    px.reserve(p.points.size() + 1);
    for (const auto& pt : p.points) {
        const PixelCoord c = mm_to_px(pt, spec);
        if (c.col < 0 || c.col >= spec.width_px || c.row < 0 || c.row >= spec.height_px)
            throw std::runtime_error("profile vertex off canvas" +
                                     (sample_id.empty() ? std::string() : " in sample " + sample_id));
        px.push_back(c);
    }
    if (p.closed) px.push_back(px.front());
    return px;
}

} // namespace

RasterImage render_single(const Profile& designed, const Profile& measured, const ImageSpec& spec,
                          const std::string& sample_id) {
    validate(spec);
    RasterImage img(spec.width_px, spec.height_px, spec.background);
    draw_polyline(img, profile_to_px(designed, spec, sample_id), spec.designed_color,
                  spec.line_width_px);
    draw_polyline(img, profile_to_px(measured, spec, sample_id), spec.measured_color,
                  spec.line_width_px);
    return img;
}

std::pair<RasterImage, RasterImage> render_separate(const Profile& designed,
                                                    const Profile& measured, const ImageSpec& spec,
                                                    const std::string& sample_id) {
    validate(spec);
    RasterImage a(spec.width_px, spec.height_px, spec.background);
    RasterImage b(spec.width_px, spec.height_px, spec.background);
    draw_polyline(a, profile_to_px(designed, spec, sample_id), spec.designed_color,
                  spec.line_width_px);
    draw_polyline(b, profile_to_px(measured, spec, sample_id), spec.measured_color,
                  spec.line_width_px);
    return {std::move(a), std::move(b)};
}

std::pair<double, double> normalize_label(const Displacement& d, double l_norm) {
    if (!(l_norm > 0.0)) throw std::invalid_argument("l_norm must be positive");
    if (std::abs(d.dx) > l_norm || std::abs(d.dy) > l_norm)
        throw std::invalid_argument("label outside the design envelope");
    return {d.dx / l_norm, d.dy / l_norm};
}

Displacement denormalize_label(double nx, double ny, double l_norm) {
    return {nx * l_norm, ny * l_norm};
}

RasterImage resize(const RasterImage& image, int target_px) {
    if (target_px <= 0) throw std::invalid_argument("target size must be positive");
    if (target_px > image.width || target_px > image.height)
        throw std::invalid_argument("upscaling is not supported");
    if (target_px == image.width && target_px == image.height) return image;

    RasterImage out(target_px, target_px, {0, 0, 0});
    const double sx = static_cast<double>(image.width) / target_px;
    const double sy = static_cast<double>(image.height) / target_px;
    for (int r = 0; r < target_px; ++r) {
        const double fy = (r + 0.5) * sy - 0.5;
        const int y0 = std::max(0, std::min(image.height - 1, static_cast<int>(std::floor(fy))));
        const int y1 = std::min(image.height - 1, y0 + 1);
        const double wy = std::min(1.0, std::max(0.0, fy - y0));
        for (int c = 0; c < target_px; ++c) {
            const double fx = (c + 0.5) * sx - 0.5;
            const int x0 = std::max(0, std::min(image.width - 1, static_cast<int>(std::floor(fx))));
            const int x1 = std::min(image.width - 1, x0 + 1);
            const double wx = std::min(1.0, std::max(0.0, fx - x0));
            for (int ch = 0; ch < 3; ++ch) {
                const double v00 = image.at(x0, y0)[ch], v10 = image.at(x1, y0)[ch];
                const double v01 = image.at(x0, y1)[ch], v11 = image.at(x1, y1)[ch];
                const double v = (1 - wy) * ((1 - wx) * v00 + wx * v10) +
                                 wy * ((1 - wx) * v01 + wx * v11);
                out.at(c, r)[ch] = static_cast<std::uint8_t>(std::lround(v));
            }
        }
    }
    return out;
}

std::string to_string(RenderMode m) { return m == RenderMode::Single ? "single" : "separate"; }

RenderMode render_mode_from_string(const std::string& s) {
    if (s == "single") return RenderMode::Single;
    if (s == "separate") return RenderMode::Separate;
    throw std::invalid_argument("unknown render mode: " + s);
}

RenderedSample encode_sample(const Profile& designed, const Profile& measured,
                             const Displacement& label, const ImageSpec& spec, RenderMode mode,
                             double l_norm, const std::string& sample_id) {
    RenderedSample out;
    out.sample_id = sample_id;
    if (mode == RenderMode::Single) {
        out.images.push_back(render_single(designed, measured, spec, sample_id));
    } else {
        auto [a, b] = render_separate(designed, measured, spec, sample_id);
        out.images.push_back(std::move(a));
        out.images.push_back(std::move(b));
    }
    if (spec.resize_to > 0 && spec.resize_to != spec.width_px)
        for (auto& img : out.images) img = resize(img, spec.resize_to);
    std::tie(out.label_nx, out.label_ny) = normalize_label(label, l_norm);
    return out;
}

namespace {

void put_u32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(static_cast<std::uint8_t>(x >> 24));
    v.push_back(static_cast<std::uint8_t>(x >> 16));
    v.push_back(static_cast<std::uint8_t>(x >> 8));
    v.push_back(static_cast<std::uint8_t>(x));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
               const std::vector<std::uint8_t>& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t type_at = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(0, out.data() + type_at, static_cast<uInt>(4 + data.size()));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

} // namespace

void write_png(const RasterImage& img, const std::string& path) {
    // filter byte 0 in front of every scanline, then one zlib stream
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(img.height) * (1 + 3 * img.width));
    for (int r = 0; r < img.height; ++r) {
        raw.push_back(0);
        const auto* row = img.at(0, r);
        raw.insert(raw.end(), row, row + 3 * img.width);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("zlib compression failed for " + path);
    comp.resize(comp_len);

    std::vector<std::uint8_t> png{0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(img.width));
    put_u32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8); // bit depth
    ihdr.push_back(2); // truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(png, "IHDR", ihdr);
    put_chunk(png, "IDAT", comp);
    put_chunk(png, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

namespace {

std::string sha256_hex(const std::uint8_t* data, std::size_t len) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int digest_len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, data, len) != 1 ||
        EVP_DigestFinal_ex(ctx, digest, &digest_len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("sha256 failed");
    }
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * digest_len);
    for (unsigned int i = 0; i < digest_len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

} // namespace

std::string pixel_digest(const RasterImage& img) {
    return sha256_hex(img.rgb.data(), img.rgb.size());
}

std::string spec_digest(const ImageSpec& spec) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%dx%d|%.9f|%d|%d|%02x%02x%02x|%02x%02x%02x|%02x%02x%02x",
                  spec.width_px, spec.height_px, spec.mm_per_px, spec.line_width_px, spec.resize_to,
                  spec.background[0], spec.background[1], spec.background[2],
                  spec.designed_color[0], spec.designed_color[1], spec.designed_color[2],
                  spec.measured_color[0], spec.measured_color[1], spec.measured_color[2]);
    return sha256_hex(reinterpret_cast<const std::uint8_t*>(buf), std::strlen(buf));
}

} // namespace railmatch
