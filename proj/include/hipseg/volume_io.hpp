#pragma once

// On-disk volume and mask formats plus HU preprocessing.
//
// Volume directory:
//   meta.json            {id, width, height, num_slices, spacing_xy_mm, spacing_z_mm,
//                         rescale_slope, rescale_intercept, byte_order: "LE", dtype: "i16"}
//   slice_0000.raw ...   row-major signed 16-bit little-endian samples
// Masks are 8-bit single-channel PNGs holding label values 0..3.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hipseg/error.hpp"
#include "hipseg/image.hpp"

namespace hipseg {

namespace fs = std::filesystem;

struct Volume {
    std::string id;
    double spacing_xy = 1.0; // mm / pixel
    double spacing_z = 1.0;  // mm
    double rescale_slope = 1.0;
    double rescale_intercept = 0.0;
    std::vector<Image<float>> slices; // Hounsfield units

    int width() const { return slices.empty() ? 0 : slices.front().width(); }
    int height() const { return slices.empty() ? 0 : slices.front().height(); }
    int num_slices() const { return static_cast<int>(slices.size()); }

    void validate() const
    {
        if (slices.empty()) {
            throw FormatError("volume '" + id + "' has no slices");
        }
        if (!(spacing_xy > 0.0) || !(spacing_z > 0.0)) {
            throw FormatError("volume '" + id + "' has non-positive spacing");
        }
        for (const auto &s : slices) {
            if (!s.same_shape(slices.front())) {
                throw FormatError("volume '" + id + "' mixes slice dimensions");
            }
        }
    }
};

struct NormalizedVolume {
    std::string id;
    double spacing_xy = 1.0;
    double spacing_z = 1.0;
    std::vector<Image<float>> slices; // values in [0, 1]
};

inline constexpr double kClipLowHU = -125.0;
inline constexpr double kClipHighHU = 275.0;

inline double clip_normalize_value(double hu, double lo, double hi)
{
    return (std::clamp(hu, lo, hi) - lo) / (hi - lo);
}

inline Image<float> clip_normalize(const Image<float> &slice, double lo = kClipLowHU, double hi = kClipHighHU)
{
    if (!(lo < hi)) {
        throw ArgumentError("clip_normalize: lo must be < hi");
    }
    return map_image<float>(slice, [lo, hi](float v) { return static_cast<float>(clip_normalize_value(v, lo, hi)); });
}

inline NormalizedVolume clip_normalize(const Volume &v, double lo = kClipLowHU, double hi = kClipHighHU)
{
    if (!(lo < hi)) {
        throw ArgumentError("clip_normalize: lo must be < hi");
    }
    NormalizedVolume out{v.id, v.spacing_xy, v.spacing_z, {}};
    out.slices.reserve(v.slices.size());
    for (const auto &s : v.slices) {
        out.slices.push_back(clip_normalize(s, lo, hi));
    }
    return out;
}

inline std::string slice_file_name(int z, const char *ext)
{
    std::ostringstream os;
    os << "slice_" << std::setw(4) << std::setfill('0') << z << ext;
    return os.str();
}

inline nlohmann::json read_json_file(const fs::path &path)
{
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception &e) {
        throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

/// Write `content` to `path` through a temporary sibling and rename, so
/// readers never observe a half-written file.
inline void write_file_atomic(const fs::path &path, const std::string &content)
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw FormatError("cannot write " + tmp.string());
        }
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) {
            throw FormatError("short write to " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

inline void save_volume(const Volume &v, const fs::path &dir)
{
    v.validate();
    fs::create_directories(dir);
    nlohmann::json meta = {
        {"id", v.id},
        {"width", v.width()},
        {"height", v.height()},
        {"num_slices", v.num_slices()},
        {"spacing_xy_mm", v.spacing_xy},
        {"spacing_z_mm", v.spacing_z},
        {"rescale_slope", v.rescale_slope},
        {"rescale_intercept", v.rescale_intercept},
        {"byte_order", "LE"},
        {"dtype", "i16"},
    };
    for (int z = 0; z < v.num_slices(); ++z) {
        const auto px = v.slices[static_cast<std::size_t>(z)].pixels();
        std::string buf(px.size() * 2, '\0');
        for (std::size_t i = 0; i < px.size(); ++i) {
            const double raw = std::round((px[i] - v.rescale_intercept) / v.rescale_slope);
            const auto s = static_cast<std::int16_t>(std::clamp(raw, -32768.0, 32767.0));
            const auto u = static_cast<std::uint16_t>(s);
            buf[2 * i] = static_cast<char>(u & 0xFF);
            buf[2 * i + 1] = static_cast<char>((u >> 8) & 0xFF);
        }
        write_file_atomic(dir / slice_file_name(z, ".raw"), buf);
    }
    write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

inline Volume load_volume(const fs::path &dir)
{
    const fs::path meta_path = dir / "meta.json";
    if (!fs::exists(meta_path)) {
        throw FormatError("missing meta.json in " + dir.string());
    }
    const auto meta = read_json_file(meta_path);
    Volume v;
    int width = 0;
    int height = 0;
    int num_slices = 0;
    try {
        v.id = meta.at("id").get<std::string>();
        width = meta.at("width").get<int>();
        height = meta.at("height").get<int>();
        num_slices = meta.at("num_slices").get<int>();
        v.spacing_xy = meta.at("spacing_xy_mm").get<double>();
        v.spacing_z = meta.at("spacing_z_mm").get<double>();
        v.rescale_slope = meta.value("rescale_slope", 1.0);
        v.rescale_intercept = meta.value("rescale_intercept", 0.0);
        if (meta.value("byte_order", std::string("LE")) != "LE" || meta.value("dtype", std::string("i16")) != "i16") {
            throw FormatError("unsupported byte_order/dtype in " + meta_path.string());
        }
    } catch (const nlohmann::json::exception &e) {
        throw FormatError("invalid meta.json in " + dir.string() + ": " + e.what());
    }
    if (width <= 0 || height <= 0 || num_slices <= 0) {
        throw FormatError("meta.json declares empty volume in " + dir.string());
    }

    static const std::regex slice_re(R"(slice_(\d+)\.raw)");
    std::set<int> present;
    for (const auto &entry : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, slice_re)) {
            present.insert(std::stoi(m[1].str()));
        }
    }
    if (static_cast<int>(present.size()) != num_slices || *present.begin() != 0 || *present.rbegin() != num_slices - 1) {
        throw FormatError("slice files in " + dir.string() + " are not contiguous 0.." + std::to_string(num_slices - 1));
    }

    const std::size_t expected = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 2;
    for (int z = 0; z < num_slices; ++z) {
        const fs::path p = dir / slice_file_name(z, ".raw");
        if (fs::file_size(p) != expected) {
            throw FormatError("slice " + p.string() + " does not match " + std::to_string(width) + "x" + std::to_string(height));
        }
        std::ifstream in(p, std::ios::binary);
        std::string buf(expected, '\0');
        in.read(buf.data(), static_cast<std::streamsize>(expected));
        if (!in) {
            throw FormatError("cannot read " + p.string());
        }
        Image<float> img(width, height);
        auto px = img.pixels();
        for (std::size_t i = 0; i < px.size(); ++i) {
            const auto lo = static_cast<std::uint8_t>(buf[2 * i]);
            const auto hi = static_cast<std::uint8_t>(buf[2 * i + 1]);
            const auto s = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
            px[i] = static_cast<float>(s * v.rescale_slope + v.rescale_intercept);
        }
        v.slices.push_back(std::move(img));
    }
    v.validate();
    return v;
}

// ---------------------------------------------------------------------------
// PNG masks

namespace detail {

struct PngMemoryReader {
    const std::uint8_t *data;
    std::size_t size;
    std::size_t offset;
};

inline void png_error_fn(png_structp png, png_const_charp msg)
{
    auto *err = static_cast<std::string *>(png_get_error_ptr(png));
    if (err != nullptr) {
        *err = msg;
    }
    png_longjmp(png, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

} // namespace detail

namespace detail {

struct PngColor {
    std::uint8_t r, g, b;
};

// rows: height * width * channels bytes, row-major.
inline std::string encode_png(int width, int height, int color_type, const std::uint8_t *rows, const std::vector<PngColor> *palette = nullptr)
{
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    if (png == nullptr) {
        throw FormatError("png: cannot create write struct");
    }
    png_infop info = png_create_info_struct(png);
    std::string out;
    std::vector<png_color> pal;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("png encode failed: " + err);
    }
    png_set_write_fn(
        png, &out,
        [](png_structp p, png_bytep data, png_size_t len) {
            static_cast<std::string *>(png_get_io_ptr(p))->append(reinterpret_cast<const char *>(data), len);
        },
        [](png_structp) {});
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    if (palette != nullptr) {
        for (const PngColor &c : *palette) {
            pal.push_back({c.r, c.g, c.b});
        }
        png_set_PLTE(png, info, pal.data(), static_cast<int>(pal.size()));
    }
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(width) * (color_type == PNG_COLOR_TYPE_RGB ? 3 : 1);
    for (int y = 0; y < height; ++y) {
        png_write_row(png, const_cast<png_bytep>(rows + static_cast<std::size_t>(y) * stride));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

} // namespace detail

/// Encode an 8-bit grayscale image as PNG.
inline std::string encode_png_gray8(const Image<std::uint8_t> &img)
{
    return detail::encode_png(img.width(), img.height(), PNG_COLOR_TYPE_GRAY, img.pixels().data());
}

/// Encode an RGB image (3 bytes per pixel, row-major) as PNG.
inline std::string encode_png_rgb8(int width, int height, const std::vector<std::uint8_t> &rgb)
{
    if (rgb.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3) {
        throw ArgumentError("encode_png_rgb8: buffer size does not match dims");
    }
    return detail::encode_png(width, height, PNG_COLOR_TYPE_RGB, rgb.data());
}

/// Encode 8-bit indices with a colour table; decoding yields the indices.
inline std::string encode_png_palette8(const Image<std::uint8_t> &img, const std::vector<detail::PngColor> &palette)
{
    if (palette.empty() || palette.size() > 256) {
        throw ArgumentError("encode_png_palette8: palette must hold 1..256 colours");
    }
    for (std::uint8_t v : img.pixels()) {
        if (v >= palette.size()) {
            throw ArgumentError("encode_png_palette8: index outside palette");
        }
    }
    return detail::encode_png(img.width(), img.height(), PNG_COLOR_TYPE_PALETTE, img.pixels().data(), &palette);
}

/// Decode a PNG that must be 8-bit single channel (gray or palette indices
/// are read verbatim; no gamma or palette expansion).
inline Image<std::uint8_t> decode_png_gray8(const std::string &bytes)
{
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
        throw FormatError("not a PNG stream");
    }
    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
    if (png == nullptr) {
        throw FormatError("png: cannot create read struct");
    }
    png_infop info = png_create_info_struct(png);
    detail::PngMemoryReader reader{reinterpret_cast<const std::uint8_t *>(bytes.data()), bytes.size(), 0};
    Image<std::uint8_t> img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("png decode failed: " + err);
    }
    png_set_read_fn(png, &reader, [](png_structp p, png_bytep out, png_size_t len) {
        auto *r = static_cast<detail::PngMemoryReader *>(png_get_io_ptr(p));
        if (r->offset + len > r->size) {
            png_error(p, "truncated PNG stream");
        }
        std::memcpy(out, r->data + r->offset, len);
        r->offset += len;
    });
    png_read_info(png, info);
    const auto width = png_get_image_width(png, info);
    const auto height = png_get_image_height(png, info);
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (depth != 8 || (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_PALETTE) || png_get_interlace_type(png, info) != PNG_INTERLACE_NONE) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("mask PNG must be 8-bit single-channel, non-interlaced");
    }
    if (width == 0 || height == 0 || width > 65535 || height > 65535) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("mask PNG has unsupported dimensions");
    }
    img = Image<std::uint8_t>(static_cast<int>(width), static_cast<int>(height));
    auto px = img.pixels();
    for (png_uint_32 y = 0; y < height; ++y) {
        png_read_row(png, px.data() + static_cast<std::size_t>(y) * width, nullptr);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline LabelMask to_label_mask(const Image<std::uint8_t> &raw)
{
    for (std::uint8_t v : raw.pixels()) {
        if (!is_valid_label(v)) {
            throw FormatError("mask contains unknown label value " + std::to_string(static_cast<int>(v)));
        }
    }
    return map_image<Label>(raw, [](std::uint8_t v) { return static_cast<Label>(v); });
}

inline Image<std::uint8_t> to_bytes(const LabelMask &m)
{
    return map_image<std::uint8_t>(m, [](Label v) { return static_cast<std::uint8_t>(v); });
}

inline LabelMask decode_label_png(const std::string &bytes)
{
    return to_label_mask(decode_png_gray8(bytes));
}

/// Label mask as an indexed PNG: background black, bone grey, acetabulum red,
/// femoral head green. Index values are the labels themselves.
inline std::string encode_label_png_palette(const LabelMask &m)
{
    static const std::vector<detail::PngColor> kPalette{{0, 0, 0}, {160, 160, 160}, {220, 50, 47}, {38, 180, 80}};
    return encode_png_palette8(to_bytes(m), kPalette);
}

inline std::string encode_label_png(const LabelMask &m)
{
    return encode_png_gray8(to_bytes(m));
}

inline std::string read_file_bytes(const fs::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void save_mask(const LabelMask &m, const fs::path &path)
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    write_file_atomic(path, encode_label_png(m));
}

inline LabelMask load_mask(const fs::path &path)
{
    return decode_label_png(read_file_bytes(path));
}

inline LabelMask binary_to_labels(const BinaryMask &m, Label fg = Label::Bone)
{
    return map_image<Label>(m, [fg](std::uint8_t v) { return v != 0 ? fg : Label::Background; });
}

/// Write one PNG per slice as <dir>/slice_NNNN.png.
inline void save_mask_stack(const std::vector<LabelMask> &masks, const fs::path &dir)
{
    fs::create_directories(dir);
    for (std::size_t z = 0; z < masks.size(); ++z) {
        save_mask(masks[z], dir / slice_file_name(static_cast<int>(z), ".png"));
    }
}

inline std::vector<LabelMask> load_mask_stack(const fs::path &dir)
{
    static const std::regex re(R"(slice_(\d+)\.png)");
    std::set<int> present;
    if (!fs::is_directory(dir)) {
        throw FormatError("mask directory " + dir.string() + " does not exist");
    }
    for (const auto &entry : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, re)) {
            present.insert(std::stoi(m[1].str()));
        }
    }
    if (present.empty()) {
        throw FormatError("no slice masks in " + dir.string());
    }
    if (*present.begin() != 0 || *present.rbegin() != static_cast<int>(present.size()) - 1) {
        throw FormatError("mask slices in " + dir.string() + " are not contiguous");
    }
    std::vector<LabelMask> out;
    for (int z = 0; z < static_cast<int>(present.size()); ++z) {
        out.push_back(load_mask(dir / slice_file_name(z, ".png")));
        if (!out.back().same_shape(out.front())) {
            throw FormatError("mask slices in " + dir.string() + " have mixed dimensions");
        }
    }
    return out;
}

} // namespace hipseg
