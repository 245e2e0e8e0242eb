#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hipseg/error.hpp"

namespace hipseg {

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Point2 operator*(Point2 a, double s) { return {a.x * s, a.y * s}; }
    friend Point2 operator*(double s, Point2 a) { return {a.x * s, a.y * s}; }
    friend bool operator==(Point2 a, Point2 b) = default;
};

inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point2 a) { return std::hypot(a.x, a.y); }
inline double distance(Point2 a, Point2 b) { return norm(a - b); }
inline Point2 midpoint(Point2 a, Point2 b) { return {(a.x + b.x) / 2.0, (a.y + b.y) / 2.0}; }

/// Dense row-major 2D raster. x indexes columns, y indexes rows.
template <typename T>
class Image {
public:
    using value_type = T;

    Image() = default;
    Image(int width, int height, T fill = T{})
        : width_(width), height_(height)
    {
        if (width <= 0 || height <= 0) {
            throw ArgumentError("image dimensions must be positive");
        }
        data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
    }

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

    T &operator()(int x, int y) { return data_[index(x, y)]; }
    const T &operator()(int x, int y) const { return data_[index(x, y)]; }

    // Edge-replicating access.
    const T &clamped(int x, int y) const
    {
        return (*this)(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1));
    }

    std::span<T> pixels() { return data_; }
    std::span<const T> pixels() const { return data_; }

    template <typename U>
    bool same_shape(const Image<U> &other) const
    {
        return width_ == other.width() && height_ == other.height();
    }

    friend bool operator==(const Image &a, const Image &b) = default;

private:
    std::size_t index(int x, int y) const
    {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

using Raster = Image<double>;
using BinaryMask = Image<std::uint8_t>;

enum class Label : std::uint8_t {
    Background = 0,
    Bone = 1,
    Acetabulum = 2,
    FemoralHead = 3,
};

/// Per-slice multi-class raster; values are restricted to the Label enumerators.
using LabelMask = Image<Label>;

inline bool is_valid_label(std::uint8_t v) { return v <= 3; }

template <typename Out, typename In, typename F>
Image<Out> map_image(const Image<In> &in, F &&f)
{
    Image<Out> out(in.width(), in.height());
    auto src = in.pixels();
    auto dst = out.pixels();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] = f(src[i]);
    }
    return out;
}

template <typename T>
Raster to_raster(const Image<T> &in)
{
    return map_image<double>(in, [](T v) { return static_cast<double>(v); });
}

inline std::size_t count_foreground(const BinaryMask &m)
{
    return static_cast<std::size_t>(std::count_if(m.pixels().begin(), m.pixels().end(), [](std::uint8_t v) { return v != 0; }));
}

/// Binary mask of pixels carrying `label`.
inline BinaryMask class_mask(const LabelMask &m, Label label)
{
    return map_image<std::uint8_t>(m, [label](Label v) { return static_cast<std::uint8_t>(v == label ? 1 : 0); });
}

/// Binary mask of every non-background pixel.
inline BinaryMask foreground_mask(const LabelMask &m)
{
    return map_image<std::uint8_t>(m, [](Label v) { return static_cast<std::uint8_t>(v != Label::Background ? 1 : 0); });
}

/// Bilinear interpolation with edge replication.
inline double sample_bilinear(const Raster &r, double x, double y)
{
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const int x0 = static_cast<int>(fx);
    const int y0 = static_cast<int>(fy);
    const double ax = x - fx;
    const double ay = y - fy;
    const double v00 = r.clamped(x0, y0);
    const double v10 = r.clamped(x0 + 1, y0);
    const double v01 = r.clamped(x0, y0 + 1);
    const double v11 = r.clamped(x0 + 1, y0 + 1);
    return (1 - ay) * ((1 - ax) * v00 + ax * v10) + ay * ((1 - ax) * v01 + ax * v11);
}

/// Axis-aligned window into a larger raster.
struct Window {
    int x0 = 0;
    int y0 = 0;
    int width = 0;
    int height = 0;
};

template <typename T>
Image<T> crop(const Image<T> &in, const Window &w)
{
    Image<T> out(w.width, w.height);
    for (int y = 0; y < w.height; ++y) {
        for (int x = 0; x < w.width; ++x) {
            out(x, y) = in.clamped(w.x0 + x, w.y0 + y);
        }
    }
    return out;
}

} // namespace hipseg
