#pragma once

// Shared 2D primitives used by every pipeline stage.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "hipseg/error.hpp"
#include "hipseg/image.hpp"

namespace hipseg {

inline constexpr double kDefaultBlurSigma = 1.5;

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma)
{
    const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (double &v : k) {
        v /= sum;
    }
    return k;
}

} // namespace detail

/// Separable Gaussian convolution with edge replication.
inline Raster gaussian_blur(const Raster &r, double sigma)
{
    if (!(sigma > 0.0)) {
        throw ArgumentError("gaussian_blur: sigma must be > 0");
    }
    const auto k = detail::gaussian_kernel(sigma);
    const int radius = static_cast<int>(k.size() / 2);
    const int w = r.width();
    const int h = r.height();

    Raster tmp(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                acc += k[static_cast<std::size_t>(i + radius)] * r.clamped(x + i, y);
            }
            tmp(x, y) = acc;
        }
    }
    Raster out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                acc += k[static_cast<std::size_t>(i + radius)] * tmp.clamped(x, y + i);
            }
            out(x, y) = acc;
        }
    }
    return out;
}

inline constexpr int kOtsuBins = 256;

/// 256-bin histogram over [min, max] of the raster. Bin of a value is
/// floor((v - min) / (max - min) * 256), with max folded into the last bin.
struct Histogram {
    double min = 0.0;
    double max = 0.0;
    std::array<std::uint64_t, kOtsuBins> counts{};

    int bin_of(double v) const
    {
        const double t = (v - min) / (max - min) * kOtsuBins;
        return std::clamp(static_cast<int>(std::floor(t)), 0, kOtsuBins - 1);
    }

    /// Lower edge of bin `b`; the Otsu threshold is the lower edge of the first
    /// bin in the upper class.
    double edge(int b) const { return min + (max - min) * b / kOtsuBins; }
};

inline Histogram histogram256(std::span<const double> values)
{
    if (values.empty()) {
        throw DegenerateInputError("histogram of empty raster");
    }
    Histogram h;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    h.min = *lo;
    h.max = *hi;
    if (!(h.max > h.min)) {
        throw DegenerateInputError("otsu_threshold: raster is constant");
    }
    for (double v : values) {
        ++h.counts[static_cast<std::size_t>(h.bin_of(v))];
    }
    return h;
}

/// Index k of the last bin in the lower class maximizing between-class
/// variance. Comparisons are exact (integer arithmetic on bin indices, which is
/// an affine image of the bin values) below 2^19 pixels, and ties resolve to
/// the lowest k.
inline int otsu_bin(const Histogram &h)
{
    using u128 = unsigned __int128;
    using i128 = __int128;
    std::int64_t total = 0;
    std::int64_t total_sum = 0;
    for (int b = 0; b < kOtsuBins; ++b) {
        total += static_cast<std::int64_t>(h.counts[static_cast<std::size_t>(b)]);
        total_sum += static_cast<std::int64_t>(h.counts[static_cast<std::size_t>(b)]) * b;
    }

    const bool exact = total < (std::int64_t{1} << 19);

    // sigma_B^2 * N^2 = (n0*S - N*S0)^2 / (n0*n1)
    int best = -1;
    u128 best_num = 0;
    u128 best_den = 1;
    std::int64_t n0 = 0;
    std::int64_t s0 = 0;
    for (int k = 0; k < kOtsuBins - 1; ++k) {
        n0 += static_cast<std::int64_t>(h.counts[static_cast<std::size_t>(k)]);
        s0 += static_cast<std::int64_t>(h.counts[static_cast<std::size_t>(k)]) * k;
        const std::int64_t n1 = total - n0;
        if (n0 == 0 || n1 == 0) {
            continue;
        }
        const i128 diff = static_cast<i128>(n0) * total_sum - static_cast<i128>(total) * s0;
        const u128 num = static_cast<u128>(diff < 0 ? -diff : diff) * static_cast<u128>(diff < 0 ? -diff : diff);
        const u128 den = static_cast<u128>(n0) * static_cast<u128>(n1);
        // num * den stays below 2^128 while N < 2^19; past that compare in
        // long double.
        const bool better = exact ? num * best_den > best_num * den
                                  : static_cast<long double>(num) / static_cast<long double>(den)
                                        > static_cast<long double>(best_num) / static_cast<long double>(best_den);
        if (best < 0 || better) {
            best = k;
            best_num = num;
            best_den = den;
        }
    }
    if (best < 0) {
        throw DegenerateInputError("otsu_threshold: histogram has a single populated bin");
    }
    return best;
}

/// Otsu threshold t: pixels with value >= t form the upper class.
inline double otsu_threshold(const Raster &r)
{
    const Histogram h = histogram256(r.pixels());
    return h.edge(otsu_bin(h) + 1);
}

/// Forward first differences and the backward difference of those.
/// first[p] = S(p+1) - S(p) for p in [0, n-2];
/// second[i] = first[i+1] - first[i], i.e. the second difference centred on
/// sample i+1, for i in [0, n-3].
struct RayGradients {
    std::vector<double> first;
    std::vector<double> second;
};

inline RayGradients gradients_along_ray(std::span<const double> profile)
{
    if (profile.size() < 3) {
        throw ArgumentError("gradients_along_ray: profile needs at least 3 samples");
    }
    RayGradients g;
    g.first.resize(profile.size() - 1);
    for (std::size_t p = 0; p + 1 < profile.size(); ++p) {
        g.first[p] = profile[p + 1] - profile[p];
    }
    g.second.resize(profile.size() - 2);
    for (std::size_t i = 0; i + 1 < g.first.size(); ++i) {
        g.second[i] = g.first[i + 1] - g.first[i];
    }
    return g;
}

/// Scale-normalized bright-ridge strength sigma^2 * max(0, -lambda_min) of the
/// Hessian of the Gaussian-smoothed raster.
inline Raster hessian_ridge_response(const Raster &r, double sigma)
{
    if (!(sigma > 0.0)) {
        throw ArgumentError("hessian_ridge_response: sigma must be > 0");
    }
    const Raster g = gaussian_blur(r, sigma);
    Raster out(r.width(), r.height());
    const double s2 = sigma * sigma;
    for (int y = 0; y < r.height(); ++y) {
        for (int x = 0; x < r.width(); ++x) {
            const double c = g(x, y);
            const double dxx = g.clamped(x + 1, y) - 2 * c + g.clamped(x - 1, y);
            const double dyy = g.clamped(x, y + 1) - 2 * c + g.clamped(x, y - 1);
            const double dxy = (g.clamped(x + 1, y + 1) - g.clamped(x + 1, y - 1) - g.clamped(x - 1, y + 1) + g.clamped(x - 1, y - 1)) / 4.0;
            const double mean = (dxx + dyy) / 2.0;
            const double disc = std::sqrt(((dxx - dyy) / 2.0) * ((dxx - dyy) / 2.0) + dxy * dxy);
            const double lambda_min = mean - disc;
            out(x, y) = s2 * std::max(0.0, -lambda_min);
        }
    }
    return out;
}

/// Smoothed raster with thin bright sheets reinforced, widening the contrast
/// between cortical shells and the narrow dark joint space between them.
inline Raster hessian_enhance(const Raster &r, double sigma, double weight = 1.0)
{
    if (!(sigma > 0.0)) {
        throw ArgumentError("hessian_enhance: sigma must be > 0");
    }
    Raster out = gaussian_blur(r, sigma);
    const Raster resp = hessian_ridge_response(r, sigma);
    auto o = out.pixels();
    auto q = resp.pixels();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] += weight * q[i];
    }
    return out;
}

using Polygon = std::vector<Point2>;

inline std::vector<Point2> foreground_points(const BinaryMask &m)
{
    std::vector<Point2> pts;
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            if (m(x, y) != 0) {
                pts.push_back({static_cast<double>(x), static_cast<double>(y)});
            }
        }
    }
    return pts;
}

/// Convex hull of a point set (Andrew's monotone chain). Vertices are
/// counter-clockwise with positive signed area in (x, y); collinear boundary
/// points are dropped.
inline Polygon convex_hull(std::vector<Point2> pts)
{
    std::sort(pts.begin(), pts.end(), [](Point2 a, Point2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    if (pts.size() < 3) {
        throw DegenerateInputError("convex_hull: fewer than 3 distinct points");
    }
    auto turn = [](Point2 o, Point2 a, Point2 b) { return cross(a - o, b - o); };
    Polygon hull(2 * pts.size());
    std::size_t k = 0;
    for (const Point2 &p : pts) {
        while (k >= 2 && turn(hull[k - 2], hull[k - 1], p) <= 0) {
            --k;
        }
        hull[k++] = p;
    }
    for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
        const Point2 &p = pts[i];
        while (k >= lower && turn(hull[k - 2], hull[k - 1], p) <= 0) {
            --k;
        }
        hull[k++] = p;
    }
    hull.resize(k - 1);
    if (hull.size() < 3) {
        throw DegenerateInputError("convex_hull: points are collinear");
    }
    return hull;
}

inline Polygon convex_hull(const BinaryMask &m)
{
    return convex_hull(foreground_points(m));
}

inline double polygon_area(const Polygon &poly)
{
    double a = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        a += cross(poly[i], poly[(i + 1) % poly.size()]);
    }
    return a / 2.0;
}

inline double polygon_perimeter(const Polygon &poly)
{
    double p = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        p += distance(poly[i], poly[(i + 1) % poly.size()]);
    }
    return p;
}

/// Even-odd point-in-polygon test.
inline bool point_in_polygon(const Polygon &poly, Point2 p)
{
    bool inside = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Point2 a = poly[i];
        const Point2 b = poly[j];
        if ((a.y > p.y) != (b.y > p.y)) {
            const double xi = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if (p.x < xi) {
                inside = !inside;
            }
        }
    }
    return inside;
}

/// Pixels whose centres fall inside the polygon.
inline BinaryMask rasterize_polygon(const Polygon &poly, int width, int height)
{
    BinaryMask out(width, height, 0);
    if (poly.size() < 3) {
        return out;
    }
    std::vector<double> xs;
    for (int y = 0; y < height; ++y) {
        xs.clear();
        const double py = y;
        for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
            const Point2 a = poly[i];
            const Point2 b = poly[j];
            if ((a.y > py) != (b.y > py)) {
                xs.push_back(a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            const int x0 = std::max(0, static_cast<int>(std::ceil(xs[k])));
            const int x1 = std::min(width - 1, static_cast<int>(std::ceil(xs[k + 1])) - 1);
            for (int x = x0; x <= x1; ++x) {
                out(x, y) = 1;
            }
        }
    }
    return out;
}

inline Point2 centroid(const BinaryMask &m)
{
    double sx = 0.0;
    double sy = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            if (m(x, y) != 0) {
                sx += x;
                sy += y;
                ++n;
            }
        }
    }
    if (n == 0) {
        throw DegenerateInputError("centroid: mask is empty");
    }
    return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

/// Background regions not 4-connected to the raster border become foreground.
inline BinaryMask fill_holes(const BinaryMask &m)
{
    const int w = m.width();
    const int h = m.height();
    BinaryMask outside(w, h, 0);
    std::deque<std::pair<int, int>> queue;
    auto seed = [&](int x, int y) {
        if (m(x, y) == 0 && outside(x, y) == 0) {
            outside(x, y) = 1;
            queue.emplace_back(x, y);
        }
    };
    for (int x = 0; x < w; ++x) {
        seed(x, 0);
        seed(x, h - 1);
    }
    for (int y = 0; y < h; ++y) {
        seed(0, y);
        seed(w - 1, y);
    }
    constexpr int dx[4] = {1, -1, 0, 0};
    constexpr int dy[4] = {0, 0, 1, -1};
    while (!queue.empty()) {
        auto [x, y] = queue.front();
        queue.pop_front();
        for (int k = 0; k < 4; ++k) {
            const int nx = x + dx[k];
            const int ny = y + dy[k];
            if (m.contains(nx, ny)) {
                seed(nx, ny);
            }
        }
    }
    BinaryMask out(w, h, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            out(x, y) = (m(x, y) != 0 || outside(x, y) == 0) ? 1 : 0;
        }
    }
    return out;
}

/// 8-connected component labelling; 0 is background, components are numbered
/// from 1 in raster scan order of their first pixel.
struct Components {
    Image<int> labels;
    std::vector<std::size_t> areas; // areas[i] is the size of component i+1
};

inline Components connected_components(const BinaryMask &m)
{
    Components c{Image<int>(m.width(), m.height(), 0), {}};
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            if (m(x, y) == 0 || c.labels(x, y) != 0) {
                continue;
            }
            const int id = static_cast<int>(c.areas.size()) + 1;
            std::size_t area = 0;
            c.labels(x, y) = id;
            stack.emplace_back(x, y);
            while (!stack.empty()) {
                auto [cx, cy] = stack.back();
                stack.pop_back();
                ++area;
                for (int oy = -1; oy <= 1; ++oy) {
                    for (int ox = -1; ox <= 1; ++ox) {
                        const int nx = cx + ox;
                        const int ny = cy + oy;
                        if (m.contains(nx, ny) && m(nx, ny) != 0 && c.labels(nx, ny) == 0) {
                            c.labels(nx, ny) = id;
                            stack.emplace_back(nx, ny);
                        }
                    }
                }
            }
            c.areas.push_back(area);
        }
    }
    return c;
}

/// Pixels 4-adjacent to background (or to the raster border).
inline std::vector<Point2> boundary_points(const BinaryMask &m)
{
    std::vector<Point2> out;
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            if (m(x, y) == 0) {
                continue;
            }
            const bool edge = !m.contains(x - 1, y) || !m.contains(x + 1, y) || !m.contains(x, y - 1) || !m.contains(x, y + 1)
                || m(x - 1, y) == 0 || m(x + 1, y) == 0 || m(x, y - 1) == 0 || m(x, y + 1) == 0;
            if (edge) {
                out.push_back({static_cast<double>(x), static_cast<double>(y)});
            }
        }
    }
    return out;
}

/// Central-difference gradient magnitude squared.
inline Raster gradient_magnitude_sq(const Raster &r)
{
    Raster out(r.width(), r.height());
    for (int y = 0; y < r.height(); ++y) {
        for (int x = 0; x < r.width(); ++x) {
            const double gx = (r.clamped(x + 1, y) - r.clamped(x - 1, y)) / 2.0;
            const double gy = (r.clamped(x, y + 1) - r.clamped(x, y - 1)) / 2.0;
            out(x, y) = gx * gx + gy * gy;
        }
    }
    return out;
}

} // namespace hipseg
