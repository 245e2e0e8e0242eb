#pragma once

// Acetabulum / femoral-head separation.
//
// Initial slice: crop an ROI around the bone centroid, place a rough anatomic
// circle through hull feature points, march rays outward from a shrunken copy
// of it, keep rising-edge candidates (first- and second-order gradient test),
// suppress all but the outermost point of each candidate run, Hough-fit
// circles and keep the one whose radius is closest to the anatomic radius.
// The circle then seeds an active contour that is carried slice by slice
// through the volume.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "hipseg/error.hpp"
#include "hipseg/image.hpp"
#include "hipseg/image_ops.hpp"

namespace hipseg {

enum class Side { Left, Right };

/// +1 when the lateral direction is +x in raster coordinates.
inline int lateral_sign(Side side) { return side == Side::Right ? 1 : -1; }

inline const char *to_string(Side s) { return s == Side::Right ? "right" : "left"; }

inline Side parse_side(const std::string &s)
{
    if (s == "right") {
        return Side::Right;
    }
    if (s == "left") {
        return Side::Left;
    }
    throw ArgumentError("side must be 'left' or 'right', got '" + s + "'");
}

// ---------------------------------------------------------------------------
// ROI

/// Half-size window centred on the bone centroid, shifted to lie inside the slice.
inline Window crop_roi(const BinaryMask &bone)
{
    const Point2 c = centroid(bone);
    const int w = bone.width() / 2;
    const int h = bone.height() / 2;
    const int x0 = std::clamp(static_cast<int>(std::lround(c.x)) - w / 2, 0, bone.width() - w);
    const int y0 = std::clamp(static_cast<int>(std::lround(c.y)) - h / 2, 0, bone.height() - h);
    return {x0, y0, w, h};
}

// ---------------------------------------------------------------------------
// Feature points and rough boundary

struct FeaturePoints {
    Point2 p_c; // bone centroid
    Point2 p_u; // hull exit of the upward (+y) ray from p_c
    Point2 p_r; // hull exit of the lateral ray from p_c
    Point2 p_m; // hull vertex farthest from the greater trochanter
    Point2 trochanter_apex; // hull vertex farthest from p_c in the lateral-inferior quadrant
    Side side = Side::Right;
};

/// Largest t >= 0 with origin + t*dir on the polygon boundary.
inline Point2 ray_polygon_exit(const Polygon &poly, Point2 origin, Point2 dir)
{
    double best = -1.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const Point2 a = poly[i];
        const Point2 b = poly[(i + 1) % poly.size()];
        const Point2 e = b - a;
        const double den = cross(dir, e);
        if (std::abs(den) < 1e-12) {
            continue;
        }
        const Point2 ao = a - origin;
        const double t = cross(ao, e) / den;
        const double s = cross(ao, dir) / den;
        if (t >= 0.0 && s >= -1e-9 && s <= 1.0 + 1e-9) {
            best = std::max(best, t);
        }
    }
    if (best < 0.0) {
        throw DegenerateInputError("ray does not leave the hull");
    }
    return origin + dir * best;
}

inline FeaturePoints detect_feature_points(const BinaryMask &bone, Side side)
{
    const auto pts = foreground_points(bone);
    if (pts.empty()) {
        throw DegenerateInputError("detect_feature_points: bone mask is empty");
    }
    const Polygon hull = convex_hull(pts);
    const int lat = lateral_sign(side);

    FeaturePoints fp;
    fp.side = side;
    fp.p_c = centroid(bone);
    fp.p_u = ray_polygon_exit(hull, fp.p_c, {0.0, 1.0});
    fp.p_r = ray_polygon_exit(hull, fp.p_c, {static_cast<double>(lat), 0.0});

    std::optional<Point2> apex;
    for (const Point2 &v : hull) {
        if ((v.x - fp.p_c.x) * lat >= 0.0 && v.y - fp.p_c.y <= 0.0) {
            if (!apex || distance(v, fp.p_c) > distance(*apex, fp.p_c)) {
                apex = v;
            }
        }
    }
    if (!apex) {
        throw DegenerateInputError("detect_feature_points: no hull vertex in the lateral-inferior quadrant");
    }
    fp.trochanter_apex = *apex;
    fp.p_m = hull.front();
    for (const Point2 &v : hull) {
        if (distance(v, *apex) > distance(fp.p_m, *apex)) {
            fp.p_m = v;
        }
    }
    return fp;
}

struct CircleModel {
    Point2 center;
    double radius = 0.0;
    double confidence = 1.0;
};

inline CircleModel circumcircle(Point2 a, Point2 b, Point2 c)
{
    const Point2 ab = b - a;
    const Point2 ac = c - a;
    const double d = 2.0 * cross(ab, ac);
    const double scale = std::max({dot(ab, ab), dot(ac, ac), 1e-300});
    if (std::abs(d) <= 1e-12 * scale) {
        throw DegenerateInputError("circumcircle: points are collinear");
    }
    const double bb = dot(ab, ab);
    const double cc = dot(ac, ac);
    const Point2 u{(ac.y * bb - ab.y * cc) / d, (ab.x * cc - ac.x * bb) / d};
    return {a + u, norm(u), 1.0};
}

inline constexpr double kRoughShrink = 1.7;

struct RoughBoundary {
    CircleModel anatomy;
    CircleModel shrunken;
};

inline RoughBoundary rough_boundary(const FeaturePoints &fp)
{
    RoughBoundary rb;
    rb.anatomy = circumcircle(fp.p_u, fp.p_m, midpoint(fp.p_c, fp.p_r));
    rb.shrunken = {rb.anatomy.center, rb.anatomy.radius / kRoughShrink, 1.0};
    return rb;
}

// ---------------------------------------------------------------------------
// Boundary candidates along rays

enum class CandidateMode { SecondOnly, Fsg };

inline const char *to_string(CandidateMode m) { return m == CandidateMode::Fsg ? "fsg" : "second_only"; }

inline CandidateMode parse_candidate_mode(const std::string &s)
{
    if (s == "fsg") {
        return CandidateMode::Fsg;
    }
    if (s == "second_only") {
        return CandidateMode::SecondOnly;
    }
    throw ArgumentError("mode must be 'fsg' or 'second_only', got '" + s + "'");
}

struct RayProfile {
    double angle = 0.0;
    Point2 start;
    double step = 0.5;
    std::vector<double> samples;          // ordered outward
    std::vector<std::uint8_t> candidates; // aligned with samples

    Point2 position(std::size_t i) const
    {
        return start + Point2{std::cos(angle), std::sin(angle)} * (step * static_cast<double>(i));
    }
};

/// Marks sample q (1 <= q <= n-2) when the second difference there is
/// positive and, in Fsg mode, the forward difference S(q+1) - S(q) is
/// positive as well.
inline RayProfile fsg_candidates(RayProfile profile, CandidateMode mode)
{
    const auto g = gradients_along_ray(profile.samples);
    profile.candidates.assign(profile.samples.size(), 0);
    for (std::size_t q = 1; q + 1 < profile.samples.size(); ++q) {
        const bool convex = g.second[q - 1] > 0.0;
        const bool rising = g.first[q] > 0.0;
        if (convex && (mode == CandidateMode::SecondOnly || rising)) {
            profile.candidates[q] = 1;
        }
    }
    return profile;
}

/// Clears every candidate whose outward neighbour is also a candidate, leaving
/// the outermost point of each run.
inline RayProfile lnms(RayProfile profile)
{
    auto &c = profile.candidates;
    for (std::size_t p = 0; p + 1 < c.size(); ++p) {
        if (c[p] != 0 && c[p + 1] != 0) {
            c[p] = 0;
        }
    }
    return profile;
}

struct RefineOptions {
    int n_rays = 180;
    double max_march = 0.0; // px
    double step = 0.5;      // px
    CandidateMode mode = CandidateMode::Fsg;
    bool use_lnms = true;
};

inline std::vector<RayProfile> sample_rays(const Raster &roi, const CircleModel &shrunken, const RefineOptions &opt)
{
    if (opt.n_rays < 16) {
        throw ArgumentError("refine_boundary: need at least 16 rays");
    }
    if (!(shrunken.radius > 0.0) || shrunken.center.x - shrunken.radius < 0.0 || shrunken.center.y - shrunken.radius < 0.0
        || shrunken.center.x + shrunken.radius > roi.width() - 1 || shrunken.center.y + shrunken.radius > roi.height() - 1) {
        throw ArgumentError("refine_boundary: shrunken circle is not inside the ROI");
    }
    if (!(opt.step > 0.0) || !(opt.max_march > 0.0)) {
        throw ArgumentError("refine_boundary: step and max_march must be positive");
    }
    std::vector<RayProfile> rays;
    rays.reserve(static_cast<std::size_t>(opt.n_rays));
    for (int k = 0; k < opt.n_rays; ++k) {
        RayProfile r;
        r.angle = 2.0 * std::numbers::pi * k / opt.n_rays;
        r.step = opt.step;
        const Point2 dir{std::cos(r.angle), std::sin(r.angle)};
        r.start = shrunken.center + dir * shrunken.radius;
        const int n = static_cast<int>(std::floor(opt.max_march / opt.step)) + 1;
        for (int i = 0; i < n; ++i) {
            const Point2 p = r.start + dir * (opt.step * i);
            if (p.x < 0.0 || p.y < 0.0 || p.x > roi.width() - 1 || p.y > roi.height() - 1) {
                break;
            }
            r.samples.push_back(sample_bilinear(roi, p.x, p.y));
        }
        rays.push_back(std::move(r));
    }
    return rays;
}

/// Candidate boundary points found by marching outward from the shrunken
/// rough boundary.
inline std::vector<Point2> refine_boundary(const Raster &roi, const CircleModel &shrunken, const RefineOptions &opt)
{
    std::vector<Point2> out;
    for (RayProfile r : sample_rays(roi, shrunken, opt)) {
        if (r.samples.size() < 3) {
            continue;
        }
        r = fsg_candidates(std::move(r), opt.mode);
        if (opt.use_lnms) {
            r = lnms(std::move(r));
        }
        for (std::size_t i = 0; i < r.candidates.size(); ++i) {
            if (r.candidates[i] != 0) {
                out.push_back(r.position(i));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Hough circles and anatomy-based selection

struct HoughOptions {
    double min_radius = 1.0;
    double max_radius = 0.0;
    double min_confidence = 0.05;
    double min_relative = 0.0; // drop maxima below this fraction of the strongest
    std::size_t max_circles = 32;
};

/// (cx, cy, r) accumulator at 1 px resolution; every point votes at most once
/// per cell. Returns local maxima ordered by confidence (votes / points).
inline std::vector<CircleModel> hough_circles(const std::vector<Point2> &points, const HoughOptions &opt)
{
    if (points.size() < 3) {
        throw DegenerateInputError("hough_circles: need at least 3 points");
    }
    const int rmin = std::max(1, static_cast<int>(std::ceil(opt.min_radius)));
    const int rmax = static_cast<int>(std::floor(opt.max_radius));
    if (rmax < rmin) {
        throw ArgumentError("hough_circles: empty radius range");
    }
    double minx = points.front().x;
    double maxx = minx;
    double miny = points.front().y;
    double maxy = miny;
    for (const Point2 &p : points) {
        minx = std::min(minx, p.x);
        maxx = std::max(maxx, p.x);
        miny = std::min(miny, p.y);
        maxy = std::max(maxy, p.y);
    }
    const int x0 = static_cast<int>(std::floor(minx)) - rmax - 1;
    const int y0 = static_cast<int>(std::floor(miny)) - rmax - 1;
    const int nx = static_cast<int>(std::ceil(maxx)) + rmax + 2 - x0;
    const int ny = static_cast<int>(std::ceil(maxy)) + rmax + 2 - y0;
    const int nr = rmax - rmin + 1;
    const auto cells = static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nr);
    std::vector<std::uint32_t> acc(cells, 0);
    std::vector<std::uint32_t> stamp(cells, 0);
    auto index = [&](int cx, int cy, int ri) {
        return (static_cast<std::size_t>(ri) * static_cast<std::size_t>(ny) + static_cast<std::size_t>(cy)) * static_cast<std::size_t>(nx)
            + static_cast<std::size_t>(cx);
    };

    std::uint32_t token = 0;
    for (const Point2 &p : points) {
        ++token;
        for (int ri = 0; ri < nr; ++ri) {
            const double r = rmin + ri;
            const int steps = std::max(16, static_cast<int>(std::ceil(4.0 * std::numbers::pi * r)));
            for (int k = 0; k < steps; ++k) {
                const double a = 2.0 * std::numbers::pi * k / steps;
                const int cx = static_cast<int>(std::lround(p.x + r * std::cos(a))) - x0;
                const int cy = static_cast<int>(std::lround(p.y + r * std::sin(a))) - y0;
                if (cx < 0 || cy < 0 || cx >= nx || cy >= ny) {
                    continue;
                }
                const std::size_t i = index(cx, cy, ri);
                if (stamp[i] != token) {
                    stamp[i] = token;
                    ++acc[i];
                }
            }
        }
    }

    const double n = static_cast<double>(points.size());
    const auto min_votes = static_cast<std::uint32_t>(std::max(3.0, std::ceil(opt.min_confidence * n)));
    std::vector<CircleModel> out;
    for (int ri = 0; ri < nr; ++ri) {
        for (int cy = 0; cy < ny; ++cy) {
            for (int cx = 0; cx < nx; ++cx) {
                const std::uint32_t v = acc[index(cx, cy, ri)];
                if (v < min_votes) {
                    continue;
                }
                bool is_max = true;
                for (int dr = -1; dr <= 1 && is_max; ++dr) {
                    for (int dy = -1; dy <= 1 && is_max; ++dy) {
                        for (int dx = -1; dx <= 1 && is_max; ++dx) {
                            if (dr == 0 && dy == 0 && dx == 0) {
                                continue;
                            }
                            const int qr = ri + dr;
                            const int qy = cy + dy;
                            const int qx = cx + dx;
                            if (qr < 0 || qy < 0 || qx < 0 || qr >= nr || qy >= ny || qx >= nx) {
                                continue;
                            }
                            const std::uint32_t w = acc[index(qx, qy, qr)];
                            // Plateaus keep only their first cell in scan order.
                            const bool earlier = (dr < 0) || (dr == 0 && (dy < 0 || (dy == 0 && dx < 0)));
                            if (w > v || (w == v && earlier)) {
                                is_max = false;
                            }
                        }
                    }
                }
                if (is_max) {
                    out.push_back({{static_cast<double>(cx + x0), static_cast<double>(cy + y0)}, static_cast<double>(rmin + ri), v / n});
                }
            }
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const CircleModel &a, const CircleModel &b) {
        if (a.confidence != b.confidence) {
            return a.confidence > b.confidence;
        }
        return a.radius < b.radius;
    });
    if (!out.empty() && opt.min_relative > 0.0) {
        const double cutoff = opt.min_relative * out.front().confidence;
        std::erase_if(out, [&](const CircleModel &c) { return c.confidence < cutoff; });
    }
    if (out.size() > opt.max_circles) {
        out.resize(opt.max_circles);
    }
    return out;
}

/// Circle with radius closest to the anatomic radius; ties go to the higher
/// confidence, then the smaller radius.
inline CircleModel select_anatomy_circle(const std::vector<CircleModel> &circles, double anatomy_radius)
{
    if (circles.empty()) {
        throw NoCandidateError("select_anatomy_circle: no circles");
    }
    const CircleModel *best = &circles.front();
    for (const CircleModel &c : circles) {
        const double dc = std::abs(c.radius - anatomy_radius);
        const double db = std::abs(best->radius - anatomy_radius);
        if (dc < db || (dc == db && (c.confidence > best->confidence || (c.confidence == best->confidence && c.radius < best->radius)))) {
            best = &c;
        }
    }
    return *best;
}

inline CircleModel select_most_confident(const std::vector<CircleModel> &circles)
{
    if (circles.empty()) {
        throw NoCandidateError("select_most_confident: no circles");
    }
    return circles.front();
}

/// Algebraic least-squares circle fit (Kasa).
inline std::optional<CircleModel> fit_circle_lsq(const std::vector<Point2> &pts)
{
    if (pts.size() < 3) {
        return std::nullopt;
    }
    Point2 mean;
    for (const Point2 &p : pts) {
        mean = mean + p;
    }
    mean = mean * (1.0 / static_cast<double>(pts.size()));
    double suu = 0, svv = 0, suv = 0, suuu = 0, svvv = 0, suvv = 0, svuu = 0;
    for (const Point2 &p : pts) {
        const double u = p.x - mean.x;
        const double v = p.y - mean.y;
        suu += u * u;
        svv += v * v;
        suv += u * v;
        suuu += u * u * u;
        svvv += v * v * v;
        suvv += u * v * v;
        svuu += v * u * u;
    }
    const double det = suu * svv - suv * suv;
    if (std::abs(det) < 1e-12) {
        return std::nullopt;
    }
    const double b1 = 0.5 * (suuu + suvv);
    const double b2 = 0.5 * (svvv + svuu);
    const double uc = (b1 * svv - b2 * suv) / det;
    const double vc = (suu * b2 - suv * b1) / det;
    const double r = std::sqrt(uc * uc + vc * vc + (suu + svv) / static_cast<double>(pts.size()));
    return CircleModel{{uc + mean.x, vc + mean.y}, r, 1.0};
}

/// Re-fit `c` to the points lying within `band` px of it.
inline CircleModel refine_circle(CircleModel c, const std::vector<Point2> &pts, double band = 2.0, int rounds = 3)
{
    for (int it = 0; it < rounds; ++it) {
        std::vector<Point2> inliers;
        for (const Point2 &p : pts) {
            if (std::abs(distance(p, c.center) - c.radius) <= band) {
                inliers.push_back(p);
            }
        }
        const auto fit = fit_circle_lsq(inliers);
        if (!fit || inliers.size() < 8) {
            break;
        }
        c = CircleModel{fit->center, fit->radius, c.confidence};
    }
    return c;
}

// ---------------------------------------------------------------------------
// Active contour

using Contour = std::vector<Point2>;

inline Contour circle_to_contour(const CircleModel &c, int n = 64)
{
    Contour out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double a = 2.0 * std::numbers::pi * i / n;
        out.push_back(c.center + Point2{std::cos(a), std::sin(a)} * c.radius);
    }
    return out;
}

/// Redistribute `n` points uniformly by arc length along the closed contour.
inline Contour resample_contour(const Contour &c, std::size_t n)
{
    const std::size_t m = c.size();
    std::vector<double> cum(m + 1, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        cum[i + 1] = cum[i] + distance(c[i], c[(i + 1) % m]);
    }
    const double total = cum[m];
    Contour out;
    out.reserve(n);
    std::size_t seg = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double s = total * static_cast<double>(k) / static_cast<double>(n);
        while (seg + 1 < m && cum[seg + 1] < s) {
            ++seg;
        }
        const double len = cum[seg + 1] - cum[seg];
        const double t = len > 0.0 ? (s - cum[seg]) / len : 0.0;
        out.push_back(c[seg] + (c[(seg + 1) % m] - c[seg]) * t);
    }
    return out;
}

struct SnakeParams {
    double alpha = 0.1;
    double beta = 0.4;
    double gamma = 2.0;
    double step = 0.05;
    double tol = 0.05;        // px, mean displacement per check window
    int max_iters = 500;
    int check_every = 10;     // iterations per convergence check / resample
    double min_spacing = 1.0; // px between resampled vertices

    void validate() const
    {
        if (alpha < 0.0 || beta < 0.0 || gamma < 0.0 || !(step > 0.0) || !(tol > 0.0) || max_iters < 1 || check_every < 1
            || !(min_spacing > 0.0)) {
            throw ArgumentError("snake: invalid parameters");
        }
    }
};

struct SnakeResult {
    Contour contour;
    bool no_edges = false;
    bool converged = false;
    int iterations = 0;
    std::vector<double> perimeters; // perimeter after each check window
};

inline constexpr std::size_t kMinContourPoints = 8;

/// Explicit gradient descent on
///   E = sum (alpha |v'|^2 + beta |v''|^2) / 2 - gamma * edge(v)
/// where edge = |grad I|^2 normalised to a maximum of 1.
inline SnakeResult snake_refine(const Raster &image, const Contour &init, const SnakeParams &params = {})
{
    params.validate();
    if (init.size() < kMinContourPoints) {
        throw ConvergenceError("snake: contour has fewer than 8 points");
    }
    for (const Point2 &p : init) {
        if (p.x < 0.0 || p.y < 0.0 || p.x > image.width() - 1 || p.y > image.height() - 1) {
            throw ArgumentError("snake: initial contour leaves the image");
        }
    }
    SnakeResult res;
    res.contour = init;

    Raster edge = gradient_magnitude_sq(image);
    const double emax = *std::max_element(edge.pixels().begin(), edge.pixels().end());
    if (!(emax > 1e-12) && params.gamma > 0.0) {
        res.no_edges = true;
        return res;
    }
    Raster fx(image.width(), image.height(), 0.0);
    Raster fy(image.width(), image.height(), 0.0);
    if (emax > 1e-12) {
        for (double &v : edge.pixels()) {
            v /= emax;
        }
        for (int y = 0; y < image.height(); ++y) {
            for (int x = 0; x < image.width(); ++x) {
                fx(x, y) = (edge.clamped(x + 1, y) - edge.clamped(x - 1, y)) / 2.0;
                fy(x, y) = (edge.clamped(x, y + 1) - edge.clamped(x, y - 1)) / 2.0;
            }
        }
    }

    const std::size_t n0 = init.size();
    Contour v = init;
    Contour next(v.size());
    Contour snapshot = v;
    const double xmax = image.width() - 1;
    const double ymax = image.height() - 1;
    for (int it = 1; it <= params.max_iters; ++it) {
        const std::size_t n = v.size();
        for (std::size_t i = 0; i < n; ++i) {
            const Point2 &m2 = v[(i + n - 2) % n];
            const Point2 &m1 = v[(i + n - 1) % n];
            const Point2 &c = v[i];
            const Point2 &p1 = v[(i + 1) % n];
            const Point2 &p2 = v[(i + 2) % n];
            const Point2 elastic = m1 - 2.0 * c + p1;
            const Point2 bending = m2 - 4.0 * m1 + 6.0 * c - 4.0 * p1 + p2;
            const Point2 external{sample_bilinear(fx, c.x, c.y), sample_bilinear(fy, c.x, c.y)};
            const Point2 force = params.alpha * elastic - params.beta * bending + params.gamma * external;
            Point2 q = c + force * params.step;
            q.x = std::clamp(q.x, 0.0, xmax);
            q.y = std::clamp(q.y, 0.0, ymax);
            next[i] = q;
        }
        std::swap(v, next);
        res.iterations = it;

        if (it % params.check_every == 0) {
            double disp = 0.0;
            for (std::size_t i = 0; i < v.size(); ++i) {
                disp += distance(v[i], snapshot[i]);
            }
            disp /= static_cast<double>(v.size());
            const double perimeter = polygon_perimeter(v);
            const auto target = std::min(n0, static_cast<std::size_t>(std::floor(perimeter / params.min_spacing)));
            if (target < kMinContourPoints) {
                throw ConvergenceError("snake: contour collapsed below 8 points");
            }
            v = resample_contour(v, target);
            next.resize(v.size());
            res.perimeters.push_back(polygon_perimeter(v));
            snapshot = v;
            if (disp < params.tol) {
                res.converged = true;
                break;
            }
        }
    }
    res.contour = std::move(v);
    return res;
}

// ---------------------------------------------------------------------------
// Mask splitting

/// Bone inside the contour becomes femoral head, remaining bone acetabulum;
/// holes of each class region are then filled (background pixels only).
/// Non-head components touching the head and smaller than absorb_fraction of
/// the head area are slivers cut off by the contour and are given to the head.
inline LabelMask split_masks(const BinaryMask &bone, const Contour &femoral, double absorb_fraction = 0.0)
{
    const BinaryMask inside = rasterize_polygon(femoral, bone.width(), bone.height());
    LabelMask out(bone.width(), bone.height(), Label::Background);
    BinaryMask head(bone.width(), bone.height(), 0);
    BinaryMask rest(bone.width(), bone.height(), 0);
    for (int y = 0; y < bone.height(); ++y) {
        for (int x = 0; x < bone.width(); ++x) {
            if (bone(x, y) == 0) {
                continue;
            }
            if (inside(x, y) != 0) {
                out(x, y) = Label::FemoralHead;
                head(x, y) = 1;
            } else {
                out(x, y) = Label::Acetabulum;
                rest(x, y) = 1;
            }
        }
    }
    if (absorb_fraction > 0.0) {
        const std::size_t head_area = count_foreground(head);
        const Components cc = connected_components(rest);
        std::vector<char> touches(cc.areas.size() + 1, 0);
        for (int y = 0; y < bone.height(); ++y) {
            for (int x = 0; x < bone.width(); ++x) {
                const int l = cc.labels(x, y);
                if (l == 0) {
                    continue;
                }
                for (const auto &[dx, dy] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
                    if (head.contains(x + dx, y + dy) && head(x + dx, y + dy) != 0) {
                        touches[static_cast<std::size_t>(l)] = 1;
                    }
                }
            }
        }
        for (int y = 0; y < bone.height(); ++y) {
            for (int x = 0; x < bone.width(); ++x) {
                const int l = cc.labels(x, y);
                if (l != 0 && touches[static_cast<std::size_t>(l)] != 0
                    && static_cast<double>(cc.areas[static_cast<std::size_t>(l) - 1]) < absorb_fraction * static_cast<double>(head_area)) {
                    out(x, y) = Label::FemoralHead;
                    head(x, y) = 1;
                    rest(x, y) = 0;
                }
            }
        }
    }
    const BinaryMask head_filled = fill_holes(head);
    const BinaryMask rest_filled = fill_holes(rest);
    for (int y = 0; y < bone.height(); ++y) {
        for (int x = 0; x < bone.width(); ++x) {
            if (out(x, y) != Label::Background) {
                continue;
            }
            if (head_filled(x, y) != 0) {
                out(x, y) = Label::FemoralHead;
            } else if (rest_filled(x, y) != 0) {
                out(x, y) = Label::Acetabulum;
            }
        }
    }
    return out;
}

} // namespace hipseg
