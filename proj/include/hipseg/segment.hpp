#pragma once

// Volume-level acetabulum / femoral-head segmentation: the initial-slice
// pipeline followed by contour propagation in both z directions.

#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hipseg/afs.hpp"
#include "hipseg/error.hpp"
#include "hipseg/image.hpp"
#include "hipseg/image_ops.hpp"
#include "hipseg/volume_io.hpp"

namespace hipseg {

struct AfsConfig {
    Side side = Side::Right;
    std::optional<int> initial_slice; // auto-detect when unset
    CandidateMode mode = CandidateMode::Fsg;
    bool use_lnms = true;
    bool use_ahs = true;
    int n_rays = 180;
    double march_step = 0.5;
    double max_march_factor = 1.2;   // ray end, x anatomy radius from the centre
    double profile_sigma = 1.0;      // blur applied to the ROI before ray sampling
    bool hessian = false;
    double hessian_sigma = 1.0;
    double hessian_weight = 1.0;
    double hough_min_factor = 0.6;   // x anatomy radius
    double hough_max_factor = 1.4;
    double hough_min_confidence = 0.05;
    double hough_min_relative = 0.5;
    double edge_sigma = 1.5;         // blur of the bone mask driving the snake
    int contour_points = 64;
    SnakeParams snake;
    double stop_min_area_ratio = 0.2;
    double stop_min_bone_overlap = 0.5;
    double absorb_fraction = 0.05; // see split_masks

    void validate() const
    {
        if (n_rays < 16) {
            throw ArgumentError("afs: rays must be >= 16");
        }
        if (!(march_step > 0.0) || !(max_march_factor > 0.0) || !(profile_sigma > 0.0) || !(edge_sigma > 0.0)) {
            throw ArgumentError("afs: step, march factor and blur sigmas must be positive");
        }
        if (!(hough_min_factor > 0.0) || !(hough_max_factor > hough_min_factor)) {
            throw ArgumentError("afs: invalid Hough radius range");
        }
        if (hessian && !(hessian_sigma > 0.0)) {
            throw ArgumentError("afs: hessian sigma must be positive");
        }
        if (contour_points < static_cast<int>(kMinContourPoints)) {
            throw ArgumentError("afs: contour needs at least 8 points");
        }
        if (absorb_fraction < 0.0 || absorb_fraction >= 1.0) {
            throw ArgumentError("afs: absorb_fraction must be in [0, 1)");
        }
        if (initial_slice && *initial_slice < 0) {
            throw ArgumentError("afs: initial slice must be non-negative");
        }
        snake.validate();
    }
};

/// Everything the initial-slice pipeline derived, in full-slice coordinates.
struct InitialSliceResult {
    Window roi;
    FeaturePoints features;
    RoughBoundary rough;
    std::vector<Point2> boundary_points;
    std::vector<CircleModel> hough;
    CircleModel selected;   // Hough circle picked by AHS (or max confidence)
    CircleModel fitted;     // selected circle re-fitted to its inlier points
    Contour contour;        // after the active contour settles
    CircleModel recovered;  // least-squares circle through the final contour
};

struct AfsResult {
    std::vector<LabelMask> labels;
    std::vector<std::optional<Contour>> contours;
    int initial_slice = 0;
    int first_covered = 0;
    int last_covered = 0;
    InitialSliceResult initial;
    std::vector<std::string> notes;
};

namespace detail {

inline Point2 shift(Point2 p, const Window &w) { return {p.x + w.x0, p.y + w.y0}; }

inline Contour shift(const Contour &c, const Window &w)
{
    Contour out;
    out.reserve(c.size());
    for (const Point2 &p : c) {
        out.push_back(shift(p, w));
    }
    return out;
}

inline CircleModel shift(CircleModel c, const Window &w)
{
    c.center = shift(c.center, w);
    return c;
}

inline Raster edge_source(const BinaryMask &bone_roi, double sigma)
{
    return gaussian_blur(to_raster(bone_roi), sigma);
}

// Vertices that sit off bone slide toward the contour centroid until they
// meet bone. The edge force is flat away from the mask, so without this a
// contour carried over from a larger section never contracts.
inline Contour shrink_to_bone(const Contour &c, const Raster &edge, double step = 0.5)
{
    Point2 m{0.0, 0.0};
    for (const Point2 &p : c) {
        m = m + p;
    }
    m = m * (1.0 / static_cast<double>(c.size()));
    Contour out;
    out.reserve(c.size());
    for (const Point2 &p : c) {
        const double len = distance(p, m);
        double t = 0.0;
        while (t < len && sample_bilinear(edge, p.x + (m.x - p.x) * t / len, p.y + (m.y - p.y) * t / len) < 0.5) {
            t += step;
        }
        t = std::min(t, len);
        out.push_back(len > 0.0 ? Point2{p.x + (m.x - p.x) * t / len, p.y + (m.y - p.y) * t / len} : p);
    }
    return out;
}

// Isotropy of the second moments, lambda_min / lambda_max: 1 for a disc,
// 1/e^2 for an ellipse of elongation e. Ragged borders barely move it, unlike
// perimeter based measures.
inline double circularity(const BinaryMask &m)
{
    double n = 0, sx = 0, sy = 0;
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            if (m(x, y) != 0) {
                n += 1;
                sx += x;
                sy += y;
            }
        }
    }
    if (n < 2) {
        return 0.0;
    }
    const double mx = sx / n, my = sy / n;
    double cxx = 0, cyy = 0, cxy = 0;
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            if (m(x, y) != 0) {
                cxx += (x - mx) * (x - mx);
                cyy += (y - my) * (y - my);
                cxy += (x - mx) * (y - my);
            }
        }
    }
    const double tr = (cxx + cyy) / 2;
    const double disc = std::sqrt(std::max(0.0, (cxx - cyy) * (cxx - cyy) / 4 + cxy * cxy));
    return tr + disc > 0 ? (tr - disc) / (tr + disc) : 0.0;
}

} // namespace detail

/// Slice whose bone mask has exactly two dominant components with the more
/// circular one on the medial side; among those, the one with the largest
/// medial component. Returns nullopt when no slice qualifies.
inline std::optional<int> find_initial_slice(const std::vector<BinaryMask> &bone, Side side, double dominance = 0.1)
{
    const int lat = lateral_sign(side);
    std::optional<int> best;
    std::size_t best_area = 0;
    for (std::size_t z = 0; z < bone.size(); ++z) {
        const Components cc = connected_components(bone[z]);
        if (cc.areas.empty()) {
            continue;
        }
        const std::size_t largest = *std::max_element(cc.areas.begin(), cc.areas.end());
        std::vector<int> dominant;
        for (std::size_t i = 0; i < cc.areas.size(); ++i) {
            if (static_cast<double>(cc.areas[i]) >= dominance * static_cast<double>(largest)) {
                dominant.push_back(static_cast<int>(i) + 1);
            }
        }
        if (dominant.size() != 2) {
            continue;
        }
        BinaryMask a(bone[z].width(), bone[z].height(), 0);
        BinaryMask b(bone[z].width(), bone[z].height(), 0);
        for (int y = 0; y < a.height(); ++y) {
            for (int x = 0; x < a.width(); ++x) {
                const int l = cc.labels(x, y);
                if (l == dominant[0]) {
                    a(x, y) = 1;
                } else if (l == dominant[1]) {
                    b(x, y) = 1;
                }
            }
        }
        const bool a_medial = centroid(a).x * lat < centroid(b).x * lat;
        const BinaryMask &medial = a_medial ? a : b;
        const BinaryMask &lateral = a_medial ? b : a;
        const std::size_t medial_area = count_foreground(medial);
        const double cm = detail::circularity(medial);
        const double cl = detail::circularity(lateral);
        if (cm > cl && medial_area > best_area) {
            best = static_cast<int>(z);
            best_area = medial_area;
        }
    }
    return best;
}

/// Initial-slice pipeline: ROI, feature points, rough boundary, candidate
/// refinement, Hough fit, circle selection and a settling active contour.
inline InitialSliceResult segment_initial_slice(const Image<float> &slice, const BinaryMask &bone, const AfsConfig &cfg)
{
    InitialSliceResult r;
    r.roi = crop_roi(bone);
    const BinaryMask bone_roi = crop(bone, r.roi);
    const Raster ct_roi = crop(to_raster(slice), r.roi);

    const FeaturePoints fp = detect_feature_points(bone_roi, cfg.side);
    const RoughBoundary rough = rough_boundary(fp);

    Raster profile_src = gaussian_blur(ct_roi, cfg.profile_sigma);
    if (cfg.hessian) {
        profile_src = hessian_enhance(profile_src, cfg.hessian_sigma, cfg.hessian_weight);
    }
    RefineOptions ro;
    ro.n_rays = cfg.n_rays;
    ro.step = cfg.march_step;
    ro.max_march = std::max(cfg.max_march_factor * rough.anatomy.radius - rough.shrunken.radius, cfg.march_step);
    ro.mode = cfg.mode;
    ro.use_lnms = cfg.use_lnms;
    const auto pts = refine_boundary(profile_src, rough.shrunken, ro);

    HoughOptions ho;
    ho.min_radius = cfg.hough_min_factor * rough.anatomy.radius;
    ho.max_radius = cfg.hough_max_factor * rough.anatomy.radius;
    ho.min_confidence = cfg.hough_min_confidence;
    ho.min_relative = cfg.hough_min_relative;
    const auto circles = hough_circles(pts, ho);
    const CircleModel selected = cfg.use_ahs ? select_anatomy_circle(circles, rough.anatomy.radius) : select_most_confident(circles);
    const CircleModel fitted = refine_circle(selected, pts);

    const Raster edges = detail::edge_source(bone_roi, cfg.edge_sigma);
    Contour init = circle_to_contour(fitted, cfg.contour_points);
    for (Point2 &p : init) {
        p.x = std::clamp(p.x, 0.0, static_cast<double>(bone_roi.width() - 1));
        p.y = std::clamp(p.y, 0.0, static_cast<double>(bone_roi.height() - 1));
    }
    const SnakeResult snake = snake_refine(edges, init, cfg.snake);
    const auto recovered = fit_circle_lsq(snake.contour);

    r.features = {detail::shift(fp.p_c, r.roi), detail::shift(fp.p_u, r.roi), detail::shift(fp.p_r, r.roi), detail::shift(fp.p_m, r.roi),
                  detail::shift(fp.trochanter_apex, r.roi), fp.side};
    r.rough = {detail::shift(rough.anatomy, r.roi), detail::shift(rough.shrunken, r.roi)};
    for (const Point2 &p : pts) {
        r.boundary_points.push_back(detail::shift(p, r.roi));
    }
    for (const CircleModel &c : circles) {
        r.hough.push_back(detail::shift(c, r.roi));
    }
    r.selected = detail::shift(selected, r.roi);
    r.fitted = detail::shift(fitted, r.roi);
    r.contour = detail::shift(snake.contour, r.roi);
    r.recovered = detail::shift(recovered.value_or(fitted), r.roi);
    return r;
}

/// Run the initial-slice pipeline, then carry the contour through neighbouring
/// slices until the head vanishes (area collapse, low bone overlap or no edges).
/// Slices outside the covered range have all bone labelled acetabulum.
inline AfsResult propagate_volume(const Volume &v, const std::vector<BinaryMask> &bone, const AfsConfig &cfg)
{
    cfg.validate();
    if (static_cast<int>(bone.size()) != v.num_slices()) {
        throw ArgumentError("propagate_volume: bone mask count differs from slice count");
    }
    AfsResult res;
    int z0 = 0;
    if (cfg.initial_slice) {
        z0 = *cfg.initial_slice;
        if (z0 >= v.num_slices()) {
            throw InitialSliceError("initial slice " + std::to_string(z0) + " outside volume of " + std::to_string(v.num_slices()) + " slices");
        }
    } else {
        const auto found = find_initial_slice(bone, cfg.side);
        if (!found) {
            throw InitialSliceError("no slice shows a separated femoral head and greater trochanter");
        }
        z0 = *found;
    }
    res.initial_slice = z0;

    try {
        res.initial = segment_initial_slice(v.slices[static_cast<std::size_t>(z0)], bone[static_cast<std::size_t>(z0)], cfg);
    } catch (const Error &e) {
        std::ostringstream os;
        os << "initial slice " << z0 << ": " << e.what() << " (bone pixels: " << count_foreground(bone[static_cast<std::size_t>(z0)]) << ")";
        throw InitialSliceError(os.str());
    }

    const Window roi = res.initial.roi;
    res.labels.resize(bone.size());
    res.contours.assign(bone.size(), std::nullopt);
    for (std::size_t z = 0; z < bone.size(); ++z) {
        res.labels[z] = split_masks(bone[z], {});
    }
    res.labels[static_cast<std::size_t>(z0)] = split_masks(bone[static_cast<std::size_t>(z0)], res.initial.contour, cfg.absorb_fraction);
    res.contours[static_cast<std::size_t>(z0)] = res.initial.contour;
    res.first_covered = z0;
    res.last_covered = z0;
    const double initial_area = std::abs(polygon_area(res.initial.contour));

    for (int dir : {-1, 1}) {
        Contour prev = res.initial.contour;
        for (int z = z0 + dir; z >= 0 && z < v.num_slices(); z += dir) {
            const BinaryMask &b = bone[static_cast<std::size_t>(z)];
            if (count_foreground(b) == 0) {
                res.notes.push_back("slice " + std::to_string(z) + ": no bone");
                break;
            }
            const BinaryMask bone_roi = crop(b, roi);
            Contour init;
            for (const Point2 &p : prev) {
                init.push_back({std::clamp(p.x - roi.x0, 0.0, roi.width - 1.0), std::clamp(p.y - roi.y0, 0.0, roi.height - 1.0)});
            }
            const Raster edge = detail::edge_source(bone_roi, cfg.edge_sigma);
            init = detail::shrink_to_bone(init, edge);
            SnakeResult sr;
            try {
                sr = snake_refine(edge, init, cfg.snake);
            } catch (const ConvergenceError &) {
                res.notes.push_back("slice " + std::to_string(z) + ": contour collapsed");
                break;
            }
            if (sr.no_edges) {
                res.notes.push_back("slice " + std::to_string(z) + ": no edges");
                break;
            }
            const Contour c = detail::shift(sr.contour, roi);
            const double area = std::abs(polygon_area(c));
            if (area < cfg.stop_min_area_ratio * initial_area) {
                res.notes.push_back("slice " + std::to_string(z) + ": contour area below threshold");
                break;
            }
            const BinaryMask inside = rasterize_polygon(c, b.width(), b.height());
            std::size_t in = 0;
            std::size_t in_bone = 0;
            for (std::size_t i = 0; i < inside.size(); ++i) {
                if (inside.pixels()[i] != 0) {
                    ++in;
                    in_bone += b.pixels()[i] != 0 ? 1 : 0;
                }
            }
            if (in == 0 || static_cast<double>(in_bone) < cfg.stop_min_bone_overlap * static_cast<double>(in)) {
                res.notes.push_back("slice " + std::to_string(z) + ": bone overlap below threshold");
                break;
            }
            res.labels[static_cast<std::size_t>(z)] = split_masks(b, c, cfg.absorb_fraction);
            res.contours[static_cast<std::size_t>(z)] = c;
            if (dir < 0) {
                res.first_covered = z;
            } else {
                res.last_covered = z;
            }
            prev = c;
        }
    }
    return res;
}

} // namespace hipseg
