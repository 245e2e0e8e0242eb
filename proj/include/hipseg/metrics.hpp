#pragma once

// Dice and boundary-distance metrics, plus dataset-level evaluation reports.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hipseg/error.hpp"
#include "hipseg/image.hpp"
#include "hipseg/image_ops.hpp"
#include "hipseg/volume_io.hpp"

namespace hipseg {

namespace detail {

inline void require_same_shape(const BinaryMask &a, const BinaryMask &b, const char *what)
{
    if (!a.same_shape(b)) {
        throw ArgumentError(std::string(what) + ": mask dimensions differ");
    }
}

// Exact Euclidean distance transform (Felzenszwalb-Huttenlocher), squared
// distances in pixels to the nearest seed pixel.
inline void edt_1d(const std::vector<double> &f, std::vector<double> &d, std::vector<int> &v, std::vector<double> &z)
{
    const int n = static_cast<int>(f.size());
    constexpr double inf = std::numeric_limits<double>::infinity();
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == inf) {
            continue;
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -inf;
            z[1] = inf;
            continue;
        }
        auto meet = [&](int p) { return ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * (q - p)); };
        double s = meet(v[k]);
        while (s <= z[k]) { // z[0] is -inf, so k never drops below 0
            --k;
            s = meet(v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    if (k < 0) {
        std::fill(d.begin(), d.end(), inf);
        return;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) {
            ++k;
        }
        const double dq = q - v[k];
        d[q] = dq * dq + f[v[k]];
    }
}

inline Raster squared_distance_to(const BinaryMask &seeds)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    const int w = seeds.width();
    const int h = seeds.height();
    Raster out(w, h, inf);
    const int n = std::max(w, h);
    std::vector<double> f(static_cast<std::size_t>(n));
    std::vector<double> d(static_cast<std::size_t>(n));
    std::vector<int> v(static_cast<std::size_t>(n));
    std::vector<double> z(static_cast<std::size_t>(n) + 1);
    for (int x = 0; x < w; ++x) {
        f.resize(static_cast<std::size_t>(h));
        d.resize(static_cast<std::size_t>(h));
        for (int y = 0; y < h; ++y) {
            f[static_cast<std::size_t>(y)] = seeds(x, y) != 0 ? 0.0 : inf;
        }
        edt_1d(f, d, v, z);
        for (int y = 0; y < h; ++y) {
            out(x, y) = d[static_cast<std::size_t>(y)];
        }
    }
    for (int y = 0; y < h; ++y) {
        f.resize(static_cast<std::size_t>(w));
        d.resize(static_cast<std::size_t>(w));
        for (int x = 0; x < w; ++x) {
            f[static_cast<std::size_t>(x)] = out(x, y);
        }
        edt_1d(f, d, v, z);
        for (int x = 0; x < w; ++x) {
            out(x, y) = d[static_cast<std::size_t>(x)];
        }
    }
    return out;
}

inline BinaryMask boundary_mask(const BinaryMask &m)
{
    BinaryMask b(m.width(), m.height(), 0);
    for (const Point2 &p : boundary_points(m)) {
        b(static_cast<int>(p.x), static_cast<int>(p.y)) = 1;
    }
    return b;
}

struct SurfaceDistances {
    double mean_ab = 0.0; // mean over boundary of a, distance to boundary of b
    double mean_ba = 0.0;
    double max = 0.0;
};

inline SurfaceDistances surface_distances(const BinaryMask &a, const BinaryMask &b)
{
    if (count_foreground(a) == 0 || count_foreground(b) == 0) {
        throw DegenerateInputError("hausdorff: empty mask");
    }
    const BinaryMask ba = boundary_mask(a);
    const BinaryMask bb = boundary_mask(b);
    const Raster da = squared_distance_to(ba);
    const Raster db = squared_distance_to(bb);
    SurfaceDistances s;
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < ba.size(); ++i) {
        if (ba.pixels()[i] != 0) {
            const double d = std::sqrt(db.pixels()[i]);
            sum += d;
            s.max = std::max(s.max, d);
            ++n;
        }
    }
    s.mean_ab = sum / static_cast<double>(n);
    sum = 0.0;
    n = 0;
    for (std::size_t i = 0; i < bb.size(); ++i) {
        if (bb.pixels()[i] != 0) {
            const double d = std::sqrt(da.pixels()[i]);
            sum += d;
            s.max = std::max(s.max, d);
            ++n;
        }
    }
    s.mean_ba = sum / static_cast<double>(n);
    return s;
}

} // namespace detail

/// 2|A∩B| / (|A|+|B|); two empty masks agree perfectly.
inline double dice(const BinaryMask &a, const BinaryMask &b)
{
    detail::require_same_shape(a, b, "dice");
    std::size_t na = 0;
    std::size_t nb = 0;
    std::size_t both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool pa = a.pixels()[i] != 0;
        const bool pb = b.pixels()[i] != 0;
        na += pa ? 1 : 0;
        nb += pb ? 1 : 0;
        both += (pa && pb) ? 1 : 0;
    }
    if (na + nb == 0) {
        return 1.0;
    }
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

/// Symmetric average surface distance between the 4-adjacent boundaries.
inline double avg_hausdorff(const BinaryMask &a, const BinaryMask &b, double spacing = 1.0)
{
    detail::require_same_shape(a, b, "avg_hausdorff");
    const auto s = detail::surface_distances(a, b);
    return spacing * (s.mean_ab + s.mean_ba) / 2.0;
}

/// Classic (max) Hausdorff distance between boundaries.
inline double max_hausdorff(const BinaryMask &a, const BinaryMask &b, double spacing = 1.0)
{
    detail::require_same_shape(a, b, "max_hausdorff");
    return spacing * detail::surface_distances(a, b).max;
}

// ---------------------------------------------------------------------------
// Reports

struct ClassScore {
    double dsc = 0.0;     // percent
    double hd = 0.0;      // average surface distance
    double hd_max = 0.0;  // auxiliary
    std::size_t samples = 0;
    std::size_t missing = 0; // samples where one side lacks the structure
};

struct EvalReport {
    ClassScore acetabulum;
    ClassScore femoral_head;
    ClassScore average;
    std::size_t sample_count = 0;
    double spacing = 1.0;
    std::string unit = "px";

    nlohmann::json to_json() const
    {
        auto row = [](const ClassScore &c) {
            return nlohmann::json{{"dsc", c.dsc}, {"hd", c.hd}, {"hd_max", c.hd_max}, {"samples", c.samples}, {"missing", c.missing}};
        };
        return {
            {"version", 1},
            {"unit", unit},
            {"spacing", spacing},
            {"sample_count", sample_count},
            {"average", row(average)},
            {"acetabulum", row(acetabulum)},
            {"femoral_head", row(femoral_head)},
        };
    }

    std::string table() const
    {
        std::ostringstream os;
        char line[160];
        std::snprintf(line, sizeof line, "%-14s %8s %10s %10s\n", "", "DSC", "HD", "HD(max)");
        os << line;
        auto put = [&](const char *name, const ClassScore &c) {
            std::snprintf(line, sizeof line, "%-14s %8.2f %10.3f %10.3f\n", name, c.dsc, c.hd, c.hd_max);
            os << line;
        };
        put("Average", average);
        put("Acetabulum", acetabulum);
        put("Femoral head", femoral_head);
        os << "samples: " << sample_count << ", HD unit: " << unit << "\n";
        return os.str();
    }
};

/// Accumulates per-sample scores for the two foreground classes. Samples where
/// both masks lack a class count as perfect for dice and are skipped for HD;
/// one-sided absence scores dice 0 and is counted as missing for HD.
class Evaluator {
public:
    explicit Evaluator(double spacing = 1.0) : spacing_(spacing)
    {
        if (!(spacing > 0.0)) {
            throw ArgumentError("evaluate: spacing must be positive");
        }
    }

    void add(const LabelMask &pred, const LabelMask &gt)
    {
        if (!pred.same_shape(gt)) {
            throw DatasetMismatchError("evaluate: prediction and ground truth dimensions differ");
        }
        add_class(acc_[0], class_mask(pred, Label::Acetabulum), class_mask(gt, Label::Acetabulum));
        add_class(acc_[1], class_mask(pred, Label::FemoralHead), class_mask(gt, Label::FemoralHead));
        ++samples_;
    }

    EvalReport report() const
    {
        EvalReport r;
        r.sample_count = samples_;
        r.spacing = spacing_;
        r.unit = spacing_ == 1.0 ? "px" : "mm";
        r.acetabulum = finish(acc_[0]);
        r.femoral_head = finish(acc_[1]);
        r.average.dsc = (r.acetabulum.dsc + r.femoral_head.dsc) / 2.0;
        r.average.hd = (r.acetabulum.hd + r.femoral_head.hd) / 2.0;
        r.average.hd_max = (r.acetabulum.hd_max + r.femoral_head.hd_max) / 2.0;
        r.average.samples = samples_;
        r.average.missing = r.acetabulum.missing + r.femoral_head.missing;
        return r;
    }

private:
    struct Acc {
        double dsc = 0.0;
        double hd = 0.0;
        double hd_max = 0.0;
        std::size_t n = 0;
        std::size_t hd_n = 0;
        std::size_t missing = 0;
    };

    void add_class(Acc &a, const BinaryMask &p, const BinaryMask &g)
    {
        a.dsc += dice(p, g);
        ++a.n;
        const bool ep = count_foreground(p) == 0;
        const bool eg = count_foreground(g) == 0;
        if (ep && eg) {
            return;
        }
        if (ep || eg) {
            ++a.missing;
            return;
        }
        const auto s = detail::surface_distances(p, g);
        a.hd += spacing_ * (s.mean_ab + s.mean_ba) / 2.0;
        a.hd_max += spacing_ * s.max;
        ++a.hd_n;
    }

    static ClassScore finish(const Acc &a)
    {
        ClassScore c;
        c.samples = a.n;
        c.missing = a.missing;
        c.dsc = a.n ? 100.0 * a.dsc / static_cast<double>(a.n) : 0.0;
        c.hd = a.hd_n ? a.hd / static_cast<double>(a.hd_n) : 0.0;
        c.hd_max = a.hd_n ? a.hd_max / static_cast<double>(a.hd_n) : 0.0;
        return c;
    }

    double spacing_;
    std::array<Acc, 2> acc_{};
    std::size_t samples_ = 0;
};

/// Relative paths of every mask PNG under a label-store root, sorted.
inline std::vector<std::string> list_mask_ids(const fs::path &root)
{
    if (!fs::is_directory(root)) {
        throw FormatError("not a directory: " + root.string());
    }
    std::vector<std::string> ids;
    for (const auto &e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file() && e.path().extension() == ".png") {
            std::string rel = fs::relative(e.path(), root).replace_extension().generic_string();
            ids.push_back(std::move(rel));
        }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

/// Compare every mask in pred_dir with the same-named mask in gt_dir.
inline EvalReport evaluate(const fs::path &pred_dir, const fs::path &gt_dir, double spacing = 1.0)
{
    const auto pred_ids = list_mask_ids(pred_dir);
    const auto gt_ids = list_mask_ids(gt_dir);
    if (pred_ids != gt_ids) {
        std::vector<std::string> only;
        std::set_symmetric_difference(pred_ids.begin(), pred_ids.end(), gt_ids.begin(), gt_ids.end(), std::back_inserter(only));
        std::string msg = "evaluate: sample ids differ (" + std::to_string(only.size()) + " unmatched";
        if (!only.empty()) {
            msg += ", e.g. " + only.front();
        }
        throw DatasetMismatchError(msg + ")");
    }
    Evaluator ev(spacing);
    for (const auto &id : pred_ids) {
        ev.add(load_mask(pred_dir / (id + ".png")), load_mask(gt_dir / (id + ".png")));
    }
    return ev.report();
}

} // namespace hipseg
