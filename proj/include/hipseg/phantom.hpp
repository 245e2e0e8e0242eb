#pragma once

// Synthetic hip-like CT volumes with exact ground truth.
//
// Geometry (raster axes, +y is "up", the lateral direction is +x for a right hip):
//   * femoral head: sphere of radius R at femoral_center, cortical shell of
//     cortex_thickness, spongy interior;
//   * acetabular cup: spherical shell [R + gap, R + gap + cup_thickness] over the
//     superior hemisphere (slice z above the head centre), open on the lateral
//     side, with a cortical inner surface;
//   * greater trochanter: elliptic cylinder displaced laterally and inferiorly
//     by trochanter_offset, semi-minor axis trochanter_radius along the offset,
//     elongated across it; present from slice 0 up to the initial slice and
//     never touching the head.
// Ground truth labels femoral-head bone 3 and every other bone pixel 2.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "hipseg/afs.hpp"
#include "hipseg/error.hpp"
#include "hipseg/image.hpp"
#include "hipseg/image_ops.hpp"
#include "hipseg/volume_io.hpp"

namespace hipseg {

struct PhantomSpec {
    std::string id = "phantom";
    int width = 256;
    int height = 256;
    int slices = 20;
    double spacing_xy = 0.8;  // mm, metadata only
    double slice_step = 1.0;  // px of z travel per slice
    Point2 femoral_center{128.0, 128.0};
    double femoral_z = 9.5;   // slice units
    double femoral_radius = 24.0;
    double cortex_thickness = 2.0;
    double acetabular_gap = 5.0;
    double cup_thickness = 8.0;
    double cup_opening = 0.35; // lateral cut, fraction of R beyond the head centre
    Point2 trochanter_offset{38.0, 10.0}; // (lateral, inferior) px
    double trochanter_radius = 8.0;
    double trochanter_elongation = 1.4; // semi-major / semi-minor
    int initial_slice = 5;
    Side side = Side::Right;
    double hu_soft = 40.0;
    double hu_spongy = 200.0;
    double hu_cortex = 700.0;
    double noise_sigma = 15.0;
    // Dense islands inside the femoral head spongiosa.
    int texture_islands = 0;
    double texture_radius = 2.5;
    double hu_texture = 700.0;
    // Dense trabecular core of the head, as a fraction of R (0 disables).
    double core_fraction = 0.0;
    double hu_core = 450.0;
    std::uint64_t rng_seed = 1;

    void validate() const
    {
        if (width <= 0 || height <= 0 || slices <= 0) {
            throw ArgumentError("phantom: dims must be positive");
        }
        if (!(femoral_radius > 0.0) || !(trochanter_radius > 0.0) || !(cup_thickness > 0.0) || !(slice_step > 0.0)) {
            throw ArgumentError("phantom: radii must be positive");
        }
        if (cortex_thickness < 1.0 || acetabular_gap < 1.0) {
            throw ArgumentError("phantom: cortex_thickness and acetabular_gap must be >= 1");
        }
        if (!(noise_sigma >= 0.0)) {
            throw ArgumentError("phantom: noise_sigma must be >= 0");
        }
        if (initial_slice < 0 || initial_slice >= slices) {
            throw ArgumentError("phantom: initial_slice outside the volume");
        }
        if (core_fraction < 0.0 || core_fraction >= 1.0) {
            throw ArgumentError("phantom: core_fraction must be in [0, 1)");
        }
        const double outer = femoral_radius + acetabular_gap + cup_thickness;
        if (!(trochanter_elongation >= 1.0)) {
            throw ArgumentError("phantom: trochanter_elongation must be >= 1");
        }
        const Point2 t = trochanter_center();
        const double tr = trochanter_major();
        const bool fits = femoral_center.x - outer >= 1 && femoral_center.x + outer <= width - 2 && femoral_center.y - outer >= 1
            && femoral_center.y + outer <= height - 2 && t.x - tr >= 1 && t.x + tr <= width - 2 && t.y - tr >= 1
            && t.y + tr <= height - 2;
        if (!fits) {
            throw ArgumentError("phantom: structures overflow the slice");
        }
        if (distance(t, femoral_center) - trochanter_radius - femoral_radius < 1.0) {
            throw ArgumentError("phantom: trochanter touches the femoral head");
        }
    }

    Point2 trochanter_center() const
    {
        return {femoral_center.x + lateral_sign(side) * trochanter_offset.x, femoral_center.y - trochanter_offset.y};
    }

    double trochanter_major() const { return trochanter_radius * trochanter_elongation; }

    /// Unit vector of the lobe's long axis: perpendicular to the offset, on the
    /// inferior side.
    Point2 trochanter_axis() const
    {
        const Point2 d{trochanter_center().x - femoral_center.x, trochanter_center().y - femoral_center.y};
        const double n = norm(d);
        if (!(n > 0.0)) {
            return {0.0, -1.0};
        }
        const Point2 u{-d.y / n, d.x / n};
        return u.y <= 0.0 ? u : Point2{-u.x, -u.y};
    }

    /// Point of the lobe outline farthest from the femoral centre, on the
    /// lateral-inferior side.
    Point2 trochanter_apex() const
    {
        const Point2 c = trochanter_center();
        const Point2 u = trochanter_axis();
        const Point2 v{-u.y, u.x};
        const double lat = lateral_sign(side);
        Point2 best = c;
        double best_d = -1.0;
        for (int i = 0; i < 3600; ++i) {
            const double t = 2.0 * std::numbers::pi * i / 3600.0;
            const double a = trochanter_major() * std::cos(t);
            const double b = trochanter_radius * std::sin(t);
            const Point2 p{c.x + u.x * a + v.x * b, c.y + u.y * a + v.y * b};
            const double d = distance(p, femoral_center);
            if ((p.x - femoral_center.x) * lat >= 0.0 && p.y <= femoral_center.y && d > best_d) {
                best_d = d;
                best = p;
            }
        }
        return best;
    }
};

struct PhantomTruth {
    std::vector<LabelMask> labels;
    std::vector<std::optional<CircleModel>> circles; // femoral head section per slice
    int initial_slice = 0;
    int femoral_first = -1; // first/last slice holding femoral head
    int femoral_last = -1;
};

struct Phantom {
    Volume volume;
    PhantomTruth truth;
};

namespace detail {

// splitmix64; used to derive independent per-slice streams.
inline std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Platform-independent normal variates (std::normal_distribution is not).
class NormalStream {
public:
    explicit NormalStream(std::uint64_t seed) : eng_(seed) {}

    double uniform() { return (static_cast<double>(eng_() >> 11) + 0.5) * (1.0 / 9007199254740992.0); }

    double next()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t raw() { return eng_(); }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

struct Island {
    double x, y, z, r;
};

} // namespace detail

inline std::optional<CircleModel> femoral_section(const PhantomSpec &s, int z)
{
    const double dz = (z - s.femoral_z) * s.slice_step;
    const double r2 = s.femoral_radius * s.femoral_radius - dz * dz;
    if (r2 <= 0.0) {
        return std::nullopt;
    }
    return CircleModel{s.femoral_center, std::sqrt(r2), 1.0};
}

inline Phantom gen_phantom(const PhantomSpec &s)
{
    s.validate();
    Phantom ph;
    ph.volume.id = s.id;
    ph.volume.spacing_xy = s.spacing_xy;
    ph.volume.spacing_z = s.spacing_xy * s.slice_step;
    ph.truth.initial_slice = s.initial_slice;

    const double lat = lateral_sign(s.side);
    const double R = s.femoral_radius;
    const double cup_in = R + s.acetabular_gap;
    const double cup_out = cup_in + s.cup_thickness;
    const Point2 tc = s.trochanter_center();
    const Point2 tu = s.trochanter_axis();
    const double t_major = s.trochanter_major();

    std::vector<detail::Island> islands;
    {
        detail::NormalStream rng(detail::mix64(s.rng_seed ^ 0xA5A5A5A5ull));
        while (static_cast<int>(islands.size()) < s.texture_islands) {
            const double x = (2 * rng.uniform() - 1) * R;
            const double y = (2 * rng.uniform() - 1) * R;
            const double z = (2 * rng.uniform() - 1) * R;
            if (std::sqrt(x * x + y * y + z * z) + s.texture_radius < R - s.cortex_thickness - 1.0) {
                islands.push_back({s.femoral_center.x + x, s.femoral_center.y + y, s.femoral_z * s.slice_step + z, s.texture_radius});
            }
        }
    }

    for (int z = 0; z < s.slices; ++z) {
        const double zp = z * s.slice_step;
        const double dz = zp - s.femoral_z * s.slice_step;
        Image<float> img(s.width, s.height);
        LabelMask gt(s.width, s.height, Label::Background);
        detail::NormalStream noise(detail::mix64(s.rng_seed * 0x100000001B3ull + static_cast<std::uint64_t>(z)));
        for (int y = 0; y < s.height; ++y) {
            for (int x = 0; x < s.width; ++x) {
                const double dx = x - s.femoral_center.x;
                const double dy = y - s.femoral_center.y;
                const double d3 = std::sqrt(dx * dx + dy * dy + dz * dz);
                double hu = s.hu_soft;
                Label label = Label::Background;
                if (d3 <= R) {
                    label = Label::FemoralHead;
                    hu = d3 > R - s.cortex_thickness ? s.hu_cortex : (d3 < s.core_fraction * R ? s.hu_core : s.hu_spongy);
                    if (d3 <= R - s.cortex_thickness) {
                        for (const auto &is : islands) {
                            const double ex = x - is.x;
                            const double ey = y - is.y;
                            const double ez = zp - is.z;
                            if (ex * ex + ey * ey + ez * ez <= is.r * is.r) {
                                hu = s.hu_texture;
                                break;
                            }
                        }
                    }
                } else if (dz >= 0.0 && d3 > cup_in && d3 <= cup_out && dx * lat <= s.cup_opening * R) {
                    label = Label::Acetabulum;
                    hu = d3 <= cup_in + s.cortex_thickness ? s.hu_cortex : s.hu_spongy;
                } else if (z <= s.initial_slice) {
                    // Normalised elliptic radius; the shell is thinnest across the minor axis.
                    const double ax = (x - tc.x) * tu.x + (y - tc.y) * tu.y;
                    const double ay = -(x - tc.x) * tu.y + (y - tc.y) * tu.x;
                    const double q = std::hypot(ax / t_major, ay / s.trochanter_radius);
                    if (q <= 1.0) {
                        label = Label::Acetabulum;
                        hu = q > 1.0 - s.cortex_thickness / s.trochanter_radius ? s.hu_cortex : s.hu_spongy;
                    }
                }
                const double n = s.noise_sigma > 0.0 ? s.noise_sigma * noise.next() : 0.0;
                img(x, y) = static_cast<float>(std::round(hu + n));
                gt(x, y) = label;
            }
        }
        ph.volume.slices.push_back(std::move(img));
        ph.truth.labels.push_back(std::move(gt));
        auto sec = femoral_section(s, z);
        if (sec) {
            if (ph.truth.femoral_first < 0) {
                ph.truth.femoral_first = z;
            }
            ph.truth.femoral_last = z;
        }
        ph.truth.circles.push_back(sec);
    }
    return ph;
}

struct Corruption {
    std::vector<LabelMask> labels;
    std::vector<int> corrupted; // slice indices, ascending
};

/// Degrade a deterministic subset of slices: the label raster is shifted by
/// `severity` px in a seeded direction and the femoral-head class dilated by
/// severity / 4 px.
inline Corruption corrupt_labels(const std::vector<LabelMask> &truth, double fraction, double severity, std::uint64_t seed)
{
    if (!(fraction >= 0.0 && fraction <= 1.0)) {
        throw ArgumentError("corrupt_labels: fraction must be in [0, 1]");
    }
    Corruption out{truth, {}};
    const auto count = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(truth.size())));
    std::vector<int> order(truth.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = static_cast<int>(i);
    }
    detail::NormalStream rng(detail::mix64(seed));
    for (std::size_t i = order.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.raw() % i);
        std::swap(order[i - 1], order[j]);
    }
    out.corrupted.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(out.corrupted.begin(), out.corrupted.end());

    const int grow = static_cast<int>(std::lround(severity / 4.0));
    for (int z : out.corrupted) {
        const LabelMask &src = truth[static_cast<std::size_t>(z)];
        const double a = 2.0 * std::numbers::pi * rng.uniform();
        const int sx = static_cast<int>(std::lround(severity * std::cos(a)));
        const int sy = static_cast<int>(std::lround(severity * std::sin(a)));
        LabelMask shifted(src.width(), src.height(), Label::Background);
        for (int y = 0; y < src.height(); ++y) {
            for (int x = 0; x < src.width(); ++x) {
                const int ox = x - sx;
                const int oy = y - sy;
                if (src.contains(ox, oy)) {
                    shifted(x, y) = src(ox, oy);
                }
            }
        }
        LabelMask grown = shifted;
        for (int y = 0; y < src.height(); ++y) {
            for (int x = 0; x < src.width(); ++x) {
                if (shifted(x, y) != Label::FemoralHead) {
                    continue;
                }
                for (int oy = -grow; oy <= grow; ++oy) {
                    for (int ox = -grow; ox <= grow; ++ox) {
                        if (ox * ox + oy * oy <= grow * grow && src.contains(x + ox, y + oy)) {
                            grown(x + ox, y + oy) = Label::FemoralHead;
                        }
                    }
                }
            }
        }
        out.labels[static_cast<std::size_t>(z)] = std::move(grown);
    }
    return out;
}

inline PhantomSpec phantom_spec_from_json(const nlohmann::json &j)
{
    static const std::array<const char *, 23> known{"id", "dims", "spacing_xy_mm", "slice_step_px", "femoral_center", "femoral_radius",
        "cortex_thickness", "acetabular_gap", "cup_thickness", "cup_opening", "trochanter_offset", "trochanter_radius",
        "trochanter_elongation", "initial_slice", "side", "hu_levels", "noise_sigma", "texture_islands", "texture_radius", "hu_texture",
        "core_fraction", "hu_core", "rng_seed"};
    if (!j.is_object()) {
        throw FormatError("phantom spec: expected a JSON object");
    }
    for (const auto &[key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw FormatError("phantom spec: unknown key '" + key + "'");
        }
    }
    PhantomSpec s;
    auto get = [&](const char *key, auto &field) {
        if (j.contains(key)) {
            field = j.at(key).get<std::decay_t<decltype(field)>>();
        }
    };
    auto get_point = [&](const char *key, Point2 &p) {
        if (j.contains(key)) {
            const auto &a = j.at(key);
            p = {a.at(0).get<double>(), a.at(1).get<double>()};
        }
    };
    try {
        get("id", s.id);
        if (j.contains("dims")) {
            const auto &d = j.at("dims");
            s.width = d.at(0).get<int>();
            s.height = d.at(1).get<int>();
            s.slices = d.at(2).get<int>();
        }
        get("spacing_xy_mm", s.spacing_xy);
        get("slice_step_px", s.slice_step);
        if (j.contains("femoral_center")) {
            const auto &c = j.at("femoral_center");
            s.femoral_center = {c.at(0).get<double>(), c.at(1).get<double>()};
            s.femoral_z = c.at(2).get<double>();
        }
        get("femoral_radius", s.femoral_radius);
        get("cortex_thickness", s.cortex_thickness);
        get("acetabular_gap", s.acetabular_gap);
        get("cup_thickness", s.cup_thickness);
        get("cup_opening", s.cup_opening);
        get_point("trochanter_offset", s.trochanter_offset);
        get("trochanter_radius", s.trochanter_radius);
        get("trochanter_elongation", s.trochanter_elongation);
        get("initial_slice", s.initial_slice);
        if (j.contains("side")) {
            s.side = parse_side(j.at("side").get<std::string>());
        }
        if (j.contains("hu_levels")) {
            const auto &h = j.at("hu_levels");
            s.hu_soft = h.value("soft", s.hu_soft);
            s.hu_spongy = h.value("spongy", s.hu_spongy);
            s.hu_cortex = h.value("cortex", s.hu_cortex);
        }
        get("noise_sigma", s.noise_sigma);
        get("texture_islands", s.texture_islands);
        get("texture_radius", s.texture_radius);
        get("hu_texture", s.hu_texture);
        get("core_fraction", s.core_fraction);
        get("hu_core", s.hu_core);
        get("rng_seed", s.rng_seed);
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("phantom spec: ") + e.what());
    }
    s.validate();
    return s;
}

inline nlohmann::json phantom_truth_to_json(const PhantomSpec &s, const PhantomTruth &t)
{
    nlohmann::json circles = nlohmann::json::array();
    for (std::size_t z = 0; z < t.circles.size(); ++z) {
        if (t.circles[z]) {
            circles.push_back({{"slice", z}, {"center", {t.circles[z]->center.x, t.circles[z]->center.y}}, {"radius", t.circles[z]->radius}});
        }
    }
    return {
        {"version", 1},
        {"id", s.id},
        {"side", to_string(s.side)},
        {"initial_slice", t.initial_slice},
        {"femoral_extent", {t.femoral_first, t.femoral_last}},
        {"femoral_radius", s.femoral_radius},
        {"circles", circles},
        {"trochanter_apex", {s.trochanter_apex().x, s.trochanter_apex().y}},
    };
}

} // namespace hipseg
