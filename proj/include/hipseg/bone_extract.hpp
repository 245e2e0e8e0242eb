#pragma once

// Bone extraction: seeded graph cut of a CT slice into bone / soft tissue.
//
// E(M) = sum_p R_p(M(p)) + lambda * sum_{(p,q) in N, M(p) != M(q)} B(p,q)
//   R_p(l)  = unary_scale * |I(p) - mu_l|, mu_l the mean intensity of class-l seeds
//   B(p,q)  = exp(-(I(p) - I(q))^2 / (2 boundary_sigma^2))
// Seeded pixels are hard constraints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <queue>
#include <vector>

#include "hipseg/error.hpp"
#include "hipseg/image.hpp"
#include "hipseg/image_ops.hpp"

namespace hipseg {

enum class Seed : std::uint8_t {
    Unknown = 0,
    Foreground = 1,
    Background = 2,
};

using SeedMap = Image<Seed>;

struct GraphCutConfig {
    double lambda = 2.0;
    int neighborhood = 8;
    double unary_scale = 1.0;
    /// Unset means: robust standard deviation of neighbour differences.
    std::optional<double> boundary_sigma;
    double blur_sigma = kDefaultBlurSigma;
    double seed_margin = 0.0;

    void validate() const
    {
        if (!(lambda >= 0.0)) {
            throw ArgumentError("graph cut: lambda must be >= 0");
        }
        if (neighborhood != 4 && neighborhood != 8) {
            throw ArgumentError("graph cut: neighborhood must be 4 or 8");
        }
        if (!(unary_scale > 0.0)) {
            throw ArgumentError("graph cut: unary_scale must be > 0");
        }
        if (boundary_sigma && !(*boundary_sigma > 0.0)) {
            throw ArgumentError("graph cut: boundary_sigma must be > 0");
        }
        if (!(blur_sigma > 0.0)) {
            throw ArgumentError("graph cut: blur sigma must be > 0");
        }
        if (!(seed_margin >= 0.0)) {
            throw ArgumentError("graph cut: seed margin must be >= 0");
        }
    }
};

/// Pixels >= t + margin are foreground seeds, pixels <= t - margin (and not
/// already foreground) are background seeds, the rest unknown.
inline SeedMap build_seed_map(const Raster &s, double threshold, double margin = 0.0)
{
    return map_image<Seed>(s, [=](double v) {
        if (v >= threshold + margin) {
            return Seed::Foreground;
        }
        if (v <= threshold - margin) {
            return Seed::Background;
        }
        return Seed::Unknown;
    });
}

namespace detail {

struct NeighborOffset {
    int dx;
    int dy;
};

// Forward half of the neighbourhood so every unordered pair is visited once.
inline std::span<const NeighborOffset> forward_neighbors(int neighborhood)
{
    static constexpr NeighborOffset n8[] = {{1, 0}, {0, 1}, {1, 1}, {-1, 1}};
    return {n8, neighborhood == 8 ? std::size_t{4} : std::size_t{2}};
}

} // namespace detail

/// Robust (MAD-based) standard deviation of 4-neighbour intensity differences.
inline double robust_difference_sigma(const Raster &s)
{
    std::vector<double> diffs;
    diffs.reserve(s.size() * 2);
    for (int y = 0; y < s.height(); ++y) {
        for (int x = 0; x < s.width(); ++x) {
            if (x + 1 < s.width()) {
                diffs.push_back(std::abs(s(x + 1, y) - s(x, y)));
            }
            if (y + 1 < s.height()) {
                diffs.push_back(std::abs(s(x, y + 1) - s(x, y)));
            }
        }
    }
    if (diffs.empty()) {
        return 1.0;
    }
    auto mid = diffs.begin() + static_cast<std::ptrdiff_t>(diffs.size() / 2);
    std::nth_element(diffs.begin(), mid, diffs.end());
    double sigma = 1.4826 * *mid;
    if (sigma > 0.0) {
        return sigma;
    }
    double sq = 0.0;
    for (double d : diffs) {
        sq += d * d;
    }
    sigma = std::sqrt(sq / static_cast<double>(diffs.size()));
    return sigma > 0.0 ? sigma : 1.0;
}

/// Class intensity means estimated from the seeds. A class without seeds has
/// no mean.
struct ClassModel {
    std::optional<double> mu_fg;
    std::optional<double> mu_bg;
};

inline ClassModel estimate_class_model(const Raster &s, const SeedMap &seeds)
{
    double sf = 0.0;
    double sb = 0.0;
    std::size_t nf = 0;
    std::size_t nb = 0;
    auto px = s.pixels();
    auto sd = seeds.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) {
        if (sd[i] == Seed::Foreground) {
            sf += px[i];
            ++nf;
        } else if (sd[i] == Seed::Background) {
            sb += px[i];
            ++nb;
        }
    }
    ClassModel m;
    if (nf > 0) {
        m.mu_fg = sf / static_cast<double>(nf);
    }
    if (nb > 0) {
        m.mu_bg = sb / static_cast<double>(nb);
    }
    return m;
}

/// Fully resolved energy terms for one slice.
struct EnergyTerms {
    ClassModel model;
    double unary_scale = 1.0;
    double lambda = 0.0;
    double boundary_sigma = 1.0;
    int neighborhood = 8;

    double unary(double v, bool fg) const
    {
        const auto &mu = fg ? model.mu_fg : model.mu_bg;
        return mu ? unary_scale * std::abs(v - *mu) : 0.0;
    }

    double boundary(double a, double b) const
    {
        const double d = a - b;
        return std::exp(-(d * d) / (2.0 * boundary_sigma * boundary_sigma));
    }
};

inline EnergyTerms resolve_energy_terms(const Raster &s, const SeedMap &seeds, const GraphCutConfig &cfg)
{
    cfg.validate();
    if (!s.same_shape(seeds)) {
        throw ArgumentError("graph cut: seed map and slice differ in shape");
    }
    EnergyTerms t;
    t.model = estimate_class_model(s, seeds);
    t.unary_scale = cfg.unary_scale;
    t.lambda = cfg.lambda;
    t.boundary_sigma = cfg.boundary_sigma.value_or(robust_difference_sigma(s));
    t.neighborhood = cfg.neighborhood;
    return t;
}

inline double energy(const BinaryMask &labeling, const Raster &s, const SeedMap &seeds, const EnergyTerms &terms)
{
    if (!labeling.same_shape(s) || !seeds.same_shape(s)) {
        throw ArgumentError("energy: labeling, slice and seeds must share dimensions");
    }
    double unary = 0.0;
    double pairwise = 0.0;
    for (int y = 0; y < s.height(); ++y) {
        for (int x = 0; x < s.width(); ++x) {
            const bool fg = labeling(x, y) != 0;
            const Seed sd = seeds(x, y);
            if ((sd == Seed::Foreground && !fg) || (sd == Seed::Background && fg)) {
                throw SeedViolationError("energy: labeling contradicts a hard seed");
            }
            unary += terms.unary(s(x, y), fg);
            for (auto [dx, dy] : detail::forward_neighbors(terms.neighborhood)) {
                const int nx = x + dx;
                const int ny = y + dy;
                if (s.contains(nx, ny) && (labeling(nx, ny) != 0) != fg) {
                    pairwise += terms.boundary(s(x, y), s(nx, ny));
                }
            }
        }
    }
    return unary + terms.lambda * pairwise;
}

inline double energy(const BinaryMask &labeling, const Raster &s, const SeedMap &seeds, const GraphCutConfig &cfg)
{
    return energy(labeling, s, seeds, resolve_energy_terms(s, seeds, cfg));
}

/// s-t flow network with Dinic's max-flow. Nodes are 0..n-1; the source and
/// sink are implicit terminals reached through per-node terminal capacities.
class FlowNetwork {
public:
    explicit FlowNetwork(int num_nodes)
        : n_(num_nodes + 2), source_(num_nodes), sink_(num_nodes + 1), head_(static_cast<std::size_t>(n_), -1)
    {
        if (num_nodes < 0) {
            throw ArgumentError("flow network: negative node count");
        }
    }

    int num_nodes() const { return n_ - 2; }
    int source() const { return source_; }
    int sink() const { return sink_; }

    /// Adds arc u->v with capacity `cap` and v->u with `rev_cap`.
    void add_edge(int u, int v, double cap, double rev_cap = 0.0)
    {
        if (!(cap >= 0.0) || !(rev_cap >= 0.0)) {
            throw ArgumentError("flow network: capacities must be non-negative");
        }
        add_arc(u, v, cap);
        add_arc(v, u, rev_cap);
    }

    /// Capacity from the source to `u` and from `u` to the sink.
    void add_terminal(int u, double source_cap, double sink_cap)
    {
        if (source_cap > 0.0) {
            add_edge(source_, u, source_cap);
        }
        if (sink_cap > 0.0) {
            add_edge(u, sink_, sink_cap);
        }
    }

    double max_flow()
    {
        double total = 0.0;
        level_.assign(static_cast<std::size_t>(n_), -1);
        iter_.assign(static_cast<std::size_t>(n_), -1);
        while (bfs()) {
            for (int v = 0; v < n_; ++v) {
                iter_[static_cast<std::size_t>(v)] = head_[static_cast<std::size_t>(v)];
            }
            while (true) {
                const double f = dfs(source_, std::numeric_limits<double>::infinity());
                if (!(f > 0.0)) {
                    break;
                }
                total += f;
            }
        }
        flow_ = total;
        solved_ = true;
        return total;
    }

    /// After max_flow: true if `u` is reachable from the source in the residual
    /// graph, i.e. lies on the source side of the minimal-source-set min cut.
    bool on_source_side(int u) const
    {
        if (!solved_) {
            throw ArgumentError("flow network: max_flow has not been run");
        }
        return level_[static_cast<std::size_t>(u)] >= 0;
    }

    double flow_value() const { return flow_; }

private:
    struct Arc {
        int to;
        int next;
        double cap;
    };

    static constexpr double kEps = 1e-12;

    void add_arc(int u, int v, double cap)
    {
        arcs_.push_back({v, head_[static_cast<std::size_t>(u)], cap});
        head_[static_cast<std::size_t>(u)] = static_cast<int>(arcs_.size()) - 1;
    }

    bool bfs()
    {
        std::fill(level_.begin(), level_.end(), -1);
        std::queue<int> q;
        level_[static_cast<std::size_t>(source_)] = 0;
        q.push(source_);
        while (!q.empty()) {
            const int u = q.front();
            q.pop();
            for (int e = head_[static_cast<std::size_t>(u)]; e != -1; e = arcs_[static_cast<std::size_t>(e)].next) {
                const Arc &a = arcs_[static_cast<std::size_t>(e)];
                if (a.cap > kEps && level_[static_cast<std::size_t>(a.to)] < 0) {
                    level_[static_cast<std::size_t>(a.to)] = level_[static_cast<std::size_t>(u)] + 1;
                    q.push(a.to);
                }
            }
        }
        return level_[static_cast<std::size_t>(sink_)] >= 0;
    }

    double dfs(int u, double pushed)
    {
        if (u == sink_) {
            return pushed;
        }
        for (int &e = iter_[static_cast<std::size_t>(u)]; e != -1; e = arcs_[static_cast<std::size_t>(e)].next) {
            Arc &a = arcs_[static_cast<std::size_t>(e)];
            if (a.cap > kEps && level_[static_cast<std::size_t>(a.to)] == level_[static_cast<std::size_t>(u)] + 1) {
                const double d = dfs(a.to, std::min(pushed, a.cap));
                if (d > 0.0) {
                    a.cap -= d;
                    arcs_[static_cast<std::size_t>(e ^ 1)].cap += d;
                    return d;
                }
            }
        }
        return 0.0;
    }

    int n_;
    int source_;
    int sink_;
    std::vector<int> head_;
    std::vector<Arc> arcs_;
    std::vector<int> level_;
    std::vector<int> iter_;
    double flow_ = 0.0;
    bool solved_ = false;
};

/// Flow network for one slice; node index = y * width + x.
struct GridNetwork {
    int width = 0;
    int height = 0;
    FlowNetwork net{0};
};

inline GridNetwork build_network(const Raster &s, const SeedMap &seeds, const EnergyTerms &terms)
{
    if (!s.same_shape(seeds)) {
        throw ArgumentError("graph cut: seed map and slice differ in shape");
    }
    const bool has_unknown = std::any_of(seeds.pixels().begin(), seeds.pixels().end(), [](Seed v) { return v == Seed::Unknown; });
    if (has_unknown && (!terms.model.mu_fg || !terms.model.mu_bg)) {
        throw DegenerateInputError("graph cut: need at least one foreground and one background seed");
    }

    const int w = s.width();
    const int h = s.height();
    GridNetwork g{w, h, FlowNetwork(w * h)};

    // Hard-seed capacity exceeds any finite cut.
    double finite_total = 1.0;
    std::vector<double> cap_to_source(s.size(), 0.0);
    std::vector<double> cap_to_sink(s.size(), 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto i = static_cast<std::size_t>(y * w + x);
            const double v = s(x, y);
            // Cutting source->p labels p background; cutting p->sink labels it foreground.
            cap_to_source[i] = terms.unary(v, false);
            cap_to_sink[i] = terms.unary(v, true);
            finite_total += cap_to_source[i] + cap_to_sink[i];
            for (auto [dx, dy] : detail::forward_neighbors(terms.neighborhood)) {
                const int nx = x + dx;
                const int ny = y + dy;
                if (!s.contains(nx, ny)) {
                    continue;
                }
                const double b = terms.lambda * terms.boundary(v, s(nx, ny));
                finite_total += 2 * b;
                if (b > 0.0) {
                    g.net.add_edge(static_cast<int>(i), ny * w + nx, b, b);
                }
            }
        }
    }
    const double hard = 2.0 * finite_total;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto i = static_cast<std::size_t>(y * w + x);
            double src = cap_to_source[i];
            double snk = cap_to_sink[i];
            if (seeds(x, y) == Seed::Foreground) {
                src = hard;
                snk = 0.0;
            } else if (seeds(x, y) == Seed::Background) {
                src = 0.0;
                snk = hard;
            } else {
                const double common = std::min(src, snk);
                src -= common;
                snk -= common;
            }
            g.net.add_terminal(static_cast<int>(i), src, snk);
        }
    }
    return g;
}

/// Minimum-energy labeling (source side = foreground).
inline BinaryMask solve_mincut(GridNetwork &g)
{
    g.net.max_flow();
    BinaryMask out(g.width, g.height, 0);
    for (int y = 0; y < g.height; ++y) {
        for (int x = 0; x < g.width; ++x) {
            out(x, y) = g.net.on_source_side(y * g.width + x) ? 1 : 0;
        }
    }
    return out;
}

inline BinaryMask graph_cut(const Raster &s, const SeedMap &seeds, const GraphCutConfig &cfg)
{
    const EnergyTerms terms = resolve_energy_terms(s, seeds, cfg);
    GridNetwork g = build_network(s, seeds, terms);
    return solve_mincut(g);
}

/// Blur, Otsu threshold, seed, and cut one slice. Returns the bone mask.
inline BinaryMask extract_bone(const Raster &slice, const GraphCutConfig &cfg = {})
{
    cfg.validate();
    // The blur only stabilises the threshold; seeding and the cut see the raw
    // slice so edges are not dilated by the smoothing kernel.
    const double t = otsu_threshold(gaussian_blur(slice, cfg.blur_sigma));
    const SeedMap seeds = build_seed_map(slice, t, cfg.seed_margin);
    return graph_cut(slice, seeds, cfg);
}

} // namespace hipseg
