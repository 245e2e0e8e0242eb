#pragma once

// Test helpers and brute-force oracles. The oracles deliberately avoid the
// library's own algorithms so they can check them.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "hipseg/image.hpp"

namespace hipseg::test {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string &tag = "hipseg")
    {
        std::random_device rd;
        const auto base = fs::temp_directory_path();
        for (int attempt = 0; attempt < 100; ++attempt) {
            path_ = base / (tag + "-" + std::to_string(rd()));
            if (fs::create_directories(path_)) {
                return;
            }
        }
        throw std::runtime_error("cannot create temp dir");
    }
    ~TempDir()
    {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir &) = delete;
    TempDir &operator=(const TempDir &) = delete;

    const fs::path &path() const { return path_; }
    fs::path operator/(const std::string &rel) const { return path_ / rel; }

private:
    fs::path path_;
};

inline BinaryMask random_mask(std::mt19937_64 &rng, int w, int h, double p)
{
    std::bernoulli_distribution on(p);
    BinaryMask m(w, h, 0);
    for (auto &v : m.pixels()) {
        v = on(rng) ? 1 : 0;
    }
    return m;
}

inline BinaryMask disk_mask(int w, int h, Point2 c, double r)
{
    BinaryMask m(w, h, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            m(x, y) = std::hypot(x - c.x, y - c.y) <= r ? 1 : 0;
        }
    }
    return m;
}

// --- Otsu ----------------------------------------------------------------

/// Between-class variance scan in floating point over every split of a
/// 256-bin histogram; returns the lower-class end bin, lowest on ties within
/// relative 1e-12.
inline int otsu_bin_oracle(const std::array<std::uint64_t, 256> &counts)
{
    double total = 0, mean_total = 0;
    for (int b = 0; b < 256; ++b) {
        total += static_cast<double>(counts[b]);
        mean_total += static_cast<double>(counts[b]) * b;
    }
    int best = -1;
    double best_v = -1;
    for (int k = 0; k < 255; ++k) {
        double w0 = 0, m0 = 0;
        for (int b = 0; b <= k; ++b) {
            w0 += static_cast<double>(counts[b]);
            m0 += static_cast<double>(counts[b]) * b;
        }
        const double w1 = total - w0;
        if (w0 == 0 || w1 == 0) {
            continue;
        }
        const double mu0 = m0 / w0;
        const double mu1 = (mean_total - m0) / w1;
        const double v = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (v > best_v * (1 + 1e-12)) {
            best_v = v;
            best = k;
        }
    }
    return best;
}

// --- geometry ------------------------------------------------------------

/// Hull vertices by the O(n^3) edge test: (p, q) is a hull edge when every
/// other point lies on one side of it. Returns vertices sorted by (x, y).
inline std::vector<Point2> hull_oracle(const std::vector<Point2> &pts)
{
    std::vector<Point2> u = pts;
    std::sort(u.begin(), u.end(), [](Point2 a, Point2 b) { return a.x != b.x ? a.x < b.x : a.y < b.y; });
    u.erase(std::unique(u.begin(), u.end()), u.end());
    if (u.size() < 3) {
        return u;
    }
    std::vector<Point2> out;
    for (std::size_t i = 0; i < u.size(); ++i) {
        bool vertex = false;
        for (std::size_t j = 0; j < u.size() && !vertex; ++j) {
            if (i == j) {
                continue;
            }
            const Point2 d = u[j] - u[i];
            bool left = true;
            for (std::size_t k = 0; k < u.size() && left; ++k) {
                if (k == i || k == j) {
                    continue;
                }
                const Point2 e = u[k] - u[i];
                const double c = cross(d, e);
                // strictly left, or collinear but strictly between i and j
                if (c < 0 || (c == 0 && !(dot(e, d) > 0 && dot(e, d) < dot(d, d)))) {
                    left = false;
                }
            }
            vertex = left;
        }
        if (vertex) {
            out.push_back(u[i]);
        }
    }
    return out;
}

// --- metrics -------------------------------------------------------------

inline double dice_oracle(const BinaryMask &a, const BinaryMask &b)
{
    std::size_t na = 0, nb = 0, both = 0;
    for (int y = 0; y < a.height(); ++y) {
        for (int x = 0; x < a.width(); ++x) {
            na += a(x, y) != 0;
            nb += b(x, y) != 0;
            both += a(x, y) != 0 && b(x, y) != 0;
        }
    }
    return na + nb == 0 ? 1.0 : 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

/// Foreground pixels with a 4-neighbour outside the mask or the image.
inline std::vector<Point2> boundary_oracle(const BinaryMask &m)
{
    std::vector<Point2> out;
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            if (m(x, y) == 0) {
                continue;
            }
            bool edge = false;
            for (auto [dx, dy] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
                const int nx = x + dx, ny = y + dy;
                edge = edge || !m.contains(nx, ny) || m(nx, ny) == 0;
            }
            if (edge) {
                out.push_back({static_cast<double>(x), static_cast<double>(y)});
            }
        }
    }
    return out;
}

/// Mean of the two directed mean boundary distances, by all-pairs search.
inline double assd_oracle(const BinaryMask &a, const BinaryMask &b, double spacing = 1.0)
{
    const auto ba = boundary_oracle(a);
    const auto bb = boundary_oracle(b);
    auto nearest = [](Point2 p, const std::vector<Point2> &set) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto &q : set) {
            best = std::min(best, distance(p, q));
        }
        return best;
    };
    double sab = 0, sba = 0;
    for (const auto &p : ba) {
        sab += nearest(p, bb);
    }
    for (const auto &p : bb) {
        sba += nearest(p, ba);
    }
    return spacing * (sab / static_cast<double>(ba.size()) + sba / static_cast<double>(bb.size())) / 2.0;
}

// --- graph cut -----------------------------------------------------------

/// Energy of a labeling for the seeded grid energy, computed directly.
struct GridEnergy {
    int w = 0, h = 0;
    std::vector<double> img;
    std::vector<int> seed; // 0 unknown, 1 fg, 2 bg
    double mu_fg = 0, mu_bg = 0, lambda = 0, sigma = 1, unary_scale = 1;
    int neighborhood = 4;

    double operator()(const std::vector<int> &lab) const
    {
        double e = 0;
        for (int i = 0; i < w * h; ++i) {
            e += unary_scale * std::abs(img[i] - (lab[i] ? mu_fg : mu_bg));
        }
        std::vector<std::pair<int, int>> offs{{1, 0}, {0, 1}};
        if (neighborhood == 8) {
            offs.push_back({1, 1});
            offs.push_back({-1, 1});
        }
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                for (auto [dx, dy] : offs) {
                    const int nx = x + dx, ny = y + dy;
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h) {
                        continue;
                    }
                    const int i = y * w + x, j = ny * w + nx;
                    if (lab[i] != lab[j]) {
                        const double d = img[i] - img[j];
                        e += lambda * std::exp(-d * d / (2 * sigma * sigma));
                    }
                }
            }
        }
        return e;
    }

    /// Minimum over all labelings consistent with the seeds.
    double exhaustive_min() const
    {
        std::vector<int> free;
        std::vector<int> lab(static_cast<std::size_t>(w * h), 0);
        for (int i = 0; i < w * h; ++i) {
            if (seed[i] == 0) {
                free.push_back(i);
            } else {
                lab[i] = seed[i] == 1 ? 1 : 0;
            }
        }
        double best = std::numeric_limits<double>::infinity();
        for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << free.size()); ++bits) {
            for (std::size_t k = 0; k < free.size(); ++k) {
                lab[free[k]] = static_cast<int>((bits >> k) & 1);
            }
            best = std::min(best, (*this)(lab));
        }
        return best;
    }
};

} // namespace hipseg::test
