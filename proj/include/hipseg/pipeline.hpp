#pragma once

// Batch orchestration: bone extraction and acetabulum / femoral-head
// segmentation for a set of volumes, with one config document for all stages.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "hipseg/aar.hpp"
#include "hipseg/bone_extract.hpp"
#include "hipseg/error.hpp"
#include "hipseg/segment.hpp"
#include "hipseg/volume_io.hpp"

namespace hipseg {

struct PipelineConfig {
    GraphCutConfig graph_cut;
    AfsConfig afs;
    std::size_t aar_k = 200;
    double aar_eps = kDefaultUncertaintyEps;
    double metric_spacing = 1.0;

    void validate() const
    {
        graph_cut.validate();
        afs.validate();
        if (!(aar_eps > 0.0)) {
            throw ArgumentError("config: aar.eps must be positive");
        }
        if (!(metric_spacing > 0.0)) {
            throw ArgumentError("config: metrics.spacing must be positive");
        }
    }
};

/// Reads a config document; absent keys keep their defaults and unknown keys
/// are rejected so typos do not pass silently.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json &j)
{
    PipelineConfig c;
    auto check_keys = [](const nlohmann::json &obj, std::initializer_list<const char *> allowed, const std::string &where) {
        if (!obj.is_object()) {
            throw FormatError("config: '" + where + "' must be an object");
        }
        for (const auto &[k, v] : obj.items()) {
            if (std::none_of(allowed.begin(), allowed.end(), [&](const char *a) { return k == a; })) {
                throw FormatError("config: unknown key '" + where + "." + k + "'");
            }
        }
    };
    try {
        check_keys(j, {"version", "graph_cut", "afs", "aar", "metrics"}, "");
        if (j.contains("graph_cut")) {
            const auto &g = j.at("graph_cut");
            check_keys(g, {"lambda", "neighborhood", "unary_scale", "boundary_sigma", "blur_sigma", "seed_margin"}, "graph_cut");
            c.graph_cut.lambda = g.value("lambda", c.graph_cut.lambda);
            c.graph_cut.neighborhood = g.value("neighborhood", c.graph_cut.neighborhood);
            c.graph_cut.unary_scale = g.value("unary_scale", c.graph_cut.unary_scale);
            if (g.contains("boundary_sigma") && !g.at("boundary_sigma").is_null()) {
                c.graph_cut.boundary_sigma = g.at("boundary_sigma").get<double>();
            }
            c.graph_cut.blur_sigma = g.value("blur_sigma", c.graph_cut.blur_sigma);
            c.graph_cut.seed_margin = g.value("seed_margin", c.graph_cut.seed_margin);
        }
        if (j.contains("afs")) {
            const auto &a = j.at("afs");
            check_keys(a, {"side", "initial_slice", "mode", "lnms", "ahs", "rays", "march_step", "max_march_factor", "profile_sigma",
                           "hessian", "hessian_sigma", "hessian_weight", "hough_min_factor", "hough_max_factor", "hough_min_confidence",
                           "hough_min_relative", "edge_sigma", "contour_points", "snake", "stop_min_area_ratio", "stop_min_bone_overlap", "absorb_fraction"},
                       "afs");
            auto &f = c.afs;
            if (a.contains("side")) {
                f.side = parse_side(a.at("side").get<std::string>());
            }
            if (a.contains("initial_slice") && !a.at("initial_slice").is_null()) {
                f.initial_slice = a.at("initial_slice").get<int>();
            }
            if (a.contains("mode")) {
                f.mode = parse_candidate_mode(a.at("mode").get<std::string>());
            }
            f.use_lnms = a.value("lnms", f.use_lnms);
            f.use_ahs = a.value("ahs", f.use_ahs);
            f.n_rays = a.value("rays", f.n_rays);
            f.march_step = a.value("march_step", f.march_step);
            f.max_march_factor = a.value("max_march_factor", f.max_march_factor);
            f.profile_sigma = a.value("profile_sigma", f.profile_sigma);
            f.hessian = a.value("hessian", f.hessian);
            f.hessian_sigma = a.value("hessian_sigma", f.hessian_sigma);
            f.hessian_weight = a.value("hessian_weight", f.hessian_weight);
            f.hough_min_factor = a.value("hough_min_factor", f.hough_min_factor);
            f.hough_max_factor = a.value("hough_max_factor", f.hough_max_factor);
            f.hough_min_confidence = a.value("hough_min_confidence", f.hough_min_confidence);
            f.hough_min_relative = a.value("hough_min_relative", f.hough_min_relative);
            f.edge_sigma = a.value("edge_sigma", f.edge_sigma);
            f.contour_points = a.value("contour_points", f.contour_points);
            f.stop_min_area_ratio = a.value("stop_min_area_ratio", f.stop_min_area_ratio);
            f.stop_min_bone_overlap = a.value("stop_min_bone_overlap", f.stop_min_bone_overlap);
            f.absorb_fraction = a.value("absorb_fraction", f.absorb_fraction);
            if (a.contains("snake")) {
                const auto &s = a.at("snake");
                check_keys(s, {"alpha", "beta", "gamma", "step", "tol", "max_iters", "check_every", "min_spacing"}, "afs.snake");
                auto &p = f.snake;
                p.alpha = s.value("alpha", p.alpha);
                p.beta = s.value("beta", p.beta);
                p.gamma = s.value("gamma", p.gamma);
                p.step = s.value("step", p.step);
                p.tol = s.value("tol", p.tol);
                p.max_iters = s.value("max_iters", p.max_iters);
                p.check_every = s.value("check_every", p.check_every);
                p.min_spacing = s.value("min_spacing", p.min_spacing);
            }
        }
        if (j.contains("aar")) {
            const auto &a = j.at("aar");
            check_keys(a, {"k", "eps"}, "aar");
            c.aar_k = a.value("k", c.aar_k);
            c.aar_eps = a.value("eps", c.aar_eps);
        }
        if (j.contains("metrics")) {
            const auto &m = j.at("metrics");
            check_keys(m, {"spacing"}, "metrics");
            c.metric_spacing = m.value("spacing", c.metric_spacing);
        }
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Stages on one volume

struct BoneResult {
    std::vector<BinaryMask> masks;
    std::vector<int> degenerate_slices; // constant slices, left empty
};

inline BoneResult extract_bone_volume(const Volume &v, const GraphCutConfig &cfg)
{
    cfg.validate();
    BoneResult r;
    r.masks.reserve(v.slices.size());
    for (std::size_t z = 0; z < v.slices.size(); ++z) {
        try {
            r.masks.push_back(extract_bone(to_raster(v.slices[z]), cfg));
        } catch (const DegenerateInputError &) {
            r.masks.emplace_back(v.width(), v.height(), std::uint8_t{0});
            r.degenerate_slices.push_back(static_cast<int>(z));
        }
    }
    return r;
}

inline std::vector<LabelMask> bone_to_labels(const std::vector<BinaryMask> &masks)
{
    std::vector<LabelMask> out;
    out.reserve(masks.size());
    for (const auto &m : masks) {
        out.push_back(binary_to_labels(m));
    }
    return out;
}

inline std::vector<BinaryMask> labels_to_bone(const std::vector<LabelMask> &masks)
{
    std::vector<BinaryMask> out;
    out.reserve(masks.size());
    for (const auto &m : masks) {
        out.push_back(foreground_mask(m));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch

/// One line of structured progress output.
class Logger {
public:
    explicit Logger(std::ostream *out = &std::cerr) : out_(out) {}

    void event(nlohmann::json j)
    {
        if (out_ == nullptr) {
            return;
        }
        std::lock_guard lock(mu_);
        *out_ << j.dump() << "\n";
    }

private:
    std::ostream *out_;
    std::mutex mu_;
};

struct VolumeOutcome {
    std::string id;
    fs::path input;
    bool ok = false;
    std::string error;
    int initial_slice = -1;
    int first_covered = -1;
    int last_covered = -1;
    std::vector<int> degenerate_slices;
};

struct PipelineSummary {
    std::vector<VolumeOutcome> volumes;

    std::size_t failures() const
    {
        return static_cast<std::size_t>(std::count_if(volumes.begin(), volumes.end(), [](const auto &v) { return !v.ok; }));
    }

    /// Timing-free so repeated runs produce identical files.
    nlohmann::json to_json() const
    {
        nlohmann::json vols = nlohmann::json::array();
        for (const auto &v : volumes) {
            nlohmann::json j{{"id", v.id}, {"input", v.input.generic_string()}, {"ok", v.ok}};
            if (v.ok) {
                j["initial_slice"] = v.initial_slice;
                j["covered"] = {v.first_covered, v.last_covered};
                j["degenerate_slices"] = v.degenerate_slices;
            } else {
                j["error"] = v.error;
            }
            vols.push_back(std::move(j));
        }
        return {{"version", 1}, {"volumes", vols}, {"failures", failures()}};
    }
};

/// Output layout under out_root:
///   bone/<id>/slice_NNNN.png     bone masks (0/1)
///   labels/<id>/slice_NNNN.png   acetabulum (2) / femoral head (3) labels
///   summary.json
inline PipelineSummary run_pipeline(const PipelineConfig &cfg, const std::vector<fs::path> &inputs, const fs::path &out_root, int jobs = 1,
                                    Logger *log = nullptr)
{
    cfg.validate();
    PipelineSummary summary;
    summary.volumes.resize(inputs.size());
    std::atomic<std::size_t> next{0};
    using clock = std::chrono::steady_clock;
    auto ms_since = [](clock::time_point t) { return std::chrono::duration<double, std::milli>(clock::now() - t).count(); };

    auto work = [&] {
        for (std::size_t i = next++; i < inputs.size(); i = next++) {
            VolumeOutcome &o = summary.volumes[i];
            o.input = inputs[i];
            o.id = inputs[i].filename().string();
            try {
                auto t0 = clock::now();
                const Volume v = load_volume(inputs[i]);
                if (!v.id.empty()) {
                    o.id = v.id;
                }
                if (log) {
                    log->event({{"event", "stage"}, {"volume", o.id}, {"stage", "load"}, {"ms", ms_since(t0)}});
                }
                t0 = clock::now();
                BoneResult bone = extract_bone_volume(v, cfg.graph_cut);
                o.degenerate_slices = bone.degenerate_slices;
                if (log) {
                    log->event({{"event", "stage"}, {"volume", o.id}, {"stage", "bone"}, {"ms", ms_since(t0)},
                                {"degenerate_slices", bone.degenerate_slices}});
                }
                t0 = clock::now();
                const AfsResult afs = propagate_volume(v, bone.masks, cfg.afs);
                o.initial_slice = afs.initial_slice;
                o.first_covered = afs.first_covered;
                o.last_covered = afs.last_covered;
                if (log) {
                    log->event({{"event", "stage"}, {"volume", o.id}, {"stage", "afs"}, {"ms", ms_since(t0)},
                                {"initial_slice", afs.initial_slice}, {"covered", {afs.first_covered, afs.last_covered}}});
                }
                save_mask_stack(bone_to_labels(bone.masks), out_root / "bone" / o.id);
                save_mask_stack(afs.labels, out_root / "labels" / o.id);
                o.ok = true;
            } catch (const std::exception &e) {
                o.ok = false;
                o.error = e.what();
                if (log) {
                    log->event({{"event", "error"}, {"volume", o.id}, {"message", o.error}});
                }
            }
        }
    };

    const int n = std::max(1, std::min<int>(jobs, static_cast<int>(inputs.size())));
    std::vector<std::thread> pool;
    for (int t = 1; t < n; ++t) {
        pool.emplace_back(work);
    }
    work();
    for (auto &t : pool) {
        t.join();
    }
    fs::create_directories(out_root);
    write_file_atomic(out_root / "summary.json", summary.to_json().dump(2) + "\n");
    return summary;
}

/// Every directory directly under root, sorted, so a broken volume is reported
/// rather than skipped; a root that is itself a volume yields just that volume.
inline std::vector<fs::path> discover_volumes(const fs::path &root)
{
    if (fs::is_regular_file(root / "meta.json")) {
        return {root};
    }
    if (!fs::is_directory(root)) {
        throw FormatError("input is not a directory: " + root.string());
    }
    std::vector<fs::path> out;
    for (const auto &e : fs::directory_iterator(root)) {
        if (e.is_directory()) {
            out.push_back(e.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace hipseg
