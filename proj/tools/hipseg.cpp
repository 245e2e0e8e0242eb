// hipseg command line: one subcommand per pipeline stage plus batch and review modes.

#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "hipseg/aar.hpp"
#include "hipseg/bone_extract.hpp"
#include "hipseg/metrics.hpp"
#include "hipseg/phantom.hpp"
#include "hipseg/pipeline.hpp"
#include "hipseg/review_server.hpp"
#include "hipseg/segment.hpp"
#include "hipseg/volume_io.hpp"

namespace {

using namespace hipseg;

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

struct Common {
    bool quiet = false;
};

void say(const Common &c, const std::string &msg)
{
    if (!c.quiet) {
        std::cerr << msg << "\n";
    }
}

PipelineConfig load_config(const std::string &path)
{
    if (path.empty()) {
        return PipelineConfig{};
    }
    return pipeline_config_from_json(read_json_file(path));
}

int cmd_phantom_gen(const Common &c, const std::string &spec_path, const std::string &out, double corrupt_fraction, double severity,
                    std::uint64_t corrupt_seed)
{
    const PhantomSpec spec = spec_path.empty() ? PhantomSpec{} : phantom_spec_from_json(read_json_file(spec_path));
    const Phantom ph = gen_phantom(spec);
    const fs::path root(out);
    save_volume(ph.volume, root / "volumes" / spec.id);
    save_mask_stack(ph.truth.labels, root / "gt" / spec.id);
    nlohmann::json truth = phantom_truth_to_json(spec, ph.truth);
    if (corrupt_fraction > 0.0) {
        const Corruption cor = corrupt_labels(ph.truth.labels, corrupt_fraction, severity, corrupt_seed);
        save_mask_stack(cor.labels, root / "corrupted" / spec.id);
        truth["corrupted_slices"] = cor.corrupted;
    }
    write_file_atomic(root / "truth.json", truth.dump(2) + "\n");
    say(c, "phantom " + spec.id + ": " + std::to_string(spec.slices) + " slices written to " + root.string());
    return 0;
}

int cmd_extract_bone(const Common &c, const std::string &in, const std::string &out, const GraphCutConfig &cfg)
{
    const Volume v = load_volume(in);
    const BoneResult r = extract_bone_volume(v, cfg);
    for (int z : r.degenerate_slices) {
        std::cerr << "warning: slice " << z << " is constant; empty bone mask written\n";
    }
    save_mask_stack(bone_to_labels(r.masks), out);
    say(c, "bone masks for " + std::to_string(v.num_slices()) + " slices written to " + out);
    return 0;
}

int cmd_segment_afs(const Common &c, const std::string &in, const std::string &bone_dir, const std::string &out, const AfsConfig &cfg)
{
    const Volume v = load_volume(in);
    const auto bone = labels_to_bone(load_mask_stack(bone_dir));
    const AfsResult r = propagate_volume(v, bone, cfg);
    save_mask_stack(r.labels, out);
    const auto &rc = r.initial.recovered;
    char buf[200];
    std::snprintf(buf, sizeof buf, "initial slice %d: femoral circle (%.2f, %.2f) r=%.2f; covered slices %d..%d", r.initial_slice,
                  rc.center.x, rc.center.y, rc.radius, r.first_covered, r.last_covered);
    say(c, buf);
    for (const auto &n : r.notes) {
        say(c, "  " + n);
    }
    return 0;
}

int cmd_aar_rank(const Common &c, const std::string &labels, const std::string &preds, std::size_t k, double eps, const std::string &out,
                 const std::string &created)
{
    const auto pairs = load_sample_pairs(labels, preds);
    Worklist w;
    w.created = created.empty() ? iso_timestamp_now() : created;
    w.entries = rank_and_select(pairs, k, eps);
    save_worklist(w, out);
    char buf[160];
    std::snprintf(buf, sizeof buf, "selected %zu of %zu samples (%.1f%%) -> %s", k, pairs.size(),
                  pairs.empty() ? 0.0 : 100.0 * selection_ratio(k, pairs.size()), out.c_str());
    say(c, buf);
    return 0;
}

int cmd_aar_merge(const Common &c, const std::string &worklist, const std::string &labels)
{
    const fs::path wp(worklist);
    const MergeSummary s = merge_corrections(labels, load_worklist(wp), wp.has_parent_path() ? wp.parent_path() : fs::path("."));
    say(c, "replaced " + std::to_string(s.replaced) + ", accepted " + std::to_string(s.accepted) + ", pending " + std::to_string(s.pending));
    return 0;
}

int cmd_eval(const Common &c, const std::string &pred, const std::string &gt, double spacing, const std::string &out)
{
    const EvalReport r = evaluate(pred, gt, spacing);
    if (!out.empty()) {
        write_file_atomic(out, r.to_json().dump(2) + "\n");
    }
    if (!c.quiet) {
        std::cout << r.table();
    }
    return 0;
}

int cmd_run_all(const Common &c, const std::string &in, const std::string &out, const std::string &config, int jobs)
{
    const PipelineConfig cfg = load_config(config);
    Logger log(c.quiet ? nullptr : &std::cerr);
    const auto inputs = discover_volumes(in);
    const PipelineSummary s = run_pipeline(cfg, inputs, out, jobs, &log);
    for (const auto &v : s.volumes) {
        if (!v.ok) {
            std::cerr << "failed: " << v.id << ": " << v.error << "\n";
        }
    }
    say(c, std::to_string(s.volumes.size() - s.failures()) + " of " + std::to_string(s.volumes.size()) + " volumes succeeded");
    return s.failures() == 0 ? 0 : 1;
}

int cmd_review_serve(const Common &c, const ReviewPaths &paths, const std::string &host, int port)
{
    ReviewServer server(paths);
    const int bound = server.start(host, port);
    say(c, "review server listening on http://" + host + ":" + std::to_string(bound));
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    server.stop();
    return 0;
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Hip CT annotation synthesis: bone extraction, acetabulum / femoral head segmentation, annotation refinement"};
    app.require_subcommand(1);
    Common common;
    app.add_flag("-q,--quiet", common.quiet, "Suppress progress output");

    // phantom-gen
    std::string spec_path, phantom_out;
    double corrupt_fraction = 0.0, severity = 8.0;
    std::uint64_t corrupt_seed = 1;
    auto *pg = app.add_subcommand("phantom-gen", "Generate a synthetic hip volume with ground truth");
    pg->add_option("--spec", spec_path, "Phantom spec JSON (defaults when omitted)")->check(CLI::ExistingFile);
    pg->add_option("--out", phantom_out, "Output directory")->required();
    pg->add_option("--corrupt-fraction", corrupt_fraction, "Also write corrupted labels for this fraction of slices")->check(CLI::Range(0.0, 1.0));
    pg->add_option("--severity", severity, "Corruption boundary shift in px")->check(CLI::PositiveNumber);
    pg->add_option("--corrupt-seed", corrupt_seed, "Corruption seed");

    // extract-bone
    std::string eb_in, eb_out;
    GraphCutConfig gc;
    double boundary_sigma = 0.0;
    auto *eb = app.add_subcommand("extract-bone", "Seeded graph-cut bone masks for every slice");
    eb->add_option("--in", eb_in, "Volume directory")->required()->check(CLI::ExistingDirectory);
    eb->add_option("--out", eb_out, "Mask directory")->required();
    eb->add_option("--lambda", gc.lambda, "Boundary term weight")->capture_default_str();
    eb->add_option("--sigma", boundary_sigma, "Boundary term sigma in HU (default: robust estimate per slice)");
    eb->add_option("--neighborhood", gc.neighborhood, "4 or 8")->check(CLI::IsMember({4, 8}))->capture_default_str();
    eb->add_option("--blur", gc.blur_sigma, "Gaussian blur sigma before Otsu (px)")->capture_default_str();
    eb->add_option("--seed-margin", gc.seed_margin, "HU band around the threshold left unseeded")->capture_default_str();

    // segment-afs
    std::string sa_in, sa_bone, sa_out, side = "right", mode = "fsg", sa_config;
    int initial_slice = -1, rays = 180;
    bool no_lnms = false, no_ahs = false, hessian = false;
    auto *sa = app.add_subcommand("segment-afs", "Split bone masks into acetabulum and femoral head");
    sa->add_option("--in", sa_in, "Volume directory")->required()->check(CLI::ExistingDirectory);
    sa->add_option("--bone", sa_bone, "Bone mask directory")->required()->check(CLI::ExistingDirectory);
    sa->add_option("--out", sa_out, "Label directory")->required();
    sa->add_option("--side", side, "Hip side")->check(CLI::IsMember({"left", "right"}))->capture_default_str();
    sa->add_option("--initial-slice", initial_slice, "Initial slice (auto-detected when omitted)");
    sa->add_option("--mode", mode, "Candidate criterion")->check(CLI::IsMember({"fsg", "second_only"}))->capture_default_str();
    sa->add_flag("--no-lnms", no_lnms, "Disable line-based suppression");
    sa->add_flag("--no-ahs", no_ahs, "Pick the most confident Hough circle instead of the anatomy-radius one");
    sa->add_flag("--hessian", hessian, "Apply Hessian contrast enhancement before ray sampling");
    sa->add_option("--rays", rays, "Number of rays")->capture_default_str();
    sa->add_option("--config", sa_config, "Pipeline config JSON; flags above override its afs section")->check(CLI::ExistingFile);

    // aar-rank
    std::string ar_labels, ar_preds, ar_out, ar_created;
    std::size_t k = 200;
    double eps = kDefaultUncertaintyEps;
    auto *ar = app.add_subcommand("aar-rank", "Rank samples by label / prediction disagreement");
    ar->add_option("--labels", ar_labels, "Pseudo-label store")->required()->check(CLI::ExistingDirectory);
    ar->add_option("--preds", ar_preds, "Prediction store")->required()->check(CLI::ExistingDirectory);
    ar->add_option("--k", k, "Number of samples to select")->required();
    ar->add_option("--eps", eps, "Uncertainty epsilon")->check(CLI::PositiveNumber)->capture_default_str();
    ar->add_option("--out", ar_out, "Worklist JSON")->required();
    ar->add_option("--created", ar_created, "Timestamp recorded in the worklist (default: now)");

    // aar-merge
    std::string am_worklist, am_labels;
    auto *am = app.add_subcommand("aar-merge", "Merge reviewed corrections into the label store");
    am->add_option("--worklist", am_worklist, "Worklist JSON")->required()->check(CLI::ExistingFile);
    am->add_option("--labels", am_labels, "Pseudo-label store")->required()->check(CLI::ExistingDirectory);

    // eval
    std::string ev_pred, ev_gt, ev_out;
    double spacing = 1.0;
    auto *ev = app.add_subcommand("eval", "Dice and average Hausdorff distance per class");
    ev->add_option("--pred", ev_pred, "Predicted label store")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--gt", ev_gt, "Ground-truth label store")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--spacing", spacing, "Pixel spacing in mm (distances in px when omitted)")->check(CLI::PositiveNumber);
    ev->add_option("--out", ev_out, "Report JSON");

    // run-all
    std::string ra_in, ra_out, ra_config;
    int jobs = 1;
    auto *ra = app.add_subcommand("run-all", "Bone extraction and segmentation for every volume under a directory");
    ra->add_option("--in", ra_in, "Volume directory, or a directory of volume directories")->required()->check(CLI::ExistingDirectory);
    ra->add_option("--out", ra_out, "Output root")->required();
    ra->add_option("--config", ra_config, "Pipeline config JSON")->check(CLI::ExistingFile);
    ra->add_option("--jobs", jobs, "Volumes processed in parallel")->check(CLI::PositiveNumber)->capture_default_str();

    // review-serve
    ReviewPaths rp;
    std::string rs_worklist, rs_labels, rs_preds, rs_volumes, rs_ui, host = "127.0.0.1";
    int port = 8080;
    auto *rs = app.add_subcommand("review-serve", "Serve the review API and UI for a worklist");
    rs->add_option("--worklist", rs_worklist, "Worklist JSON")->required()->check(CLI::ExistingFile);
    rs->add_option("--labels", rs_labels, "Pseudo-label store")->required()->check(CLI::ExistingDirectory);
    rs->add_option("--preds", rs_preds, "Prediction store")->check(CLI::ExistingDirectory);
    rs->add_option("--volumes", rs_volumes, "Directory holding volume directories named by volume id")->check(CLI::ExistingDirectory);
    rs->add_option("--ui", rs_ui, "Static UI directory")->check(CLI::ExistingDirectory);
    rs->add_option("--host", host, "Bind address")->capture_default_str();
    rs->add_option("--port", port, "Port (0 picks a free one)")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*pg) {
            return cmd_phantom_gen(common, spec_path, phantom_out, corrupt_fraction, severity, corrupt_seed);
        }
        if (*eb) {
            if (boundary_sigma > 0.0) {
                gc.boundary_sigma = boundary_sigma;
            }
            return cmd_extract_bone(common, eb_in, eb_out, gc);
        }
        if (*sa) {
            AfsConfig cfg = load_config(sa_config).afs;
            cfg.side = parse_side(side);
            if (initial_slice >= 0) {
                cfg.initial_slice = initial_slice;
            }
            if (sa->count("--mode") > 0 || sa_config.empty()) {
                cfg.mode = parse_candidate_mode(mode);
            }
            cfg.use_lnms = cfg.use_lnms && !no_lnms;
            cfg.use_ahs = cfg.use_ahs && !no_ahs;
            cfg.hessian = cfg.hessian || hessian;
            if (sa->count("--rays") > 0) {
                cfg.n_rays = rays;
            }
            return cmd_segment_afs(common, sa_in, sa_bone, sa_out, cfg);
        }
        if (*ar) {
            return cmd_aar_rank(common, ar_labels, ar_preds, k, eps, ar_out, ar_created);
        }
        if (*am) {
            return cmd_aar_merge(common, am_worklist, am_labels);
        }
        if (*ev) {
            return cmd_eval(common, ev_pred, ev_gt, spacing, ev_out);
        }
        if (*ra) {
            return cmd_run_all(common, ra_in, ra_out, ra_config, jobs);
        }
        if (*rs) {
            rp.worklist = rs_worklist;
            rp.labels = rs_labels;
            if (!rs_preds.empty()) {
                rp.preds = rs_preds;
            }
            if (!rs_volumes.empty()) {
                rp.volumes = rs_volumes;
            }
            if (!rs_ui.empty()) {
                rp.ui_dir = rs_ui;
            }
            return cmd_review_serve(common, rp, host, port);
        }
    } catch (const hipseg::Error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
