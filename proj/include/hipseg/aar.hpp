#pragma once

// Annotation refinement: disagreement between pseudo labels and model
// predictions, top-K worklists, and merging reviewed corrections back.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hipseg/error.hpp"
#include "hipseg/image.hpp"
#include "hipseg/metrics.hpp"
#include "hipseg/volume_io.hpp"

namespace hipseg {

inline constexpr double kDefaultUncertaintyEps = 1e-6;
inline constexpr int kWorklistVersion = 1;

struct SamplePair {
    std::string sample_id;
    LabelMask pseudo_label;
    LabelMask prediction;
};

/// (|A|+|B|) / (2|A∩B| + eps) per foreground class, averaged over the classes
/// present in either mask. Pairs without any foreground agree perfectly (1).
inline double uncertainty(const LabelMask &pseudo, const LabelMask &pred, double eps = kDefaultUncertaintyEps)
{
    if (!(eps > 0.0)) {
        throw ArgumentError("uncertainty: eps must be positive");
    }
    if (!pseudo.same_shape(pred)) {
        throw ArgumentError("uncertainty: mask dimensions differ");
    }
    double sum = 0.0;
    int classes = 0;
    for (Label c : {Label::Acetabulum, Label::FemoralHead}) {
        std::size_t a = 0;
        std::size_t b = 0;
        std::size_t both = 0;
        for (std::size_t i = 0; i < pseudo.size(); ++i) {
            const bool pa = pseudo.pixels()[i] == c;
            const bool pb = pred.pixels()[i] == c;
            a += pa ? 1 : 0;
            b += pb ? 1 : 0;
            both += (pa && pb) ? 1 : 0;
        }
        if (a + b == 0) {
            continue;
        }
        sum += static_cast<double>(a + b) / (2.0 * static_cast<double>(both) + eps);
        ++classes;
    }
    return classes == 0 ? 1.0 : sum / classes;
}

inline double uncertainty(const SamplePair &p, double eps = kDefaultUncertaintyEps)
{
    return uncertainty(p.pseudo_label, p.prediction, eps);
}

// ---------------------------------------------------------------------------
// Worklist

enum class ReviewStatus { Pending, Accepted, Corrected };

inline std::string to_string(ReviewStatus s)
{
    switch (s) {
    case ReviewStatus::Pending: return "pending";
    case ReviewStatus::Accepted: return "accepted";
    case ReviewStatus::Corrected: return "corrected";
    }
    return "pending";
}

inline ReviewStatus parse_review_status(const std::string &s)
{
    if (s == "pending") {
        return ReviewStatus::Pending;
    }
    if (s == "accepted") {
        return ReviewStatus::Accepted;
    }
    if (s == "corrected") {
        return ReviewStatus::Corrected;
    }
    throw FormatError("unknown review status '" + s + "'");
}

struct WorklistEntry {
    std::string sample_id; // "<volume>/slice_NNNN"
    std::string volume;
    int slice = -1;
    double uncertainty = 0.0;
    int rank = 0;
    ReviewStatus status = ReviewStatus::Pending;
    std::optional<std::string> correction; // mask path, relative to the worklist file
};

struct Worklist {
    int version = kWorklistVersion;
    std::string created;
    std::vector<WorklistEntry> entries;

    const WorklistEntry *find(const std::string &id) const
    {
        for (const auto &e : entries) {
            if (e.sample_id == id) {
                return &e;
            }
        }
        return nullptr;
    }

    WorklistEntry *find(const std::string &id)
    {
        return const_cast<WorklistEntry *>(std::as_const(*this).find(id));
    }
};

/// Splits "<volume>/slice_NNNN" into its parts; other ids keep slice = -1.
inline void split_sample_id(const std::string &id, std::string &volume, int &slice)
{
    const auto pos = id.rfind('/');
    volume = pos == std::string::npos ? std::string() : id.substr(0, pos);
    const std::string leaf = pos == std::string::npos ? id : id.substr(pos + 1);
    slice = -1;
    if (leaf.rfind("slice_", 0) == 0 && leaf.size() > 6 && std::all_of(leaf.begin() + 6, leaf.end(), ::isdigit)) {
        slice = std::stoi(leaf.substr(6));
    }
}

inline std::string iso_timestamp_now()
{
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// The K most uncertain samples, most uncertain first; equal scores are
/// ordered by sample id.
inline std::vector<WorklistEntry> rank_and_select(const std::vector<SamplePair> &pairs, std::size_t k, double eps = kDefaultUncertaintyEps)
{
    if (k > pairs.size()) {
        throw ArgumentError("rank_and_select: K=" + std::to_string(k) + " exceeds " + std::to_string(pairs.size()) + " samples");
    }
    std::vector<WorklistEntry> all;
    all.reserve(pairs.size());
    for (const auto &p : pairs) {
        WorklistEntry e;
        e.sample_id = p.sample_id;
        split_sample_id(p.sample_id, e.volume, e.slice);
        e.uncertainty = uncertainty(p, eps);
        all.push_back(std::move(e));
    }
    std::sort(all.begin(), all.end(), [](const WorklistEntry &a, const WorklistEntry &b) {
        if (a.uncertainty != b.uncertainty) {
            return a.uncertainty > b.uncertainty;
        }
        return a.sample_id < b.sample_id;
    });
    all.resize(k);
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i].rank = static_cast<int>(i) + 1;
    }
    return all;
}

inline double selection_ratio(std::size_t k, std::size_t total)
{
    if (total == 0) {
        throw ArgumentError("selection_ratio: no samples");
    }
    return static_cast<double>(k) / static_cast<double>(total);
}

inline nlohmann::json to_json(const WorklistEntry &e)
{
    return {
        {"sample_id", e.sample_id},
        {"volume", e.volume},
        {"slice", e.slice},
        {"uncertainty", e.uncertainty},
        {"rank", e.rank},
        {"status", to_string(e.status)},
        {"correction", e.correction ? nlohmann::json(*e.correction) : nlohmann::json(nullptr)},
    };
}

inline nlohmann::json to_json(const Worklist &w)
{
    nlohmann::json entries = nlohmann::json::array();
    for (const auto &e : w.entries) {
        entries.push_back(to_json(e));
    }
    return {{"version", w.version}, {"created", w.created}, {"entries", entries}};
}

inline std::string serialize(const Worklist &w) { return to_json(w).dump(2) + "\n"; }

inline Worklist worklist_from_json(const nlohmann::json &j)
{
    Worklist w;
    try {
        w.version = j.at("version").get<int>();
        if (w.version != kWorklistVersion) {
            throw FormatError("worklist: unsupported version " + std::to_string(w.version));
        }
        w.created = j.value("created", std::string());
        for (const auto &je : j.at("entries")) {
            WorklistEntry e;
            e.sample_id = je.at("sample_id").get<std::string>();
            e.volume = je.value("volume", std::string());
            e.slice = je.value("slice", -1);
            e.uncertainty = je.at("uncertainty").get<double>();
            e.rank = je.at("rank").get<int>();
            e.status = parse_review_status(je.value("status", std::string("pending")));
            if (je.contains("correction") && !je.at("correction").is_null()) {
                e.correction = je.at("correction").get<std::string>();
            }
            w.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("worklist: ") + e.what());
    }
    return w;
}

inline Worklist load_worklist(const fs::path &path) { return worklist_from_json(read_json_file(path)); }

inline void save_worklist(const Worklist &w, const fs::path &path) { write_file_atomic(path, serialize(w)); }

// ---------------------------------------------------------------------------
// Label stores: <root>/<volume>/slice_NNNN.png

inline fs::path mask_path(const fs::path &root, const std::string &sample_id) { return root / (sample_id + ".png"); }

/// Pairs every pseudo label with the same-id prediction.
inline std::vector<SamplePair> load_sample_pairs(const fs::path &labels_root, const fs::path &preds_root)
{
    const auto ids = list_mask_ids(labels_root);
    const auto pred_ids = list_mask_ids(preds_root);
    if (ids != pred_ids) {
        throw DatasetMismatchError("aar: label and prediction stores hold different sample ids (" + std::to_string(ids.size()) + " vs "
                                   + std::to_string(pred_ids.size()) + ")");
    }
    std::vector<SamplePair> pairs;
    pairs.reserve(ids.size());
    for (const auto &id : ids) {
        SamplePair p{id, load_mask(mask_path(labels_root, id)), load_mask(mask_path(preds_root, id))};
        if (!p.pseudo_label.same_shape(p.prediction)) {
            throw DatasetMismatchError("aar: dimension mismatch for " + id);
        }
        pairs.push_back(std::move(p));
    }
    return pairs;
}

struct MergeSummary {
    std::size_t replaced = 0;
    std::size_t accepted = 0;
    std::size_t pending = 0;
};

/// Replace pseudo labels with reviewed corrections. Every correction is read
/// and checked before the first write; if any write fails the already written
/// labels are restored, so the store is either fully merged or untouched.
/// Replacements are appended to <labels_root>/aar_audit.jsonl.
inline MergeSummary merge_corrections(const fs::path &labels_root, const Worklist &w, const fs::path &worklist_dir)
{
    struct Staged {
        const WorklistEntry *entry;
        fs::path target;
        std::string old_bytes;
        std::string new_bytes;
        std::size_t changed = 0;
    };
    MergeSummary summary;
    std::vector<Staged> staged;
    for (const auto &e : w.entries) {
        if (e.status == ReviewStatus::Accepted) {
            ++summary.accepted;
            continue;
        }
        if (e.status == ReviewStatus::Pending) {
            ++summary.pending;
            continue;
        }
        if (!e.correction) {
            throw MissingCorrectionError("merge: corrected entry " + e.sample_id + " has no correction path");
        }
        fs::path src = *e.correction;
        if (src.is_relative()) {
            src = worklist_dir / src;
        }
        if (!fs::is_regular_file(src)) {
            throw MissingCorrectionError("merge: correction file missing for " + e.sample_id + ": " + src.string());
        }
        const fs::path target = mask_path(labels_root, e.sample_id);
        if (!fs::is_regular_file(target)) {
            throw MissingCorrectionError("merge: no pseudo label for " + e.sample_id);
        }
        Staged s{&e, target, read_file_bytes(target), read_file_bytes(src), 0};
        const LabelMask before = decode_label_png(s.old_bytes);
        const LabelMask after = decode_label_png(s.new_bytes); // FormatError if corrupt
        if (!before.same_shape(after)) {
            throw FormatError("merge: correction for " + e.sample_id + " is " + std::to_string(after.width()) + "x"
                              + std::to_string(after.height()) + ", label is " + std::to_string(before.width()) + "x"
                              + std::to_string(before.height()));
        }
        for (std::size_t i = 0; i < before.size(); ++i) {
            s.changed += before.pixels()[i] != after.pixels()[i] ? 1 : 0;
        }
        s.new_bytes = encode_label_png(after);
        staged.push_back(std::move(s));
    }

    std::size_t written = 0;
    try {
        for (; written < staged.size(); ++written) {
            write_file_atomic(staged[written].target, staged[written].new_bytes);
        }
    } catch (...) {
        for (std::size_t i = 0; i < written; ++i) {
            write_file_atomic(staged[i].target, staged[i].old_bytes);
        }
        throw;
    }

    if (!staged.empty()) {
        std::ofstream log(labels_root / "aar_audit.jsonl", std::ios::app);
        const std::string now = iso_timestamp_now();
        for (const auto &s : staged) {
            log << nlohmann::json{{"time", now}, {"sample_id", s.entry->sample_id}, {"correction", *s.entry->correction},
                                  {"changed_pixels", s.changed}}
                       .dump()
                << "\n";
        }
    }
    summary.replaced = staged.size();
    return summary;
}

} // namespace hipseg
