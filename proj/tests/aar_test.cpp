#include <gtest/gtest.h>

#include <fstream>

#include "hipseg/aar.hpp"
#include "hipseg/metrics.hpp"
#include "hipseg/phantom.hpp"
#include "support.hpp"

using namespace hipseg;
using hipseg::test::TempDir;

namespace {

LabelMask blob(int w, int h, int x0, int x1, Label c)
{
    LabelMask m(w, h, Label::Background);
    for (int y = 2; y < h - 2; ++y) {
        for (int x = x0; x < x1; ++x) {
            m(x, y) = c;
        }
    }
    return m;
}

std::size_t count_class(const LabelMask &m, Label c) { return count_foreground(class_mask(m, c)); }

} // namespace

TEST(Uncertainty, IdenticalIsOne)
{
    const auto m = blob(20, 10, 3, 9, Label::FemoralHead);
    EXPECT_NEAR(uncertainty(m, m), 1.0, 1e-6);
    EXPECT_EQ(uncertainty(LabelMask(4, 4), LabelMask(4, 4)), 1.0);
}

TEST(Uncertainty, DisjointIsAreaOverEps)
{
    const auto a = blob(20, 10, 0, 5, Label::FemoralHead);
    const auto b = blob(20, 10, 10, 13, Label::FemoralHead);
    const double na = static_cast<double>(count_class(a, Label::FemoralHead));
    const double nb = static_cast<double>(count_class(b, Label::FemoralHead));
    EXPECT_DOUBLE_EQ(uncertainty(a, b, 0.5), (na + nb) / 0.5);
}

TEST(Uncertainty, InverseOfDiceAveragedOverClasses)
{
    LabelMask a = blob(30, 10, 0, 10, Label::FemoralHead);
    LabelMask b = blob(30, 10, 4, 12, Label::FemoralHead);
    for (int y = 0; y < 10; ++y) {
        a(20, y) = Label::Acetabulum;
        b(20, y) = Label::Acetabulum;
        b(21, y) = Label::Acetabulum;
    }
    const double eps = 1e-9;
    const double d_head = dice(class_mask(a, Label::FemoralHead), class_mask(b, Label::FemoralHead));
    const double d_acet = dice(class_mask(a, Label::Acetabulum), class_mask(b, Label::Acetabulum));
    EXPECT_NEAR(uncertainty(a, b, eps), (1.0 / d_head + 1.0 / d_acet) / 2.0, 1e-6);
    EXPECT_DOUBLE_EQ(uncertainty(a, b, eps), uncertainty(b, a, eps));
}

TEST(Uncertainty, RejectsBadInput)
{
    EXPECT_THROW(uncertainty(LabelMask(3, 3), LabelMask(3, 3), 0.0), ArgumentError);
    EXPECT_THROW(uncertainty(LabelMask(3, 3), LabelMask(4, 3)), ArgumentError);
}

TEST(Rank, OrdersByUncertaintyThenId)
{
    const auto good = blob(20, 10, 3, 9, Label::FemoralHead);
    const auto off = blob(20, 10, 5, 11, Label::FemoralHead);
    const auto far = blob(20, 10, 12, 18, Label::FemoralHead);
    std::vector<SamplePair> pairs{
        {"b/slice_0001", good, good},
        {"a/slice_0003", good, off},
        {"a/slice_0002", good, off},
        {"c/slice_0000", good, far},
    };
    const auto top = rank_and_select(pairs, 3);
    ASSERT_EQ(top.size(), 3u);
    EXPECT_EQ(top[0].sample_id, "c/slice_0000");
    EXPECT_EQ(top[1].sample_id, "a/slice_0002");
    EXPECT_EQ(top[2].sample_id, "a/slice_0003");
    EXPECT_EQ(top[1].volume, "a");
    EXPECT_EQ(top[1].slice, 2);
    EXPECT_EQ(top[2].rank, 3);
    EXPECT_EQ(rank_and_select(pairs, 4).back().sample_id, "b/slice_0001");
    EXPECT_TRUE(rank_and_select(pairs, 0).empty());
    EXPECT_THROW(rank_and_select(pairs, 5), ArgumentError);
}

TEST(Rank, SelectionRatio)
{
    EXPECT_NEAR(100.0 * selection_ratio(200, 5297), 3.78, 0.01);
    EXPECT_THROW(selection_ratio(1, 0), ArgumentError);
}

TEST(Rank, RecoversCorruptedPhantomSlices)
{
    PhantomSpec s;
    const Phantom ph = gen_phantom(s);
    const Corruption c = corrupt_labels(ph.truth.labels, 0.1, 12.0, 5);
    std::vector<SamplePair> pairs;
    for (std::size_t z = 0; z < c.labels.size(); ++z) {
        char id[32];
        std::snprintf(id, sizeof id, "phantom/slice_%04zu", z);
        pairs.push_back({id, c.labels[z], ph.truth.labels[z]});
    }
    const auto top = rank_and_select(pairs, c.corrupted.size());
    std::vector<int> got;
    for (const auto &e : top) {
        got.push_back(e.slice);
    }
    std::sort(got.begin(), got.end());
    EXPECT_EQ(got, c.corrupted);
}

TEST(Worklist, JsonRoundTrip)
{
    Worklist w;
    w.created = "2024-01-01T00:00:00Z";
    WorklistEntry e;
    e.sample_id = "v1/slice_0004";
    e.volume = "v1";
    e.slice = 4;
    e.uncertainty = 3.25;
    e.rank = 1;
    e.status = ReviewStatus::Corrected;
    e.correction = "corrections/v1/slice_0004.png";
    w.entries.push_back(e);
    e.sample_id = "v1/slice_0007";
    e.slice = 7;
    e.rank = 2;
    e.status = ReviewStatus::Pending;
    e.correction.reset();
    w.entries.push_back(e);

    TempDir dir;
    save_worklist(w, dir / "wl.json");
    const Worklist r = load_worklist(dir / "wl.json");
    EXPECT_EQ(serialize(r), serialize(w));
    ASSERT_NE(r.find("v1/slice_0004"), nullptr);
    EXPECT_EQ(r.find("v1/slice_0004")->status, ReviewStatus::Corrected);
    EXPECT_EQ(r.find("nope"), nullptr);
    EXPECT_THROW(parse_review_status("maybe"), FormatError);
    EXPECT_THROW(worklist_from_json(nlohmann::json::parse(R"({"version": 1, "entries": [{"rank": 1}]})")), FormatError);
}

namespace {

struct Store {
    TempDir labels, wl;
    Worklist w;

    Store()
    {
        for (int z = 0; z < 3; ++z) {
            save_mask(blob(16, 8, z, z + 4, Label::FemoralHead), mask_path(labels.path(), "v/slice_000" + std::to_string(z)));
        }
        for (int z = 0; z < 3; ++z) {
            WorklistEntry e;
            e.sample_id = "v/slice_000" + std::to_string(z);
            e.volume = "v";
            e.slice = z;
            e.rank = z + 1;
            e.status = ReviewStatus::Accepted;
            w.entries.push_back(e);
        }
    }

    std::string bytes(int z) const { return read_file_bytes(mask_path(labels.path(), "v/slice_000" + std::to_string(z))); }
};

} // namespace

TEST(Merge, AppliesOneCorrection)
{
    Store st;
    const auto fixed = blob(16, 8, 8, 14, Label::Acetabulum);
    save_mask(fixed, st.wl / "corrections/v/slice_0001.png");
    st.w.entries[1].status = ReviewStatus::Corrected;
    st.w.entries[1].correction = "corrections/v/slice_0001.png";
    const std::string before0 = st.bytes(0);
    const MergeSummary m = merge_corrections(st.labels.path(), st.w, st.wl.path());
    EXPECT_EQ(m.replaced, 1u);
    EXPECT_EQ(m.accepted, 2u);
    EXPECT_EQ(load_mask(mask_path(st.labels.path(), "v/slice_0001")), fixed);
    EXPECT_EQ(st.bytes(0), before0);
    EXPECT_TRUE(std::filesystem::exists(st.labels / "aar_audit.jsonl"));
}

TEST(Merge, AllAcceptedChangesNothing)
{
    Store st;
    const std::string b1 = st.bytes(1);
    const MergeSummary m = merge_corrections(st.labels.path(), st.w, st.wl.path());
    EXPECT_EQ(m.replaced, 0u);
    EXPECT_EQ(m.accepted, 3u);
    EXPECT_EQ(st.bytes(1), b1);
    EXPECT_FALSE(std::filesystem::exists(st.labels / "aar_audit.jsonl"));
}

TEST(Merge, BadCorrectionLeavesStoreUntouched)
{
    Store st;
    save_mask(blob(16, 8, 8, 14, Label::Acetabulum), st.wl / "corrections/v/slice_0000.png");
    {
        std::filesystem::create_directories(st.wl / "corrections/v");
        std::ofstream(st.wl / "corrections/v/slice_0002.png") << "not a png";
    }
    st.w.entries[0].status = ReviewStatus::Corrected;
    st.w.entries[0].correction = "corrections/v/slice_0000.png";
    st.w.entries[2].status = ReviewStatus::Corrected;
    st.w.entries[2].correction = "corrections/v/slice_0002.png";
    const std::string b0 = st.bytes(0), b2 = st.bytes(2);
    EXPECT_THROW(merge_corrections(st.labels.path(), st.w, st.wl.path()), FormatError);
    EXPECT_EQ(st.bytes(0), b0);
    EXPECT_EQ(st.bytes(2), b2);

    st.w.entries[2].correction = "corrections/v/missing.png";
    EXPECT_THROW(merge_corrections(st.labels.path(), st.w, st.wl.path()), MissingCorrectionError);
    save_mask(LabelMask(5, 5), st.wl / "corrections/v/small.png");
    st.w.entries[2].correction = "corrections/v/small.png";
    EXPECT_THROW(merge_corrections(st.labels.path(), st.w, st.wl.path()), FormatError);
    EXPECT_EQ(st.bytes(0), b0);
}

TEST(Merge, LoadSamplePairsNeedsMatchingStores)
{
    Store st;
    TempDir preds;
    save_mask(LabelMask(16, 8), mask_path(preds.path(), "v/slice_0000"));
    EXPECT_THROW(load_sample_pairs(st.labels.path(), preds.path()), DatasetMismatchError);
    save_mask(LabelMask(16, 8), mask_path(preds.path(), "v/slice_0001"));
    save_mask(LabelMask(16, 8), mask_path(preds.path(), "v/slice_0002"));
    EXPECT_EQ(load_sample_pairs(st.labels.path(), preds.path()).size(), 3u);
}
