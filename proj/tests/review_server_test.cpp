#include <gtest/gtest.h>

#include "hipseg/review_server.hpp"
#include "support.hpp"

using namespace hipseg;
using hipseg::test::TempDir;

namespace {

LabelMask square(int w, int h, int x0, Label c)
{
    LabelMask m(w, h, Label::Background);
    for (int y = 2; y < 6; ++y) {
        for (int x = x0; x < x0 + 4; ++x) {
            m(x, y) = c;
        }
    }
    return m;
}

struct Env {
    TempDir root;
    ReviewPaths paths;

    Env()
    {
        paths.worklist = root / "review/wl.json";
        paths.labels = root / "labels";
        paths.preds = root / "preds";
        Worklist w;
        w.created = "2024-01-01T00:00:00Z";
        for (int z = 0; z < 2; ++z) {
            const std::string id = "v/slice_000" + std::to_string(z);
            save_mask(square(16, 8, z, Label::FemoralHead), mask_path(paths.labels, id));
            save_mask(square(16, 8, z + 4, Label::FemoralHead), mask_path(*paths.preds, id));
            WorklistEntry e;
            e.sample_id = id;
            e.volume = "v";
            e.slice = z;
            e.rank = z + 1;
            e.uncertainty = 2.0 - z;
            w.entries.push_back(e);
        }
        std::filesystem::create_directories(paths.worklist.parent_path());
        save_worklist(w, paths.worklist);
    }
};

httplib::Result post_png(httplib::Client &c, const std::string &path, const std::string &body)
{
    return c.Post(path, body, "image/png");
}

} // namespace

TEST(ReviewServer, WorklistIsServedVerbatim)
{
    Env env;
    ReviewServer srv(env.paths);
    const int port = srv.start("127.0.0.1", 0);
    httplib::Client c("127.0.0.1", port);
    auto r = c.Get("/api/worklist");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(r->body, read_file_bytes(env.paths.worklist));
    r = c.Get("/api/health");
    ASSERT_TRUE(r);
    EXPECT_EQ(nlohmann::json::parse(r->body).at("entries"), 2);
    r = c.Get("/api/sample/v/slice_0009/label");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 404);
    r = c.Get("/api/sample/v/slice_0001/prediction");
    ASSERT_TRUE(r);
    EXPECT_EQ(decode_label_png(r->body), square(16, 8, 5, Label::FemoralHead));
    r = c.Get("/");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
}

TEST(ReviewServer, CorrectionRoundTripAndMerge)
{
    Env env;
    const LabelMask fixed = square(16, 8, 9, Label::Acetabulum);
    const std::string upload = encode_label_png_palette(fixed);
    {
        ReviewServer srv(env.paths);
        const int port = srv.start("127.0.0.1", 0);
        httplib::Client c("127.0.0.1", port);
        auto r = post_png(c, "/api/sample/v/slice_0000/correction", upload);
        ASSERT_TRUE(r);
        ASSERT_EQ(r->status, 200) << r->body;
        EXPECT_EQ(nlohmann::json::parse(r->body).at("status"), "corrected");
        r = c.Get("/api/sample/v/slice_0000/label");
        ASSERT_TRUE(r);
        EXPECT_EQ(r->body, upload);
        r = c.Post("/api/sample/v/slice_0001/accept", "", "application/json");
        ASSERT_TRUE(r);
        EXPECT_EQ(r->status, 200);
        srv.stop();
    }
    const Worklist w = load_worklist(env.paths.worklist);
    EXPECT_EQ(w.entries[0].status, ReviewStatus::Corrected);
    EXPECT_EQ(w.entries[1].status, ReviewStatus::Accepted);
    EXPECT_EQ(read_file_bytes(env.root / "review/corrections/v/slice_0000.png"), upload);

    const MergeSummary m = merge_corrections(env.paths.labels, w, env.paths.worklist.parent_path());
    EXPECT_EQ(m.replaced, 1u);
    EXPECT_EQ(load_mask(mask_path(env.paths.labels, "v/slice_0000")), fixed);
}

TEST(ReviewServer, BadUploadsAreRejected)
{
    Env env;
    const std::string before = read_file_bytes(env.paths.worklist);
    ReviewServer srv(env.paths);
    const int port = srv.start("127.0.0.1", 0);
    httplib::Client c("127.0.0.1", port);
    auto r = post_png(c, "/api/sample/v/slice_0000/correction", encode_label_png(LabelMask(8, 8)));
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 422);
    r = post_png(c, "/api/sample/v/slice_0000/correction", "garbage");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 422);
    r = post_png(c, "/api/sample/v/nope/correction", encode_label_png(LabelMask(16, 8)));
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 404);
    EXPECT_EQ(read_file_bytes(env.paths.worklist), before);
    EXPECT_FALSE(std::filesystem::exists(env.root / "review/corrections"));
    EXPECT_EQ(srv.snapshot().entries[0].status, ReviewStatus::Pending);
}

TEST(ReviewServer, LogReplayRestoresState)
{
    Env env;
    const std::string original = read_file_bytes(env.paths.worklist);
    {
        ReviewServer srv(env.paths);
        httplib::Client c("127.0.0.1", srv.start("127.0.0.1", 0));
        ASSERT_TRUE(c.Post("/api/sample/v/slice_0001/accept", "", "application/json"));
        ASSERT_TRUE(post_png(c, "/api/sample/v/slice_0000/correction", encode_label_png(square(16, 8, 3, Label::FemoralHead))));
    }
    // Simulate a crash between the log append and the worklist save.
    write_file_atomic(env.paths.worklist, original);
    ReviewServer again(env.paths);
    const Worklist w = again.snapshot();
    EXPECT_EQ(w.entries[0].status, ReviewStatus::Corrected);
    EXPECT_EQ(w.entries[1].status, ReviewStatus::Accepted);
    EXPECT_EQ(load_worklist(env.paths.worklist).entries[1].status, ReviewStatus::Accepted);
}

TEST(ReviewServer, BusyPortIsStartupError)
{
    Env env;
    ReviewServer first(env.paths);
    const int port = first.start("127.0.0.1", 0);
    ReviewServer second(env.paths);
    EXPECT_THROW(second.start("127.0.0.1", port), StartupError);
}
