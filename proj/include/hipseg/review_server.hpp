#pragma once

// HTTP backend for reviewing an AAR worklist: serves slices, labels and
// predictions, and records accept / correct decisions.
//
// Every decision is first appended to <worklist>.log (one JSON object per line)
// and then folded into the worklist file, so replaying the log over the
// original worklist always reconstructs the current state.

#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "hipseg/aar.hpp"
#include "hipseg/error.hpp"
#include "hipseg/volume_io.hpp"

namespace hipseg {

struct ReviewPaths {
    fs::path worklist;
    fs::path labels;                 // pseudo-label store
    std::optional<fs::path> preds;   // prediction store
    std::optional<fs::path> volumes; // directory of volume dirs named by volume id
    std::optional<fs::path> ui_dir;  // static assets; a minimal page is built in otherwise
};

namespace detail {

inline const char *kReviewIndexHtml = R"html(<!doctype html>
<html><head><meta charset="utf-8"><title>hipseg review</title>
<style>body{font-family:sans-serif;margin:1em}td,th{padding:2px 8px}img{image-rendering:pixelated;width:256px}</style>
</head><body>
<h1>Worklist</h1>
<table id="list"><tr><th>rank</th><th>sample</th><th>uncertainty</th><th>status</th><th></th></tr></table>
<div id="view"></div>
<script>
async function load() {
  const w = await (await fetch('/api/worklist')).json();
  const t = document.getElementById('list');
  for (const e of w.entries) {
    const r = t.insertRow();
    r.innerHTML = `<td>${e.rank}</td><td><a href="#" data-id="${e.sample_id}">${e.sample_id}</a></td>` +
      `<td>${e.uncertainty.toFixed(3)}</td><td>${e.status}</td><td><button data-id="${e.sample_id}">accept</button></td>`;
  }
  t.onclick = async ev => {
    const id = ev.target.dataset.id;
    if (!id) return;
    ev.preventDefault();
    if (ev.target.tagName === 'BUTTON') {
      await fetch(`/api/sample/${id}/accept`, {method: 'POST'});
      location.reload();
    } else {
      document.getElementById('view').innerHTML = ['image', 'label', 'prediction']
        .map(k => `<img src="/api/sample/${id}/${k}" alt="${k}">`).join('');
    }
  };
}
load();
</script></body></html>
)html";

} // namespace detail

class ReviewServer {
public:
    explicit ReviewServer(ReviewPaths paths) : paths_(std::move(paths))
    {
        log_path_ = paths_.worklist.string() + ".log";
        worklist_ = load_worklist(paths_.worklist);
        if (replay_log()) {
            save_worklist(worklist_, paths_.worklist);
        }
        // No SO_REUSEPORT: a second server on a busy port must fail to bind.
        server_.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char *>(&yes), sizeof yes);
        });
        routes();
    }

    ~ReviewServer() { stop(); }

    ReviewServer(const ReviewServer &) = delete;
    ReviewServer &operator=(const ReviewServer &) = delete;

    /// Bind and serve on a background thread. Port 0 picks a free port.
    int start(const std::string &host, int port)
    {
        if (port == 0) {
            port = server_.bind_to_any_port(host);
            if (port <= 0) {
                throw StartupError("review server: cannot bind " + host);
            }
        } else if (!server_.bind_to_port(host, port)) {
            throw StartupError("review server: port " + std::to_string(port) + " on " + host + " is unavailable");
        }
        port_ = port;
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port_;
    }

    /// Block until stop() is called from another thread or a signal handler.
    void wait()
    {
        if (thread_.joinable()) {
            thread_.join();
        }
    }

    void stop()
    {
        server_.stop();
        if (thread_.joinable()) {
            thread_.join();
        }
    }

    int port() const { return port_; }

    Worklist snapshot() const
    {
        std::shared_lock lock(mu_);
        return worklist_;
    }

private:
    // --- state -----------------------------------------------------------

    fs::path worklist_dir() const { return paths_.worklist.has_parent_path() ? paths_.worklist.parent_path() : fs::path("."); }

    static void apply(WorklistEntry &e, const nlohmann::json &rec)
    {
        e.status = parse_review_status(rec.at("status").get<std::string>());
        if (rec.contains("correction") && !rec.at("correction").is_null()) {
            e.correction = rec.at("correction").get<std::string>();
        } else {
            e.correction.reset();
        }
    }

    bool replay_log()
    {
        std::ifstream in(log_path_);
        if (!in) {
            return false;
        }
        bool changed = false;
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) {
            ++n;
            if (line.empty()) {
                continue;
            }
            nlohmann::json rec;
            try {
                rec = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception &) {
                // A torn final line from a crash mid-append is ignored.
                if (in.peek() == EOF) {
                    break;
                }
                throw FormatError("review log line " + std::to_string(n) + " is not JSON");
            }
            WorklistEntry *e = worklist_.find(rec.at("sample_id").get<std::string>());
            if (e == nullptr) {
                throw FormatError("review log names unknown sample " + rec.at("sample_id").get<std::string>());
            }
            const auto before = to_json(*e);
            apply(*e, rec);
            seq_ = std::max<std::uint64_t>(seq_, rec.value("seq", std::uint64_t{0}));
            changed = changed || to_json(*e) != before;
        }
        return changed;
    }

    // Caller holds the unique lock.
    nlohmann::json record(WorklistEntry &e, ReviewStatus status, std::optional<std::string> correction)
    {
        nlohmann::json rec{{"seq", ++seq_}, {"time", iso_timestamp_now()}, {"sample_id", e.sample_id}, {"status", to_string(status)},
                           {"correction", correction ? nlohmann::json(*correction) : nlohmann::json(nullptr)}};
        {
            std::ofstream log(log_path_, std::ios::app);
            log << rec.dump() << "\n";
            log.flush();
            if (!log) {
                throw Error("review server: cannot append to " + log_path_);
            }
        }
        apply(e, rec);
        save_worklist(worklist_, paths_.worklist);
        return to_json(e);
    }

    // --- data ------------------------------------------------------------

    std::shared_ptr<const Volume> volume(const std::string &id)
    {
        std::lock_guard lock(cache_mu_);
        auto it = volumes_.find(id);
        if (it != volumes_.end()) {
            return it->second;
        }
        auto v = std::make_shared<const Volume>(load_volume(*paths_.volumes / id));
        volumes_.emplace(id, v);
        return v;
    }

    std::optional<WorklistEntry> entry(const std::string &id) const
    {
        std::shared_lock lock(mu_);
        const WorklistEntry *e = worklist_.find(id);
        return e ? std::optional<WorklistEntry>(*e) : std::nullopt;
    }

    static void send_error(httplib::Response &res, int status, const std::string &msg)
    {
        res.status = status;
        res.set_content(nlohmann::json{{"version", 1}, {"error", msg}}.dump(), "application/json");
    }

    // --- routes ----------------------------------------------------------

    void routes()
    {
        server_.Get("/api/health", [this](const httplib::Request &, httplib::Response &res) {
            std::shared_lock lock(mu_);
            res.set_content(nlohmann::json{{"version", 1}, {"status", "ok"}, {"entries", worklist_.entries.size()}}.dump(),
                            "application/json");
        });

        server_.Get("/api/worklist", [this](const httplib::Request &, httplib::Response &res) {
            std::shared_lock lock(mu_);
            res.set_content(serialize(worklist_), "application/json");
        });

        server_.Get(R"(/api/sample/(.+)/image)", [this](const httplib::Request &req, httplib::Response &res) {
            const std::string id = req.matches[1];
            const auto e = entry(id);
            if (!e) {
                return send_error(res, 404, "unknown sample " + id);
            }
            if (!paths_.volumes || e->slice < 0) {
                return send_error(res, 404, "no volume source for " + id);
            }
            try {
                const auto v = volume(e->volume);
                if (e->slice >= v->num_slices()) {
                    return send_error(res, 404, "slice outside volume");
                }
                const Image<float> n = clip_normalize(v->slices[static_cast<std::size_t>(e->slice)]);
                const auto gray = map_image<std::uint8_t>(n, [](float x) { return static_cast<std::uint8_t>(std::lround(x * 255.0f)); });
                res.set_content(encode_png_gray8(gray), "image/png");
            } catch (const Error &err) {
                send_error(res, 500, err.what());
            }
        });

        server_.Get(R"(/api/sample/(.+)/label)", [this](const httplib::Request &req, httplib::Response &res) {
            const std::string id = req.matches[1];
            const auto e = entry(id);
            if (!e) {
                return send_error(res, 404, "unknown sample " + id);
            }
            try {
                if (e->status == ReviewStatus::Corrected && e->correction) {
                    // Corrections are returned exactly as uploaded.
                    res.set_content(read_file_bytes(worklist_dir() / *e->correction), "image/png");
                } else {
                    res.set_content(encode_label_png_palette(load_mask(mask_path(paths_.labels, id))), "image/png");
                }
            } catch (const Error &err) {
                send_error(res, 500, err.what());
            }
        });

        server_.Get(R"(/api/sample/(.+)/prediction)", [this](const httplib::Request &req, httplib::Response &res) {
            const std::string id = req.matches[1];
            if (!entry(id)) {
                return send_error(res, 404, "unknown sample " + id);
            }
            if (!paths_.preds) {
                return send_error(res, 404, "no prediction store configured");
            }
            try {
                res.set_content(encode_label_png_palette(load_mask(mask_path(*paths_.preds, id))), "image/png");
            } catch (const Error &err) {
                send_error(res, 500, err.what());
            }
        });

        server_.Post(R"(/api/sample/(.+)/correction)", [this](const httplib::Request &req, httplib::Response &res) {
            const std::string id = req.matches[1];
            LabelMask upload;
            try {
                upload = decode_label_png(req.body);
            } catch (const FormatError &err) {
                return send_error(res, 422, std::string("invalid mask: ") + err.what());
            }
            std::unique_lock lock(mu_);
            WorklistEntry *e = worklist_.find(id);
            if (e == nullptr) {
                return send_error(res, 404, "unknown sample " + id);
            }
            try {
                const LabelMask current = load_mask(mask_path(paths_.labels, id));
                if (!current.same_shape(upload)) {
                    return send_error(res, 422,
                                      "mask is " + std::to_string(upload.width()) + "x" + std::to_string(upload.height()) + ", expected "
                                          + std::to_string(current.width()) + "x" + std::to_string(current.height()));
                }
                const std::string rel = (fs::path("corrections") / (id + ".png")).generic_string();
                const fs::path dst = worklist_dir() / rel;
                fs::create_directories(dst.parent_path());
                write_file_atomic(dst, req.body);
                res.set_content(record(*e, ReviewStatus::Corrected, rel).dump(), "application/json");
            } catch (const Error &err) {
                send_error(res, 500, err.what());
            }
        });

        server_.Post(R"(/api/sample/(.+)/accept)", [this](const httplib::Request &req, httplib::Response &res) {
            const std::string id = req.matches[1];
            std::unique_lock lock(mu_);
            WorklistEntry *e = worklist_.find(id);
            if (e == nullptr) {
                return send_error(res, 404, "unknown sample " + id);
            }
            try {
                res.set_content(record(*e, ReviewStatus::Accepted, std::nullopt).dump(), "application/json");
            } catch (const Error &err) {
                send_error(res, 500, err.what());
            }
        });

        if (paths_.ui_dir && fs::is_directory(*paths_.ui_dir)) {
            server_.set_mount_point("/", paths_.ui_dir->string());
        } else {
            server_.Get("/", [](const httplib::Request &, httplib::Response &res) {
                res.set_content(detail::kReviewIndexHtml, "text/html; charset=utf-8");
            });
        }
    }

    ReviewPaths paths_;
    std::string log_path_;
    Worklist worklist_;
    std::uint64_t seq_ = 0;
    mutable std::shared_mutex mu_; // single writer, many readers
    std::mutex cache_mu_;
    std::map<std::string, std::shared_ptr<const Volume>> volumes_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

} // namespace hipseg
