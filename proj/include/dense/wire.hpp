#pragma once

#include <chrono>
#include <memory>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "dense/embed.hpp"
#include "dense/errors.hpp"
#include "dense/eval.hpp"
#include "dense/score.hpp"

namespace dense {

namespace detail {

struct SplitUrl {
    std::string base;  // scheme://host[:port]
    std::string path;  // /path, "/" when absent
};

inline SplitUrl split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw ValidationError("endpoint is not a URL: '" + url + "'");
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

/// JSON-over-POST transport usable by both the scoring backend and the
/// embedder client.
inline std::function<nlohmann::json(const nlohmann::json&)> make_http_transport(
    const std::string& endpoint, std::chrono::milliseconds timeout) {
    auto url = detail::split_url(endpoint);
    auto client = std::make_shared<httplib::Client>(url.base);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    client->set_connection_timeout(secs.count() > 0 ? secs.count() : 1, 0);
    client->set_read_timeout(secs.count() > 0 ? secs.count() : 1, 0);
    return [client, url](const nlohmann::json& req) -> nlohmann::json {
        auto res = client->Post(url.path, req.dump(), "application/json");
        if (!res)
            throw TransportError("POST " + url.base + url.path + ": " +
                                 httplib::to_string(res.error()));
        if (res->status != 200)
            throw TransportError("POST " + url.base + url.path + ": HTTP " +
                                 std::to_string(res->status));
        try {
            return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(std::string("response is not JSON: ") + e.what());
        }
    };
}

inline std::unique_ptr<ScoringBackend> make_backend(const BackendConfig& cfg) {
    cfg.validate();
    if (cfg.kind == BackendKind::mock) {
        if (!cfg.fixture_path)
            throw ValidationError("mock backend requires a fixture path");
        return std::make_unique<MockBackend>(MockBackend::from_file(*cfg.fixture_path));
    }
    return std::make_unique<HttpBackend>(cfg, make_http_transport(*cfg.endpoint, cfg.timeout));
}

inline EmbedProvider make_embed_provider(const EmbedderConfig& cfg) {
    cfg.validate();
    if (cfg.source == EmbedderSource::file) {
        if (!cfg.path)
            return [](const std::vector<Demonstration>&,
                      const std::vector<EvalInstance>&) -> EmbeddingStore {
                throw ValidationError("embedder: file source without a configured path");
            };
        return file_embed_provider(*cfg.path);
    }
    return http_embed_provider(cfg,
                               make_http_transport(*cfg.endpoint, std::chrono::seconds(30)));
}

}  // namespace dense

