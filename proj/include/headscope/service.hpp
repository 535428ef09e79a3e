// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "headscope/corpus.hpp"
#include "headscope/metrics.hpp"

namespace httplib {
class Server;
}

namespace headscope {

struct ApiResponse {
  int status = 200;
  std::string body;  // UTF-8 JSON
};

using QueryParams = std::multimap<std::string, std::string>;

/// Read-only JSON API over a loaded corpus and its head profiles.
///
///   GET /api/articles
///   GET /api/articles/{id}/tokens
///   GET /api/articles/{id}/attention?type=&layer=&head=&view=aggregate|step[&t=]
///   GET /api/metrics/heads
///   GET /api/metrics/head/{type}/{layer}/{head}
///   GET /api/meta
///
/// Errors carry {code, message, detail}: 404 for unknown articles, heads and
/// routes, 400 for malformed queries.
class Api {
 public:
  Api(Corpus corpus, std::vector<HeadProfile> profiles);

  ApiResponse handle(std::string_view path, const QueryParams& query = {}) const;

  const Corpus& corpus() const noexcept { return corpus_; }
  const std::vector<HeadProfile>& profiles() const noexcept { return profiles_; }

 private:
  ApiResponse articles() const;
  ApiResponse tokens(std::string_view id) const;
  ApiResponse attention(std::string_view id, const QueryParams& query) const;
  ApiResponse head(std::string_view type, std::string_view layer, std::string_view head) const;

  Corpus corpus_;
  std::vector<HeadProfile> profiles_;
  std::string profiles_body_;
};

/// HTTP binding of an Api. `static_dir`, when non-empty, is mounted at "/".
class HttpService {
 public:
  HttpService(const Api& api, std::filesystem::path static_dir = {});
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  /// Binds to `port` (0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  void stop();

 private:
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace headscope
