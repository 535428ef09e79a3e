// SPDX-License-Identifier: Apache-2.0
#include "headscope/service.hpp"

#include <charconv>
#include <limits>
#include <span>

#include <httplib.h>

#include "headscope/error.hpp"

namespace headscope {

using nlohmann::json;

namespace {

ApiResponse ok(const json& body) { return {200, body.dump()}; }

ApiResponse fail(int status, const std::string& code, const std::string& message, json detail = json::object()) {
  return {status, json{{"code", code}, {"message", message}, {"detail", std::move(detail)}}.dump()};
}

ApiResponse not_found(const std::string& message, json detail = json::object()) {
  return fail(404, "NotFound", message, std::move(detail));
}

ApiResponse bad_request(const std::string& message, json detail = json::object()) {
  return fail(400, "BadRequest", message, std::move(detail));
}

std::optional<long long> parse_index(std::string_view s) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size() || v < 0) return std::nullopt;
  return v;
}

std::vector<std::string_view> split_path(std::string_view path) {
  std::vector<std::string_view> parts;
  std::size_t pos = 0;
  while (pos < path.size()) {
    auto end = path.find('/', pos);
    if (end == std::string_view::npos) end = path.size();
    if (end > pos) parts.push_back(path.substr(pos, end - pos));
    pos = end + 1;
  }
  return parts;
}

const std::string* single(const QueryParams& q, const std::string& key) {
  const auto range = q.equal_range(key);
  if (range.first == range.second) return nullptr;
  return &range.first->second;
}

json token_json(std::span<const Token> tokens) {
  json arr = json::array();
  for (const auto& t : tokens) arr.push_back({{"text", t.text}, {"pos", to_string(t.pos)}, {"ne", to_string(t.ne)}});
  return arr;
}

}  // namespace

Api::Api(Corpus corpus, std::vector<HeadProfile> profiles)
    : corpus_(std::move(corpus)), profiles_(std::move(profiles)), profiles_body_(to_json(profiles_).dump()) {}

ApiResponse Api::handle(std::string_view path, const QueryParams& query) const {
  const auto parts = split_path(path);
  if (parts.empty() || parts[0] != "api") return not_found("no such route", {{"path", path}});
  try {
    if (parts.size() == 2 && parts[1] == "articles") return articles();
    if (parts.size() == 4 && parts[1] == "articles" && parts[3] == "tokens") return tokens(parts[2]);
    if (parts.size() == 4 && parts[1] == "articles" && parts[3] == "attention") return attention(parts[2], query);
    if (parts.size() == 3 && parts[1] == "metrics" && parts[2] == "heads") return {200, profiles_body_};
    if (parts.size() == 6 && parts[1] == "metrics" && parts[2] == "head") return head(parts[3], parts[4], parts[5]);
    if (parts.size() == 2 && parts[1] == "meta") return ok(corpus_.manifest.to_json());
  } catch (const Error& e) {
    return {500, e.to_json().dump()};
  }
  return not_found("no such route", {{"path", path}});
}

ApiResponse Api::articles() const {
  json arr = json::array();
  for (const auto& a : corpus_.articles) {
    arr.push_back({{"id", a.article_id},
                   {"n_source_tokens", a.source_tokens.size()},
                   {"n_summary_tokens", a.summary_tokens.size()}});
  }
  return ok(arr);
}

ApiResponse Api::tokens(std::string_view id) const {
  const auto* a = corpus_.find(id);
  if (!a) return not_found("unknown article", {{"id", id}});
  return ok({{"id", a->article_id}, {"source", token_json(a->source_tokens)}, {"summary", token_json(a->summary_tokens)}});
}

ApiResponse Api::attention(std::string_view id, const QueryParams& query) const {
  const auto* a = corpus_.find(id);
  if (!a) return not_found("unknown article", {{"id", id}});

  const auto* type_s = single(query, "type");
  const auto* layer_s = single(query, "layer");
  const auto* head_s = single(query, "head");
  if (!type_s || !layer_s || !head_s) return bad_request("type, layer and head are required");
  const auto type = parse_attention_type(*type_s);
  if (!type) return bad_request("unknown attention type", {{"type", *type_s}});
  const auto layer = parse_index(*layer_s);
  const auto head = parse_index(*head_s);
  if (!layer || !head) return bad_request("layer and head must be non-negative integers");

  const auto* view_s = single(query, "view");
  const std::string view = view_s ? *view_s : "aggregate";
  if (view != "aggregate" && view != "step") return bad_request("view must be aggregate or step", {{"view", view}});

  const MatrixKey key{*type, static_cast<int>(std::min<long long>(*layer, std::numeric_limits<int>::max())),
                      static_cast<int>(std::min<long long>(*head, std::numeric_limits<int>::max()))};
  const auto it = a->matrices.find(key);
  if (it == a->matrices.end()) {
    return not_found("unknown head", {{"type", *type_s}, {"layer", *layer}, {"head", *head}});
  }
  const auto& m = it->second;

  json body = {{"id", a->article_id}, {"type", to_string(key.type)}, {"layer", key.layer}, {"head", key.head}, {"view", view}};
  json tokens = json::array();
  for (const auto& t : a->key_tokens(key.type)) tokens.push_back(t.text);
  body["tokens"] = tokens;

  if (view == "aggregate") {
    if (single(query, "t")) return bad_request("t is only valid with view=step");
    body["weights"] = aggregate(m);
  } else {
    const auto* t_s = single(query, "t");
    if (!t_s) return bad_request("view=step needs t");
    const auto t = parse_index(*t_s);
    if (!t) return bad_request("t must be a non-negative integer", {{"t", *t_s}});
    if (static_cast<std::size_t>(*t) >= m.rows) return bad_request("t is past the last step", {{"t", *t}, {"rows", m.rows}});
    const auto row = m.row(static_cast<std::size_t>(*t));
    body["t"] = *t;
    body["weights"] = std::vector<double>(row.begin(), row.end());
  }
  return ok(body);
}

ApiResponse Api::head(std::string_view type_s, std::string_view layer_s, std::string_view head_s) const {
  const auto layer = parse_index(layer_s);
  const auto head = parse_index(head_s);
  if (!layer || !head) return bad_request("layer and head must be non-negative integers");
  const auto type = parse_attention_type(type_s);
  if (!type) return not_found("unknown attention type", {{"type", type_s}});
  for (const auto& p : profiles_) {
    if (p.key.type == *type && p.key.layer == *layer && p.key.head == *head) return ok(to_json(p));
  }
  return not_found("unknown head", {{"type", type_s}, {"layer", *layer}, {"head", *head}});
}

HttpService::HttpService(const Api& api, std::filesystem::path static_dir) : server_(std::make_unique<httplib::Server>()) {
  server_->Get(R"(/api/.*)", [&api](const httplib::Request& req, httplib::Response& res) {
    const auto r = api.handle(req.path, req.params);
    res.status = r.status;
    res.set_content(r.body, "application/json; charset=utf-8");
  });
  if (!static_dir.empty() && !server_->set_mount_point("/", static_dir.string())) {
    throw MissingFile("static directory not found: " + static_dir.string(), {{"path", static_dir.string()}});
  }
}

HttpService::~HttpService() = default;

int HttpService::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) throw IoError("cannot bind " + host, {{"host", host}});
    return bound;
  }
  if (!server_->bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port), {{"host", host}, {"port", port}});
  return port;
}

void HttpService::listen() { server_->listen_after_bind(); }

void HttpService::stop() { server_->stop(); }

}  // namespace headscope
