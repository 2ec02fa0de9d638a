#include "seg4d/http_server.hpp"

#include <httplib.h>

#include <fmt/format.h>

#include "seg4d/errors.hpp"

namespace seg4d::server {

using nlohmann::json;

struct HttpServer::Impl {
  SessionManager& sessions;
  httplib::Server http;

  explicit Impl(SessionManager& s) : sessions(s) {}
};

HttpServer::HttpServer(SessionManager& sessions) : impl_(std::make_unique<Impl>(sessions)) {
  auto& http = impl_->http;
  auto& mgr = impl_->sessions;

  http.Post("/api", [&mgr](const httplib::Request& req, httplib::Response& res) {
    json reply;
    try {
      reply = mgr.handle(json::parse(req.body));
    } catch (const json::parse_error& e) {
      reply = {{"type", "error"}, {"msg", std::string("malformed message: ") + e.what()}};
    }
    res.status = reply.value("type", "") == "error" && !reply.contains("code") ? 400 : 200;
    res.set_content(reply.dump(), "application/json");
  });

  http.Get(R"(/api/cloud/([0-9a-f]+))", [&mgr](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto frame = mgr.cloud_frame(req.matches[1]);
      res.set_content(std::string(frame.begin(), frame.end()), "application/octet-stream");
    } catch (const Error& e) {
      res.status = 404;
      res.set_content(json{{"type", "error"}, {"msg", e.what()}}.dump(), "application/json");
    }
  });

  http.Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"ok":true})", "application/json");
  });

  const auto& dir = mgr.config().server.static_dir;
  if (!dir.empty() && !http.set_mount_point("/", dir)) {
    throw ConfigError(fmt::format("server.static_dir '{}' is not a directory", dir));
  }
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  auto& http = impl_->http;
  const int bound = port == 0 ? http.bind_to_any_port(host) : (http.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw ConfigError(fmt::format("cannot listen on {}:{}", host, port));
  return bound;
}

void HttpServer::listen() { impl_->http.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_ && impl_->http.is_running()) impl_->http.stop();
}

void serve(SessionManager& sessions, const std::function<void(int port)>& on_ready) {
  const auto& cfg = sessions.config().server;
  HttpServer server(sessions);
  const int port = server.bind(cfg.host, cfg.port);
  if (on_ready) on_ready(port);
  server.listen();
}

}  // namespace seg4d::server
