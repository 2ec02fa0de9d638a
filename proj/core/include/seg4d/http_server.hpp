#pragma once

#include <functional>
#include <memory>
#include <string>

#include "seg4d/session.hpp"

namespace seg4d::server {

/// HTTP front end for a SessionManager.
///
///   POST /api              one protocol message (JSON) -> reply (JSON)
///   GET  /api/cloud/<id>   binary cloud frame of a session
///   GET  /api/health       {"ok": true}
///   GET  /*                files of server.static_dir, when configured
class HttpServer {
 public:
  explicit HttpServer(SessionManager& sessions);
  ~HttpServer();

  /// Binds host:port (port 0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Blocking serve with the manager's server configuration.
void serve(SessionManager& sessions, const std::function<void(int port)>& on_ready = {});

}  // namespace seg4d::server
