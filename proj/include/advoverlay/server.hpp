#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "advoverlay/session.hpp"

namespace advoverlay {

/// WebSocket clients connect to
///   /attack?session=<id>&role=<source|panel>&subscribe=<0|1>
/// session defaults to "default", role to "panel"; panels subscribe to
/// adv_frame messages unless subscribe=0, sources only when subscribe=1.
/// Any other GET is served from static_dir when one is configured.
struct ServerOptions {
  std::string address = "0.0.0.0";
  unsigned short port = 8765;  // 0 picks a free port
  SessionOptions session;
  std::filesystem::path static_dir;
  int io_threads = 1;
};

class AttackServer {
 public:
  AttackServer(const Detector& detector, ServerOptions options, Clock clock = steady_clock_ms());
  ~AttackServer();
  AttackServer(const AttackServer&) = delete;
  AttackServer& operator=(const AttackServer&) = delete;

  /// Binds and starts serving in background threads; returns the bound port.
  unsigned short start();
  /// Blocks until stop() is called (from another thread or a signal handler).
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace advoverlay
