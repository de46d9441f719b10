#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "advoverlay/attack.hpp"
#include "advoverlay/protocol.hpp"

namespace advoverlay {

struct SessionOptions {
  AttackConfig config;
  int iters_per_frame = 4;
  bool stop_on_success = true;
  std::size_t max_frame_bytes = 8u << 20;  // base64 text length
};

/// A data source sends frames; panels send mask and config updates. Only the
/// first panel to send an update holds write authority, the rest observe.
enum class Role { Source, Panel };

using ClientId = std::uint64_t;

struct Outgoing {
  enum class Audience { Sender, Everyone, AdvSubscribers };
  Audience audience;
  WireMessage message;
};

/// Monotonic milliseconds; injectable so transcripts can be reproduced.
using Clock = std::function<double()>;
Clock steady_clock_ms();

/// Transport-independent state of one /attack session. Calls are serialised
/// by an internal mutex; the detector is only read.
class SessionEngine {
 public:
  SessionEngine(std::string session_id, const Detector& detector, SessionOptions options, Clock clock);

  /// Throws ProtocolError when a second data source tries to join.
  ClientId join(Role role, bool subscribe_adv_frames);
  void leave(ClientId client);

  /// Handles one text message from `client`. Errors come back as `error`
  /// messages to the sender; the session state is left unchanged by them.
  std::vector<Outgoing> handle(ClientId client, std::string_view text);
  std::vector<Outgoing> handle(ClientId client, const WireMessage& message);

  /// Error reply for a frame superseded in the backpressure queue.
  WireMessage dropped_frame(std::uint64_t sequence) const;

  const std::string& id() const { return id_; }
  bool has_subscribers() const;
  bool is_subscribed(ClientId client) const;
  std::size_t client_count() const;

  // Snapshot accessors for tests and diagnostics.
  AttackConfig config() const;
  int iters_per_frame() const;
  AttackState attack_state() const;
  Mask mask() const;
  std::uint64_t frame_counter() const;

 private:
  struct Client {
    Role role;
    bool subscribed;
    std::optional<std::uint64_t> last_sequence;
  };

  WireMessage error_message(std::uint64_t sequence, const std::string& text, const std::string& field = {}) const;
  std::vector<Outgoing> on_frame(const WireMessage& m);
  std::vector<Outgoing> on_mask(const WireMessage& m);
  std::vector<Outgoing> on_config(const WireMessage& m);

  std::string id_;
  const Detector& detector_;
  SessionOptions options_;
  Clock clock_;

  mutable std::mutex mutex_;
  std::map<ClientId, Client> clients_;
  ClientId next_client_ = 1;
  std::optional<ClientId> writer_;
  AttackConfig config_;
  int iters_per_frame_;
  AttackState state_;
  Mask mask_;
  std::vector<Rect> rects_;
  std::uint64_t frames_ = 0;
};

/// Applies a config_update payload to a copy of (config, iters_per_frame).
/// Throws ProtocolError whose field() names the offending field.
std::pair<AttackConfig, int> apply_config_update(const AttackConfig& config, int iters_per_frame,
                                                 const nlohmann::json& payload, int num_classes);

/// Whether switching configs invalidates the accumulated perturbation: the
/// monochrome flag, the targeted/untargeted split, the target class or
/// patch-versus-additive application changed.
bool config_change_resets_delta(const AttackConfig& before, const AttackConfig& after);

}  // namespace advoverlay
