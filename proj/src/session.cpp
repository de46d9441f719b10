#include "advoverlay/session.hpp"

#include <chrono>
#include <cmath>

#include <fmt/format.h>

#include "advoverlay/image_io.hpp"

namespace advoverlay {

using nlohmann::json;

Clock steady_clock_ms() {
  return [] {
    using namespace std::chrono;
    return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
  };
}

namespace {

json config_json(const AttackConfig& c, int iters_per_frame) {
  return {{"mode", to_string(c.mode)},
          {"target_class", c.target_class ? json(*c.target_class) : json(nullptr)},
          {"xi", c.xi},
          {"alpha", c.alpha},
          {"monochrome", c.monochrome},
          {"channel_source", to_string(c.channel_source)},
          {"application", to_string(c.application)},
          {"monochrome_update", to_string(c.monochrome_update)},
          {"iters_per_frame", iters_per_frame}};
}

template <typename Parse>
auto parse_field(const json& payload, const char* key, Parse parse) {
  try {
    return parse(payload.at(key).get<std::string>());
  } catch (const ConfigError& e) {
    throw ProtocolError(e.what(), std::string("payload.") + key);
  }
}

// Best effort: the sequence number of a message that failed to parse.
std::uint64_t salvage_sequence(std::string_view text) {
  const json v = json::parse(text, nullptr, false);
  if (v.is_object() && v.contains("sequence") && v["sequence"].is_number_unsigned())
    return v["sequence"].get<std::uint64_t>();
  return 0;
}

}  // namespace

std::pair<AttackConfig, int> apply_config_update(const AttackConfig& config, int iters_per_frame,
                                                 const json& payload, int num_classes) {
  AttackConfig c = config;
  int iters = iters_per_frame;
  if (payload.contains("mode")) c.mode = parse_field(payload, "mode", parse_attack_mode);
  if (payload.contains("channel_source"))
    c.channel_source = parse_field(payload, "channel_source", parse_channel_source);
  if (payload.contains("application")) c.application = parse_field(payload, "application", parse_application);
  if (payload.contains("monochrome_update"))
    c.monochrome_update = parse_field(payload, "monochrome_update", parse_monochrome_update);
  if (payload.contains("monochrome")) c.monochrome = payload["monochrome"].get<bool>();
  if (payload.contains("xi")) c.xi = payload["xi"].get<double>();
  if (payload.contains("alpha")) c.alpha = payload["alpha"].get<double>();
  if (payload.contains("target_class"))
    c.target_class = payload["target_class"].is_null() ? std::nullopt : std::optional<int>(payload["target_class"].get<int>());
  if (payload.contains("iters_per_frame")) iters = payload["iters_per_frame"].get<int>();

  if (!(std::isfinite(c.xi) && c.xi > 0.0)) throw ProtocolError("xi must be a positive number", "payload.xi");
  if (!(std::isfinite(c.alpha) && c.alpha > 0.0)) throw ProtocolError("alpha must be a positive number", "payload.alpha");
  if (iters < 1) throw ProtocolError("iters_per_frame must be at least 1", "payload.iters_per_frame");
  if (is_targeted(c.mode) && !c.target_class)
    throw ProtocolError(fmt::format("{} needs a target_class", to_string(c.mode)), "payload.target_class");
  if (c.target_class && (*c.target_class < 1 || *c.target_class > num_classes))
    throw ProtocolError(fmt::format("target_class {} is outside [1, {}]", *c.target_class, num_classes),
                        "payload.target_class");
  try {
    c.validate(num_classes);
  } catch (const ConfigError& e) {
    throw ProtocolError(e.what(), "payload");
  }
  return {c, iters};
}

bool config_change_resets_delta(const AttackConfig& before, const AttackConfig& after) {
  const auto patch = [](const AttackConfig& c) { return c.application == Application::Patch; };
  return before.monochrome != after.monochrome || is_targeted(before.mode) != is_targeted(after.mode) ||
         (is_targeted(after.mode) && before.target_class != after.target_class) || patch(before) != patch(after);
}

SessionEngine::SessionEngine(std::string session_id, const Detector& detector, SessionOptions options, Clock clock)
    : id_(std::move(session_id)),
      detector_(detector),
      options_(std::move(options)),
      clock_(std::move(clock)),
      config_(options_.config),
      iters_per_frame_(options_.iters_per_frame) {
  config_.validate(detector_.scale_config().num_classes);
  if (iters_per_frame_ < 1) throw ConfigError("iters_per_frame must be at least 1");
  const int side = detector_.input_side();
  state_ = AttackState::fresh(config_, detector_.input_channels(), side, side);
  mask_ = Mask(side, side);
}

ClientId SessionEngine::join(Role role, bool subscribe_adv_frames) {
  std::lock_guard lock(mutex_);
  if (role == Role::Source)
    for (const auto& [_, c] : clients_)
      if (c.role == Role::Source) throw ProtocolError(fmt::format("session {} already has a data source", id_));
  const ClientId id = next_client_++;
  clients_[id] = {role, subscribe_adv_frames, std::nullopt};
  return id;
}

void SessionEngine::leave(ClientId client) {
  std::lock_guard lock(mutex_);
  clients_.erase(client);
  if (writer_ == client) writer_.reset();
}

bool SessionEngine::has_subscribers() const {
  std::lock_guard lock(mutex_);
  for (const auto& [_, c] : clients_)
    if (c.subscribed) return true;
  return false;
}

bool SessionEngine::is_subscribed(ClientId client) const {
  std::lock_guard lock(mutex_);
  const auto it = clients_.find(client);
  return it != clients_.end() && it->second.subscribed;
}

std::size_t SessionEngine::client_count() const {
  std::lock_guard lock(mutex_);
  return clients_.size();
}

AttackConfig SessionEngine::config() const {
  std::lock_guard lock(mutex_);
  return config_;
}
int SessionEngine::iters_per_frame() const {
  std::lock_guard lock(mutex_);
  return iters_per_frame_;
}
AttackState SessionEngine::attack_state() const {
  std::lock_guard lock(mutex_);
  return state_;
}
Mask SessionEngine::mask() const {
  std::lock_guard lock(mutex_);
  return mask_;
}
std::uint64_t SessionEngine::frame_counter() const {
  std::lock_guard lock(mutex_);
  return frames_;
}

WireMessage SessionEngine::error_message(std::uint64_t sequence, const std::string& text, const std::string& field) const {
  json payload = {{"message", text}};
  if (!field.empty()) payload["field"] = field;
  return {MessageType::Error, id_, sequence, payload};
}

WireMessage SessionEngine::dropped_frame(std::uint64_t sequence) const {
  return error_message(sequence, "frame dropped: superseded by a newer frame");
}

std::vector<Outgoing> SessionEngine::handle(ClientId client, std::string_view text) {
  WireMessage m;
  try {
    m = parse_message(text);
  } catch (const ProtocolError& e) {
    return {{Outgoing::Audience::Sender, error_message(salvage_sequence(text), e.what(), e.field())}};
  }
  return handle(client, m);
}

std::vector<Outgoing> SessionEngine::handle(ClientId client, const WireMessage& m) {
  std::lock_guard lock(mutex_);
  auto reject = [&](const std::string& text, const std::string& field = {}) {
    return std::vector<Outgoing>{{Outgoing::Audience::Sender, error_message(m.sequence, text, field)}};
  };
  const auto it = clients_.find(client);
  if (it == clients_.end()) return reject("unknown client");
  Client& sender = it->second;
  if (m.session_id != id_) return reject(fmt::format("message addressed to session '{}'", m.session_id), "session_id");
  if (sender.last_sequence && m.sequence <= *sender.last_sequence)
    return reject(fmt::format("sequence {} does not increase (last {})", m.sequence, *sender.last_sequence), "sequence");
  sender.last_sequence = m.sequence;

  switch (m.type) {
    case MessageType::Frame:
      if (sender.role != Role::Source) return reject("only the data source sends frames", "type");
      return on_frame(m);
    case MessageType::MaskUpdate:
    case MessageType::ConfigUpdate:
      if (sender.role != Role::Panel) return reject("only control panels send updates", "type");
      if (writer_ && *writer_ != client) return reject("another panel holds write authority for this session", "type");
      writer_ = client;
      return m.type == MessageType::MaskUpdate ? on_mask(m) : on_config(m);
    default:
      return reject(fmt::format("'{}' messages are sent by the server only", to_string(m.type)), "type");
  }
}

std::vector<Outgoing> SessionEngine::on_frame(const WireMessage& m) {
  auto reject = [&](const std::string& text, const std::string& field) {
    return std::vector<Outgoing>{{Outgoing::Audience::Sender, error_message(m.sequence, text, field)}};
  };
  const auto& data = m.payload["data"].get_ref<const std::string&>();
  if (data.size() > options_.max_frame_bytes)
    return reject(fmt::format("frame data is {} bytes, the limit is {}", data.size(), options_.max_frame_bytes),
                  "payload.data");
  ImageTensor image;
  try {
    image = decode_image(base64_decode(data), detector_.input_channels());
  } catch (const ProtocolError& e) {
    return reject(e.what(), e.field());
  } catch (const InputError& e) {
    return reject(e.what(), "payload.data");
  }
  if (image.width() != m.payload["width"].get<int>() || image.height() != m.payload["height"].get<int>())
    return reject(fmt::format("frame is {}x{} but the header says {}x{}", image.width(), image.height(),
                              m.payload["width"].get<int>(), m.payload["height"].get<int>()),
                  "payload.width");
  const ImageTensor input = letterbox(image, detector_.input_side());

  AttackConfig run_config = config_;
  run_config.iterations = iters_per_frame_;
  const double start = clock_();
  AttackResult r = run_attack(input, mask_, run_config, detector_, options_.stop_on_success, state_);
  const double attack_ms = clock_() - start;
  state_ = std::move(r.state);
  // Only the latest loss is reported; the history would grow with the stream.
  state_.loss_history.erase(state_.loss_history.begin(), state_.loss_history.end() - 1);
  ++frames_;

  json boxes = json::array();
  for (const auto& d : r.adversarial_detections) boxes.push_back(detection_json(d));
  std::vector<Outgoing> out;
  out.push_back({Outgoing::Audience::Everyone,
                 {MessageType::Detections, id_, m.sequence,
                  {{"benign_count", r.report.benign_box_count}, {"boxes", boxes}, {"attack_ms", attack_ms}}}});
  out.push_back({Outgoing::Audience::AdvSubscribers,
                 {MessageType::AdvFrame, id_, m.sequence, frame_payload(r.adversarial)}});
  out.push_back({Outgoing::Audience::Everyone,
                 {MessageType::Stats, id_, m.sequence,
                  {{"loss", state_.loss_history.back()},
                   {"iterations_total", state_.iterations_done},
                   {"success", r.report.adversarial_box_count > r.report.benign_box_count}}}});
  return out;
}

std::vector<Outgoing> SessionEngine::on_mask(const WireMessage& m) {
  const int side = detector_.input_side();
  std::vector<Rect> effective;
  for (const Rect& r : parse_rects(m.payload)) {
    const Rect c = clip_rect(r, side, side);
    if (c.w > 0 && c.h > 0) effective.push_back(c);
  }
  mask_ = build_mask(effective, side, side);
  rects_ = effective;
  restrict_to_mask(state_, mask_);
  return {{Outgoing::Audience::Everyone, {MessageType::MaskUpdate, id_, m.sequence, rects_payload(effective)}}};
}

std::vector<Outgoing> SessionEngine::on_config(const WireMessage& m) {
  std::pair<AttackConfig, int> updated;
  try {
    updated = apply_config_update(config_, iters_per_frame_, m.payload, detector_.scale_config().num_classes);
  } catch (const ProtocolError& e) {
    return {{Outgoing::Audience::Sender, error_message(m.sequence, e.what(), e.field())}};
  }
  const auto& [next, iters] = updated;
  if (config_change_resets_delta(config_, next)) {
    const int side = detector_.input_side();
    state_ = AttackState::fresh(next, detector_.input_channels(), side, side);
  } else {
    clip_delta(state_, next.xi_unit());
  }
  config_ = next;
  iters_per_frame_ = iters;
  return {{Outgoing::Audience::Everyone, {MessageType::ConfigUpdate, id_, m.sequence, config_json(config_, iters)}}};
}

}  // namespace advoverlay
