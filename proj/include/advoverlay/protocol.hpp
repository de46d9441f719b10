#pragma once

// Wire format of the /attack WebSocket endpoint. Every message is a JSON
// text object {type, session_id, sequence, payload}:
//
//   frame          {width, height, encoding: "png-base64", data}
//   mask_update    {rects: [{x, y, w, h}, ...]}          (detector-input pixels)
//   config_update  any subset of {mode, target_class, xi, alpha, monochrome,
//                  channel_source, application, monochrome_update, iters_per_frame}
//   detections     {benign_count, boxes: [{class_id, score, x, y, w, h}], attack_ms}
//   adv_frame      same as frame
//   stats          {loss, iterations_total, success}
//   error          {message, field?}

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "advoverlay/decode.hpp"
#include "advoverlay/errors.hpp"
#include "advoverlay/mask.hpp"
#include "advoverlay/tensor.hpp"

namespace advoverlay {

/// Malformed or schema-violating wire message.
class ProtocolError : public InputError {
 public:
  explicit ProtocolError(const std::string& message, std::string field = {})
      : InputError(message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

enum class MessageType { Frame, MaskUpdate, ConfigUpdate, Detections, AdvFrame, Stats, Error };

std::string_view to_string(MessageType type);
std::optional<MessageType> parse_message_type(std::string_view name);

struct WireMessage {
  MessageType type = MessageType::Error;
  std::string session_id;
  std::uint64_t sequence = 0;
  nlohmann::json payload = nlohmann::json::object();

  bool operator==(const WireMessage&) const = default;
};

/// Compact JSON with keys in sorted order, so equal messages serialise to
/// equal bytes.
std::string serialize(const WireMessage& message);

/// Parses and schema-checks; throws ProtocolError naming the bad field.
WireMessage parse_message(std::string_view text);

/// Schema violations of an already-parsed JSON value (empty when valid).
std::vector<std::string> schema_violations(const nlohmann::json& value);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws ProtocolError on characters outside the base64 alphabet.
std::vector<std::uint8_t> base64_decode(std::string_view text);

nlohmann::json frame_payload(const ImageTensor& image);
nlohmann::json detection_json(const Detection& d);
nlohmann::json rects_payload(const std::vector<Rect>& rects);
std::vector<Rect> parse_rects(const nlohmann::json& payload);

}  // namespace advoverlay
