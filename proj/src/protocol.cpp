#include "advoverlay/protocol.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <climits>
#include <set>

#include <boost/beast/core/detail/base64.hpp>
#include <fmt/format.h>

#include "advoverlay/image_io.hpp"

namespace advoverlay {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<MessageType, std::string_view>, 7> kTypeNames{{
    {MessageType::Frame, "frame"},
    {MessageType::MaskUpdate, "mask_update"},
    {MessageType::ConfigUpdate, "config_update"},
    {MessageType::Detections, "detections"},
    {MessageType::AdvFrame, "adv_frame"},
    {MessageType::Stats, "stats"},
    {MessageType::Error, "error"},
}};

class Checker {
 public:
  std::vector<std::string> problems;

  void fail(const std::string& path, const std::string& what) { problems.push_back(path + ": " + what); }

  bool object(const json& v, const std::string& path, std::set<std::string> required, std::set<std::string> optional) {
    if (!v.is_object()) {
      fail(path, "expected an object");
      return false;
    }
    for (const auto& [key, _] : v.items())
      if (!required.count(key) && !optional.count(key)) fail(path + "." + key, "unexpected field");
    bool ok = true;
    for (const auto& key : required)
      if (!v.contains(key)) {
        fail(path + "." + key, "missing");
        ok = false;
      }
    return ok;
  }

  void integer(const json& v, const std::string& path, std::int64_t min, std::int64_t max = INT32_MAX) {
    if (!v.is_number_integer()) return fail(path, "expected an integer");
    if (v.is_number_unsigned() ? v.get<std::uint64_t>() > static_cast<std::uint64_t>(max) : v.get<std::int64_t>() > max)
      return fail(path, fmt::format("must be <= {}", max));
    if (!v.is_number_unsigned() && v.get<std::int64_t>() < min) fail(path, fmt::format("must be >= {}", min));
  }
  void number(const json& v, const std::string& path) {
    if (!v.is_number()) fail(path, "expected a number");
  }
  void string(const json& v, const std::string& path) {
    if (!v.is_string()) fail(path, "expected a string");
  }
  void boolean(const json& v, const std::string& path) {
    if (!v.is_boolean()) fail(path, "expected a boolean");
  }

  void frame(const json& p) {
    if (!object(p, "payload", {"width", "height", "encoding", "data"}, {})) return;
    integer(p["width"], "payload.width", 1);
    integer(p["height"], "payload.height", 1);
    if (p["encoding"] != "png-base64") fail("payload.encoding", "must be \"png-base64\"");
    string(p["data"], "payload.data");
  }

  void rects(const json& p) {
    if (!object(p, "payload", {"rects"}, {})) return;
    if (!p["rects"].is_array()) return fail("payload.rects", "expected an array");
    for (std::size_t i = 0; i < p["rects"].size(); ++i) {
      const auto& r = p["rects"][i];
      const std::string path = fmt::format("payload.rects[{}]", i);
      if (!object(r, path, {"x", "y", "w", "h"}, {})) continue;
      for (const char* k : {"x", "y", "w", "h"}) integer(r[k], path + "." + k, INT32_MIN);
    }
  }

  void config(const json& p) {
    if (!object(p, "payload", {},
                {"mode", "target_class", "xi", "alpha", "monochrome", "channel_source", "application",
                 "monochrome_update", "iters_per_frame"}))
      return;
    for (const char* k : {"mode", "channel_source", "application", "monochrome_update"})
      if (p.contains(k)) string(p[k], std::string("payload.") + k);
    for (const char* k : {"xi", "alpha"})
      if (p.contains(k)) number(p[k], std::string("payload.") + k);
    if (p.contains("monochrome")) boolean(p["monochrome"], "payload.monochrome");
    if (p.contains("iters_per_frame")) integer(p["iters_per_frame"], "payload.iters_per_frame", INT32_MIN);
    if (p.contains("target_class") && !p["target_class"].is_null())
      integer(p["target_class"], "payload.target_class", INT32_MIN);
  }

  void detections(const json& p) {
    if (!object(p, "payload", {"benign_count", "boxes", "attack_ms"}, {})) return;
    integer(p["benign_count"], "payload.benign_count", 0);
    number(p["attack_ms"], "payload.attack_ms");
    if (!p["boxes"].is_array()) return fail("payload.boxes", "expected an array");
    for (std::size_t i = 0; i < p["boxes"].size(); ++i) {
      const auto& b = p["boxes"][i];
      const std::string path = fmt::format("payload.boxes[{}]", i);
      if (!object(b, path, {"class_id", "score", "x", "y", "w", "h"}, {})) continue;
      integer(b["class_id"], path + ".class_id", 1);
      for (const char* k : {"score", "x", "y", "w", "h"}) number(b[k], path + "." + k);
    }
  }

  void stats(const json& p) {
    if (!object(p, "payload", {"loss", "iterations_total", "success"}, {})) return;
    number(p["loss"], "payload.loss");
    integer(p["iterations_total"], "payload.iterations_total", 0);
    boolean(p["success"], "payload.success");
  }

  void error(const json& p) {
    if (!object(p, "payload", {"message"}, {"field"})) return;
    string(p["message"], "payload.message");
    if (p.contains("field")) string(p["field"], "payload.field");
  }
};

std::string first_field(const std::string& problem) { return problem.substr(0, problem.find(':')); }

}  // namespace

std::string_view to_string(MessageType type) {
  for (const auto& [t, name] : kTypeNames)
    if (t == type) return name;
  return "?";
}

std::optional<MessageType> parse_message_type(std::string_view name) {
  for (const auto& [t, n] : kTypeNames)
    if (n == name) return t;
  return std::nullopt;
}

std::string serialize(const WireMessage& m) {
  json j = json::object();
  j["type"] = to_string(m.type);
  j["session_id"] = m.session_id;
  j["sequence"] = m.sequence;
  j["payload"] = m.payload;
  return j.dump();
}

std::vector<std::string> schema_violations(const json& v) {
  Checker c;
  if (!c.object(v, "message", {"type", "session_id", "sequence", "payload"}, {})) return c.problems;
  c.string(v["session_id"], "session_id");
  c.integer(v["sequence"], "sequence", 0, INT64_MAX);
  std::optional<MessageType> type;
  if (v["type"].is_string()) type = parse_message_type(v["type"].get<std::string>());
  if (!type) {
    c.fail("type", "unknown message type");
    return c.problems;
  }
  const json& p = v["payload"];
  switch (*type) {
    case MessageType::Frame:
    case MessageType::AdvFrame: c.frame(p); break;
    case MessageType::MaskUpdate: c.rects(p); break;
    case MessageType::ConfigUpdate: c.config(p); break;
    case MessageType::Detections: c.detections(p); break;
    case MessageType::Stats: c.stats(p); break;
    case MessageType::Error: c.error(p); break;
  }
  return c.problems;
}

WireMessage parse_message(std::string_view text) {
  json v = json::parse(text, nullptr, false);
  if (v.is_discarded()) throw ProtocolError("message is not valid JSON");
  const auto problems = schema_violations(v);
  if (!problems.empty()) throw ProtocolError(problems.front(), first_field(problems.front()));
  WireMessage m;
  m.type = *parse_message_type(v["type"].get<std::string>());
  m.session_id = v["session_id"].get<std::string>();
  m.sequence = static_cast<std::uint64_t>(v["sequence"].get<std::int64_t>());
  m.payload = std::move(v["payload"]);
  return m;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  namespace b64 = boost::beast::detail::base64;
  std::string_view body = text;
  for (int pad = 0; pad < 2 && !body.empty() && body.back() == '='; ++pad) body.remove_suffix(1);
  const bool alphabet_only = std::all_of(body.begin(), body.end(), [](char ch) {
    return std::isalnum(static_cast<unsigned char>(ch)) || ch == '+' || ch == '/';
  });
  if (!alphabet_only || body.size() % 4 == 1) throw ProtocolError("frame data is not valid base64", "payload.data");
  std::vector<std::uint8_t> out(b64::decoded_size(body.size()) + 3);
  const auto written = b64::decode(out.data(), body.data(), body.size()).first;
  out.resize(written);
  return out;
}

json frame_payload(const ImageTensor& image) {
  return {{"width", image.width()},
          {"height", image.height()},
          {"encoding", "png-base64"},
          {"data", base64_encode(encode_png(image))}};
}

json detection_json(const Detection& d) {
  return {{"class_id", d.class_id}, {"score", d.score}, {"x", d.box.x}, {"y", d.box.y}, {"w", d.box.w}, {"h", d.box.h}};
}

json rects_payload(const std::vector<Rect>& rects) {
  json list = json::array();
  for (const auto& r : rects) list.push_back({{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}});
  return {{"rects", list}};
}

std::vector<Rect> parse_rects(const json& payload) {
  std::vector<Rect> out;
  for (const auto& r : payload.at("rects"))
    out.push_back({r.at("x").get<int>(), r.at("y").get<int>(), r.at("w").get<int>(), r.at("h").get<int>()});
  return out;
}

}  // namespace advoverlay
