#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cascadesplit/errors.hpp"

// Frame layout, all multi-byte fields big-endian:
//
//   offset 0  magic   0x53 0x41 ("SA")
//   offset 2  version 0x01
//   offset 3  length  u32, payload bytes
//   offset 7  payload JSON text
//
// One request frame is answered by exactly one response frame.

namespace cascadesplit::wire {

inline constexpr std::uint8_t kMagic0 = 0x53;
inline constexpr std::uint8_t kMagic1 = 0x41;
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 7;
inline constexpr std::uint32_t kMaxPayload = 16u << 20;

/// Violation of the framing or message contract.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::vector<std::uint8_t> encode_frame(std::string_view payload) {
  if (payload.size() > kMaxPayload) throw ProtocolError("payload exceeds frame limit");
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize + payload.size());
  out.push_back(kMagic0);
  out.push_back(kMagic1);
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(n >> 24));
  out.push_back(static_cast<std::uint8_t>(n >> 16));
  out.push_back(static_cast<std::uint8_t>(n >> 8));
  out.push_back(static_cast<std::uint8_t>(n));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

enum class FrameStatus { Ok, Incomplete, BadMagic, BadVersion, Oversized };

inline const char* to_string(FrameStatus s) {
  switch (s) {
    case FrameStatus::Ok: return "ok";
    case FrameStatus::Incomplete: return "incomplete";
    case FrameStatus::BadMagic: return "bad magic bytes";
    case FrameStatus::BadVersion: return "unsupported protocol version";
    case FrameStatus::Oversized: return "payload length exceeds limit";
  }
  return "?";
}

struct DecodedFrame {
  FrameStatus status = FrameStatus::Incomplete;
  std::string payload;
  /// Bytes consumed from the front of the buffer when status is Ok.
  std::size_t consumed = 0;
};

/// Decodes the first frame of `bytes`. Header errors are reported as soon
/// as the offending byte is visible; never reads past the buffer.
inline DecodedFrame decode_frame(std::span<const std::uint8_t> bytes) {
  DecodedFrame f;
  if (bytes.size() >= 1 && bytes[0] != kMagic0) return {FrameStatus::BadMagic, {}, 0};
  if (bytes.size() >= 2 && bytes[1] != kMagic1) return {FrameStatus::BadMagic, {}, 0};
  if (bytes.size() >= 3 && bytes[2] != kVersion) return {FrameStatus::BadVersion, {}, 0};
  if (bytes.size() < kHeaderSize) return f;
  const std::uint32_t n = (std::uint32_t{bytes[3]} << 24) | (std::uint32_t{bytes[4]} << 16) |
                          (std::uint32_t{bytes[5]} << 8) | std::uint32_t{bytes[6]};
  if (n > kMaxPayload) return {FrameStatus::Oversized, {}, 0};
  if (bytes.size() - kHeaderSize < n) return f;
  f.status = FrameStatus::Ok;
  f.payload.assign(reinterpret_cast<const char*>(bytes.data() + kHeaderSize), n);
  f.consumed = kHeaderSize + n;
  return f;
}

/// Feature vector to classify, or only an id when the server answers from a
/// replay column.
struct ClassifyRequest {
  std::uint64_t id = 0;
  std::optional<std::vector<double>> features;

  friend bool operator==(const ClassifyRequest&, const ClassifyRequest&) = default;
};

struct ClassifyResponse {
  std::uint64_t id = 0;
  std::vector<double> probs;
  std::string model;

  friend bool operator==(const ClassifyResponse&, const ClassifyResponse&) = default;
};

struct ErrorResponse {
  std::optional<std::uint64_t> id;
  std::string code;
  std::string message;

  friend bool operator==(const ErrorResponse&, const ErrorResponse&) = default;
};

using Response = std::variant<ClassifyResponse, ErrorResponse>;

inline std::string encode_request(const ClassifyRequest& r) {
  nlohmann::json j{{"type", "classify"}, {"id", r.id}};
  if (r.features) j["x"] = *r.features;
  return j.dump();
}

inline std::string encode_response(const Response& r) {
  nlohmann::json j;
  if (const auto* ok = std::get_if<ClassifyResponse>(&r)) {
    j = {{"type", "result"}, {"id", ok->id}, {"probs", ok->probs}, {"model", ok->model}};
  } else {
    const auto& err = std::get<ErrorResponse>(r);
    j = {{"type", "error"}, {"code", err.code}, {"message", err.message}};
    if (err.id) j["id"] = *err.id;
  }
  return j.dump();
}

namespace detail {

inline nlohmann::json parse_object(std::string_view payload) {
  auto j = nlohmann::json::parse(payload, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ProtocolError("payload is not a JSON object");
  return j;
}

}  // namespace detail

inline ClassifyRequest decode_request(std::string_view payload) {
  const auto j = detail::parse_object(payload);
  try {
    if (j.at("type").get<std::string>() != "classify") throw ProtocolError("unknown request type");
    ClassifyRequest r;
    r.id = j.at("id").get<std::uint64_t>();
    if (j.contains("x")) r.features = j.at("x").get<std::vector<double>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed request: ") + e.what());
  }
}

inline Response decode_response(std::string_view payload) {
  const auto j = detail::parse_object(payload);
  try {
    const auto type = j.at("type").get<std::string>();
    if (type == "result")
      return ClassifyResponse{j.at("id").get<std::uint64_t>(), j.at("probs").get<std::vector<double>>(),
                              j.at("model").get<std::string>()};
    if (type == "error") {
      ErrorResponse e{std::nullopt, j.at("code").get<std::string>(), j.at("message").get<std::string>()};
      if (j.contains("id")) e.id = j.at("id").get<std::uint64_t>();
      return e;
    }
    throw ProtocolError("unknown response type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed response: ") + e.what());
  }
}

}  // namespace cascadesplit::wire
