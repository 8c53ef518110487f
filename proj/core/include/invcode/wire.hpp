#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "invcode/types.hpp"

namespace invcode::wire {

// Frame layout (all integers little-endian):
//   magic "CIN1" | u8 msg_type | u64 query_id | u8 task_index | u32 length | body
// TASK / RESULT: length = dim, body = dim x f64 (IEEE-754, little-endian).
// ERROR:         length = message byte count, body = u16 code + UTF-8 message.

inline constexpr std::array<std::uint8_t, 4> kMagic{0x43, 0x49, 0x4E, 0x31};
inline constexpr std::size_t kHeaderSize = 18;
inline constexpr std::uint32_t kMaxDim = 1u << 20;
inline constexpr std::uint32_t kMaxMessage = 1u << 16;

enum class MsgType : std::uint8_t { Task = 1, Result = 2, Error = 3 };

enum ErrorFrameCode : std::uint16_t {
  kMalformedFrame = 1,
  kDimensionMismatch = 2,
  kEvaluationFailed = 3,
  kUnexpectedType = 4,
};

struct Header {
  MsgType type = MsgType::Task;
  std::uint64_t query_id = 0;
  std::uint8_t task_index = 0;
  std::uint32_t length = 0;

  /// Bytes that follow the header.
  std::size_t body_size() const noexcept {
    return type == MsgType::Error ? 2 + static_cast<std::size_t>(length)
                                  : 8 * static_cast<std::size_t>(length);
  }
};

struct Frame {
  MsgType type = MsgType::Task;
  std::uint64_t query_id = 0;
  std::uint8_t task_index = 0;
  Vec payload;
  std::uint16_t error_code = 0;
  std::string message;

  bool operator==(const Frame& o) const {
    return type == o.type && query_id == o.query_id && task_index == o.task_index &&
           payload.size() == o.payload.size() && payload == o.payload &&
           error_code == o.error_code && message == o.message;
  }
};

Frame task_frame(std::uint64_t query_id, std::uint8_t task_index, const Vec& payload);
Frame result_frame(std::uint64_t query_id, std::uint8_t task_index, const Vec& payload);
Frame error_frame(std::uint64_t query_id, std::uint8_t task_index, std::uint16_t code,
                  std::string message);

std::vector<std::uint8_t> encode(const Frame& frame);

/// Validates magic, message type and length bounds. Throws ProtocolError.
Header parse_header(std::span<const std::uint8_t> bytes);

/// Decodes one complete frame (header + body, nothing more). Throws
/// ProtocolError.
Frame decode(std::span<const std::uint8_t> bytes);

/// Decodes a body for an already-parsed header.
Frame decode_body(const Header& header, std::span<const std::uint8_t> body);

}  // namespace invcode::wire
