#include "invcode/wire.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include "invcode/error.hpp"

namespace invcode::wire {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
  return static_cast<T>(v);
}

[[noreturn]] void protocol_error(const std::string& what) {
  throw Error(ErrorCode::ProtocolError, what);
}

}  // namespace

Frame task_frame(std::uint64_t query_id, std::uint8_t task_index, const Vec& payload) {
  return Frame{MsgType::Task, query_id, task_index, payload, 0, {}};
}

Frame result_frame(std::uint64_t query_id, std::uint8_t task_index, const Vec& payload) {
  return Frame{MsgType::Result, query_id, task_index, payload, 0, {}};
}

Frame error_frame(std::uint64_t query_id, std::uint8_t task_index, std::uint16_t code,
                  std::string message) {
  if (message.size() > kMaxMessage) message.resize(kMaxMessage);
  return Frame{MsgType::Error, query_id, task_index, Vec(), code, std::move(message)};
}

std::vector<std::uint8_t> encode(const Frame& frame) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize + 8 * static_cast<std::size_t>(frame.payload.size()) +
              frame.message.size() + 2);
  for (auto c : kMagic) out.push_back(static_cast<std::uint8_t>(c));
  out.push_back(static_cast<std::uint8_t>(frame.type));
  put_le<std::uint64_t>(out, frame.query_id);
  out.push_back(frame.task_index);
  if (frame.type == MsgType::Error) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(frame.message.size()));
    put_le<std::uint16_t>(out, frame.error_code);
    for (char c : frame.message) out.push_back(static_cast<std::uint8_t>(c));
    return out;
  }
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(frame.payload.size()));
  for (Eigen::Index i = 0; i < frame.payload.size(); ++i)
    put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(frame.payload[i]));
  return out;
}

Header parse_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) protocol_error("truncated header");
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) protocol_error("bad magic");
  const auto type = bytes[4];
  if (type < 1 || type > 3) protocol_error("unknown message type " + std::to_string(type));
  Header h;
  h.type = static_cast<MsgType>(type);
  h.query_id = get_le<std::uint64_t>(bytes, 5);
  h.task_index = bytes[13];
  h.length = get_le<std::uint32_t>(bytes, 14);
  const auto limit = h.type == MsgType::Error ? kMaxMessage : kMaxDim;
  if (h.length > limit) protocol_error("length field " + std::to_string(h.length) + " too large");
  return h;
}

Frame decode_body(const Header& header, std::span<const std::uint8_t> body) {
  if (body.size() != header.body_size())
    protocol_error("body is " + std::to_string(body.size()) + " bytes, header implies " +
                   std::to_string(header.body_size()));
  Frame f;
  f.type = header.type;
  f.query_id = header.query_id;
  f.task_index = header.task_index;
  if (header.type == MsgType::Error) {
    f.error_code = get_le<std::uint16_t>(body, 0);
    f.message.assign(reinterpret_cast<const char*>(body.data()) + 2, header.length);
    return f;
  }
  f.payload.resize(header.length);
  for (std::uint32_t i = 0; i < header.length; ++i)
    f.payload[i] = std::bit_cast<double>(get_le<std::uint64_t>(body, 8 * static_cast<std::size_t>(i)));
  return f;
}

Frame decode(std::span<const std::uint8_t> bytes) {
  const auto header = parse_header(bytes);
  return decode_body(header, bytes.subspan(kHeaderSize));
}

}  // namespace invcode::wire
