// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The ssdsgd Authors

#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "ssdsgd/errors.hpp"
#include "ssdsgd/numkernel.hpp"

namespace ssdsgd::ps {

enum class MessageKind : std::uint8_t { Push = 0, PushAck = 1, PullReq = 2, PullResp = 3 };

inline std::string_view to_string(MessageKind k) {
  switch (k) {
    case MessageKind::Push: return "Push";
    case MessageKind::PushAck: return "PushAck";
    case MessageKind::PullReq: return "PullReq";
    case MessageKind::PullResp: return "PullResp";
  }
  return "?";
}

/// One protocol record. `payload` carries gradients for Push and weights for
/// PullResp; it is empty for PushAck and PullReq.
struct Message {
  MessageKind kind = MessageKind::Push;
  std::uint32_t key = 0;
  std::uint16_t worker_id = 0;
  std::uint64_t iteration = 0;
  DenseVec payload;

  friend bool operator==(const Message&, const Message&) = default;
};

// Wire layout, all integers little-endian:
//   kind u8 | key u32 | worker_id u16 | iteration u64 | count u32 | count x f64
// `count` is the number of payload elements. Records are self-delimiting.
inline constexpr std::size_t kHeaderBytes = 1 + 4 + 2 + 8 + 4;

namespace wire {

template <typename T>
inline void put_le(std::vector<std::byte>& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

template <typename T>
inline T get_le(std::span<const std::byte> in, std::size_t pos) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(std::to_integer<std::uint8_t>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace wire

inline std::size_t encoded_size(const Message& m) { return kHeaderBytes + 8 * m.payload.size(); }

inline void encode(const Message& m, std::vector<std::byte>& out) {
  if (m.payload.size() > 0xffffffffULL) throw ProtocolError("payload too large for wire format");
  out.reserve(out.size() + encoded_size(m));
  wire::put_le(out, static_cast<std::uint8_t>(m.kind));
  wire::put_le(out, m.key);
  wire::put_le(out, m.worker_id);
  wire::put_le(out, m.iteration);
  wire::put_le(out, static_cast<std::uint32_t>(m.payload.size()));
  for (double d : m.payload) wire::put_le(out, std::bit_cast<std::uint64_t>(d));
}

inline std::vector<std::byte> encode(const Message& m) {
  std::vector<std::byte> out;
  encode(m, out);
  return out;
}

/// Decodes one record from the front of `in`. Returns the message and the
/// number of bytes consumed, or nullopt if `in` holds only a partial record.
inline std::optional<std::pair<Message, std::size_t>> decode(std::span<const std::byte> in) {
  if (in.size() < kHeaderBytes) return std::nullopt;
  const auto kind = wire::get_le<std::uint8_t>(in, 0);
  if (kind > static_cast<std::uint8_t>(MessageKind::PullResp))
    throw ProtocolError("unknown message kind " + std::to_string(kind));
  Message m;
  m.kind = static_cast<MessageKind>(kind);
  m.key = wire::get_le<std::uint32_t>(in, 1);
  m.worker_id = wire::get_le<std::uint16_t>(in, 5);
  m.iteration = wire::get_le<std::uint64_t>(in, 7);
  const auto count = wire::get_le<std::uint32_t>(in, 15);
  const std::size_t total = kHeaderBytes + 8 * static_cast<std::size_t>(count);
  if (in.size() < total) return std::nullopt;
  m.payload.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    m.payload[i] = std::bit_cast<double>(wire::get_le<std::uint64_t>(in, kHeaderBytes + 8 * i));
  return std::make_pair(std::move(m), total);
}

}  // namespace ssdsgd::ps
