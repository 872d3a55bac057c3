#pragma once

// DFD1 framed wire protocol.
//
//   frame = "DFD1" | u8 msg_type | u32 body_length (LE) | body
//
// All integers are little-endian. See docs/protocol.md for body layouts.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dedupacq/byte_source.hpp"
#include "dedupacq/digest.hpp"
#include "dedupacq/error.hpp"
#include "dedupacq/store.hpp"

namespace dedupacq::proto {

constexpr std::uint16_t kProtocolVersion = 1;
constexpr std::size_t kHeaderSize = 9;
constexpr std::uint32_t kMaxBody = 96u << 20;
constexpr std::uint16_t kDefaultPort = 7311;

enum class MsgType : std::uint8_t {
  Hello = 1,
  HelloAck = 2,
  Check = 3,
  CheckResp = 4,
  Put = 5,
  PutAck = 6,
  ManifestCommit = 7,
  ManifestAck = 8,
  Get = 9,
  Data = 10,
  GetManifest = 11,
  ManifestDoc = 12,
  StatsReq = 13,
  StatsResp = 14,
  Error = 15,
};

struct Hello {
  std::uint16_t version = kProtocolVersion;
  bool operator==(const Hello&) const = default;
};
struct HelloAck {
  std::uint16_t version = kProtocolVersion;
  bool operator==(const HelloAck&) const = default;
};
struct Check {
  std::vector<Digest> digests;
  bool operator==(const Check&) const = default;
};
struct CheckResp {
  Bytes bitmap;  // bit i (LSB-first within each byte) = digest i present

  static CheckResp from_flags(const std::vector<bool>& flags);
  // First n flags. Throws ProtocolError if the bitmap is too short.
  std::vector<bool> flags(std::size_t n) const;
  bool operator==(const CheckResp&) const = default;
};
struct Put {
  Digest digest;
  Bytes payload;
  bool operator==(const Put&) const = default;
};
enum class PutResult : std::uint8_t { Stored = 0, AlreadyPresent = 1, DigestMismatch = 2 };
struct PutAck {
  PutResult status = PutResult::Stored;
  bool operator==(const PutAck&) const = default;
};
struct ManifestCommit {
  std::string canonical;
  bool operator==(const ManifestCommit&) const = default;
};
struct ManifestAck {
  Digest manifest_id;
  bool operator==(const ManifestAck&) const = default;
};
struct Get {
  Digest digest;
  bool operator==(const Get&) const = default;
};
struct Data {
  Bytes payload;
  bool operator==(const Data&) const = default;
};
struct GetManifest {
  Digest manifest_id;
  bool operator==(const GetManifest&) const = default;
};
struct ManifestDoc {
  std::string canonical;
  bool operator==(const ManifestDoc&) const = default;
};
struct StatsReq {
  bool operator==(const StatsReq&) const = default;
};
struct StatsResp {
  StoreStats stats;
  bool operator==(const StatsResp&) const = default;
};
struct ErrorMsg {
  std::uint16_t code = 0;
  std::string text;
  bool operator==(const ErrorMsg&) const = default;
};

using Message = std::variant<Hello, HelloAck, Check, CheckResp, Put, PutAck, ManifestCommit, ManifestAck, Get, Data,
                             GetManifest, ManifestDoc, StatsReq, StatsResp, ErrorMsg>;

MsgType type_of(const Message& m);
std::string_view to_string(MsgType t);

struct FrameHeader {
  MsgType type;
  std::uint32_t body_length = 0;
};

// Validates magic, type and length bound. `raw` must hold kHeaderSize bytes.
FrameHeader decode_header(std::span<const std::uint8_t> raw);

Bytes encode_body(const Message& m);
Message decode_body(MsgType type, std::span<const std::uint8_t> body);

// Throws FrameTooLarge when the body exceeds kMaxBody.
Bytes encode_frame(const Message& m);

struct Decoded {
  Message message;
  std::size_t consumed = 0;
};
// Decodes one frame from the front of `buffer`. Throws FrameTooShort when the
// buffer ends mid-frame, ProtocolError on bad magic, unknown type or a
// malformed body, FrameTooLarge when the declared length exceeds kMaxBody.
Decoded decode_frame(std::span<const std::uint8_t> buffer);

// ERROR frame codes are ErrorCode positions + 1.
std::uint16_t wire_code(ErrorCode code);
std::optional<ErrorCode> from_wire_code(std::uint16_t code);
// ERROR text carries the message, then details one per line.
ErrorMsg make_error(const Error& e);
[[noreturn]] void raise(const ErrorMsg& e);

}  // namespace dedupacq::proto
