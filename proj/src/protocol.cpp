#include "dedupacq/protocol.hpp"

#include <cstring>

namespace dedupacq::proto {

namespace {

constexpr std::uint8_t kMagic[4] = {'D', 'F', 'D', '1'};
constexpr std::size_t kMaxErrorText = 0xFFFF;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void digest(const Digest& d) { out_.insert(out_.end(), d.bytes().begin(), d.bytes().end()); }
  void raw(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void raw(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> b, MsgType t) : b_(b), type_(t) {}
  std::uint8_t u8() { return need(1)[0]; }
  std::uint16_t u16() {
    auto s = need(2);
    return static_cast<std::uint16_t>(s[0] | s[1] << 8);
  }
  std::uint64_t u64() {
    auto s = need(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = v << 8 | s[i];
    return v;
  }
  Digest digest() { return Digest::from_bytes(need(Digest::kSize)); }
  std::span<const std::uint8_t> take(std::uint64_t n) { return need(n); }
  std::span<const std::uint8_t> rest() { return need(b_.size() - pos_); }
  void done() const {
    if (pos_ != b_.size()) bad(std::to_string(b_.size() - pos_) + " trailing byte(s)");
  }

 private:
  std::span<const std::uint8_t> need(std::uint64_t n) {
    if (n > b_.size() - pos_) bad("body truncated");
    auto s = b_.subspan(pos_, static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return s;
  }
  [[noreturn]] void bad(const std::string& what) const {
    throw Error(ErrorCode::ProtocolError, std::string(to_string(type_)) + ": " + what);
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
  MsgType type_;
};

template <class... Fs>
struct Overload : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overload(Fs...) -> Overload<Fs...>;

}  // namespace

CheckResp CheckResp::from_flags(const std::vector<bool>& flags) {
  CheckResp r;
  r.bitmap.assign((flags.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i]) r.bitmap[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return r;
}

std::vector<bool> CheckResp::flags(std::size_t n) const {
  if (bitmap.size() != (n + 7) / 8) {
    throw Error(ErrorCode::ProtocolError, "CHECK_RESP bitmap has " + std::to_string(bitmap.size()) +
                                              " byte(s) for " + std::to_string(n) + " digest(s)");
  }
  std::vector<bool> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (bitmap[i / 8] >> (i % 8)) & 1;
  return out;
}

MsgType type_of(const Message& m) { return static_cast<MsgType>(m.index() + 1); }

std::string_view to_string(MsgType t) {
  switch (t) {
    case MsgType::Hello: return "HELLO";
    case MsgType::HelloAck: return "HELLO_ACK";
    case MsgType::Check: return "CHECK";
    case MsgType::CheckResp: return "CHECK_RESP";
    case MsgType::Put: return "PUT";
    case MsgType::PutAck: return "PUT_ACK";
    case MsgType::ManifestCommit: return "MANIFEST_COMMIT";
    case MsgType::ManifestAck: return "MANIFEST_ACK";
    case MsgType::Get: return "GET";
    case MsgType::Data: return "DATA";
    case MsgType::GetManifest: return "GET_MANIFEST";
    case MsgType::ManifestDoc: return "MANIFEST_DOC";
    case MsgType::StatsReq: return "STATS_REQ";
    case MsgType::StatsResp: return "STATS_RESP";
    case MsgType::Error: return "ERROR";
  }
  return "UNKNOWN";
}

Bytes encode_body(const Message& m) {
  Writer w;
  std::visit(Overload{
                 [&](const Hello& x) { w.u16(x.version); },
                 [&](const HelloAck& x) { w.u16(x.version); },
                 [&](const Check& x) {
                   if (x.digests.size() > 0xFFFF) throw Error(ErrorCode::BatchTooLarge, "CHECK holds more than 65535 digests");
                   w.u16(static_cast<std::uint16_t>(x.digests.size()));
                   for (const auto& d : x.digests) w.digest(d);
                 },
                 [&](const CheckResp& x) { w.raw(x.bitmap); },
                 [&](const Put& x) {
                   w.digest(x.digest);
                   w.u64(x.payload.size());
                   w.raw(x.payload);
                 },
                 [&](const PutAck& x) { w.u8(static_cast<std::uint8_t>(x.status)); },
                 [&](const ManifestCommit& x) { w.raw(x.canonical); },
                 [&](const ManifestAck& x) { w.digest(x.manifest_id); },
                 [&](const Get& x) { w.digest(x.digest); },
                 [&](const Data& x) {
                   w.u64(x.payload.size());
                   w.raw(x.payload);
                 },
                 [&](const GetManifest& x) { w.digest(x.manifest_id); },
                 [&](const ManifestDoc& x) { w.raw(x.canonical); },
                 [&](const StatsReq&) {},
                 [&](const StatsResp& x) {
                   w.u64(x.stats.unique_artifacts);
                   w.u64(x.stats.logical_bytes);
                   w.u64(x.stats.physical_bytes);
                   w.u64(x.stats.manifest_count);
                 },
                 [&](const ErrorMsg& x) {
                   const std::size_t n = std::min(x.text.size(), kMaxErrorText);
                   w.u16(x.code);
                   w.u16(static_cast<std::uint16_t>(n));
                   w.raw(std::string_view(x.text).substr(0, n));
                 },
             },
             m);
  return w.take();
}

Message decode_body(MsgType type, std::span<const std::uint8_t> body) {
  Reader r(body, type);
  Message out;
  switch (type) {
    case MsgType::Hello: out = Hello{r.u16()}; break;
    case MsgType::HelloAck: out = HelloAck{r.u16()}; break;
    case MsgType::Check: {
      Check c;
      const std::uint16_t n = r.u16();
      c.digests.reserve(n);
      for (std::uint16_t i = 0; i < n; ++i) c.digests.push_back(r.digest());
      out = std::move(c);
      break;
    }
    case MsgType::CheckResp: {
      auto rest = r.rest();
      out = CheckResp{Bytes(rest.begin(), rest.end())};
      break;
    }
    case MsgType::Put: {
      Put p;
      p.digest = r.digest();
      const std::uint64_t n = r.u64();
      auto payload = r.take(n);
      p.payload.assign(payload.begin(), payload.end());
      out = std::move(p);
      break;
    }
    case MsgType::PutAck: {
      const std::uint8_t s = r.u8();
      if (s > 2) throw Error(ErrorCode::ProtocolError, "PUT_ACK: unknown status " + std::to_string(s));
      out = PutAck{static_cast<PutResult>(s)};
      break;
    }
    case MsgType::ManifestCommit: {
      auto rest = r.rest();
      out = ManifestCommit{std::string(rest.begin(), rest.end())};
      break;
    }
    case MsgType::ManifestAck: out = ManifestAck{r.digest()}; break;
    case MsgType::Get: out = Get{r.digest()}; break;
    case MsgType::Data: {
      const std::uint64_t n = r.u64();
      auto payload = r.take(n);
      out = Data{Bytes(payload.begin(), payload.end())};
      break;
    }
    case MsgType::GetManifest: out = GetManifest{r.digest()}; break;
    case MsgType::ManifestDoc: {
      auto rest = r.rest();
      out = ManifestDoc{std::string(rest.begin(), rest.end())};
      break;
    }
    case MsgType::StatsReq: out = StatsReq{}; break;
    case MsgType::StatsResp: {
      StoreStats s;
      s.unique_artifacts = r.u64();
      s.logical_bytes = r.u64();
      s.physical_bytes = r.u64();
      s.manifest_count = r.u64();
      out = StatsResp{s};
      break;
    }
    case MsgType::Error: {
      ErrorMsg e;
      e.code = r.u16();
      const std::uint16_t n = r.u16();
      auto text = r.take(n);
      e.text.assign(text.begin(), text.end());
      out = std::move(e);
      break;
    }
    default:
      throw Error(ErrorCode::ProtocolError, "unknown message type " + std::to_string(static_cast<int>(type)));
  }
  r.done();
  return out;
}

FrameHeader decode_header(std::span<const std::uint8_t> raw) {
  if (raw.size() < kHeaderSize) {
    throw Error(ErrorCode::FrameTooShort, "header needs 9 bytes, have " + std::to_string(raw.size()));
  }
  if (std::memcmp(raw.data(), kMagic, 4) != 0) throw Error(ErrorCode::ProtocolError, "bad magic");
  const std::uint8_t t = raw[4];
  if (t < 1 || t > 15) throw Error(ErrorCode::ProtocolError, "unknown message type " + std::to_string(t));
  const std::uint32_t len = static_cast<std::uint32_t>(raw[5]) | static_cast<std::uint32_t>(raw[6]) << 8 |
                            static_cast<std::uint32_t>(raw[7]) << 16 | static_cast<std::uint32_t>(raw[8]) << 24;
  if (len > kMaxBody) {
    throw Error(ErrorCode::FrameTooLarge, "body length " + std::to_string(len) + " exceeds " + std::to_string(kMaxBody));
  }
  return {static_cast<MsgType>(t), len};
}

Bytes encode_frame(const Message& m) {
  const Bytes body = encode_body(m);
  if (body.size() > kMaxBody) {
    throw Error(ErrorCode::FrameTooLarge, "body length " + std::to_string(body.size()) + " exceeds " + std::to_string(kMaxBody));
  }
  Bytes out;
  out.reserve(kHeaderSize + body.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(static_cast<std::uint8_t>(type_of(m)));
  const auto n = static_cast<std::uint32_t>(body.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

Decoded decode_frame(std::span<const std::uint8_t> buffer) {
  // Check magic on whatever prefix is available so garbage fails fast.
  const std::size_t k = std::min<std::size_t>(buffer.size(), 4);
  if (std::memcmp(buffer.data(), kMagic, k) != 0) throw Error(ErrorCode::ProtocolError, "bad magic");
  const FrameHeader h = decode_header(buffer);
  if (buffer.size() - kHeaderSize < h.body_length) {
    throw Error(ErrorCode::FrameTooShort, "body needs " + std::to_string(h.body_length) + " bytes, have " +
                                              std::to_string(buffer.size() - kHeaderSize));
  }
  return {decode_body(h.type, buffer.subspan(kHeaderSize, h.body_length)), kHeaderSize + h.body_length};
}

std::uint16_t wire_code(ErrorCode code) { return static_cast<std::uint16_t>(static_cast<int>(code) + 1); }

std::optional<ErrorCode> from_wire_code(std::uint16_t code) {
  if (code < 1 || code > static_cast<int>(ErrorCode::IoError) + 1) return std::nullopt;
  return static_cast<ErrorCode>(code - 1);
}

ErrorMsg make_error(const Error& e) {
  std::string text = e.what();
  const std::string prefix = std::string(to_string(e.code())) + ": ";
  if (text.rfind(prefix, 0) == 0) text.erase(0, prefix.size());
  for (const auto& d : e.details()) {
    if (text.size() + d.size() + 1 > kMaxErrorText) break;
    text += "\n" + d;
  }
  return {wire_code(e.code()), text};
}

void raise(const ErrorMsg& e) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (true) {
    const auto nl = e.text.find('\n', start);
    lines.push_back(e.text.substr(start, nl == std::string::npos ? std::string::npos : nl - start));
    if (nl == std::string::npos) break;
    start = nl + 1;
  }
  const std::string message = lines.front();
  lines.erase(lines.begin());
  const auto code = from_wire_code(e.code);
  if (!code) throw Error(ErrorCode::ProtocolError, "peer error " + std::to_string(e.code) + ": " + message, lines);
  throw Error(*code, message, lines);
}

}  // namespace dedupacq::proto
