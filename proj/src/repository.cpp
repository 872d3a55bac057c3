#include "dedupacq/repository.hpp"

namespace dedupacq {

namespace {

template <class T>
T expect(proto::Message&& m, proto::MsgType want) {
  if (auto* v = std::get_if<T>(&m)) return std::move(*v);
  throw Error(ErrorCode::ProtocolError, "expected " + std::string(proto::to_string(want)) + ", got " +
                                            std::string(proto::to_string(proto::type_of(m))));
}

}  // namespace

PutStatus LocalRepository::put(const Digest& digest, std::span<const std::uint8_t> payload) {
  const PutStatus st = store_.put_artifact(digest, payload);
  sent_ += payload.size();
  return st;
}

RemoteRepository::RemoteRepository(net::Endpoint endpoint, net::ClientOptions options, std::size_t connections)
    : endpoint_(std::move(endpoint)) {
  for (std::size_t i = 0; i < std::max<std::size_t>(1, connections); ++i) {
    idle_.push_back(std::make_unique<net::Client>(endpoint_, options));
  }
}

proto::Message RemoteRepository::call(const proto::Message& request) {
  std::unique_ptr<net::Client> client;
  {
    std::unique_lock lock(mutex_);
    available_.wait(lock, [this] { return !idle_.empty(); });
    client = std::move(idle_.back());
    idle_.pop_back();
  }
  struct Return {
    RemoteRepository& self;
    std::unique_ptr<net::Client>& client;
    ~Return() {
      std::lock_guard lock(self.mutex_);
      self.idle_.push_back(std::move(client));
      self.available_.notify_one();
    }
  } give_back{*this, client};
  return client->call(request);
}

std::vector<bool> RemoteRepository::has_digests(std::span<const Digest> batch) {
  if (batch.size() > max_check_batch()) {
    throw Error(ErrorCode::BatchTooLarge, "batch of " + std::to_string(batch.size()) + " exceeds 512");
  }
  auto r = expect<proto::CheckResp>(call(proto::Check{{batch.begin(), batch.end()}}), proto::MsgType::CheckResp);
  return r.flags(batch.size());
}

PutStatus RemoteRepository::put(const Digest& digest, std::span<const std::uint8_t> payload) {
  auto r = expect<proto::PutAck>(call(proto::Put{digest, Bytes(payload.begin(), payload.end())}),
                                 proto::MsgType::PutAck);
  sent_ += payload.size();
  switch (r.status) {
    case proto::PutResult::Stored: return PutStatus::Stored;
    case proto::PutResult::AlreadyPresent: return PutStatus::AlreadyPresent;
    case proto::PutResult::DigestMismatch: break;
  }
  throw Error(ErrorCode::DigestMismatch, "server rejected payload for " + digest.hex());
}

Bytes RemoteRepository::get(const Digest& digest) {
  return expect<proto::Data>(call(proto::Get{digest}), proto::MsgType::Data).payload;
}

std::string RemoteRepository::commit_manifest(const Manifest& m) {
  const std::string canonical = manifest_canonical_bytes(m);
  const auto ack = expect<proto::ManifestAck>(call(proto::ManifestCommit{canonical}), proto::MsgType::ManifestAck);
  return ack.manifest_id.hex();
}

Manifest RemoteRepository::get_manifest(const std::string& id) {
  if (id.size() != 64) throw Error(ErrorCode::NotFound, "no manifest " + id);
  Digest d;
  try {
    d = Digest::from_hex(id);
  } catch (const Error&) {
    throw Error(ErrorCode::NotFound, "no manifest " + id);
  }
  auto doc = expect<proto::ManifestDoc>(call(proto::GetManifest{d}), proto::MsgType::ManifestDoc);
  Manifest m = parse_manifest(doc.canonical);
  if (m.manifest_id != id) throw Error(ErrorCode::VerificationFailed, "manifest " + id + " hashes to " + m.manifest_id);
  return m;
}

StoreStats RemoteRepository::stats() {
  return expect<proto::StatsResp>(call(proto::StatsReq{}), proto::MsgType::StatsResp).stats;
}

}  // namespace dedupacq
