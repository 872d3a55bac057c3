#pragma once

// What the acquisition client and reconstruction need from an evidence
// store, whether it lives in this process (LAN mode) or behind DFD1.

#include <atomic>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "dedupacq/net.hpp"
#include "dedupacq/store.hpp"

namespace dedupacq {

class Repository {
 public:
  virtual ~Repository() = default;
  virtual std::size_t max_check_batch() const { return 512; }
  virtual std::vector<bool> has_digests(std::span<const Digest> batch) = 0;
  virtual PutStatus put(const Digest& digest, std::span<const std::uint8_t> payload) = 0;
  virtual Bytes get(const Digest& digest) = 0;
  virtual std::string commit_manifest(const Manifest& m) = 0;
  virtual Manifest get_manifest(const std::string& manifest_id) = 0;
  virtual StoreStats stats() = 0;
  // Payload bytes handed to PUT so far (excluding framing).
  virtual std::uint64_t payload_bytes_sent() const = 0;
  virtual std::string describe() const = 0;
};

class LocalRepository final : public Repository {
 public:
  explicit LocalRepository(EvidenceStore& store) : store_(store) {}

  std::size_t max_check_batch() const override { return store_.max_check_batch(); }
  std::vector<bool> has_digests(std::span<const Digest> batch) override { return store_.has_digests(batch); }
  PutStatus put(const Digest& digest, std::span<const std::uint8_t> payload) override;
  Bytes get(const Digest& digest) override { return store_.get_artifact(digest); }
  std::string commit_manifest(const Manifest& m) override { return store_.commit_manifest(m); }
  Manifest get_manifest(const std::string& id) override { return store_.get_manifest(id); }
  StoreStats stats() override { return store_.stats(); }
  std::uint64_t payload_bytes_sent() const override { return sent_.load(); }
  std::string describe() const override { return "local:" + store_.root().string(); }

 private:
  EvidenceStore& store_;
  std::atomic<std::uint64_t> sent_{0};
};

// Pool of DFD1 connections; each call borrows one, so up to `connections`
// requests run in parallel.
class RemoteRepository final : public Repository {
 public:
  RemoteRepository(net::Endpoint endpoint, net::ClientOptions options = {}, std::size_t connections = 4);

  std::vector<bool> has_digests(std::span<const Digest> batch) override;
  PutStatus put(const Digest& digest, std::span<const std::uint8_t> payload) override;
  Bytes get(const Digest& digest) override;
  std::string commit_manifest(const Manifest& m) override;
  Manifest get_manifest(const std::string& id) override;
  StoreStats stats() override;
  std::uint64_t payload_bytes_sent() const override { return sent_.load(); }
  std::string describe() const override { return "dfd1://" + endpoint_.text(); }

 private:
  proto::Message call(const proto::Message& request);

  net::Endpoint endpoint_;
  std::mutex mutex_;
  std::condition_variable available_;
  std::vector<std::unique_ptr<net::Client>> idle_;
  std::atomic<std::uint64_t> sent_{0};
};

}  // namespace dedupacq
