#pragma once

// TCP transport for the DFD1 protocol: blocking sockets, one thread per
// server connection, strictly ordered request/response per connection.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "dedupacq/protocol.hpp"
#include "dedupacq/store.hpp"

namespace dedupacq::net {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = proto::kDefaultPort;

  // "host:port", "host" or ":port".
  static Endpoint parse(std::string_view text);
  std::string text() const { return host + ":" + std::to_string(port); }
};

// Token bucket shared by every connection that should count against one link.
class RateLimiter {
 public:
  explicit RateLimiter(double bytes_per_second, double burst_seconds = 0.05);
  void acquire(std::size_t bytes);
  double rate() const noexcept { return rate_; }

 private:
  std::mutex mutex_;
  double rate_;
  double burst_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
};

class Connection {
 public:
  explicit Connection(int fd, std::shared_ptr<RateLimiter> limiter = nullptr);
  ~Connection();
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;

  static std::unique_ptr<Connection> connect(const Endpoint& ep, std::chrono::milliseconds timeout,
                                             std::shared_ptr<RateLimiter> limiter = nullptr);

  void send(const proto::Message& m);
  // Pre-encoded bytes, e.g. a deliberately malformed frame.
  void send_raw(std::span<const std::uint8_t> bytes);
  // Returns nullopt on orderly close before a frame starts. Throws
  // Unreachable on timeout, ProtocolError/FrameTooLarge on bad frames,
  // IoError when the peer vanishes mid-frame.
  std::optional<proto::Message> receive();

  void set_timeout(std::chrono::milliseconds t) { timeout_ = t; }
  void shutdown();
  std::uint64_t bytes_sent() const noexcept { return sent_; }
  std::uint64_t bytes_received() const noexcept { return received_; }

 private:
  bool read_exact(std::uint8_t* out, std::size_t n, bool allow_eof);
  void write_all(const std::uint8_t* data, std::size_t n);

  int fd_;
  std::shared_ptr<RateLimiter> limiter_;
  std::chrono::milliseconds timeout_{30'000};
  std::uint64_t sent_ = 0;
  std::uint64_t received_ = 0;
};

struct SessionSummary {
  std::uint64_t requests = 0;
  std::uint64_t errors = 0;
  std::uint64_t puts_stored = 0;
  std::uint64_t bytes_received = 0;
  std::uint64_t bytes_sent = 0;
  bool protocol_violation = false;
};

// Serves one connection until the peer closes it. The first frame must be
// HELLO with a supported version.
SessionSummary run_session(Connection& conn, EvidenceStore& store);

class Server {
 public:
  Server(EvidenceStore& store, const Endpoint& listen);
  ~Server();

  // Actual bound port (useful when listening on port 0).
  std::uint16_t port() const noexcept { return port_; }
  void start();
  void stop();
  // Blocks until stop() is called from another thread or a signal handler.
  void wait();
  std::uint64_t sessions() const noexcept { return sessions_.load(); }

 private:
  void accept_loop();

  EvidenceStore& store_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::atomic<std::uint64_t> sessions_{0};
  std::thread acceptor_;
  std::mutex workers_mutex_;
  std::condition_variable workers_done_;
  std::size_t active_ = 0;
  std::vector<int> client_fds_;
};

struct ClientOptions {
  std::chrono::milliseconds timeout{30'000};
  int attempts = 3;  // idempotent requests only
  std::shared_ptr<RateLimiter> limiter;
  // Test hook: called before each send with the attempt number; may throw
  // or shut the connection to simulate faults.
  std::function<void(const proto::Message&, int attempt, Connection&)> before_send;
};

class Client {
 public:
  Client(Endpoint ep, ClientOptions options = {});

  // One request/response exchange. ERROR replies are raised as typed
  // errors. CHECK, GET, STATS_REQ and PUT are retried on transport failure.
  proto::Message call(const proto::Message& request);

  std::uint64_t bytes_sent() const noexcept { return sent_; }

 private:
  void ensure_connected();
  proto::Message exchange(const proto::Message& request, int attempt);

  Endpoint ep_;
  ClientOptions options_;
  std::unique_ptr<Connection> conn_;
  std::uint64_t sent_ = 0;
};

}  // namespace dedupacq::net
