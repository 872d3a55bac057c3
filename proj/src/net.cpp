#include "dedupacq/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

namespace dedupacq::net {

namespace {

[[noreturn]] void sys_fail(ErrorCode code, const std::string& what) {
  throw Error(code, what + ": " + std::strerror(errno));
}

bool idempotent(const proto::Message& m) {
  using proto::MsgType;
  switch (proto::type_of(m)) {
    case MsgType::Check:
    case MsgType::Get:
    case MsgType::StatsReq:
    case MsgType::Put:
      return true;
    default:
      return false;
  }
}

bool wait_fd(int fd, short events, std::chrono::milliseconds timeout) {
  pollfd p{fd, events, 0};
  const int ms = timeout.count() <= 0 ? -1 : static_cast<int>(timeout.count());
  while (true) {
    const int r = ::poll(&p, 1, ms);
    if (r < 0 && errno == EINTR) continue;
    if (r < 0) sys_fail(ErrorCode::IoError, "poll failed");
    return r > 0;
  }
}

}  // namespace

Endpoint Endpoint::parse(std::string_view text) {
  Endpoint ep;
  const auto colon = text.rfind(':');
  std::string_view host = colon == std::string_view::npos ? text : text.substr(0, colon);
  if (!host.empty()) ep.host = std::string(host);
  if (colon != std::string_view::npos) {
    const std::string port(text.substr(colon + 1));
    char* end = nullptr;
    const long p = std::strtol(port.c_str(), &end, 10);
    if (port.empty() || *end != '\0' || p < 0 || p > 65535) {
      throw Error(ErrorCode::Unreachable, "bad endpoint '" + std::string(text) + "'");
    }
    ep.port = static_cast<std::uint16_t>(p);
  }
  return ep;
}

RateLimiter::RateLimiter(double bytes_per_second, double burst_seconds)
    : rate_(bytes_per_second),
      burst_(std::max(bytes_per_second * burst_seconds, 65536.0)),
      tokens_(0),
      last_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire(std::size_t bytes) {
  // Callers are served in lock order, so the link is shared fairly enough.
  std::unique_lock lock(mutex_);
  double need = static_cast<double>(bytes);
  while (true) {
    const auto now = std::chrono::steady_clock::now();
    tokens_ = std::min(burst_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
    last_ = now;
    const double take = std::min(need, tokens_);
    tokens_ -= take;
    need -= take;
    if (need <= 0) return;
    const double wait = std::min(need, burst_) / rate_;
    lock.unlock();
    std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    lock.lock();
  }
}

Connection::Connection(int fd, std::shared_ptr<RateLimiter> limiter) : fd_(fd), limiter_(std::move(limiter)) {
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

Connection::~Connection() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Connection> Connection::connect(const Endpoint& ep, std::chrono::milliseconds timeout,
                                                std::shared_ptr<RateLimiter> limiter) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(ep.port);
  if (const int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw Error(ErrorCode::Unreachable, "cannot resolve " + ep.text() + ": " + gai_strerror(rc));
  }
  std::string last_error = "no addresses";
  for (addrinfo* a = res; a; a = a->ai_next) {
    const int fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK, a->ai_protocol);
    if (fd < 0) continue;
    int rc = ::connect(fd, a->ai_addr, a->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      if (wait_fd(fd, POLLOUT, timeout)) {
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        errno = err;
        rc = err == 0 ? 0 : -1;
      } else {
        errno = ETIMEDOUT;
      }
    }
    if (rc == 0) {
      ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) & ~O_NONBLOCK);
      ::freeaddrinfo(res);
      auto c = std::make_unique<Connection>(fd, std::move(limiter));
      c->set_timeout(timeout);
      return c;
    }
    last_error = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  throw Error(ErrorCode::Unreachable, "cannot connect to " + ep.text() + ": " + last_error);
}

void Connection::write_all(const std::uint8_t* data, std::size_t n) {
  constexpr std::size_t kSlice = 64 * 1024;
  std::size_t done = 0;
  while (done < n) {
    const std::size_t slice = std::min(kSlice, n - done);
    if (limiter_) limiter_->acquire(slice);
    std::size_t sent = 0;
    while (sent < slice) {
      if (!wait_fd(fd_, POLLOUT, timeout_)) throw Error(ErrorCode::Unreachable, "send timed out");
      const ssize_t w = ::send(fd_, data + done + sent, slice - sent, MSG_NOSIGNAL);
      if (w < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        sys_fail(ErrorCode::IoError, "send failed");
      }
      sent += static_cast<std::size_t>(w);
    }
    done += slice;
  }
  sent_ += n;
}

bool Connection::read_exact(std::uint8_t* out, std::size_t n, bool allow_eof) {
  std::size_t done = 0;
  while (done < n) {
    if (!wait_fd(fd_, POLLIN, timeout_)) throw Error(ErrorCode::Unreachable, "receive timed out");
    const ssize_t r = ::recv(fd_, out + done, n - done, 0);
    if (r < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      sys_fail(ErrorCode::IoError, "receive failed");
    }
    if (r == 0) {
      if (allow_eof && done == 0) return false;
      throw Error(ErrorCode::IoError, "connection closed mid-frame");
    }
    done += static_cast<std::size_t>(r);
  }
  if (limiter_) limiter_->acquire(n);
  received_ += n;
  return true;
}

void Connection::send(const proto::Message& m) {
  const Bytes frame = proto::encode_frame(m);
  write_all(frame.data(), frame.size());
}

void Connection::send_raw(std::span<const std::uint8_t> bytes) { write_all(bytes.data(), bytes.size()); }

std::optional<proto::Message> Connection::receive() {
  std::uint8_t header[proto::kHeaderSize];
  if (!read_exact(header, 1, true)) return std::nullopt;
  read_exact(header + 1, proto::kHeaderSize - 1, false);
  const proto::FrameHeader h = proto::decode_header(header);
  Bytes body(h.body_length);
  if (h.body_length > 0) read_exact(body.data(), body.size(), false);
  return proto::decode_body(h.type, body);
}

void Connection::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

SessionSummary run_session(Connection& conn, EvidenceStore& store) {
  using namespace proto;
  SessionSummary s;
  auto finish = [&] {
    s.bytes_received = conn.bytes_received();
    s.bytes_sent = conn.bytes_sent();
    return s;
  };
  auto violation = [&](const Error& e) {
    s.protocol_violation = true;
    ++s.errors;
    try {
      conn.send(make_error(e));
    } catch (const Error&) {
    }
  };

  try {
    auto first = conn.receive();
    if (!first) return finish();
    ++s.requests;
    const auto* hello = std::get_if<Hello>(&*first);
    if (!hello) {
      violation(Error(ErrorCode::ProtocolError, "expected HELLO, got " + std::string(to_string(type_of(*first)))));
      return finish();
    }
    if (hello->version != kProtocolVersion) {
      violation(Error(ErrorCode::UnsupportedVersion, "protocol version " + std::to_string(hello->version) +
                                                         " not supported (server speaks 1)"));
      return finish();
    }
    conn.send(HelloAck{kProtocolVersion});

    while (true) {
      auto msg = conn.receive();
      if (!msg) return finish();
      ++s.requests;
      Message reply;
      try {
        if (const auto* m = std::get_if<Check>(&*msg)) {
          reply = CheckResp::from_flags(store.has_digests(m->digests));
        } else if (auto* m = std::get_if<Put>(&*msg)) {
          try {
            const auto st = store.put_artifact(m->digest, m->payload);
            s.puts_stored += st == PutStatus::Stored;
            reply = PutAck{st == PutStatus::Stored ? PutResult::Stored : PutResult::AlreadyPresent};
          } catch (const Error& e) {
            if (e.code() != ErrorCode::DigestMismatch) throw;
            reply = PutAck{PutResult::DigestMismatch};
          }
        } else if (const auto* m = std::get_if<ManifestCommit>(&*msg)) {
          reply = ManifestAck{Digest::from_hex(store.commit_manifest_bytes(m->canonical))};
        } else if (const auto* m = std::get_if<Get>(&*msg)) {
          reply = Data{store.get_artifact(m->digest)};
        } else if (const auto* m = std::get_if<GetManifest>(&*msg)) {
          reply = ManifestDoc{store.get_manifest_bytes(m->manifest_id.hex())};
        } else if (std::holds_alternative<StatsReq>(*msg)) {
          reply = StatsResp{store.stats()};
        } else {
          violation(Error(ErrorCode::ProtocolError, std::string(to_string(type_of(*msg))) + " is not a request"));
          return finish();
        }
      } catch (const Error& e) {
        ++s.errors;
        reply = make_error(e);
      } catch (const std::exception& e) {
        ++s.errors;
        reply = make_error(Error(ErrorCode::StorageError, e.what()));
      }
      conn.send(reply);
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ProtocolError || e.code() == ErrorCode::FrameTooLarge) violation(e);
    return finish();
  }
}

Server::Server(EvidenceStore& store, const Endpoint& listen) : store_(store) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(listen.port);
  const char* host = listen.host.empty() ? nullptr : listen.host.c_str();
  if (const int rc = ::getaddrinfo(host, port.c_str(), &hints, &res); rc != 0) {
    throw Error(ErrorCode::IoError, "cannot resolve " + listen.text() + ": " + gai_strerror(rc));
  }
  for (addrinfo* a = res; a && listen_fd_ < 0; a = a->ai_next) {
    const int fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, a->ai_addr, a->ai_addrlen) == 0 && ::listen(fd, 64) == 0) {
      listen_fd_ = fd;
    } else {
      ::close(fd);
    }
  }
  ::freeaddrinfo(res);
  if (listen_fd_ < 0) sys_fail(ErrorCode::IoError, "cannot listen on " + listen.text());
  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port
                                           : reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
}

Server::~Server() {
  stop();
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void Server::start() {
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void Server::accept_loop() {
  while (running_) {
    const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) {
      if (errno == EINTR || errno == ECONNABORTED) continue;
      break;
    }
    if (!running_) {
      ::close(fd);
      break;
    }
    {
      std::lock_guard lock(workers_mutex_);
      client_fds_.push_back(fd);
      ++active_;
    }
    ++sessions_;
    std::thread([this, fd] {
      {
        Connection conn(::dup(fd));
        conn.set_timeout(std::chrono::milliseconds(0));
        run_session(conn, store_);
      }
      std::lock_guard lock(workers_mutex_);
      client_fds_.erase(std::find(client_fds_.begin(), client_fds_.end(), fd));
      ::close(fd);
      --active_;
      workers_done_.notify_all();
    }).detach();
  }
}

void Server::stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  if (acceptor_.joinable()) acceptor_.join();
  std::unique_lock lock(workers_mutex_);
  for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
  workers_done_.wait(lock, [this] { return active_ == 0; });
}

void Server::wait() {
  if (acceptor_.joinable()) acceptor_.join();
}

Client::Client(Endpoint ep, ClientOptions options) : ep_(std::move(ep)), options_(std::move(options)) {}

void Client::ensure_connected() {
  if (conn_) return;
  auto c = Connection::connect(ep_, options_.timeout, options_.limiter);
  c->send(proto::Hello{proto::kProtocolVersion});
  auto reply = c->receive();
  if (!reply) throw Error(ErrorCode::Unreachable, "server closed the connection during HELLO");
  if (const auto* e = std::get_if<proto::ErrorMsg>(&*reply)) proto::raise(*e);
  if (!std::holds_alternative<proto::HelloAck>(*reply)) {
    throw Error(ErrorCode::ProtocolError, "expected HELLO_ACK, got " + std::string(proto::to_string(proto::type_of(*reply))));
  }
  conn_ = std::move(c);
}

proto::Message Client::exchange(const proto::Message& request, int attempt) {
  ensure_connected();
  if (options_.before_send) options_.before_send(request, attempt, *conn_);
  const std::uint64_t before = conn_->bytes_sent();
  conn_->send(request);
  sent_ += conn_->bytes_sent() - before;
  auto reply = conn_->receive();
  if (!reply) throw Error(ErrorCode::IoError, "server closed the connection");
  return std::move(*reply);
}

proto::Message Client::call(const proto::Message& request) {
  const int attempts = idempotent(request) ? std::max(1, options_.attempts) : 1;
  std::string last;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    try {
      proto::Message reply = exchange(request, attempt);
      if (const auto* e = std::get_if<proto::ErrorMsg>(&reply)) {
        const auto code = proto::from_wire_code(e->code);
        // The server closes after protocol-level errors.
        if (!code || *code == ErrorCode::ProtocolError || *code == ErrorCode::UnsupportedVersion ||
            *code == ErrorCode::FrameTooLarge) {
          conn_.reset();
        }
        proto::raise(*e);
      }
      return reply;
    } catch (const Error& e) {
      const bool transport = e.code() == ErrorCode::IoError || e.code() == ErrorCode::Unreachable;
      if (!transport) throw;
      conn_.reset();
      last = e.what();
    }
  }
  throw Error(ErrorCode::Unreachable, ep_.text() + " failed after " + std::to_string(attempts) + " attempt(s): " + last);
}

}  // namespace dedupacq::net
