// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The ssdsgd Authors

#pragma once

#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <memory>
#include <mutex>
#include <string_view>
#include <thread>
#include <vector>

#include "ssdsgd/errors.hpp"
#include "ssdsgd/message.hpp"

namespace ssdsgd::ps {

enum class TransportKind { InProcess, LoopbackSocket };

inline std::string_view to_string(TransportKind t) {
  return t == TransportKind::InProcess ? "inproc" : "socket";
}

inline TransportKind parse_transport(std::string_view s) {
  if (s == "inproc") return TransportKind::InProcess;
  if (s == "socket") return TransportKind::LoopbackSocket;
  throw ConfigError("cluster.transport", "unknown transport '" + std::string(s) + "'");
}

/// Injected per-message cost, applied on the sending side.
struct LinkModel {
  std::chrono::microseconds latency{0};
  double bytes_per_second = 0.0;  // 0 = unlimited

  std::chrono::nanoseconds cost(std::size_t bytes) const {
    auto d = std::chrono::duration_cast<std::chrono::nanoseconds>(latency);
    if (bytes_per_second > 0)
      d += std::chrono::nanoseconds(static_cast<long long>(1e9 * static_cast<double>(bytes) / bytes_per_second));
    return d;
  }
};

struct Received {
  enum class Status { Ok, Timeout, Closed } status = Status::Timeout;
  Message message;
};

/// Multi-producer, single-consumer message queue owned by one execution
/// context (a worker or a server).
class Mailbox {
 public:
  virtual ~Mailbox() = default;
  virtual void send(const Message& m) = 0;
  virtual Received receive(std::chrono::milliseconds timeout) = 0;
  /// Further sends are dropped; receive drains what is queued, then reports Closed.
  virtual void close() = 0;
};

class InProcessMailbox final : public Mailbox {
 public:
  void send(const Message& m) override {
    {
      std::lock_guard lock(mu_);
      if (closed_) return;
      queue_.push_back(m);
    }
    cv_.notify_one();
  }

  Received receive(std::chrono::milliseconds timeout) override {
    std::unique_lock lock(mu_);
    if (!cv_.wait_for(lock, timeout, [&] { return closed_ || !queue_.empty(); })) return {};
    if (queue_.empty()) return {Received::Status::Closed, {}};
    Received r{Received::Status::Ok, std::move(queue_.front())};
    queue_.pop_front();
    return r;
  }

  void close() override {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Message> queue_;
  bool closed_ = false;
};

/// Mailbox backed by a connected AF_UNIX stream socket pair. Every message is
/// serialized with the wire codec, so this transport exercises the exact
/// bytes a networked deployment would exchange.
class SocketMailbox final : public Mailbox {
 public:
  SocketMailbox() {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0)
      throw RuntimeFault(std::string("socketpair: ") + std::strerror(errno));
    write_fd_ = fds[0];
    read_fd_ = fds[1];
  }
  ~SocketMailbox() override {
    if (write_fd_ >= 0) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
  }
  SocketMailbox(const SocketMailbox&) = delete;
  SocketMailbox& operator=(const SocketMailbox&) = delete;

  void send(const Message& m) override {
    const auto bytes = encode(m);
    std::lock_guard lock(write_mu_);
    if (write_closed_) return;
    std::size_t off = 0;
    while (off < bytes.size()) {
      const ssize_t n = ::send(write_fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw RuntimeFault(std::string("socket send: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  Received receive(std::chrono::milliseconds timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (auto decoded = decode(buffer_)) {
        buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(decoded->second));
        return {Received::Status::Ok, std::move(decoded->first)};
      }
      if (eof_) return {Received::Status::Closed, {}};
      const auto left =
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() < 0) return {};
      pollfd pfd{read_fd_, POLLIN, 0};
      const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw RuntimeFault(std::string("poll: ") + std::strerror(errno));
      }
      if (rc == 0) return {};
      std::byte chunk[8192];
      const ssize_t n = ::recv(read_fd_, chunk, sizeof chunk, 0);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw RuntimeFault(std::string("socket recv: ") + std::strerror(errno));
      }
      if (n == 0) {
        eof_ = true;
        continue;
      }
      buffer_.insert(buffer_.end(), chunk, chunk + n);
    }
  }

  void close() override {
    std::lock_guard lock(write_mu_);
    if (!write_closed_) {
      ::shutdown(write_fd_, SHUT_WR);
      write_closed_ = true;
    }
  }

 private:
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::mutex write_mu_;
  bool write_closed_ = false;
  std::vector<std::byte> buffer_;  // consumer side only
  bool eof_ = false;
};

inline std::unique_ptr<Mailbox> make_mailbox(TransportKind kind) {
  if (kind == TransportKind::LoopbackSocket) return std::make_unique<SocketMailbox>();
  return std::make_unique<InProcessMailbox>();
}

}  // namespace ssdsgd::ps
