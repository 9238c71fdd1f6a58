#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
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
#include <string>
#include <utility>

#include "puflock/frame.hpp"
#include "puflock/session.hpp"

namespace puflock {

using namespace std::chrono_literals;

/// A bidirectional, ordered frame channel.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(const Frame& f) = 0;
  /// Blocks until a whole frame arrives. Throws ProtocolError on timeout,
  /// peer close or a malformed stream.
  virtual Frame receive(std::chrono::milliseconds timeout = 10s) = 0;
  virtual void close() = 0;
};

namespace detail {

struct ByteQueue {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::uint8_t> bytes;
  bool closed = false;
};

}  // namespace detail

/// One end of an in-process byte pipe. Frames are encoded to bytes and pushed
/// in chunks of at most `chunk` bytes, so the receiver sees real fragmentation.
class MemoryTransport final : public Transport {
 public:
  MemoryTransport(std::shared_ptr<detail::ByteQueue> in, std::shared_ptr<detail::ByteQueue> out, std::size_t chunk)
      : in_(std::move(in)), out_(std::move(out)), chunk_(chunk ? chunk : 1) {}
  ~MemoryTransport() override { close(); }

  void send(const Frame& f) override {
    const auto bytes = encode_frame(f);
    for (std::size_t pos = 0; pos < bytes.size(); pos += chunk_) {
      std::lock_guard lock(out_->mu);
      if (out_->closed) throw ProtocolError("connection closed");
      const auto end = std::min(bytes.size(), pos + chunk_);
      out_->bytes.insert(out_->bytes.end(), bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                         bytes.begin() + static_cast<std::ptrdiff_t>(end));
      out_->cv.notify_all();
    }
  }

  Frame receive(std::chrono::milliseconds timeout = 10s) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (auto f = decoder_.next()) return std::move(*f);
      std::unique_lock lock(in_->mu);
      if (!in_->cv.wait_until(lock, deadline, [&] { return !in_->bytes.empty() || in_->closed; }))
        throw ProtocolError("receive timed out");
      if (in_->bytes.empty()) throw ProtocolError("connection closed");
      const auto n = std::min(in_->bytes.size(), chunk_);
      std::vector<std::uint8_t> part(in_->bytes.begin(), in_->bytes.begin() + static_cast<std::ptrdiff_t>(n));
      in_->bytes.erase(in_->bytes.begin(), in_->bytes.begin() + static_cast<std::ptrdiff_t>(n));
      lock.unlock();
      decoder_.feed(part);
    }
  }

  void close() override {
    for (auto* q : {in_.get(), out_.get()}) {
      std::lock_guard lock(q->mu);
      q->closed = true;
      q->cv.notify_all();
    }
  }

 private:
  std::shared_ptr<detail::ByteQueue> in_, out_;
  std::size_t chunk_;
  FrameDecoder decoder_;
};

inline std::pair<std::unique_ptr<MemoryTransport>, std::unique_ptr<MemoryTransport>> memory_pipe(std::size_t chunk = 4096) {
  auto a = std::make_shared<detail::ByteQueue>();
  auto b = std::make_shared<detail::ByteQueue>();
  return {std::make_unique<MemoryTransport>(a, b, chunk), std::make_unique<MemoryTransport>(b, a, chunk)};
}

/// Framed TCP stream over a connected POSIX socket.
class TcpTransport final : public Transport {
 public:
  explicit TcpTransport(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }
  ~TcpTransport() override { close(); }
  TcpTransport(const TcpTransport&) = delete;
  TcpTransport& operator=(const TcpTransport&) = delete;

  void send(const Frame& f) override {
    const auto bytes = encode_frame(f);
    std::size_t pos = 0;
    while (pos < bytes.size()) {
      const auto n = ::send(fd_, bytes.data() + pos, bytes.size() - pos, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("send failed: ") + std::strerror(errno));
      }
      pos += static_cast<std::size_t>(n);
    }
  }

  Frame receive(std::chrono::milliseconds timeout = 10s) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    std::uint8_t buf[4096];
    for (;;) {
      if (auto f = decoder_.next()) return std::move(*f);
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw ProtocolError("receive timed out");
      pollfd p{fd_, POLLIN, 0};
      const int r = ::poll(&p, 1, static_cast<int>(left.count()));
      if (r < 0 && errno == EINTR) continue;
      if (r < 0) throw ProtocolError(std::string("poll failed: ") + std::strerror(errno));
      if (r == 0) throw ProtocolError("receive timed out");
      const auto n = ::recv(fd_, buf, sizeof buf, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n < 0) throw ProtocolError(std::string("recv failed: ") + std::strerror(errno));
      if (n == 0) throw ProtocolError("connection closed");
      decoder_.feed(std::span<const std::uint8_t>(buf, static_cast<std::size_t>(n)));
    }
  }

  void close() override {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_;
  FrameDecoder decoder_;
};

/// Listening socket on 127.0.0.1. Port 0 picks a free port.
class TcpListener {
 public:
  explicit TcpListener(std::uint16_t port = 0) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw ProtocolError(std::string("socket failed: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(fd_, 16) < 0) {
      const std::string why = std::strerror(errno);
      ::close(fd_);
      throw ProtocolError("cannot listen on port " + std::to_string(port) + ": " + why);
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }
  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const noexcept { return port_; }

  std::unique_ptr<TcpTransport> accept(std::chrono::milliseconds timeout = 10s) {
    pollfd p{fd_, POLLIN, 0};
    const int r = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (r <= 0) throw ProtocolError("accept timed out");
    const int c = ::accept(fd_, nullptr, nullptr);
    if (c < 0) throw ProtocolError(std::string("accept failed: ") + std::strerror(errno));
    return std::make_unique<TcpTransport>(c);
  }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

inline std::unique_ptr<TcpTransport> tcp_connect(std::uint16_t port, const std::string& host = "127.0.0.1") {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw ProtocolError(std::string("socket failed: ") + std::strerror(errno));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw ParameterError("not an IPv4 address: " + host);
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
    const std::string why = std::strerror(errno);
    ::close(fd);
    throw ProtocolError("cannot connect to " + host + ":" + std::to_string(port) + ": " + why);
  }
  return std::make_unique<TcpTransport>(fd);
}

// --- drivers: run one state machine to completion over a transport ---

template <class Session>
void pump(Session& s, Transport& t, std::chrono::milliseconds timeout) {
  while (!s.done()) {
    auto in = t.receive(timeout);
    if (auto out = s.handle(in)) t.send(*out);
  }
}

/// Runs one deployment from the device side. The outcome is in the returned
/// session's phase(); a failure reason, if any, in failure().
inline DeviceSession run_device_session(Device& d, Transport& t, std::chrono::milliseconds timeout = 10s) {
  auto s = d.session();
  t.send(s.start());
  pump(s, t, timeout);
  return s;
}

inline ProviderSession serve_provider_session(Provider& p, Transport& t, std::chrono::milliseconds timeout = 10s) {
  auto s = p.session();
  pump(s, t, timeout);
  return s;
}

/// Enrolls the device with z fresh challenges; returns the failure reason or
/// an empty string.
inline std::string register_device(Device& d, Transport& t, std::chrono::milliseconds timeout = 10s) {
  auto s = d.registration();
  t.send(s.start());
  pump(s, t, timeout);
  return s.failure();
}

inline std::string serve_registration(Provider& p, Transport& t, std::size_t z, std::chrono::milliseconds timeout = 10s) {
  auto s = p.registration(z);
  pump(s, t, timeout);
  return s.failure();
}

}  // namespace puflock
