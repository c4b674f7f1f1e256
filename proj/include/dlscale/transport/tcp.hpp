/*
 * Copyright 2026 The dlscale Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "dlscale/transport/endpoint.hpp"

namespace dlscale::transport {

struct TcpAddress {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

namespace detail {

inline std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

inline bool write_all(int fd, const std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::send(fd, p, n, MSG_NOSIGNAL);
    if (k < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    p += k;
    n -= static_cast<std::size_t>(k);
  }
  return true;
}

/// Returns false on clean EOF before the first byte; throws on mid-read EOF.
inline bool read_all(int fd, std::uint8_t* p, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t k = ::recv(fd, p + got, n - got, 0);
    if (k == 0) {
      if (got == 0) return false;
      throw TransportError("connection closed mid-frame");
    }
    if (k < 0) {
      if (errno == EINTR) continue;
      if (got == 0 && (errno == ECONNRESET || errno == EBADF || errno == ENOTCONN)) return false;
      throw TransportError(errno_text("recv"));
    }
    got += static_cast<std::size_t>(k);
  }
  return true;
}

inline sockaddr_in resolve(const TcpAddress& a) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(a.port);
  if (::inet_pton(AF_INET, a.host.c_str(), &sa.sin_addr) == 1) return sa;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(a.host.c_str(), nullptr, &hints, &res) != 0 || !res)
    throw TransportError("cannot resolve host " + a.host);
  sa.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return sa;
}

}  // namespace detail

/// Endpoint speaking the length-prefixed frame format over TCP stream
/// sockets. One outgoing connection per destination is opened lazily; every
/// accepted connection gets a reader thread feeding the local mailbox.
class TcpEndpoint final : public Endpoint {
 public:
  TcpEndpoint(int rank, int world_size, TcpAddress listen = {}, LinkModel link = {},
              std::chrono::milliseconds connect_timeout = std::chrono::seconds(20))
      : rank_(rank), world_(world_size), link_(std::move(link)), connect_timeout_(connect_timeout) {
    if (rank < 0 || rank >= world_size) throw TransportError("rank out of range");
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw TransportError(detail::errno_text("socket"));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in sa = detail::resolve(listen);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
      ::close(listen_fd_);
      throw TransportError(detail::errno_text(("bind " + listen.host + ":" + std::to_string(listen.port)).c_str()));
    }
    if (::listen(listen_fd_, 128) != 0) {
      ::close(listen_fd_);
      throw TransportError(detail::errno_text("listen"));
    }
    socklen_t len = sizeof(sa);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&sa), &len);
    port_ = ntohs(sa.sin_port);
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  TcpEndpoint(const TcpEndpoint&) = delete;
  TcpEndpoint& operator=(const TcpEndpoint&) = delete;

  ~TcpEndpoint() override { shutdown(); }

  std::uint16_t port() const { return port_; }

  /// Address of every rank, indexed by rank. Must be set before send().
  void set_peers(std::vector<TcpAddress> peers) {
    if (static_cast<int>(peers.size()) != world_) throw TransportError("peer table size != world size");
    std::lock_guard lk(conn_mu_);
    peers_ = std::move(peers);
  }

  int rank() const override { return rank_; }
  int world_size() const override { return world_; }

  void send(int dst, Frame frame) override {
    if (dst < 0 || dst >= world_) throw TransportError("unknown destination rank " + std::to_string(dst));
    if (stopping_) throw TransportError("endpoint shut down");
    frame.src_rank = static_cast<std::uint32_t>(rank_);
    if (dst == rank_) {
      box_.push(std::move(frame));
      return;
    }
    auto& conn = connection(dst);
    const auto wire = encode(frame);
    std::lock_guard lk(conn.mu);
    if (!detail::write_all(conn.fd, wire.data(), wire.size()))
      throw TransportError(detail::errno_text(("send to rank " + std::to_string(dst)).c_str()));
  }

  std::optional<Frame> recv(std::chrono::microseconds timeout) override { return box_.pop(timeout); }

  void shutdown() override {
    if (stopping_.exchange(true)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    if (acceptor_.joinable()) acceptor_.join();
    ::close(listen_fd_);
    {
      std::lock_guard lk(conn_mu_);
      for (auto& [dst, c] : out_) {
        ::shutdown(c->fd, SHUT_RDWR);
        ::close(c->fd);
      }
      out_.clear();
    }
    std::vector<std::thread> readers;
    {
      std::lock_guard lk(reader_mu_);
      for (int fd : reader_fds_) ::shutdown(fd, SHUT_RDWR);
      readers.swap(readers_);
    }
    for (auto& t : readers) t.join();
    for (int fd : reader_fds_) ::close(fd);
    box_.close();
  }

 private:
  struct Conn {
    int fd = -1;
    std::mutex mu;
  };

  Conn& connection(int dst) {
    std::lock_guard lk(conn_mu_);
    if (auto it = out_.find(dst); it != out_.end()) return *it->second;
    if (peers_.empty()) throw TransportError("peer table not set");
    const sockaddr_in sa = detail::resolve(peers_[static_cast<std::size_t>(dst)]);
    const auto deadline = Clock::now() + connect_timeout_;
    for (;;) {
      int fd = ::socket(AF_INET, SOCK_STREAM, 0);
      if (fd < 0) throw TransportError(detail::errno_text("socket"));
      if (::connect(fd, reinterpret_cast<const sockaddr*>(&sa), sizeof(sa)) == 0) {
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        auto c = std::make_unique<Conn>();
        c->fd = fd;
        return *out_.emplace(dst, std::move(c)).first->second;
      }
      const int err = errno;
      ::close(fd);
      if (Clock::now() >= deadline || stopping_)
        throw TransportError("connect to rank " + std::to_string(dst) + " failed: " + std::strerror(err));
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  }

  void accept_loop() {
    while (!stopping_) {
      pollfd p{listen_fd_, POLLIN, 0};
      const int r = ::poll(&p, 1, 100);
      if (r <= 0) continue;
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) continue;
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      std::lock_guard lk(reader_mu_);
      if (stopping_) {
        ::close(fd);
        break;
      }
      reader_fds_.push_back(fd);
      readers_.emplace_back([this, fd] { read_loop(fd); });
    }
  }

  void read_loop(int fd) {
    try {
      std::vector<std::uint8_t> body;
      Clock::time_point last{};  // one connection carries one sender's frames
      for (;;) {
        std::uint8_t len_buf[kLengthBytes];
        if (!detail::read_all(fd, len_buf, kLengthBytes)) return;
        ByteReader lr({len_buf, kLengthBytes});
        const std::uint32_t length = lr.u32();
        if (length < kHeaderBytes) throw ProtocolError("frame length below header size");
        body.resize(length);
        if (!detail::read_all(fd, body.data(), length)) throw TransportError("connection closed mid-frame");
        Frame f = decode_body(body);
        const auto ready = link_.is_zero() ? Clock::time_point{}
                                           : std::max(last, Clock::now() + link_.delay(static_cast<int>(f.src_rank),
                                                                                       rank_, length + kLengthBytes));
        last = ready;
        box_.push(std::move(f), ready);
      }
    } catch (...) {
      if (!stopping_) box_.fail(std::current_exception());
    }
  }

  int rank_;
  int world_;
  LinkModel link_;
  std::chrono::milliseconds connect_timeout_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  Mailbox box_;
  std::thread acceptor_;

  std::mutex conn_mu_;
  std::vector<TcpAddress> peers_;
  std::unordered_map<int, std::unique_ptr<Conn>> out_;

  std::mutex reader_mu_;
  std::vector<int> reader_fds_;
  std::vector<std::thread> readers_;
};

/// Creates `world_size` loopback TCP endpoints on ephemeral ports with a
/// shared peer table, for running every rank inside one process.
inline std::vector<std::unique_ptr<TcpEndpoint>> make_loopback_group(int world_size, const LinkModel& link = {}) {
  std::vector<std::unique_ptr<TcpEndpoint>> eps;
  std::vector<TcpAddress> addrs;
  for (int r = 0; r < world_size; ++r) {
    eps.push_back(std::make_unique<TcpEndpoint>(r, world_size, TcpAddress{"127.0.0.1", 0}, link));
    addrs.push_back({"127.0.0.1", eps.back()->port()});
  }
  for (auto& e : eps) e->set_peers(addrs);
  return eps;
}

}  // namespace dlscale::transport
