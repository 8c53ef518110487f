#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "invcode/codec.hpp"
#include "invcode/harness.hpp"
#include "invcode/invertible_fn.hpp"
#include "invcode/wire.hpp"

namespace invcode {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  /// Parses "host:port".
  static Endpoint parse(const std::string& text);
  std::string to_string() const;
};

/// Owning POSIX file descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(o.release()) {}
  Socket& operator=(Socket&& o) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket();

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  int release() noexcept;
  void close() noexcept;

 private:
  int fd_ = -1;
};

/// Blocking connect with TCP_NODELAY. Throws Io on failure.
Socket connect_to(const Endpoint& ep);
/// Writes every byte (MSG_NOSIGNAL). Returns false if the peer went away.
bool send_all(int fd, std::span<const std::uint8_t> bytes);

struct WorkerOptions {
  /// Artificial per-task service delay.
  double delay_seconds = 0.0;
};

/// A worker process's serving loop: accepts connections, evaluates f on every
/// TASK frame and answers with RESULT (or ERROR for bad frames). Each
/// connection is handled by its own thread; frames on one connection are
/// processed in order.
class WorkerServer {
 public:
  /// Binds and listens immediately (port 0 picks a free port). Throws Io if
  /// the address cannot be bound.
  WorkerServer(InvertibleFunction f, Endpoint listen, WorkerOptions options = {});
  ~WorkerServer();

  WorkerServer(const WorkerServer&) = delete;
  WorkerServer& operator=(const WorkerServer&) = delete;

  std::uint16_t port() const noexcept { return port_; }

  /// Accept loop; returns after request_stop() once every connection has
  /// drained the frames it had already received.
  void serve();
  /// Runs serve() on a background thread.
  void start();
  /// Async-signal-safe.
  void request_stop() noexcept { stop_.store(true); }
  /// request_stop() and join the background thread.
  void stop();

  std::uint64_t tasks_served() const noexcept { return tasks_served_.load(); }

 private:
  void handle_connection(Socket conn);
  /// Handles one frame whose header is at the front of `buf`; returns false
  /// if the connection should close.
  bool process(int fd, std::vector<std::uint8_t>& buf);

  InvertibleFunction f_;
  WorkerOptions options_;
  Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stop_{false};
  std::atomic<std::uint64_t> tasks_served_{0};
  std::thread runner_;
  std::mutex conn_mu_;
  std::vector<std::thread> conn_threads_;
};

/// Front end holding one persistent connection per worker (worker i runs
/// task i). Replies to earlier queries that arrive late are discarded.
class TcpFrontEnd {
 public:
  explicit TcpFrontEnd(std::vector<Endpoint> endpoints);

  /// Sends all n tasks, decodes on the first decodable set of replies and
  /// applies every head. Throws Undecodable when the deadline passes first and
  /// ProtocolError on malformed replies.
  QueryRecord run_query(const EncodedBatch& batch, const std::vector<DownstreamHead>& heads,
                        std::uint64_t query_id, double timeout_seconds);

  std::size_t live_connections() const;

 private:
  struct Conn {
    Endpoint endpoint;
    Socket socket;
    std::vector<std::uint8_t> buffer;
  };
  std::vector<Conn> conns_;
};

/// One-shot form: connects, runs a single query and disconnects.
QueryRecord run_query_tcp(const EncodedBatch& batch, const InvertibleFunction& f,
                          const std::vector<DownstreamHead>& heads,
                          const std::vector<Endpoint>& endpoints, double timeout_seconds,
                          std::uint64_t query_id = 0);

}  // namespace invcode
