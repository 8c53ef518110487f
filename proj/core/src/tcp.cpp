#include "invcode/tcp.hpp"

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
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>

#include "invcode/error.hpp"

namespace invcode {

namespace {

using SteadyClock = std::chrono::steady_clock;

constexpr int kPollMillis = 50;

[[noreturn]] void io_error(const std::string& what) {
  throw Error(ErrorCode::Io, what + ": " + std::strerror(errno));
}

sockaddr_in resolve(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  if (inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr)
    throw Error(ErrorCode::Io, "cannot resolve host '" + ep.host + "'");
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return addr;
}

/// Reads whatever is available without blocking. Returns false on EOF/error.
bool read_available(int fd, std::vector<std::uint8_t>& buf) {
  std::uint8_t chunk[65536];
  while (true) {
    const ssize_t got = ::recv(fd, chunk, sizeof(chunk), MSG_DONTWAIT);
    if (got > 0) {
      buf.insert(buf.end(), chunk, chunk + got);
      continue;
    }
    if (got == 0) return false;
    if (errno == EINTR) continue;
    return errno == EAGAIN || errno == EWOULDBLOCK;
  }
}

/// True if the bytes seen so far cannot start a valid frame.
bool bad_prefix(const std::vector<std::uint8_t>& buf) {
  const auto n = std::min<std::size_t>(buf.size(), wire::kMagic.size());
  if (!std::equal(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(n), wire::kMagic.begin()))
    return true;
  return buf.size() > 4 && (buf[4] < 1 || buf[4] > 3);
}

double seconds_between(SteadyClock::time_point a, SteadyClock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

}  // namespace

// ---- endpoints and sockets -------------------------------------------------

Endpoint Endpoint::parse(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon + 1 == text.size())
    throw Error(ErrorCode::InvalidConfig, "endpoint '" + text + "' is not host:port");
  Endpoint ep;
  ep.host = text.substr(0, colon);
  if (ep.host.empty()) ep.host = "127.0.0.1";
  try {
    std::size_t used = 0;
    const long port = std::stol(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1 || port < 0 || port > 65535) throw std::out_of_range("port");
    ep.port = static_cast<std::uint16_t>(port);
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::InvalidConfig, "endpoint '" + text + "' has an invalid port");
  }
  return ep;
}

std::string Endpoint::to_string() const { return host + ":" + std::to_string(port); }

Socket& Socket::operator=(Socket&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.release();
  }
  return *this;
}

Socket::~Socket() { close(); }

int Socket::release() noexcept {
  const int fd = fd_;
  fd_ = -1;
  return fd;
}

void Socket::close() noexcept {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

Socket connect_to(const Endpoint& ep) {
  const auto addr = resolve(ep);
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) io_error("socket");
  if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0)
    io_error("connect " + ep.to_string());
  const int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return s;
}

bool send_all(int fd, std::span<const std::uint8_t> bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

// ---- worker ----------------------------------------------------------------

WorkerServer::WorkerServer(InvertibleFunction f, Endpoint listen, WorkerOptions options)
    : f_(std::move(f)), options_(options) {
  const auto addr = resolve(listen);
  listener_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
  if (!listener_.valid()) io_error("socket");
  const int one = 1;
  ::setsockopt(listener_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(listener_.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0)
    io_error("bind " + listen.to_string());
  if (::listen(listener_.fd(), 64) != 0) io_error("listen");
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

WorkerServer::~WorkerServer() { stop(); }

void WorkerServer::start() {
  runner_ = std::thread([this] { serve(); });
}

void WorkerServer::stop() {
  request_stop();
  if (runner_.joinable()) runner_.join();
}

void WorkerServer::serve() {
  while (!stop_.load()) {
    pollfd pfd{listener_.fd(), POLLIN, 0};
    const int ready = ::poll(&pfd, 1, kPollMillis);
    if (ready <= 0 || !(pfd.revents & POLLIN)) continue;
    const int fd = ::accept(listener_.fd(), nullptr, nullptr);
    if (fd < 0) continue;
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    std::lock_guard lock(conn_mu_);
    conn_threads_.emplace_back([this, fd] { handle_connection(Socket(fd)); });
  }
  listener_.close();
  std::vector<std::thread> threads;
  {
    std::lock_guard lock(conn_mu_);
    threads.swap(conn_threads_);
  }
  for (auto& t : threads) t.join();
}

void WorkerServer::handle_connection(Socket conn) {
  std::vector<std::uint8_t> buf;
  bool open = true;
  while (open) {
    const bool stopping = stop_.load();
    if (!stopping) {
      pollfd pfd{conn.fd(), POLLIN, 0};
      const int ready = ::poll(&pfd, 1, kPollMillis);
      if (ready < 0 && errno != EINTR) return;
      if (ready <= 0) continue;
    }
    open = read_available(conn.fd(), buf);
    // Process every complete frame already received, even when shutting down.
    while (!buf.empty()) {
      const auto before = buf.size();
      if (!process(conn.fd(), buf)) return;
      if (buf.size() == before) break;  // incomplete frame, wait for more bytes
    }
    if (stopping) return;
  }
}

bool WorkerServer::process(int fd, std::vector<std::uint8_t>& buf) {
  const auto reply = [fd](const wire::Frame& frame) { return send_all(fd, wire::encode(frame)); };

  if (bad_prefix(buf)) {
    // drop the bad frame and anything queued behind it, then reply
    buf.clear();
    read_available(fd, buf);
    buf.clear();
    return reply(wire::error_frame(0, 0, wire::kMalformedFrame, "malformed frame header"));
  }
  if (buf.size() < wire::kHeaderSize) return true;

  wire::Header header;
  try {
    header = wire::parse_header(buf);
  } catch (const Error& e) {
    buf.clear();
    read_available(fd, buf);
    buf.clear();
    return reply(wire::error_frame(0, 0, wire::kMalformedFrame, e.what()));
  }
  const std::size_t total = wire::kHeaderSize + header.body_size();
  if (buf.size() < total) return true;

  const auto frame = wire::decode_body(
      header, std::span<const std::uint8_t>(buf).subspan(wire::kHeaderSize, header.body_size()));
  buf.erase(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(total));

  if (frame.type != wire::MsgType::Task)
    return reply(wire::error_frame(frame.query_id, frame.task_index, wire::kUnexpectedType,
                                   "workers only accept TASK frames"));
  if (frame.payload.size() != f_.dim())
    return reply(wire::error_frame(frame.query_id, frame.task_index, wire::kDimensionMismatch,
                                   "expected dim " + std::to_string(f_.dim())));

  if (options_.delay_seconds > 0.0)
    std::this_thread::sleep_for(std::chrono::duration<double>(options_.delay_seconds));
  try {
    const Vec out = f_.forward(frame.payload);
    ++tasks_served_;
    return reply(wire::result_frame(frame.query_id, frame.task_index, out));
  } catch (const std::exception& e) {
    return reply(
        wire::error_frame(frame.query_id, frame.task_index, wire::kEvaluationFailed, e.what()));
  }
}

// ---- front end -------------------------------------------------------------

TcpFrontEnd::TcpFrontEnd(std::vector<Endpoint> endpoints) {
  if (endpoints.empty()) throw Error(ErrorCode::InvalidConfig, "no worker endpoints");
  for (auto& ep : endpoints) {
    Conn c{std::move(ep), Socket(), {}};
    try {
      c.socket = connect_to(c.endpoint);
    } catch (const Error&) {
      // Down workers simply never answer.
    }
    conns_.push_back(std::move(c));
  }
}

std::size_t TcpFrontEnd::live_connections() const {
  return static_cast<std::size_t>(
      std::count_if(conns_.begin(), conns_.end(), [](const Conn& c) { return c.socket.valid(); }));
}

QueryRecord TcpFrontEnd::run_query(const EncodedBatch& batch,
                                   const std::vector<DownstreamHead>& heads,
                                   std::uint64_t query_id, double timeout_seconds) {
  const int n = batch.n();
  if (static_cast<int>(conns_.size()) != n)
    throw Error(ErrorCode::InvalidConfig, "need one endpoint per task: " + std::to_string(n) +
                                              " tasks, " + std::to_string(conns_.size()) +
                                              " endpoints");
  if (n > 255) throw Error(ErrorCode::InvalidConfig, "wire format carries at most 255 tasks");
  if (!(timeout_seconds > 0.0)) throw Error(ErrorCode::InvalidConfig, "timeout must be positive");
  const auto dim = batch.task_input(1).size();

  QueryRecord record;
  record.query_id = query_id;
  record.completion_times.assign(static_cast<std::size_t>(n),
                                 std::numeric_limits<double>::infinity());

  const auto start = SteadyClock::now();
  const auto deadline = start + std::chrono::duration_cast<SteadyClock::duration>(
                                    std::chrono::duration<double>(timeout_seconds));
  for (TaskId t = 1; t <= n; ++t) {
    auto& c = conns_[static_cast<std::size_t>(t - 1)];
    if (!c.socket.valid()) continue;
    const auto bytes =
        wire::encode(wire::task_frame(query_id, static_cast<std::uint8_t>(t), batch.task_input(t)));
    if (!send_all(c.socket.fd(), bytes)) c.socket.close();
  }

  QueryAssembler assembler(batch.generator, heads);
  std::vector<bool> answered(static_cast<std::size_t>(n), false);
  while (!assembler.done()) {
    std::vector<pollfd> fds;
    std::vector<TaskId> owners;
    for (TaskId t = 1; t <= n; ++t) {
      const auto& c = conns_[static_cast<std::size_t>(t - 1)];
      if (c.socket.valid() && !answered[static_cast<std::size_t>(t - 1)]) {
        fds.push_back(pollfd{c.socket.fd(), POLLIN, 0});
        owners.push_back(t);
      }
    }
    if (fds.empty()) throw Error(ErrorCode::Undecodable, "no live workers left to answer");
    const auto now = SteadyClock::now();
    if (now >= deadline)
      throw Error(ErrorCode::Undecodable, "fewer than k decodable replies before timeout");
    const auto wait_ms = std::chrono::ceil<std::chrono::milliseconds>(deadline - now).count();
    const int ready = ::poll(fds.data(), fds.size(), static_cast<int>(wait_ms));
    if (ready < 0 && errno != EINTR) io_error("poll");

    for (std::size_t i = 0; i < fds.size() && !assembler.done(); ++i) {
      if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      const TaskId t = owners[i];
      auto& c = conns_[static_cast<std::size_t>(t - 1)];
      if (!read_available(c.socket.fd(), c.buffer)) c.socket.close();

      while (c.buffer.size() >= wire::kHeaderSize && !assembler.done()) {
        const auto header = wire::parse_header(c.buffer);
        const std::size_t total = wire::kHeaderSize + header.body_size();
        if (c.buffer.size() < total) break;
        const auto frame = wire::decode_body(
            header,
            std::span<const std::uint8_t>(c.buffer).subspan(wire::kHeaderSize, header.body_size()));
        c.buffer.erase(c.buffer.begin(), c.buffer.begin() + static_cast<std::ptrdiff_t>(total));
        if (frame.query_id != query_id) continue;  // late reply to an earlier query

        if (frame.type == wire::MsgType::Task)
          throw Error(ErrorCode::ProtocolError, "worker sent a TASK frame");
        if (frame.task_index != t)
          throw Error(ErrorCode::ProtocolError, "reply for task " + std::to_string(frame.task_index) +
                                                    " on the connection of task " + std::to_string(t));
        answered[static_cast<std::size_t>(t - 1)] = true;
        if (frame.type == wire::MsgType::Error) continue;  // this worker failed the task
        if (frame.payload.size() != dim)
          throw Error(ErrorCode::ProtocolError,
                      "result has dim " + std::to_string(frame.payload.size()) + ", expected " +
                          std::to_string(dim));
        const double at = seconds_between(start, SteadyClock::now());
        record.completion_times[static_cast<std::size_t>(t - 1)] = at;
        record.arrival_order.push_back(t);
        if (assembler.on_result(t, frame.payload)) record.wait_seconds = at;
      }
    }
  }

  auto outcome = assembler.finish();
  record.decode_seconds = outcome.decode_seconds;
  record.head_seconds = outcome.head_seconds;
  record.end_to_end_latency = seconds_between(start, SteadyClock::now());
  record.decode_subset = std::move(outcome.decode_subset);
  record.degraded = outcome.degraded;
  record.labels = std::move(outcome.labels);
  record.estimates = std::move(outcome.estimates);
  return record;
}

QueryRecord run_query_tcp(const EncodedBatch& batch, const InvertibleFunction& f,
                          const std::vector<DownstreamHead>& heads,
                          const std::vector<Endpoint>& endpoints, double timeout_seconds,
                          std::uint64_t query_id) {
  if (batch.task_input(1).size() != f.dim())
    throw Error(ErrorCode::DimensionMismatch, "batch does not match function dimension");
  TcpFrontEnd front(endpoints);
  return front.run_query(batch, heads, query_id, timeout_seconds);
}

}  // namespace invcode
