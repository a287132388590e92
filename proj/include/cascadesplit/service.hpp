#pragma once

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <type_traits>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cascadesplit/cascade.hpp"
#include "cascadesplit/errors.hpp"
#include "cascadesplit/mlp.hpp"
#include "cascadesplit/replay.hpp"
#include "cascadesplit/softmax.hpp"
#include "cascadesplit/wire.hpp"

namespace cascadesplit {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  std::string str() const { return host + ":" + std::to_string(port); }
};

/// Parses "host:port"; an empty host means all interfaces.
inline Endpoint parse_endpoint(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos) throw ConfigError("address '" + address + "' is not host:port");
  Endpoint e;
  e.host = address.substr(0, colon);
  const std::string port = address.substr(colon + 1);
  char* end = nullptr;
  const long p = std::strtol(port.c_str(), &end, 10);
  if (port.empty() || *end != '\0' || p < 0 || p > 65535)
    throw ConfigError("address '" + address + "' has an invalid port");
  e.port = static_cast<std::uint16_t>(p);
  return e;
}

/// Listen address: the CASCADESPLIT_ADDR environment variable when set,
/// otherwise the given flag value.
inline std::string resolve_listen_address(const std::string& flag_value) {
  if (const char* env = std::getenv("CASCADESPLIT_ADDR"); env && *env) return env;
  return flag_value;
}

namespace net {

/// Owning socket descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { reset(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

using Clock = std::chrono::steady_clock;

inline int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left < 0 ? 0 : static_cast<int>(left);
}

inline addrinfo* resolve(const Endpoint& e, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(e.port);
  const int rc = ::getaddrinfo(e.host.empty() ? nullptr : e.host.c_str(), port.c_str(), &hints, &res);
  if (rc != 0) throw NetworkError("cannot resolve '" + e.str() + "': " + ::gai_strerror(rc));
  return res;
}

/// Writes all of `data`; false on any failure.
inline bool send_all(int fd, std::span<const std::uint8_t> data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

enum class ReadStatus { Frame, Closed, Timeout, Malformed, Stopped };

struct ReadResult {
  ReadStatus status = ReadStatus::Closed;
  std::string payload;
  wire::FrameStatus frame_error = wire::FrameStatus::Ok;
};

/// Reads one frame into `buffer` (leftover bytes stay there). Waits until
/// `deadline`, or until `stop` turns true when a stop flag is given.
inline ReadResult read_frame(int fd, std::vector<std::uint8_t>& buffer,
                             std::optional<Clock::time_point> deadline,
                             const std::atomic<bool>* stop = nullptr) {
  std::uint8_t chunk[4096];
  for (;;) {
    const auto f = wire::decode_frame(buffer);
    if (f.status == wire::FrameStatus::Ok) {
      buffer.erase(buffer.begin(), buffer.begin() + static_cast<std::ptrdiff_t>(f.consumed));
      return {ReadStatus::Frame, f.payload, f.status};
    }
    if (f.status != wire::FrameStatus::Incomplete) return {ReadStatus::Malformed, {}, f.status};
    if (stop && stop->load()) return {ReadStatus::Stopped, {}, {}};
    int wait = 100;
    if (deadline) {
      wait = std::min(wait, remaining_ms(*deadline));
      if (wait == 0 && Clock::now() >= *deadline) return {ReadStatus::Timeout, {}, {}};
    }
    pollfd p{fd, POLLIN, 0};
    const int rc = ::poll(&p, 1, wait);
    if (rc < 0 && errno != EINTR) return {ReadStatus::Closed, {}, {}};
    if (rc <= 0) continue;
    const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
    if (n < 0 && (errno == EINTR || errno == EAGAIN)) continue;
    if (n <= 0) return {ReadStatus::Closed, {}, {}};
    buffer.insert(buffer.end(), chunk, chunk + n);
  }
}

}  // namespace net

/// Computes server-side probabilities for a request. Throws DataError for
/// requests it cannot answer (wrong width, unknown replay id).
using RequestHandler = std::function<ProbVector(const wire::ClassifyRequest&)>;

inline RequestHandler model_handler(std::shared_ptr<const MlpModel> model) {
  return [model = std::move(model)](const wire::ClassifyRequest& r) {
    if (!r.features) throw DataError("request carries no feature vector");
    if (r.features->size() != model->input_width())
      throw DataError("feature vector has wrong width");
    return softmax_t(model->forward(*r.features), 1.0);
  };
}

/// Answers by sample id from the `server` column of a replay set.
inline RequestHandler replay_handler(const std::vector<ReplayRow>& rows) {
  auto table = std::make_shared<std::unordered_map<std::uint64_t, LogitVector>>();
  for (const auto& r : rows) {
    if (!r.server) throw DataError("replay row " + std::to_string(r.id) + " has no server column");
    (*table)[r.id] = *r.server;
  }
  return [table](const wire::ClassifyRequest& r) {
    const auto it = table->find(r.id);
    if (it == table->end()) throw DataError("unknown sample id " + std::to_string(r.id));
    return softmax_t(it->second, 1.0);
  };
}

struct ServerOptions {
  std::string model_id = "server";
  /// Artificial latency added before every response (fault injection).
  std::chrono::milliseconds response_delay{0};
};

/// Threaded TCP server: one thread accepts, one thread per connection. The
/// handler must be safe to call concurrently.
class Server {
 public:
  Server(RequestHandler handler, ServerOptions options = {})
      : handler_(std::move(handler)), options_(std::move(options)) {}
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;
  ~Server() { stop(); }

  /// Binds and starts accepting. Port 0 picks an ephemeral port.
  void start(const Endpoint& where) {
    if (running_) throw NetworkError("server already running");
    addrinfo* res = net::resolve(where, true);
    net::Socket s(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
    if (!s.valid()) {
      ::freeaddrinfo(res);
      throw NetworkError(std::string("socket: ") + std::strerror(errno));
    }
    const int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    const int rc = ::bind(s.fd(), res->ai_addr, res->ai_addrlen);
    ::freeaddrinfo(res);
    if (rc != 0) throw NetworkError("bind " + where.str() + ": " + std::strerror(errno));
    if (::listen(s.fd(), 64) != 0) throw NetworkError(std::string("listen: ") + std::strerror(errno));
    sockaddr_in bound{};
    socklen_t len = sizeof bound;
    ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&bound), &len);
    endpoint_ = Endpoint{where.host.empty() ? "0.0.0.0" : where.host, ntohs(bound.sin_port)};
    listener_ = std::move(s);
    stopping_ = false;
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  const Endpoint& endpoint() const { return endpoint_; }

  /// Stops accepting, closes every connection and joins all threads.
  void stop() {
    if (!running_) return;
    stopping_ = true;
    if (acceptor_.joinable()) acceptor_.join();
    std::list<std::unique_ptr<Connection>> conns;
    {
      std::lock_guard lock(mu_);
      conns.swap(connections_);
    }
    for (auto& c : conns) ::shutdown(c->socket.fd(), SHUT_RDWR);
    for (auto& c : conns)
      if (c->thread.joinable()) c->thread.join();
    listener_.reset();
    running_ = false;
  }

  bool running() const { return running_; }

 private:
  struct Connection {
    net::Socket socket;
    std::thread thread;
    std::atomic<bool> done{false};
  };

  void accept_loop() {
    while (!stopping_) {
      pollfd p{listener_.fd(), POLLIN, 0};
      if (::poll(&p, 1, 50) <= 0) {
        reap();
        continue;
      }
      net::Socket client(::accept(listener_.fd(), nullptr, nullptr));
      if (!client.valid()) continue;
      const int one = 1;
      ::setsockopt(client.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      auto conn = std::make_unique<Connection>();
      conn->socket = std::move(client);
      Connection* raw = conn.get();
      {
        std::lock_guard lock(mu_);
        connections_.push_back(std::move(conn));
      }
      raw->thread = std::thread([this, raw] {
        serve_connection(raw->socket.fd());
        raw->done = true;
      });
      reap();
    }
  }

  void reap() {
    std::lock_guard lock(mu_);
    for (auto it = connections_.begin(); it != connections_.end();) {
      if ((*it)->done && (*it)->thread.joinable()) {
        (*it)->thread.join();
        it = connections_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void respond(int fd, const wire::Response& r) {
    const auto frame = wire::encode_frame(wire::encode_response(r));
    net::send_all(fd, frame);
  }

  void serve_connection(int fd) {
    std::vector<std::uint8_t> buffer;
    while (!stopping_) {
      auto in = net::read_frame(fd, buffer, std::nullopt, &stopping_);
      if (in.status == net::ReadStatus::Malformed) {
        respond(fd, wire::ErrorResponse{std::nullopt, "protocol", wire::to_string(in.frame_error)});
        break;
      }
      if (in.status != net::ReadStatus::Frame) break;
      wire::ClassifyRequest req;
      try {
        req = wire::decode_request(in.payload);
      } catch (const wire::ProtocolError& e) {
        respond(fd, wire::ErrorResponse{std::nullopt, "protocol", e.what()});
        break;
      }
      wire::Response out;
      try {
        const ProbVector p = handler_(req);
        out = wire::ClassifyResponse{req.id, {p.values().begin(), p.values().end()}, options_.model_id};
      } catch (const std::exception& e) {
        out = wire::ErrorResponse{req.id, "bad_request", e.what()};
      }
      if (options_.response_delay.count() > 0) std::this_thread::sleep_for(options_.response_delay);
      const auto frame = wire::encode_frame(wire::encode_response(out));
      if (!net::send_all(fd, frame)) break;
    }
    ::shutdown(fd, SHUT_RDWR);
  }

  RequestHandler handler_;
  ServerOptions options_;
  net::Socket listener_;
  Endpoint endpoint_;
  std::thread acceptor_;
  std::atomic<bool> stopping_{false};
  bool running_ = false;
  std::mutex mu_;
  std::list<std::unique_ptr<Connection>> connections_;
};

enum class RemoteStatus { Ok, Timeout, ConnectionFailed, ProtocolViolation, ServerError };

inline const char* to_string(RemoteStatus s) {
  switch (s) {
    case RemoteStatus::Ok: return "ok";
    case RemoteStatus::Timeout: return "timeout";
    case RemoteStatus::ConnectionFailed: return "connection failed";
    case RemoteStatus::ProtocolViolation: return "protocol violation";
    case RemoteStatus::ServerError: return "server error";
  }
  return "?";
}

struct RemoteResult {
  RemoteStatus status = RemoteStatus::ConnectionFailed;
  std::optional<wire::ClassifyResponse> response;
  std::string detail;

  bool ok() const { return status == RemoteStatus::Ok; }
};

/// Synchronous client holding one connection, reopened on demand. Any
/// failure drops the connection so a late reply can never be matched to a
/// later request. Not thread-safe; use one client per thread.
class RemoteClient {
 public:
  RemoteClient(Endpoint endpoint, std::chrono::milliseconds timeout = std::chrono::milliseconds(1000))
      : endpoint_(std::move(endpoint)), timeout_(timeout) {}

  RemoteResult classify(const wire::ClassifyRequest& request) {
    const auto deadline = net::Clock::now() + timeout_;
    if (!socket_.valid()) {
      if (auto failure = connect(deadline)) return *failure;
    }
    const auto frame = wire::encode_frame(wire::encode_request(request));
    if (!net::send_all(socket_.fd(), frame)) return fail(RemoteStatus::ConnectionFailed, "send failed");
    auto in = net::read_frame(socket_.fd(), buffer_, deadline);
    switch (in.status) {
      case net::ReadStatus::Frame: break;
      case net::ReadStatus::Timeout: return fail(RemoteStatus::Timeout, "no reply within timeout");
      case net::ReadStatus::Malformed: return fail(RemoteStatus::ProtocolViolation, wire::to_string(in.frame_error));
      default: return fail(RemoteStatus::ConnectionFailed, "connection closed by server");
    }
    wire::Response resp;
    try {
      resp = wire::decode_response(in.payload);
    } catch (const wire::ProtocolError& e) {
      return fail(RemoteStatus::ProtocolViolation, e.what());
    }
    if (const auto* err = std::get_if<wire::ErrorResponse>(&resp)) {
      RemoteResult r{RemoteStatus::ServerError, std::nullopt, err->code + ": " + err->message};
      if (err->code == "protocol") drop();
      return r;
    }
    auto& ok = std::get<wire::ClassifyResponse>(resp);
    if (ok.id != request.id) return fail(RemoteStatus::ProtocolViolation, "response id does not echo request id");
    return RemoteResult{RemoteStatus::Ok, std::move(ok), {}};
  }

  void drop() {
    socket_.reset();
    buffer_.clear();
  }

  const Endpoint& endpoint() const { return endpoint_; }

 private:
  RemoteResult fail(RemoteStatus s, std::string detail) {
    drop();
    return RemoteResult{s, std::nullopt, std::move(detail)};
  }

  std::optional<RemoteResult> connect(net::Clock::time_point deadline) {
    addrinfo* res = nullptr;
    try {
      res = net::resolve(endpoint_, false);
    } catch (const NetworkError& e) {
      return RemoteResult{RemoteStatus::ConnectionFailed, std::nullopt, e.what()};
    }
    net::Socket s(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
    if (!s.valid()) {
      ::freeaddrinfo(res);
      return RemoteResult{RemoteStatus::ConnectionFailed, std::nullopt, "socket creation failed"};
    }
    const int flags = ::fcntl(s.fd(), F_GETFL, 0);
    ::fcntl(s.fd(), F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(s.fd(), res->ai_addr, res->ai_addrlen);
    ::freeaddrinfo(res);
    if (rc != 0 && errno != EINPROGRESS)
      return RemoteResult{RemoteStatus::ConnectionFailed, std::nullopt,
                          "connect " + endpoint_.str() + ": " + std::strerror(errno)};
    if (rc != 0) {
      pollfd p{s.fd(), POLLOUT, 0};
      rc = ::poll(&p, 1, net::remaining_ms(deadline));
      if (rc == 0) return RemoteResult{RemoteStatus::Timeout, std::nullopt, "connect timed out"};
      int err = 0;
      socklen_t len = sizeof err;
      ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
      if (rc < 0 || err != 0)
        return RemoteResult{RemoteStatus::ConnectionFailed, std::nullopt,
                            "connect " + endpoint_.str() + ": " + std::strerror(err ? err : errno)};
    }
    ::fcntl(s.fd(), F_SETFL, flags);
    const int one = 1;
    ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    socket_ = std::move(s);
    buffer_.clear();
    return std::nullopt;
  }

  Endpoint endpoint_;
  std::chrono::milliseconds timeout_;
  net::Socket socket_;
  std::vector<std::uint8_t> buffer_;
};

/// One-shot request on a fresh connection.
inline RemoteResult classify_remote(const Endpoint& endpoint, const wire::ClassifyRequest& request,
                                    std::chrono::milliseconds timeout) {
  RemoteClient client(endpoint, timeout);
  return client.classify(request);
}

/// Server binding that offloads over the wire. Samples send their feature
/// vector; replay rows send only their id.
template <class Input>
std::function<ServerReply(const Input&)> remote_server(std::shared_ptr<RemoteClient> client) {
  auto next_id = std::make_shared<std::uint64_t>(0);
  return [client = std::move(client), next_id](const Input& in) {
    wire::ClassifyRequest req;
    if constexpr (std::is_same_v<Input, ReplayRow>) {
      req.id = in.id;
    } else {
      req.id = (*next_id)++;
      req.features = in.x;
    }
    RemoteResult r = client->classify(req);
    if (!r.ok()) return ServerReply::failed(std::string(to_string(r.status)) + ": " + r.detail);
    try {
      return ServerReply::ok(ProbVector(std::move(r.response->probs)));
    } catch (const DomainError& e) {
      return ServerReply::failed(std::string("protocol violation: ") + e.what());
    }
  };
}

/// Runs the cascade with offloads sent to a remote server. Network failures
/// are resolved per sample by the policy's fallback and show up in the
/// tally's `fallback` / `failed` counters.
template <class Input>
Evaluation run_cascade_remote(CascadePolicy<Input> policy, std::span<const Input> data,
                              std::shared_ptr<RemoteClient> client,
                              std::vector<RoutingOutcome>* outcomes = nullptr) {
  policy.server.classify = remote_server<Input>(std::move(client));
  return evaluate(policy, data, outcomes);
}

}  // namespace cascadesplit
