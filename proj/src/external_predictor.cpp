#include "todma/external_predictor.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <map>
#include <sstream>
#include <thread>

#include "todma/wire_protocol.hpp"

namespace todma {

namespace {

using Kind = PredictorError::Kind;

[[noreturn]] void transport_error(const std::string& what) {
  throw PredictorError(Kind::Transport, what + ": " + std::strerror(errno));
}

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::ceil<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left <= 0 ? 0 : static_cast<int>(std::min<long long>(left, 1 << 30));
}

std::vector<std::string> split_command(const std::string& command_line) {
  std::istringstream in(command_line);
  std::vector<std::string> argv;
  std::string arg;
  while (in >> arg) argv.push_back(arg);
  return argv;
}

int try_connect(const std::string& host, const std::string& port, Clock::time_point deadline) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(host.c_str(), port.c_str(), &hints, &res) != 0 || res == nullptr) {
    throw PredictorError(Kind::Transport, "cannot resolve " + host + ":" + port);
  }
  int connected = -1;
  for (addrinfo* ai = res; ai != nullptr && connected < 0; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    const int flags = fcntl(fd, F_GETFL);
    fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd p{fd, POLLOUT, 0};
      if (::poll(&p, 1, remaining_ms(deadline)) == 1) {
        int err = 0;
        socklen_t len = sizeof(err);
        getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        rc = err == 0 ? 0 : -1;
      } else {
        rc = -1;
      }
    }
    if (rc == 0) {
      fcntl(fd, F_SETFL, flags);
      connected = fd;
    } else {
      ::close(fd);
    }
  }
  freeaddrinfo(res);
  return connected;
}

}  // namespace

SocketChannel::SocketChannel(int fd) : fd_(fd) {}

SocketChannel::~SocketChannel() {
  if (fd_ >= 0) ::close(fd_);
}

void SocketChannel::write_line(std::string_view line) {
  std::string data(line);
  data.push_back('\n');
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      transport_error("write to predictor failed");
    }
    sent += static_cast<std::size_t>(n);
  }
}

std::optional<std::string> SocketChannel::read_line(Clock::time_point deadline) {
  while (true) {
    if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    if (eof_) throw PredictorError(Kind::Transport, "predictor closed the connection");
    pollfd p{fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc < 0) {
      if (errno == EINTR) continue;
      transport_error("poll on predictor failed");
    }
    if (rc == 0) return std::nullopt;
    char chunk[4096];
    const ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      transport_error("read from predictor failed");
    }
    if (n == 0) eof_ = true;
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

SubprocessChannel::SubprocessChannel(const std::string& command_line) {
  const auto args = split_command(command_line);
  if (args.empty()) throw PredictorError(Kind::Transport, "empty predictor command");

  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) transport_error("socketpair failed");
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(fds[0]);
    ::close(fds[1]);
    transport_error("fork failed");
  }
  if (pid == 0) {
    ::dup2(fds[1], STDIN_FILENO);
    ::dup2(fds[1], STDOUT_FILENO);
    std::vector<char*> argv;
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    ::execvp(argv[0], argv.data());
    ::_exit(127);
  }
  ::close(fds[1]);
  pid_ = pid;
  socket_ = std::make_unique<SocketChannel>(fds[0]);
}

SubprocessChannel::~SubprocessChannel() {
  socket_.reset();  // child sees EOF on stdin
  if (pid_ > 0) {
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(pid_, nullptr, WNOHANG) == pid_) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
  }
}

std::unique_ptr<LineChannel> open_endpoint(const std::string& endpoint, std::chrono::milliseconds connect_timeout) {
  constexpr std::string_view tcp = "tcp://";
  constexpr std::string_view exec = "exec:";
  if (endpoint.starts_with(exec)) return std::make_unique<SubprocessChannel>(endpoint.substr(exec.size()));
  if (!endpoint.starts_with(tcp)) {
    throw PredictorError(Kind::Transport, "unsupported predictor endpoint '" + endpoint + "'");
  }
  const std::string hostport = endpoint.substr(tcp.size());
  const auto colon = hostport.rfind(':');
  if (colon == std::string::npos) throw PredictorError(Kind::Transport, "endpoint needs host:port");
  const std::string host = hostport.substr(0, colon);
  const std::string port = hostport.substr(colon + 1);

  const auto deadline = Clock::now() + connect_timeout;
  while (true) {
    const int fd = try_connect(host, port, deadline);
    if (fd >= 0) return std::make_unique<SocketChannel>(fd);
    if (Clock::now() >= deadline) {
      throw PredictorError(Kind::Timeout, "predictor at " + endpoint + " unreachable before the deadline");
    }
    std::this_thread::sleep_for(std::min(std::chrono::milliseconds(50),
                                         std::chrono::milliseconds(remaining_ms(deadline))));
  }
}

std::vector<PredictionDistribution> external_predict(LineChannel& channel, std::span<const MaskedSequence> batch,
                                                     std::chrono::milliseconds timeout, std::int64_t first_id) {
  std::map<std::int64_t, std::size_t> pending;  // id -> batch index
  std::vector<wire::Request> requests;
  requests.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    batch[i].validate();
    requests.push_back({first_id + static_cast<std::int64_t>(i), batch[i]});
    pending.emplace(requests.back().id, i);
  }
  for (const auto& req : requests) channel.write_line(wire::encode_request(req));

  auto positions_of = [&](std::size_t index) { return batch[index].masked_positions(); };

  std::vector<std::optional<PredictionDistribution>> results(batch.size());
  const auto deadline = Clock::now() + timeout;
  while (!pending.empty()) {
    const auto line = channel.read_line(deadline);
    if (!line) {
      std::vector<std::size_t> positions;
      for (const auto& [id, index] : pending) {
        const auto p = positions_of(index);
        positions.insert(positions.end(), p.begin(), p.end());
      }
      throw PredictorError(Kind::Timeout,
                           std::to_string(pending.size()) + " predictor request(s) unanswered before the deadline",
                           std::move(positions));
    }
    const wire::Reply reply = wire::decode_reply(*line);
    if (const auto* err = std::get_if<wire::ErrorReply>(&reply)) {
      const auto it = pending.find(err->id);
      throw PredictorError(Kind::Service, "predictor error '" + err->code + "': " + err->message,
                           it == pending.end() ? std::vector<std::size_t>{} : positions_of(it->second));
    }
    const auto& resp = std::get<wire::Response>(reply);
    const auto it = pending.find(resp.id);
    if (it == pending.end()) {
      throw PredictorError(Kind::IdMismatch, "predictor answered unknown request id " + std::to_string(resp.id));
    }
    results[it->second] = wire::to_distribution(requests[it->second], resp);
    pending.erase(it);
  }

  std::vector<PredictionDistribution> out;
  out.reserve(results.size());
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

ExternalPredictor::ExternalPredictor(std::string endpoint, std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), timeout_(timeout) {}

std::vector<PredictionDistribution> ExternalPredictor::predict(std::span<const MaskedSequence> batch) {
  if (!channel_) channel_ = open_endpoint(endpoint_, timeout_);
  auto out = external_predict(*channel_, batch, timeout_, next_id_);
  next_id_ += static_cast<std::int64_t>(batch.size());
  return out;
}

}  // namespace todma
