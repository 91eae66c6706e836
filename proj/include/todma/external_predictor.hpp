#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "todma/predictor.hpp"

namespace todma {

using Clock = std::chrono::steady_clock;

/// Bidirectional line-oriented byte stream.
class LineChannel {
 public:
  virtual ~LineChannel() = default;
  virtual void write_line(std::string_view line) = 0;
  /// Next complete line without its terminator, or nullopt once the deadline passes.
  virtual std::optional<std::string> read_line(Clock::time_point deadline) = 0;
};

/// Channel over a connected stream socket (TCP, or a socketpair to a child process).
class SocketChannel : public LineChannel {
 public:
  explicit SocketChannel(int fd);
  ~SocketChannel() override;
  SocketChannel(const SocketChannel&) = delete;
  SocketChannel& operator=(const SocketChannel&) = delete;

  void write_line(std::string_view line) override;
  std::optional<std::string> read_line(Clock::time_point deadline) override;

 private:
  int fd_;
  std::string buffer_;
  bool eof_ = false;
};

/// Child process speaking the protocol on its stdin/stdout.
class SubprocessChannel final : public LineChannel {
 public:
  explicit SubprocessChannel(const std::string& command_line);
  ~SubprocessChannel() override;

  void write_line(std::string_view line) override { socket_->write_line(line); }
  std::optional<std::string> read_line(Clock::time_point deadline) override { return socket_->read_line(deadline); }

 private:
  std::unique_ptr<SocketChannel> socket_;
  int pid_ = -1;
};

/// Endpoints: "tcp://host:port" or "exec:<command line>". TCP connection
/// attempts are retried until `connect_timeout` elapses, then a Timeout error
/// is raised.
std::unique_ptr<LineChannel> open_endpoint(const std::string& endpoint, std::chrono::milliseconds connect_timeout);

/// Sends one request per sequence (ids first_id, first_id + 1, ...) and
/// collects the replies, which may arrive in any order. Raises PredictorError
/// with kind Timeout, Malformed, IdMismatch or Service; the error carries the
/// masked positions of the affected request(s).
std::vector<PredictionDistribution> external_predict(LineChannel& channel, std::span<const MaskedSequence> batch,
                                                     std::chrono::milliseconds timeout, std::int64_t first_id = 0);

/// Predictor handle backed by an external service. The connection is opened
/// on first use and kept for later batches.
class ExternalPredictor final : public MaskedTokenPredictor {
 public:
  ExternalPredictor(std::string endpoint, std::chrono::milliseconds timeout);
  std::vector<PredictionDistribution> predict(std::span<const MaskedSequence> batch) override;

 private:
  std::string endpoint_;
  std::chrono::milliseconds timeout_;
  std::unique_ptr<LineChannel> channel_;
  std::int64_t next_id_ = 0;
};

}  // namespace todma
