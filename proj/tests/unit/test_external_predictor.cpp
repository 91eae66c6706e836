#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <set>
#include <string>
#include <thread>

#include "mock_service.hpp"
#include "todma/external_predictor.hpp"
#include "todma/wire_protocol.hpp"

using namespace todma;
using namespace std::chrono_literals;

namespace {

const std::string kMock = MOCK_SERVICE_PATH;

std::vector<MaskedSequence> batch_of(std::size_t count, Rng& rng) {
  std::vector<MaskedSequence> out;
  for (std::size_t i = 0; i < count; ++i) {
    MaskedSequence s;
    for (int n = 0; n < 8; ++n) {
      if (uniform01(rng) < 0.3) {
        s.tokens.push_back(std::nullopt);
        std::set<TokenId> c;
        for (int j = 0; j < 3; ++j) c.insert(static_cast<TokenId>(uniform_below(rng, 16)));
        s.candidates[n] = {c.begin(), c.end()};
      } else {
        s.tokens.push_back(static_cast<TokenId>(uniform_below(rng, 16)));
      }
    }
    if (s.masked_positions().empty()) {
      s.tokens[0].reset();
      s.candidates[0] = {2, 5};
    }
    out.push_back(std::move(s));
  }
  return out;
}

PredictorError::Kind failure_kind(const std::string& mode) {
  ExternalPredictor pred("exec:" + kMock + " " + mode, 2s);
  Rng rng = make_rng(1);
  const auto batch = batch_of(3, rng);
  try {
    predict_masked(batch, pred);
  } catch (const PredictorError& e) {
    return e.kind();
  }
  FAIL("expected PredictorError");
  return PredictorError::Kind::Transport;
}

// One-connection TCP server answering with the mock on a background thread.
class TcpMock {
 public:
  explicit TcpMock(mock::Mode mode) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    REQUIRE(::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
    REQUIRE(::listen(listen_fd_, 1) == 0);
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    thread_ = std::thread([this, mode] {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) return;
      std::string buf;
      char chunk[4096];
      ssize_t n;
      while ((n = ::recv(fd, chunk, sizeof(chunk), 0)) > 0) {
        buf.append(chunk, static_cast<std::size_t>(n));
        std::size_t nl;
        while ((nl = buf.find('\n')) != std::string::npos) {
          const std::string reply = mock::answer(mode, buf.substr(0, nl), 16) + "\n";
          buf.erase(0, nl + 1);
          ::send(fd, reply.data(), reply.size(), MSG_NOSIGNAL);
        }
      }
      ::close(fd);
    });
  }
  ~TcpMock() {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    thread_.join();
  }
  std::string endpoint() const { return "tcp://127.0.0.1:" + std::to_string(port_); }

 private:
  int listen_fd_ = -1;
  int port_ = 0;
  std::thread thread_;
};

int unused_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  socklen_t len = sizeof(addr);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

}  // namespace

TEST_SUITE("external_predictor") {
  TEST_CASE("100 requests over a subprocess: ids matched, choices inside candidates") {
    auto channel = open_endpoint("exec:" + kMock + " rank", 2s);
    Rng rng = make_rng(9);
    const auto batch = batch_of(100, rng);
    const auto dists = external_predict(*channel, batch, 5s, 1);
    REQUIRE(dists.size() == 100);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (std::size_t pos : batch[i].masked_positions()) {
        const auto* ps = dists[i].find(pos);
        REQUIRE(ps != nullptr);
        CHECK(ps->support == *batch[i].candidates_at(pos));
      }
      const auto chosen = choose_tokens(batch[i], dists[i]);
      for (const auto& [pos, cands] : batch[i].candidates) {
        CHECK(std::find(cands.begin(), cands.end(), chosen[pos]) != cands.end());
        CHECK(chosen[pos] == cands.back());  // the mock prefers the largest id
      }
    }
  }

  TEST_CASE("predictor reuses its connection across calls") {
    ExternalPredictor pred("exec:" + kMock + " rank", 2s);
    Rng rng = make_rng(4);
    for (int round = 0; round < 3; ++round) {
      const auto batch = batch_of(5, rng);
      CHECK(predict_masked(batch, pred).size() == 5);
    }
  }

  TEST_CASE("positions without candidates are scored over the vocabulary") {
    ExternalPredictor pred("exec:" + kMock + " rank 16", 2s);
    MaskedSequence s{{std::nullopt, 3}, {}};
    CHECK(predict_masked(s, pred) == std::vector<TokenId>{15, 3});
  }

  TEST_CASE("failure kinds") {
    using K = PredictorError::Kind;
    CHECK(failure_kind("garbage") == K::Malformed);
    CHECK(failure_kind("wrong-id") == K::IdMismatch);
    CHECK(failure_kind("error") == K::Service);
    CHECK(failure_kind("bad-choice") == K::Malformed);
  }

  TEST_CASE("silent service times out with the pending positions") {
    ExternalPredictor pred("exec:" + kMock + " silent", 300ms);
    MaskedSequence s{{1, std::nullopt, std::nullopt}, {{1, {2, 3}}}};
    const auto start = std::chrono::steady_clock::now();
    try {
      predict_masked(s, pred);
      FAIL("expected timeout");
    } catch (const PredictorError& e) {
      CHECK(e.kind() == PredictorError::Kind::Timeout);
      CHECK(e.positions() == std::vector<std::size_t>{1, 2});
    }
    const auto waited = std::chrono::steady_clock::now() - start;
    CHECK(waited >= 300ms);
    CHECK(waited < 3s);
  }

  TEST_CASE("a command that cannot start is a transport failure") {
    ExternalPredictor pred("exec:/nonexistent/predictor-binary", 2s);
    MaskedSequence s{{std::nullopt}, {}};
    try {
      predict_masked(s, pred);
      FAIL("expected failure");
    } catch (const PredictorError& e) {
      CHECK(e.kind() == PredictorError::Kind::Transport);
    }
  }

  TEST_CASE("tcp endpoint") {
    TcpMock server(mock::Mode::Rank);
    ExternalPredictor pred(server.endpoint(), 2s);
    Rng rng = make_rng(12);
    const auto batch = batch_of(20, rng);
    const auto out = predict_masked(batch, pred);
    for (std::size_t i = 0; i < batch.size(); ++i)
      for (const auto& [pos, cands] : batch[i].candidates) CHECK(out[i][pos] == cands.back());
  }

  TEST_CASE("service down: timeout after the deadline") {
    const std::string endpoint = "tcp://127.0.0.1:" + std::to_string(unused_port());
    const auto start = std::chrono::steady_clock::now();
    try {
      open_endpoint(endpoint, 250ms);
      FAIL("expected timeout");
    } catch (const PredictorError& e) {
      CHECK(e.kind() == PredictorError::Kind::Timeout);
    }
    CHECK(std::chrono::steady_clock::now() - start >= 250ms);
  }

  TEST_CASE("endpoint syntax") {
    CHECK_THROWS_AS(open_endpoint("udp://x:1", 100ms), PredictorError);
    CHECK_THROWS_AS(open_endpoint("tcp://nohostport", 100ms), PredictorError);
    CHECK_THROWS_AS(open_endpoint("exec:", 100ms), PredictorError);
  }
}
