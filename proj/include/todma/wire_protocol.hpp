#pragma once

// Newline-delimited JSON messages exchanged with an external masked-token
// predictor. One message per line, UTF-8.
//
//   request  {"id": 3, "tokens": [5, null, 7], "candidates": {"1": [4, 9]}}
//   response {"id": 3, "choices": {"1": 9}, "scores": {"1": [0.2, 0.8]}}
//   error    {"id": 3, "error": "vocab", "message": "token 70000 out of range"}
//
// Scores are aligned with the request's candidate list for that position;
// positions without candidates are scored over the whole vocabulary.

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "todma/predictor.hpp"

namespace todma::wire {

struct Request {
  std::int64_t id = 0;
  MaskedSequence sequence;
};

struct Response {
  std::int64_t id = 0;
  std::map<std::size_t, TokenId> choices;
  std::map<std::size_t, std::vector<double>> scores;
};

struct ErrorReply {
  std::int64_t id = -1;
  std::string code;
  std::string message;
};

using Reply = std::variant<Response, ErrorReply>;

std::string encode_request(const Request& request);
std::string encode_response(const Response& response);
std::string encode_error(const ErrorReply& error);

/// Throw PredictorError(Malformed) on anything that is not a well-formed message.
Request decode_request(std::string_view line);
Reply decode_reply(std::string_view line);

/// Turns a response into scores for the request it answers. Checks that every
/// masked position is covered, that scores line up with the candidates and
/// that the service's own choice respects the candidate set.
PredictionDistribution to_distribution(const Request& request, const Response& response);

}  // namespace todma::wire
