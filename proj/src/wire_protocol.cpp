#include "todma/wire_protocol.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

namespace todma::wire {

using nlohmann::json;

namespace {

[[noreturn]] void malformed(const std::string& what) {
  throw PredictorError(PredictorError::Kind::Malformed, "malformed predictor message: " + what);
}

std::size_t parse_position(const std::string& key) {
  std::size_t consumed = 0;
  unsigned long long value = 0;
  try {
    value = std::stoull(key, &consumed, 10);
  } catch (const std::exception&) {
    malformed("position key '" + key + "' is not an integer");
  }
  if (consumed != key.size() || key.empty() || key.front() == '-') malformed("bad position key '" + key + "'");
  return static_cast<std::size_t>(value);
}

TokenId parse_token(const json& j) {
  if (!j.is_number_integer() || j.get<std::int64_t>() < 0 ||
      j.get<std::int64_t>() > static_cast<std::int64_t>(std::numeric_limits<TokenId>::max()))
    malformed("token id must be a non-negative integer");
  return static_cast<TokenId>(j.get<std::int64_t>());
}

json parse_object(std::string_view line) {
  json j = json::parse(line.begin(), line.end(), nullptr, false);
  if (j.is_discarded()) malformed("not valid JSON");
  if (!j.is_object()) malformed("top-level value is not an object");
  if (!j.contains("id") || !j["id"].is_number_integer()) malformed("missing integer id");
  return j;
}

}  // namespace

std::string encode_request(const Request& request) {
  json tokens = json::array();
  for (const auto& t : request.sequence.tokens) tokens.push_back(t ? json(*t) : json(nullptr));
  json candidates = json::object();
  for (const auto& [pos, cands] : request.sequence.candidates) candidates[std::to_string(pos)] = cands;
  return json{{"id", request.id}, {"tokens", std::move(tokens)}, {"candidates", std::move(candidates)}}.dump();
}

std::string encode_response(const Response& response) {
  json choices = json::object();
  for (const auto& [pos, q] : response.choices) choices[std::to_string(pos)] = q;
  json scores = json::object();
  for (const auto& [pos, s] : response.scores) scores[std::to_string(pos)] = s;
  return json{{"id", response.id}, {"choices", std::move(choices)}, {"scores", std::move(scores)}}.dump();
}

std::string encode_error(const ErrorReply& error) {
  return json{{"id", error.id}, {"error", error.code}, {"message", error.message}}.dump();
}

Request decode_request(std::string_view line) {
  const json j = parse_object(line);
  Request req;
  req.id = j["id"].get<std::int64_t>();
  if (!j.contains("tokens") || !j["tokens"].is_array()) malformed("tokens must be an array");
  for (const auto& t : j["tokens"]) {
    if (t.is_null())
      req.sequence.tokens.emplace_back();
    else
      req.sequence.tokens.emplace_back(parse_token(t));
  }
  if (j.contains("candidates")) {
    if (!j["candidates"].is_object()) malformed("candidates must be an object");
    for (const auto& [key, value] : j["candidates"].items()) {
      if (!value.is_array()) malformed("candidate list must be an array");
      std::vector<TokenId> cands;
      for (const auto& c : value) cands.push_back(parse_token(c));
      req.sequence.candidates.emplace(parse_position(key), std::move(cands));
    }
  }
  try {
    req.sequence.validate();
  } catch (const InvalidArgument& e) {
    malformed(e.what());
  }
  return req;
}

Reply decode_reply(std::string_view line) {
  const json j = parse_object(line);
  const auto id = j["id"].get<std::int64_t>();
  if (j.contains("error")) {
    ErrorReply err;
    err.id = id;
    if (!j["error"].is_string()) malformed("error code must be a string");
    err.code = j["error"].get<std::string>();
    if (j.contains("message") && j["message"].is_string()) err.message = j["message"].get<std::string>();
    return err;
  }
  Response resp;
  resp.id = id;
  if (!j.contains("choices") || !j["choices"].is_object()) malformed("choices must be an object");
  if (!j.contains("scores") || !j["scores"].is_object()) malformed("scores must be an object");
  for (const auto& [key, value] : j["choices"].items()) resp.choices.emplace(parse_position(key), parse_token(value));
  for (const auto& [key, value] : j["scores"].items()) {
    if (!value.is_array()) malformed("score list must be an array");
    std::vector<double> s;
    for (const auto& x : value) {
      if (!x.is_number()) malformed("scores must be numbers");
      s.push_back(x.get<double>());
      if (!std::isfinite(s.back())) malformed("scores must be finite");
    }
    resp.scores.emplace(parse_position(key), std::move(s));
  }
  return resp;
}

PredictionDistribution to_distribution(const Request& request, const Response& response) {
  PredictionDistribution dist;
  std::vector<std::size_t> bad;
  for (std::size_t pos : request.sequence.masked_positions()) {
    const auto it = response.scores.find(pos);
    if (it == response.scores.end() || it->second.empty()) {
      bad.push_back(pos);
      continue;
    }
    PositionScores ps;
    ps.position = pos;
    ps.scores = it->second;
    if (const auto* cands = request.sequence.candidates_at(pos); cands && !cands->empty()) {
      if (ps.scores.size() != cands->size()) {
        bad.push_back(pos);
        continue;
      }
      ps.support = *cands;
      if (const auto c = response.choices.find(pos); c != response.choices.end() &&
                                                     std::find(cands->begin(), cands->end(), c->second) == cands->end()) {
        bad.push_back(pos);
        continue;
      }
    }
    dist.positions.push_back(std::move(ps));
  }
  if (!bad.empty()) {
    throw PredictorError(PredictorError::Kind::Malformed,
                         "response " + std::to_string(response.id) + " does not match its request", std::move(bad));
  }
  return dist;
}

}  // namespace todma::wire
