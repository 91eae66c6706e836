#pragma once
// Scripted stand-in for an external masked-token predictor.

#include <string>
#include <vector>

namespace mock {

enum class Mode { Rank, Silent, Garbage, WrongId, Error, BadChoice };

Mode parse_mode(const std::string& name);

/// Replies to one request line; an empty result means "say nothing".
/// Rank mode scores each candidate by its own id (largest wins) and scores
/// positions without candidates over [0, vocab).
std::string answer(Mode mode, const std::string& request_line, std::size_t vocab);

}  // namespace mock
