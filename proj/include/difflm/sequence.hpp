#pragma once

#include <span>
#include <string>
#include <vector>

#include "difflm/vocab.hpp"

namespace difflm {

// A (partially masked) prompt+response sequence at timestep t. Positions
// [0, condition_len) hold the prompt and are never masked or rewritten.
struct SequenceState {
  std::vector<TokenId> tokens;
  size_t condition_len = 0;
  int t = 0;

  size_t response_len() const { return tokens.size() - condition_len; }
  std::span<const TokenId> prompt() const {
    return std::span<const TokenId>(tokens).first(condition_len);
  }
  std::span<const TokenId> response() const {
    return std::span<const TokenId>(tokens).subspan(condition_len);
  }
  std::span<TokenId> response() {
    return std::span<TokenId>(tokens).subspan(condition_len);
  }
  size_t masked_count(TokenId mask_id) const;

  bool operator==(const SequenceState&) const = default;
};

// Response-relative positions are used throughout the trace.
struct TraceStep {
  int t = 0;
  SequenceState state;
  std::vector<size_t> committed;        // unmasked response positions
  std::vector<size_t> newly_committed;  // masked at the previous step, unmasked now
  std::vector<size_t> remasked;         // unmasked at the previous step, masked now

  bool operator==(const TraceStep&) const = default;
};

struct GenerationTrace {
  std::vector<TraceStep> steps;
  SequenceState final_state;

  bool operator==(const GenerationTrace&) const = default;
};

// Builds a trace step from the previous snapshot (nullptr for the first one).
TraceStep make_trace_step(const SequenceState& state, const TraceStep* previous, TokenId mask_id);

// How token sequences are rendered: concatenated symbols or space-joined words.
enum class RenderStyle { kConcat, kSpaced };

std::string render_response(std::span<const TokenId> tokens, const Vocab& vocab,
                            RenderStyle style);

// One line per step: step index, t, rendered response (masks as "_"),
// comma-separated newly committed positions; tab-separated.
std::string format_trace(const GenerationTrace& trace, const Vocab& vocab, RenderStyle style);

}  // namespace difflm
