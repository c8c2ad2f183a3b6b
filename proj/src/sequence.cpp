#include "difflm/sequence.hpp"

#include <algorithm>

namespace difflm {

size_t SequenceState::masked_count(TokenId mask_id) const {
  auto r = response();
  return static_cast<size_t>(std::count(r.begin(), r.end(), mask_id));
}

TraceStep make_trace_step(const SequenceState& state, const TraceStep* previous,
                          TokenId mask_id) {
  TraceStep step;
  step.t = state.t;
  step.state = state;
  const auto response = state.response();
  for (size_t i = 0; i < response.size(); ++i) {
    const bool unmasked = response[i] != mask_id;
    if (unmasked) step.committed.push_back(i);
    if (previous == nullptr) {
      if (unmasked) step.newly_committed.push_back(i);
      continue;
    }
    const bool was_unmasked = previous->state.response()[i] != mask_id;
    if (unmasked && !was_unmasked) step.newly_committed.push_back(i);
    if (!unmasked && was_unmasked) step.remasked.push_back(i);
  }
  return step;
}

std::string render_response(std::span<const TokenId> tokens, const Vocab& vocab,
                            RenderStyle style) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (style == RenderStyle::kSpaced && i > 0) out += ' ';
    out += tokens[i] == vocab.mask_id() ? std::string("_") : vocab.token(tokens[i]);
  }
  return out;
}

std::string format_trace(const GenerationTrace& trace, const Vocab& vocab, RenderStyle style) {
  std::string out;
  for (size_t i = 0; i < trace.steps.size(); ++i) {
    const TraceStep& step = trace.steps[i];
    out += std::to_string(i);
    out += '\t';
    out += std::to_string(step.t);
    out += '\t';
    out += render_response(step.state.response(), vocab, style);
    out += '\t';
    for (size_t j = 0; j < step.newly_committed.size(); ++j) {
      if (j > 0) out += ',';
      out += std::to_string(step.newly_committed[j]);
    }
    out += '\n';
  }
  return out;
}

}  // namespace difflm
