#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "difflm/denoiser.hpp"
#include "difflm/diffusion.hpp"
#include "difflm/model.hpp"
#include "difflm/schedule.hpp"

namespace difflm {

// log_probs[c] is the log-probability of response length c + 1.
struct LengthDistribution {
  std::vector<double> log_probs;
  bool head_trained = false;

  size_t max_length() const { return log_probs.size(); }
  // Most probable lengths, by descending probability; ties go to the shorter.
  std::vector<size_t> top_k(size_t k) const;
};

// Scores prompt + [MASK] with the model's length head. Lengths that would not
// fit next to the prompt get no probability mass.
template <typename Real>
LengthDistribution predict_length(std::span<const TokenId> prompt,
                                  const TransformerModel<Real>& model, TokenId mask_id,
                                  TokenId pad_id, bool head_trained);

struct BeamCandidate {
  size_t length = 0;
  std::vector<TokenId> tokens;
  double score = 0.0;  // GenerationResult::score plus length_log_prob
  double length_log_prob = 0.0;
  GenerationTrace trace;
};

struct BeamOptions {
  DecodeMode mode = DecodeMode::kTopK;
  uint64_t seed = 0;
  size_t threads = 1;
};

struct BeamResult {
  std::vector<BeamCandidate> candidates;  // in the order the lengths were given
  size_t best = 0;
  std::vector<std::string> warnings;

  const BeamCandidate& best_candidate() const { return candidates.at(best); }
};

// Decodes each length independently with a random stream derived from
// (seed, length), so results do not depend on evaluation order or thread
// count. Lengths that do not fit are dropped with a warning; if none fit the
// call fails. The best candidate has the highest score, ties to the shorter.
// Explicit lengths carry no length log-probability.
BeamResult length_beam_generate(std::span<const TokenId> prompt, const Denoiser& denoiser,
                                std::span<const size_t> lengths, const NoiseSchedule& schedule,
                                TokenId mask_id, const BeamOptions& options);

// Decodes the `beams` most probable lengths. Each candidate's score adds the
// log-probability of its length.
BeamResult length_beam_generate(std::span<const TokenId> prompt, const Denoiser& denoiser,
                                const LengthDistribution& lengths, size_t beams,
                                const NoiseSchedule& schedule, TokenId mask_id,
                                const BeamOptions& options);

}  // namespace difflm
