#pragma once

#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "difflm/denoiser.hpp"
#include "difflm/rng.hpp"
#include "difflm/schedule.hpp"
#include "difflm/sequence.hpp"

namespace difflm {

enum class DecodeMode { kTopK, kAncestral };

std::string_view to_string(DecodeMode mode);
DecodeMode parse_decode_mode(std::string_view name);

// Forward marginal q(x_t | x0): every response token independently survives
// with probability alpha(t) and is otherwise replaced by mask_id.
SequenceState corrupt(std::span<const TokenId> x0, size_t condition_len, int t,
                      const NoiseSchedule& schedule, TokenId mask_id, Rng& rng);

// Single forward step q(x_t | x_{t-1}); `previous.t` must equal t - 1.
SequenceState corrupt_step(const SequenceState& previous, int t, const NoiseSchedule& schedule,
                           TokenId mask_id, Rng& rng);

using SparseCategorical = std::vector<std::pair<TokenId, double>>;

// Exact q(x_{t-1} | x_t, x0) for one position under absorbing noise. States
// with zero probability under the forward process are rejected.
SparseCategorical posterior(TokenId x_t, TokenId x0, int t, const NoiseSchedule& schedule,
                            TokenId mask_id);

// Ancestral reverse step: each masked response position is revealed with
// probability reveal_probability(t) and, if revealed, takes a token drawn from
// the denoiser's row for that position.
SequenceState reverse_step_ancestral(const SequenceState& state, const Denoiser& denoiser,
                                     const NoiseSchedule& schedule, TokenId mask_id, Rng& rng);

// Mask-predict step: scores every response position by its argmax
// log-probability, keeps the unmask_count(N, t-1, T) best (ties to the lower
// position) with their argmax tokens and masks the rest. Committed tokens may
// be remasked. If `scores` is given it receives the per-position argmax
// log-probabilities.
SequenceState mask_predict_step(const SequenceState& state, const Denoiser& denoiser,
                                const NoiseSchedule& schedule, TokenId mask_id,
                                std::vector<double>* scores = nullptr);

struct GenerationResult {
  std::vector<TokenId> tokens;  // response only
  GenerationTrace trace;
  // Mean over response tokens of the log-probability each had under the
  // denoiser call that wrote it.
  double score = 0.0;
};

GenerationResult generate(std::span<const TokenId> prompt, size_t target_len,
                          const Denoiser& denoiser, const NoiseSchedule& schedule,
                          DecodeMode mode, TokenId mask_id, Rng& rng);

// Monte-Carlo estimate (nats) of the variational bound on -log p(x0) for the
// response x0 given the prompt.
double elbo_estimate(std::span<const TokenId> prompt, std::span<const TokenId> x0,
                     const Denoiser& denoiser, const NoiseSchedule& schedule, size_t n_samples,
                     TokenId mask_id, Rng& rng);

}  // namespace difflm
