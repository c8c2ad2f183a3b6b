#include "difflm/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace difflm {

namespace {

void require_timestep(int t, int lo, const NoiseSchedule& schedule, const char* op) {
  if (t < lo || t > schedule.steps()) {
    throw std::out_of_range(std::string(op) + ": timestep " + std::to_string(t) +
                            " outside [" + std::to_string(lo) + ", " +
                            std::to_string(schedule.steps()) + "]");
  }
}

void require_unmasked(std::span<const TokenId> tokens, TokenId mask_id, const char* op,
                      const char* what) {
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == mask_id) {
      throw std::invalid_argument(std::string(op) + ": " + what +
                                  " contains the mask token at position " + std::to_string(i));
    }
  }
}

DenoiserOutput score_checked(const Denoiser& denoiser, const SequenceState& state) {
  DenoiserOutput out = denoiser.score(state);
  if (out.rows() != state.response_len()) {
    throw std::runtime_error("denoiser returned " + std::to_string(out.rows()) +
                             " rows for a response of length " +
                             std::to_string(state.response_len()));
  }
  return out;
}

double row_sample_weights(std::span<const double> row, std::vector<double>& weights) {
  weights.resize(row.size());
  const double top = *std::max_element(row.begin(), row.end());
  for (size_t v = 0; v < row.size(); ++v) weights[v] = std::exp(row[v] - top);
  return top;
}

SequenceState apply_ancestral(const SequenceState& state, const DenoiserOutput& out,
                              const NoiseSchedule& schedule, TokenId mask_id, Rng& rng) {
  const double reveal = schedule.reveal_probability(state.t);
  SequenceState next = state;
  next.t = state.t - 1;
  std::vector<double> weights;
  auto response = next.response();
  for (size_t i = 0; i < response.size(); ++i) {
    if (response[i] != mask_id) continue;
    if (!rng.bernoulli(reveal)) continue;
    row_sample_weights(out.row(i), weights);
    response[i] = static_cast<TokenId>(rng.categorical(weights));
  }
  return next;
}

SequenceState apply_mask_predict(const SequenceState& state, const DenoiserOutput& out,
                                 const NoiseSchedule& schedule, TokenId mask_id,
                                 std::vector<double>* scores) {
  const size_t n = state.response_len();
  std::vector<TokenId> best(n);
  std::vector<double> best_score(n);
  for (size_t i = 0; i < n; ++i) {
    best[i] = out.argmax(i);
    best_score[i] = out.at(i, best[i]);
  }
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return best_score[a] > best_score[b]; });
  const auto keep = static_cast<size_t>(
      unmask_count(static_cast<int>(n), state.t - 1, schedule.steps()));

  SequenceState next = state;
  next.t = state.t - 1;
  auto response = next.response();
  std::fill(response.begin(), response.end(), mask_id);
  for (size_t r = 0; r < keep; ++r) response[order[r]] = best[order[r]];
  if (scores != nullptr) *scores = std::move(best_score);
  return next;
}

}  // namespace

std::string_view to_string(DecodeMode mode) {
  return mode == DecodeMode::kTopK ? "topk" : "ancestral";
}

DecodeMode parse_decode_mode(std::string_view name) {
  if (name == "topk") return DecodeMode::kTopK;
  if (name == "ancestral") return DecodeMode::kAncestral;
  throw std::invalid_argument("unknown decode mode '" + std::string(name) +
                              "' (expected topk|ancestral)");
}

SequenceState corrupt(std::span<const TokenId> x0, size_t condition_len, int t,
                      const NoiseSchedule& schedule, TokenId mask_id, Rng& rng) {
  require_timestep(t, 0, schedule, "corrupt");
  require_unmasked(x0, mask_id, "corrupt", "x0");
  if (condition_len >= x0.size()) {
    throw std::invalid_argument("corrupt: condition length " + std::to_string(condition_len) +
                                " leaves no response in a sequence of length " +
                                std::to_string(x0.size()));
  }
  SequenceState state{std::vector<TokenId>(x0.begin(), x0.end()), condition_len, t};
  const double keep = schedule.alpha(t);
  for (TokenId& token : state.response()) {
    if (!rng.bernoulli(keep)) token = mask_id;
  }
  return state;
}

SequenceState corrupt_step(const SequenceState& previous, int t, const NoiseSchedule& schedule,
                           TokenId mask_id, Rng& rng) {
  require_timestep(t, 1, schedule, "corrupt_step");
  if (previous.t != t - 1) {
    throw std::invalid_argument("corrupt_step: state is at timestep " +
                                std::to_string(previous.t) + ", expected " +
                                std::to_string(t - 1));
  }
  SequenceState state = previous;
  state.t = t;
  const double survive = schedule.beta(t);
  for (TokenId& token : state.response()) {
    if (token != mask_id && !rng.bernoulli(survive)) token = mask_id;
  }
  return state;
}

SparseCategorical posterior(TokenId x_t, TokenId x0, int t, const NoiseSchedule& schedule,
                            TokenId mask_id) {
  require_timestep(t, 1, schedule, "posterior");
  if (x0 == mask_id) throw std::invalid_argument("posterior: x0 token is the mask token");
  if (x_t != mask_id) {
    if (x_t != x0) throw std::invalid_argument("posterior: visible x_t token differs from x0");
    if (schedule.alpha(t) == 0.0) {
      throw std::invalid_argument("posterior: no token survives to t = " + std::to_string(t));
    }
    return {{x_t, 1.0}};
  }
  const double reveal = schedule.reveal_probability(t);
  if (reveal >= 1.0) return {{x0, 1.0}};
  return {{x0, reveal}, {mask_id, 1.0 - reveal}};
}

SequenceState reverse_step_ancestral(const SequenceState& state, const Denoiser& denoiser,
                                     const NoiseSchedule& schedule, TokenId mask_id, Rng& rng) {
  require_timestep(state.t, 1, schedule, "reverse_step_ancestral");
  return apply_ancestral(state, score_checked(denoiser, state), schedule, mask_id, rng);
}

SequenceState mask_predict_step(const SequenceState& state, const Denoiser& denoiser,
                                const NoiseSchedule& schedule, TokenId mask_id,
                                std::vector<double>* scores) {
  require_timestep(state.t, 1, schedule, "mask_predict_step");
  return apply_mask_predict(state, score_checked(denoiser, state), schedule, mask_id, scores);
}

GenerationResult generate(std::span<const TokenId> prompt, size_t target_len,
                          const Denoiser& denoiser, const NoiseSchedule& schedule,
                          DecodeMode mode, TokenId mask_id, Rng& rng) {
  if (denoiser.vocab_size() == 0) throw std::invalid_argument("generate: empty vocabulary");
  if (target_len < 1) throw std::invalid_argument("generate: target length must be >= 1");
  require_unmasked(prompt, mask_id, "generate", "prompt");
  if (prompt.size() + target_len > denoiser.max_positions()) {
    throw std::invalid_argument("generate: prompt (" + std::to_string(prompt.size()) +
                                ") + target length (" + std::to_string(target_len) +
                                ") exceeds the denoiser's " +
                                std::to_string(denoiser.max_positions()) + " positions");
  }

  SequenceState state;
  state.tokens.assign(prompt.begin(), prompt.end());
  state.tokens.resize(prompt.size() + target_len, mask_id);
  state.condition_len = prompt.size();
  state.t = schedule.steps();

  GenerationResult result;
  result.trace.steps.reserve(static_cast<size_t>(schedule.steps()) + 1);
  result.trace.steps.push_back(make_trace_step(state, nullptr, mask_id));

  // Log-probability of each response token at the step that wrote it.
  std::vector<double> written(target_len, 0.0);
  while (state.t > 0) {
    const DenoiserOutput out = score_checked(denoiser, state);
    SequenceState next = mode == DecodeMode::kTopK
                             ? apply_mask_predict(state, out, schedule, mask_id, nullptr)
                             : apply_ancestral(state, out, schedule, mask_id, rng);
    const auto before = state.response();
    const auto after = next.response();
    for (size_t i = 0; i < target_len; ++i) {
      if (after[i] != mask_id && after[i] != before[i]) written[i] = out.at(i, after[i]);
    }
    state = std::move(next);
    result.trace.steps.push_back(make_trace_step(state, &result.trace.steps.back(), mask_id));
  }

  const auto response = state.response();
  result.tokens.assign(response.begin(), response.end());
  double total = 0.0;
  for (double w : written) total += w;
  result.score = total / static_cast<double>(target_len);
  result.trace.final_state = std::move(state);
  return result;
}

double elbo_estimate(std::span<const TokenId> prompt, std::span<const TokenId> x0,
                     const Denoiser& denoiser, const NoiseSchedule& schedule, size_t n_samples,
                     TokenId mask_id, Rng& rng) {
  if (n_samples < 1) throw std::invalid_argument("elbo_estimate: n_samples must be >= 1");
  require_unmasked(x0, mask_id, "elbo_estimate", "x0");
  require_unmasked(prompt, mask_id, "elbo_estimate", "prompt");
  std::vector<TokenId> full(prompt.begin(), prompt.end());
  full.insert(full.end(), x0.begin(), x0.end());
  const int steps = schedule.steps();

  double total = 0.0;
  for (size_t s = 0; s < n_samples; ++s) {
    const int t = 1 + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(steps)));
    const SequenceState x_t = corrupt(full, prompt.size(), t, schedule, mask_id, rng);
    const auto response = x_t.response();
    if (std::find(response.begin(), response.end(), mask_id) == response.end()) continue;
    // Per masked position the KL between the true and model posteriors
    // reduces to -reveal(t) * log p(x0 | x_t); unmasked positions contribute 0.
    const DenoiserOutput out = score_checked(denoiser, x_t);
    const double reveal = schedule.reveal_probability(t);
    double term = 0.0;
    for (size_t i = 0; i < response.size(); ++i) {
      if (response[i] == mask_id) term -= reveal * out.at(i, x0[i]);
    }
    total += static_cast<double>(steps) * term;
  }
  return total / static_cast<double>(n_samples);
}

double log_sum_exp(std::span<const double> row) {
  double top = kNegInf;
  for (double v : row) top = std::max(top, v);
  if (top == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double v : row) acc += std::exp(v - top);
  return top + std::log(acc);
}

TokenId DenoiserOutput::argmax(size_t i) const {
  const auto r = row(i);
  size_t best = 0;
  for (size_t v = 1; v < r.size(); ++v) {
    if (r[v] > r[best]) best = v;
  }
  return static_cast<TokenId>(best);
}

}  // namespace difflm
