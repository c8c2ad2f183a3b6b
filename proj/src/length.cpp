#include "difflm/length.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "difflm/rng.hpp"

namespace difflm {

namespace {

void pick_best(BeamResult& result) {
  result.best = 0;
  for (size_t i = 1; i < result.candidates.size(); ++i) {
    const BeamCandidate& c = result.candidates[i];
    const BeamCandidate& b = result.candidates[result.best];
    if (c.score > b.score || (c.score == b.score && c.length < b.length)) result.best = i;
  }
}

}  // namespace

std::vector<size_t> LengthDistribution::top_k(size_t k) const {
  std::vector<size_t> order(log_probs.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return log_probs[a] > log_probs[b]; });
  std::vector<size_t> out;
  for (size_t c : order) {
    if (out.size() == k || log_probs[c] == kNegInf) break;
    out.push_back(c + 1);
  }
  return out;
}

template <typename Real>
LengthDistribution predict_length(std::span<const TokenId> prompt,
                                  const TransformerModel<Real>& model, TokenId mask_id,
                                  TokenId pad_id, bool head_trained) {
  const size_t capacity = model.config().max_positions;
  if (prompt.size() + 1 > capacity) {
    throw std::invalid_argument("prompt of length " + std::to_string(prompt.size()) +
                                " leaves no room for a response in " + std::to_string(capacity) +
                                " positions");
  }
  std::vector<std::vector<TokenId>> input(1, std::vector<TokenId>(prompt.begin(), prompt.end()));
  input[0].push_back(mask_id);
  const TokenBatch batch = make_token_batch(input, pad_id);
  nn::Graph<Real> graph(false);
  const nn::Var lp = model.length_log_probs(graph, model.encode(graph, batch), batch);
  const auto& values = graph.value(lp);

  LengthDistribution dist;
  dist.head_trained = head_trained;
  dist.log_probs.assign(values.cols(), kNegInf);
  const size_t feasible = std::min(values.cols(), capacity - prompt.size());
  for (size_t c = 0; c < feasible; ++c) dist.log_probs[c] = static_cast<double>(values[c]);
  const double lse = log_sum_exp(dist.log_probs);
  for (size_t c = 0; c < feasible; ++c) dist.log_probs[c] -= lse;
  return dist;
}

template LengthDistribution predict_length<float>(std::span<const TokenId>,
                                                  const TransformerModel<float>&, TokenId, TokenId,
                                                  bool);
template LengthDistribution predict_length<double>(std::span<const TokenId>,
                                                   const TransformerModel<double>&, TokenId,
                                                   TokenId, bool);

BeamResult length_beam_generate(std::span<const TokenId> prompt, const Denoiser& denoiser,
                                std::span<const size_t> lengths, const NoiseSchedule& schedule,
                                TokenId mask_id, const BeamOptions& options) {
  BeamResult result;
  std::vector<size_t> usable;
  for (size_t len : lengths) {
    if (len == 0 || prompt.size() + len > denoiser.max_positions()) {
      result.warnings.push_back("dropping length beam " + std::to_string(len) + ": prompt of " +
                                std::to_string(prompt.size()) + " plus response exceeds " +
                                std::to_string(denoiser.max_positions()) + " positions");
      continue;
    }
    if (std::find(usable.begin(), usable.end(), len) == usable.end()) usable.push_back(len);
  }
  if (usable.empty()) throw std::invalid_argument("no length beam fits the denoiser");

  result.candidates.resize(usable.size());
  std::atomic<size_t> next{0};
  std::vector<std::exception_ptr> errors(usable.size());
  auto worker = [&] {
    for (size_t i = next++; i < usable.size(); i = next++) {
      try {
        Rng rng(derive_seed(options.seed, usable[i]));
        GenerationResult gen =
            generate(prompt, usable[i], denoiser, schedule, options.mode, mask_id, rng);
        result.candidates[i] = BeamCandidate{.length = usable[i],
                                             .tokens = std::move(gen.tokens),
                                             .score = gen.score,
                                             .trace = std::move(gen.trace)};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const size_t threads = std::clamp<size_t>(options.threads, 1, usable.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  pick_best(result);
  return result;
}

BeamResult length_beam_generate(std::span<const TokenId> prompt, const Denoiser& denoiser,
                                const LengthDistribution& lengths, size_t beams,
                                const NoiseSchedule& schedule, TokenId mask_id,
                                const BeamOptions& options) {
  if (beams == 0) throw std::invalid_argument("length beams must be at least 1");
  const auto top = lengths.top_k(beams);
  BeamResult result = length_beam_generate(prompt, denoiser, top, schedule, mask_id, options);
  for (BeamCandidate& c : result.candidates) {
    c.length_log_prob = lengths.log_probs.at(c.length - 1);
    c.score += c.length_log_prob;
  }
  pick_best(result);
  if (!lengths.head_trained) result.warnings.insert(result.warnings.begin(), "length head is untrained");
  return result;
}

}  // namespace difflm
