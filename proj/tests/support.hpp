#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "difflm/denoiser.hpp"
#include "difflm/oracle.hpp"
#include "difflm/rng.hpp"

namespace difflm::testing {

// Denoiser whose rows come from a callback of (state, call index).
class ScriptedDenoiser final : public Denoiser {
 public:
  using Script = std::function<void(const SequenceState&, size_t call, DenoiserOutput&)>;

  ScriptedDenoiser(size_t vocab_size, Script script, size_t max_positions = 4096)
      : vocab_size_(vocab_size), script_(std::move(script)), max_positions_(max_positions) {}

  DenoiserOutput score(const SequenceState& state) const override {
    DenoiserOutput out(state.response_len(), vocab_size_);
    script_(state, calls_++, out);
    return out;
  }
  size_t max_positions() const override { return max_positions_; }
  size_t vocab_size() const override { return vocab_size_; }
  size_t calls() const { return calls_; }

 private:
  size_t vocab_size_;
  Script script_;
  size_t max_positions_;
  mutable std::atomic<size_t> calls_{0};
};

// Sets row i to the normalized log of the given weights (zeros become -inf).
inline void set_row(DenoiserOutput& out, size_t i, const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  auto row = out.row(i);
  for (size_t v = 0; v < weights.size(); ++v) {
    row[v] = weights[v] > 0.0 ? std::log(weights[v] / total) : kNegInf;
  }
}

// Every sequence over {first..first+vocab-1}^length with probability
// proportional to a product of unary and pairwise factors: full support and a
// mild dependence between neighbours.
inline DataDistribution correlated_distribution(size_t vocab, size_t length, TokenId first,
                                                uint64_t seed) {
  Rng rng(seed);
  std::vector<double> unary(vocab * length);
  for (double& u : unary) u = 0.5 + rng.uniform();
  std::vector<double> pair(vocab * vocab);
  for (double& p : pair) p = 0.8 + 0.4 * rng.uniform();
  DataDistribution data;
  std::vector<size_t> digits(length, 0);
  double total = 0.0;
  while (true) {
    double w = 1.0;
    std::vector<TokenId> seq;
    for (size_t i = 0; i < length; ++i) {
      w *= unary[i * vocab + digits[i]];
      if (i > 0) w *= pair[digits[i - 1] * vocab + digits[i]];
      seq.push_back(first + static_cast<TokenId>(digits[i]));
    }
    data.support.push_back(seq);
    data.probs.push_back(w);
    total += w;
    size_t k = length;
    while (k > 0 && ++digits[k - 1] == vocab) digits[--k] = 0;
    if (k == 0) break;
  }
  for (double& p : data.probs) p /= total;
  return data;
}

// Empirical counts aligned with data.support.
inline std::vector<double> support_counts(const DataDistribution& data,
                                          const std::map<std::vector<TokenId>, size_t>& seen) {
  std::vector<double> counts(data.support.size(), 0.0);
  for (size_t i = 0; i < data.support.size(); ++i) {
    const auto it = seen.find(data.support[i]);
    if (it != seen.end()) counts[i] = static_cast<double>(it->second);
  }
  return counts;
}

}  // namespace difflm::testing
