#pragma once

#include <vector>

#include "difflm/denoiser.hpp"

namespace difflm {

// Explicit finite distribution over equal-length response sequences.
struct DataDistribution {
  std::vector<std::vector<TokenId>> support;
  std::vector<double> probs;

  size_t length() const { return support.empty() ? 0 : support.front().size(); }
  double entropy() const;  // nats
};

// Exact p(x0 | x_t) by enumeration: the posterior over support sequences that
// agree with every unmasked response position, marginalized per position.
// The prompt region is ignored.
class OracleDenoiser final : public Denoiser {
 public:
  static constexpr size_t kMaxSupport = 1'000'000;

  OracleDenoiser(DataDistribution data, size_t vocab_size, TokenId mask_id,
                 size_t max_positions = 4096);

  DenoiserOutput score(const SequenceState& state) const override;
  size_t max_positions() const override { return max_positions_; }
  size_t vocab_size() const override { return vocab_size_; }

  const DataDistribution& data() const { return data_; }

 private:
  DataDistribution data_;
  size_t vocab_size_;
  TokenId mask_id_;
  size_t max_positions_;
};

}  // namespace difflm
