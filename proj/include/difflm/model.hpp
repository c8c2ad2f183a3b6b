#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "difflm/denoiser.hpp"
#include "difflm/nn/graph.hpp"
#include "difflm/nn/parameter_store.hpp"
#include "difflm/vocab.hpp"

namespace difflm {

struct TransformerConfig {
  size_t layers = 2;
  size_t heads = 4;
  size_t model_dim = 64;
  size_t ff_dim = 256;
  size_t max_positions = 64;
  size_t vocab_size = 0;

  void validate() const;
  bool operator==(const TransformerConfig&) const = default;
};

// Length classifier over classes 1..max_length. max_length == 0 disables it.
struct LengthHeadConfig {
  size_t max_length = 0;
  size_t hidden_dim = 64;

  bool enabled() const { return max_length > 0; }
  bool operator==(const LengthHeadConfig&) const = default;
};

// Token ids padded to a common length, row-major (batch, seq).
struct TokenBatch {
  std::vector<TokenId> tokens;
  std::vector<uint8_t> valid;  // 0 at padding
  size_t batch = 0;
  size_t seq = 0;
};

TokenBatch make_token_batch(std::span<const std::vector<TokenId>> sequences, TokenId pad_id);

// Bidirectional transformer encoder over prompt+response with learned
// absolute positions, a vocabulary head and an optional length head. There is
// no timestep input.
template <typename Real>
class TransformerModel {
 public:
  using Store = nn::ParameterStore<Real>;

  TransformerModel(TransformerConfig config, LengthHeadConfig length, uint64_t seed);
  TransformerModel(TransformerConfig config, LengthHeadConfig length, Store params);

  const TransformerConfig& config() const { return config_; }
  const LengthHeadConfig& length_config() const { return length_; }
  Store& params() { return params_; }
  const Store& params() const { return params_; }

  // Final hidden features, (batch*seq, model_dim). Padding is excluded from
  // attention. A non-const model records parameter gradients.
  nn::Var encode(nn::Graph<Real>& graph, const TokenBatch& batch);
  nn::Var encode(nn::Graph<Real>& graph, const TokenBatch& batch) const;

  // Log-probabilities over the vocabulary with the excluded columns at -inf.
  nn::Var token_log_probs(nn::Graph<Real>& graph, nn::Var hidden,
                          std::span<const TokenId> excluded);
  nn::Var token_log_probs(nn::Graph<Real>& graph, nn::Var hidden,
                          std::span<const TokenId> excluded) const;

  // (batch, max_length) log-probabilities; class c is length c + 1.
  nn::Var length_log_probs(nn::Graph<Real>& graph, nn::Var hidden, const TokenBatch& batch);
  nn::Var length_log_probs(nn::Graph<Real>& graph, nn::Var hidden,
                           const TokenBatch& batch) const;

 private:
  void check_params() const;

  TransformerConfig config_;
  LengthHeadConfig length_;
  Store params_;
};

// Parameter layout of a model with the given configuration (name, shape).
std::vector<std::pair<std::string, nn::Shape>> parameter_layout(const TransformerConfig& config,
                                                                 const LengthHeadConfig& length);

// Unmasked response positions get a point mass on their visible token (the
// exact posterior there) unless carry_over is off; the network's rows at those
// positions receive no training signal. Masked rows put no mass on the mask,
// padding or, when built from a vocabulary, separator tokens.
template <typename Real>
class TransformerDenoiser final : public Denoiser {
 public:
  TransformerDenoiser(std::shared_ptr<const TransformerModel<Real>> model, TokenId mask_id,
                      TokenId pad_id, bool carry_over = true);
  TransformerDenoiser(std::shared_ptr<const TransformerModel<Real>> model, const Vocab& vocab,
                      bool carry_over = true);

  DenoiserOutput score(const SequenceState& state) const override;
  std::vector<DenoiserOutput> score_batch(std::span<const SequenceState> states) const;
  size_t max_positions() const override { return model_->config().max_positions; }
  size_t vocab_size() const override { return model_->config().vocab_size; }

  const TransformerModel<Real>& model() const { return *model_; }
  TokenId mask_id() const { return mask_id_; }
  TokenId pad_id() const { return pad_id_; }
  bool carry_over() const { return carry_over_; }

 private:
  std::shared_ptr<const TransformerModel<Real>> model_;
  TokenId mask_id_;
  TokenId pad_id_;
  bool carry_over_;
  std::vector<TokenId> never_emit_;
};

extern template class TransformerModel<float>;
extern template class TransformerModel<double>;
extern template class TransformerDenoiser<float>;
extern template class TransformerDenoiser<double>;

}  // namespace difflm
