#pragma once

#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "difflm/checkpoint.hpp"
#include "difflm/data.hpp"
#include "difflm/denoiser.hpp"
#include "difflm/model.hpp"
#include "difflm/nn/graph.hpp"
#include "difflm/rng.hpp"
#include "difflm/schedule.hpp"

namespace difflm {

// Weighted masked cross-entropy of one example:
//   loss_weight(t, T) * sum_{i : x_t[i] == mask} nll_i,
// nll_i = (1 - eps) * -log p(x0_i) + eps * mean over finite columns c of -log p(c).
// `output` rows align with the response; x_t may hold only x0 tokens or masks.
double rdm_loss(const DenoiserOutput& output, std::span<const TokenId> x0,
                std::span<const TokenId> x_t, int t, const NoiseSchedule& schedule,
                TokenId mask_id, double label_smoothing);

// Padded model inputs with per-row targets and loss weights.
struct TrainingBatch {
  TokenBatch inputs;
  std::vector<int32_t> targets;  // original token per row (pad where unused)
  std::vector<double> weights;   // 0 where a row contributes no loss
  std::vector<int> timesteps;    // per example; empty for MLM batches
  // Length head inputs: prompt followed by one mask; targets are length - 1.
  TokenBatch length_inputs;
  std::vector<int32_t> length_targets;
};

// Corrupts only the responses at the given timesteps; masked response rows get
// weight loss_weight(t, T) * scale. With max_length > 0 the length inputs are
// filled too.
TrainingBatch make_diffusion_batch(std::span<const Example> examples, std::span<const int> timesteps,
                                   const NoiseSchedule& schedule, const Vocab& vocab, Rng& rng,
                                   double scale, size_t max_length);

// Masks every non-special token independently with probability mask_ratio;
// masked rows get weight `scale`.
TrainingBatch make_mlm_batch(std::span<const std::vector<TokenId>> sequences, double mask_ratio,
                             const Vocab& vocab, Rng& rng, double scale);

template <typename Real>
struct BatchLoss {
  nn::Var total;
  nn::Var tokens;
  nn::Var log_probs;
  std::optional<nn::Var> length;
};

// Builds the training objective on `graph`. The length term is added with
// weight length_weight when the batch carries length targets.
template <typename Real>
BatchLoss<Real> build_batch_loss(nn::Graph<Real>& graph, TransformerModel<Real>& model,
                                 const TrainingBatch& batch, std::span<const TokenId> excluded,
                                 Real label_smoothing,
                                 Real length_weight);

struct TrainConfig {
  size_t steps = 1000;
  size_t batch_size = 32;
  double learning_rate = 1e-3;
  size_t warmup_steps = 100;
  // Cosine decay to this fraction of the peak rate by the last step.
  double final_lr_fraction = 0.1;
  double clip_norm = 1.0;  // 0 disables clipping
  // Unset: 0.1 from scratch, 0 when starting from a trained checkpoint.
  std::optional<double> label_smoothing;
  double length_weight = 0.1;
  uint64_t seed = 0;
  size_t log_interval = 100;
  size_t heldout_corruptions = 4;
  // Wall-clock throughput in the metrics log; "-" when off so logs are reproducible.
  bool log_timing = false;
};

double resolve_label_smoothing(const TrainConfig& config, bool from_checkpoint);
double learning_rate_at(const TrainConfig& config, size_t step);

struct MetricsRecord {
  size_t step = 0;
  double loss = 0.0;
  double heldout_loss = 0.0;
  double heldout_accuracy = 0.0;
  double tokens_per_second = 0.0;
};

// Tab-separated metrics line: step, mean loss, held-out loss, tokens/sec.
std::string format_metrics(const MetricsRecord& record, bool with_timing);

struct TrainResult {
  ModelCheckpoint checkpoint;
  std::vector<MetricsRecord> history;
};

// Masked-LM pretraining at a fixed masking ratio with unweighted masked
// cross-entropy. `init` supplies architecture, vocabulary and parameters.
TrainResult mlm_pretrain(std::span<const std::vector<TokenId>> corpus,
                         std::span<const std::vector<TokenId>> heldout, ModelCheckpoint init,
                         double mask_ratio, const TrainConfig& config,
                         std::ostream* metrics = nullptr);

// Diffusion finetuning on prompt/response examples with the weighted loss,
// corrupting responses only. Trains the length head jointly when present.
// Held-out loss uses fixed corruptions and no label smoothing.
TrainResult diffusive_adapt(std::span<const Example> train, std::span<const Example> heldout,
                            ModelCheckpoint init, const TrainConfig& config,
                            std::ostream* metrics = nullptr);

// Mean held-out diffusion loss (and masked-token accuracy) over fixed
// corruptions drawn from `seed`.
std::pair<double, double> heldout_diffusion_loss(const TransformerModel<float>& model,
                                                 std::span<const Example> heldout,
                                                 const NoiseSchedule& schedule, const Vocab& vocab,
                                                 size_t corruptions, uint64_t seed,
                                                 size_t batch_size);

// Restricts embeddings and output rows to tokens seen in `corpus` plus the
// specials, keeping the original order. Examples are in the checkpoint's ids.
ModelCheckpoint prune_vocab(const ModelCheckpoint& checkpoint, std::span<const Example> corpus);

}  // namespace difflm
