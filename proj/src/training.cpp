#include "difflm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <tuple>

#include "difflm/diffusion.hpp"
#include "difflm/nn/adam.hpp"

namespace difflm {

namespace {

// Fresh permutation of the dataset each epoch; batches may straddle epochs.
class BatchSampler {
 public:
  BatchSampler(size_t size, size_t batch_size, Rng& rng)
      : size_(size), batch_size_(batch_size), rng_(&rng) {}

  std::vector<size_t> next() {
    std::vector<size_t> out;
    out.reserve(batch_size_);
    while (out.size() < batch_size_) {
      if (cursor_ == order_.size()) reshuffle();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(size_);
    for (size_t i = 0; i < size_; ++i) order_[i] = i;
    for (size_t i = size_; i > 1; --i) std::swap(order_[i - 1], order_[rng_->uniform_index(i)]);
    cursor_ = 0;
  }

  size_t size_;
  size_t batch_size_;
  Rng* rng_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
};

void clip_gradients(nn::ParameterStore<float>& store, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto& e : store.entries()) {
    for (float g : e.grad.values()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return;
  const auto factor = static_cast<float>(max_norm / norm);
  for (size_t p = 0; p < store.size(); ++p) {
    for (float& g : store.entry(p).grad.values()) g *= factor;
  }
}

// Weighted masked NLL and argmax accuracy from precomputed log-probabilities.
std::pair<double, double> score_rows(const nn::Tensor<float>& lp, const TrainingBatch& batch,
                                     size_t* masked) {
  double loss = 0.0;
  size_t correct = 0;
  const size_t m = lp.cols();
  for (size_t r = 0; r < batch.weights.size(); ++r) {
    if (batch.weights[r] == 0.0) continue;
    const float* row = lp.data() + r * m;
    const auto target = static_cast<size_t>(batch.targets[r]);
    loss -= batch.weights[r] * static_cast<double>(row[target]);
    size_t best = 0;
    for (size_t c = 1; c < m; ++c) {
      if (row[c] > row[best]) best = c;
    }
    correct += best == target;
    ++*masked;
  }
  return {loss, static_cast<double>(correct)};
}

size_t count_tokens(const TokenBatch& batch) {
  size_t n = 0;
  for (uint8_t v : batch.valid) n += v;
  return n;
}

void write_metrics_header(std::ostream* out) {
  if (out) *out << "# step\tloss\theldout_loss\ttokens_per_sec\n";
}

struct LoopSpec {
  size_t dataset_size = 0;
  std::function<TrainingBatch(const std::vector<size_t>&, Rng&)> make_batch;
  std::function<std::pair<double, double>(const TransformerModel<float>&)> heldout;
  double label_smoothing = 0.0;
};

std::vector<MetricsRecord> run_training(TransformerModel<float>& model, const LoopSpec& spec,
                                        const TrainConfig& config, std::span<const TokenId> excluded,
                                        std::ostream* metrics) {
  if (config.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (config.log_interval == 0) throw std::invalid_argument("log interval must be positive");
  nn::Adam<float> adam(nn::AdamConfig{.learning_rate = config.learning_rate});
  Rng order_rng(derive_seed(config.seed, 1));
  Rng corrupt_rng(derive_seed(config.seed, 2));
  BatchSampler sampler(spec.dataset_size, config.batch_size, order_rng);
  write_metrics_header(metrics);

  std::vector<MetricsRecord> history;
  double interval_loss = 0.0;
  size_t interval_steps = 0;
  size_t interval_tokens = 0;
  auto interval_start = std::chrono::steady_clock::now();
  for (size_t step = 1; step <= config.steps; ++step) {
    const TrainingBatch batch = spec.make_batch(sampler.next(), corrupt_rng);
    model.params().zero_grad();
    nn::Graph<float> graph;
    const auto loss = build_batch_loss(graph, model, batch, excluded,
                                       static_cast<float>(spec.label_smoothing),
                                       static_cast<float>(config.length_weight));
    graph.backward(loss.total);
    clip_gradients(model.params(), config.clip_norm);
    adam.step(model.params(), learning_rate_at(config, step - 1));

    interval_loss += static_cast<double>(graph.value(loss.total)[0]);
    ++interval_steps;
    interval_tokens += count_tokens(batch.inputs) + count_tokens(batch.length_inputs);
    if (step % config.log_interval != 0 && step != config.steps) continue;

    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - interval_start).count();
    MetricsRecord rec;
    rec.step = step;
    rec.loss = interval_loss / static_cast<double>(interval_steps);
    std::tie(rec.heldout_loss, rec.heldout_accuracy) = spec.heldout(model);
    rec.tokens_per_second = seconds > 0 ? static_cast<double>(interval_tokens) / seconds : 0.0;
    history.push_back(rec);
    if (metrics) *metrics << format_metrics(rec, config.log_timing) << std::flush;
    interval_loss = 0.0;
    interval_steps = 0;
    interval_tokens = 0;
    interval_start = std::chrono::steady_clock::now();
  }
  return history;
}

std::vector<TokenId> concat(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<TokenId> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

double rdm_loss(const DenoiserOutput& output, std::span<const TokenId> x0,
                std::span<const TokenId> x_t, int t, const NoiseSchedule& schedule,
                TokenId mask_id, double label_smoothing) {
  if (x0.size() != x_t.size() || output.rows() != x0.size()) {
    throw std::invalid_argument("rdm_loss: output has " + std::to_string(output.rows()) +
                                " rows, x0 " + std::to_string(x0.size()) + ", x_t " +
                                std::to_string(x_t.size()));
  }
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    throw std::invalid_argument("rdm_loss: label smoothing must lie in [0, 1)");
  }
  const double weight = loss_weight(t, schedule.steps());
  double total = 0.0;
  for (size_t i = 0; i < x0.size(); ++i) {
    if (x0[i] == mask_id) throw std::invalid_argument("rdm_loss: x0 contains the mask token");
    if (x_t[i] == x0[i]) continue;
    if (x_t[i] != mask_id) {
      throw std::invalid_argument("rdm_loss: x_t position " + std::to_string(i) +
                                  " is neither the clean token nor the mask");
    }
    const auto row = output.row(i);
    double nll = -(1.0 - label_smoothing) * row[static_cast<size_t>(x0[i])];
    if (label_smoothing > 0.0) {
      double acc = 0.0;
      size_t count = 0;
      for (double lp : row) {
        if (std::isfinite(lp)) {
          acc -= lp;
          ++count;
        }
      }
      nll += label_smoothing * acc / static_cast<double>(count);
    }
    total += nll;
  }
  return weight * total;
}

TrainingBatch make_diffusion_batch(std::span<const Example> examples, std::span<const int> timesteps,
                                   const NoiseSchedule& schedule, const Vocab& vocab, Rng& rng,
                                   double scale, size_t max_length) {
  if (examples.size() != timesteps.size()) {
    throw std::invalid_argument("one timestep per example is required");
  }
  std::vector<std::vector<TokenId>> corrupted;
  std::vector<std::vector<TokenId>> clean;
  std::vector<size_t> conditions;
  corrupted.reserve(examples.size());
  for (size_t b = 0; b < examples.size(); ++b) {
    clean.push_back(examples[b].concatenated());
    const SequenceState s = corrupt(clean.back(), examples[b].prompt.size(), timesteps[b],
                                    schedule, vocab.mask_id(), rng);
    corrupted.push_back(s.tokens);
    conditions.push_back(s.condition_len);
  }
  TrainingBatch batch;
  batch.inputs = make_token_batch(corrupted, vocab.pad_id());
  batch.targets.assign(batch.inputs.tokens.size(), vocab.pad_id());
  batch.weights.assign(batch.inputs.tokens.size(), 0.0);
  batch.timesteps.assign(timesteps.begin(), timesteps.end());
  for (size_t b = 0; b < examples.size(); ++b) {
    const double w = loss_weight(timesteps[b], schedule.steps()) * scale;
    for (size_t i = 0; i < clean[b].size(); ++i) {
      const size_t r = b * batch.inputs.seq + i;
      batch.targets[r] = clean[b][i];
      if (i >= conditions[b] && corrupted[b][i] == vocab.mask_id()) batch.weights[r] = w;
    }
  }
  if (max_length > 0) {
    std::vector<std::vector<TokenId>> prompts;
    for (const Example& ex : examples) {
      if (ex.response.size() > max_length) {
        throw std::invalid_argument("response of length " + std::to_string(ex.response.size()) +
                                    " exceeds the length head's " + std::to_string(max_length) +
                                    " classes");
      }
      prompts.push_back(ex.prompt);
      prompts.back().push_back(vocab.mask_id());
      batch.length_targets.push_back(static_cast<int32_t>(ex.response.size() - 1));
    }
    batch.length_inputs = make_token_batch(prompts, vocab.pad_id());
  }
  return batch;
}

TrainingBatch make_mlm_batch(std::span<const std::vector<TokenId>> sequences, double mask_ratio,
                             const Vocab& vocab, Rng& rng, double scale) {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
    throw std::invalid_argument("mask ratio must lie in (0, 1)");
  }
  std::vector<std::vector<TokenId>> corrupted(sequences.begin(), sequences.end());
  std::vector<std::vector<uint8_t>> masked(sequences.size());
  for (size_t b = 0; b < corrupted.size(); ++b) {
    masked[b].assign(corrupted[b].size(), 0);
    for (size_t i = 0; i < corrupted[b].size(); ++i) {
      if (vocab.is_special(corrupted[b][i])) continue;
      if (rng.bernoulli(mask_ratio)) {
        corrupted[b][i] = vocab.mask_id();
        masked[b][i] = 1;
      }
    }
  }
  TrainingBatch batch;
  batch.inputs = make_token_batch(corrupted, vocab.pad_id());
  batch.targets.assign(batch.inputs.tokens.size(), vocab.pad_id());
  batch.weights.assign(batch.inputs.tokens.size(), 0.0);
  for (size_t b = 0; b < sequences.size(); ++b) {
    for (size_t i = 0; i < sequences[b].size(); ++i) {
      const size_t r = b * batch.inputs.seq + i;
      batch.targets[r] = sequences[b][i];
      if (masked[b][i]) batch.weights[r] = scale;
    }
  }
  return batch;
}

template <typename Real>
BatchLoss<Real> build_batch_loss(nn::Graph<Real>& graph, TransformerModel<Real>& model,
                                 const TrainingBatch& batch, std::span<const TokenId> excluded,
                                 Real label_smoothing,
                                 Real length_weight) {
  BatchLoss<Real> out;
  const nn::Var hidden = model.encode(graph, batch.inputs);
  out.log_probs = model.token_log_probs(graph, hidden, excluded);
  const std::vector<Real> weights(batch.weights.begin(), batch.weights.end());
  out.tokens = graph.weighted_nll(out.log_probs, batch.targets, weights, label_smoothing);
  out.total = out.tokens;
  if (!batch.length_targets.empty() && model.length_config().enabled()) {
    const nn::Var len_hidden = model.encode(graph, batch.length_inputs);
    const nn::Var len_lp = model.length_log_probs(graph, len_hidden, batch.length_inputs);
    const std::vector<Real> len_weights(batch.length_targets.size(),
                                        Real(1) / static_cast<Real>(batch.length_targets.size()));
    out.length = graph.weighted_nll(len_lp, batch.length_targets, len_weights);
    out.total = graph.add(out.tokens, graph.scale(*out.length, length_weight));
  }
  return out;
}

template BatchLoss<float> build_batch_loss<float>(nn::Graph<float>&, TransformerModel<float>&,
                                                  const TrainingBatch&, std::span<const TokenId>, float,
                                                  float);
template BatchLoss<double> build_batch_loss<double>(nn::Graph<double>&, TransformerModel<double>&,
                                                    const TrainingBatch&, std::span<const TokenId>,
                                                    double, double);

double resolve_label_smoothing(const TrainConfig& config, bool from_checkpoint) {
  const double eps = config.label_smoothing.value_or(from_checkpoint ? 0.0 : 0.1);
  if (eps < 0.0 || eps >= 1.0) throw std::invalid_argument("label smoothing must lie in [0, 1)");
  return eps;
}

double learning_rate_at(const TrainConfig& config, size_t step) {
  if (step < config.warmup_steps) {
    return config.learning_rate * static_cast<double>(step + 1) /
           static_cast<double>(config.warmup_steps);
  }
  const size_t decay_steps = config.steps > config.warmup_steps ? config.steps - config.warmup_steps : 1;
  const double progress = std::min(
      1.0, static_cast<double>(step - config.warmup_steps) / static_cast<double>(decay_steps));
  const double f = config.final_lr_fraction;
  return config.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

std::string format_metrics(const MetricsRecord& record, bool with_timing) {
  char buf[128];
  char heldout[32] = "-";
  if (std::isfinite(record.heldout_loss)) {
    std::snprintf(heldout, sizeof(heldout), "%.6f", record.heldout_loss);
  }
  char speed[32] = "-";
  if (with_timing) std::snprintf(speed, sizeof(speed), "%.1f", record.tokens_per_second);
  std::snprintf(buf, sizeof(buf), "%zu\t%.6f\t%s\t%s\n", record.step, record.loss, heldout, speed);
  return buf;
}

std::pair<double, double> heldout_diffusion_loss(const TransformerModel<float>& model,
                                                 std::span<const Example> heldout,
                                                 const NoiseSchedule& schedule, const Vocab& vocab,
                                                 size_t corruptions, uint64_t seed,
                                                 size_t batch_size) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (heldout.empty() || corruptions == 0) return {nan, nan};
  Rng rng(seed);
  std::vector<Example> pool;
  std::vector<int> timesteps;
  for (size_t c = 0; c < corruptions; ++c) {
    for (const Example& ex : heldout) {
      pool.push_back(ex);
      timesteps.push_back(1 + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(schedule.steps()))));
    }
  }
  const double scale = 1.0 / static_cast<double>(pool.size());
  double loss = 0.0;
  double correct = 0.0;
  size_t masked = 0;
  for (size_t start = 0; start < pool.size(); start += batch_size) {
    const size_t n = std::min(batch_size, pool.size() - start);
    const TrainingBatch batch =
        make_diffusion_batch(std::span<const Example>(pool).subspan(start, n),
                             std::span<const int>(timesteps).subspan(start, n), schedule, vocab,
                             rng, scale, 0);
    nn::Graph<float> graph(false);
    const nn::Var hidden = model.encode(graph, batch.inputs);
    const nn::Var lp = model.token_log_probs(graph, hidden, vocab.special_ids());
    const auto [l, c] = score_rows(graph.value(lp), batch, &masked);
    loss += l;
    correct += c;
  }
  return {loss, masked > 0 ? correct / static_cast<double>(masked) : nan};
}

TrainResult mlm_pretrain(std::span<const std::vector<TokenId>> corpus,
                         std::span<const std::vector<TokenId>> heldout, ModelCheckpoint init,
                         double mask_ratio, const TrainConfig& config, std::ostream* metrics) {
  if (corpus.empty()) throw std::invalid_argument("pretraining corpus is empty");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
    throw std::invalid_argument("mask ratio must lie in (0, 1)");
  }
  const Vocab& vocab = init.vocab;
  auto check = [&](std::span<const std::vector<TokenId>> seqs, const char* what) {
    for (size_t i = 0; i < seqs.size(); ++i) {
      const std::string where = std::string(what) + " sequence " + std::to_string(i) + ": ";
      if (seqs[i].empty()) throw std::invalid_argument(where + "empty");
      if (seqs[i].size() > init.model.max_positions) {
        throw std::invalid_argument(where + "length " + std::to_string(seqs[i].size()) +
                                    " exceeds " + std::to_string(init.model.max_positions) +
                                    " positions");
      }
      for (TokenId t : seqs[i]) {
        if (!vocab.contains(t) || t == vocab.mask_id() || t == vocab.pad_id()) {
          throw std::invalid_argument(where + "invalid token id " + std::to_string(t));
        }
      }
    }
  };
  check(corpus, "corpus");
  check(heldout, "held-out");

  TransformerModel<float> model(init.model, init.length, std::move(init.params));
  const auto heldout_batches = [&] {
    std::vector<TrainingBatch> batches;
    Rng rng(derive_seed(config.seed, 3));
    size_t total = heldout.size();
    for (size_t start = 0; start < heldout.size(); start += config.batch_size) {
      const size_t n = std::min(config.batch_size, heldout.size() - start);
      batches.push_back(make_mlm_batch(heldout.subspan(start, n), mask_ratio, vocab, rng,
                                       1.0 / static_cast<double>(total)));
    }
    return batches;
  }();

  LoopSpec spec;
  spec.dataset_size = corpus.size();
  spec.label_smoothing = resolve_label_smoothing(config, init.kind != "init");
  spec.make_batch = [&](const std::vector<size_t>& idx, Rng& rng) {
    std::vector<std::vector<TokenId>> seqs;
    for (size_t i : idx) seqs.push_back(corpus[i]);
    return make_mlm_batch(seqs, mask_ratio, vocab, rng, 1.0 / static_cast<double>(idx.size()));
  };
  spec.heldout = [&](const TransformerModel<float>& m) -> std::pair<double, double> {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (heldout_batches.empty()) return {nan, nan};
    double loss = 0.0;
    double correct = 0.0;
    size_t masked = 0;
    for (const TrainingBatch& batch : heldout_batches) {
      nn::Graph<float> graph(false);
      const nn::Var lp = m.token_log_probs(graph, m.encode(graph, batch.inputs), vocab.special_ids());
      const auto [l, c] = score_rows(graph.value(lp), batch, &masked);
      loss += l;
      correct += c;
    }
    return {loss, masked > 0 ? correct / static_cast<double>(masked) : nan};
  };

  TrainResult result;
  result.history = run_training(model, spec, config, vocab.special_ids(), metrics);
  init.params = std::move(model.params());
  init.kind = "mlm";
  init.length_head_trained = false;
  result.checkpoint = std::move(init);
  return result;
}

TrainResult diffusive_adapt(std::span<const Example> train, std::span<const Example> heldout,
                            ModelCheckpoint init, const TrainConfig& config, std::ostream* metrics) {
  if (train.empty()) throw std::invalid_argument("adaptation dataset is empty");
  const Vocab& vocab = init.vocab;
  const size_t max_length = init.length.max_length;
  for (const auto* set : {&train, &heldout}) {
    const char* what = set == &train ? "training " : "held-out ";
    for (size_t i = 0; i < set->size(); ++i) {
      try {
        validate_example((*set)[i], vocab, init.model.max_positions, i);
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(what + std::string(e.what()));
      }
      if (max_length > 0 && (*set)[i].response.size() > max_length) {
        throw std::invalid_argument(std::string(what) + "example " + std::to_string(i) +
                                    ": response length " +
                                    std::to_string((*set)[i].response.size()) +
                                    " exceeds the length head's maximum " +
                                    std::to_string(max_length));
      }
      if (max_length > 0 && (*set)[i].prompt.size() + 1 > init.model.max_positions) {
        throw std::invalid_argument(std::string(what) + "example " + std::to_string(i) +
                                    ": prompt leaves no room for a response");
      }
    }
  }
  const NoiseSchedule schedule = checkpoint_schedule(init);
  TransformerModel<float> model(init.model, init.length, std::move(init.params));

  LoopSpec spec;
  spec.dataset_size = train.size();
  spec.label_smoothing = resolve_label_smoothing(config, init.kind != "init");
  spec.make_batch = [&](const std::vector<size_t>& idx, Rng& rng) {
    std::vector<Example> examples;
    std::vector<int> timesteps;
    for (size_t i : idx) {
      examples.push_back(train[i]);
      timesteps.push_back(1 + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(schedule.steps()))));
    }
    return make_diffusion_batch(examples, timesteps, schedule, vocab, rng,
                                1.0 / static_cast<double>(idx.size()), max_length);
  };
  const uint64_t heldout_seed = derive_seed(config.seed, 3);
  spec.heldout = [&](const TransformerModel<float>& m) {
    return heldout_diffusion_loss(m, heldout, schedule, vocab, config.heldout_corruptions,
                                  heldout_seed, config.batch_size);
  };

  TrainResult result;
  result.history = run_training(model, spec, config, vocab.special_ids(), metrics);
  init.params = std::move(model.params());
  init.kind = "diffusion";
  if (max_length > 0 && config.steps > 0) init.length_head_trained = true;
  result.checkpoint = std::move(init);
  return result;
}

ModelCheckpoint prune_vocab(const ModelCheckpoint& checkpoint, std::span<const Example> corpus) {
  if (corpus.empty()) throw std::invalid_argument("prune_vocab: corpus is empty");
  const Vocab& vocab = checkpoint.vocab;
  std::vector<uint8_t> seen(vocab.size(), 0);
  for (size_t i = 0; i < corpus.size(); ++i) {
    try {
      validate_example(corpus[i], vocab, 0, i);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(std::string("prune_vocab: ") + e.what());
    }
    for (TokenId t : concat(corpus[i].prompt, corpus[i].response)) seen[static_cast<size_t>(t)] = 1;
  }
  if (!seen[static_cast<size_t>(vocab.sep_id())]) {
    throw std::invalid_argument("prune_vocab: corpus never uses the separator");
  }

  std::vector<TokenId> kept;
  std::vector<std::string> tokens;
  for (size_t id = 0; id < vocab.size(); ++id) {
    const auto tid = static_cast<TokenId>(id);
    if (seen[id] || vocab.is_special(tid)) {
      kept.push_back(tid);
      tokens.push_back(vocab.token(tid));
    }
  }
  auto new_id = [&](TokenId old) {
    return static_cast<TokenId>(std::find(kept.begin(), kept.end(), old) - kept.begin());
  };

  ModelCheckpoint out = checkpoint;
  out.vocab = Vocab(tokens, new_id(vocab.mask_id()), new_id(vocab.pad_id()), new_id(vocab.sep_id()));
  out.model.vocab_size = kept.size();
  out.remap.clear();
  for (TokenId old : kept) {
    out.remap.push_back(checkpoint.remap.empty() ? old : checkpoint.remap[static_cast<size_t>(old)]);
  }
  nn::ParameterStore<float> params;
  for (const auto& e : checkpoint.params.entries()) {
    if (e.name != "tok_emb" && e.name != "out.weight" && e.name != "out.bias") {
      params.add(e.name, e.value);
      continue;
    }
    const size_t cols = e.value.rank() == 2 ? e.value.cols() : 1;
    nn::Shape shape = e.value.shape();
    shape[0] = kept.size();
    nn::Tensor<float> value(shape);
    for (size_t r = 0; r < kept.size(); ++r) {
      for (size_t c = 0; c < cols; ++c) {
        value[r * cols + c] = e.value[static_cast<size_t>(kept[r]) * cols + c];
      }
    }
    params.add(e.name, std::move(value));
  }
  out.params = std::move(params);
  TransformerModel<float>(out.model, out.length, out.params);
  return out;
}

}  // namespace difflm
