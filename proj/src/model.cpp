#include "difflm/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "difflm/rng.hpp"

namespace difflm {

namespace {

// One pre-norm transformer block with parameters under `prefix`.
template <typename Real, typename StoreT>
nn::Var transformer_block(nn::Graph<Real>& g, StoreT& store, const std::string& prefix,
                          nn::Var x, const TokenBatch& batch, size_t heads) {
  auto p = [&](const char* name) { return g.parameter(store, prefix + name); };
  nn::Var h = g.layer_norm(x, p("ln1.gamma"), p("ln1.beta"));
  nn::Var q = g.add_bias(g.matmul(h, p("attn.wq")), p("attn.bq"));
  nn::Var k = g.add_bias(g.matmul(h, p("attn.wk")), p("attn.bk"));
  nn::Var v = g.add_bias(g.matmul(h, p("attn.wv")), p("attn.bv"));
  nn::Var a = g.self_attention(q, k, v, batch.batch, batch.seq, heads, batch.valid);
  x = g.add(x, g.add_bias(g.matmul(a, p("attn.wo")), p("attn.bo")));
  h = g.layer_norm(x, p("ln2.gamma"), p("ln2.beta"));
  nn::Var f = g.gelu(g.add_bias(g.matmul(h, p("ff.w1")), p("ff.b1")));
  return g.add(x, g.add_bias(g.matmul(f, p("ff.w2")), p("ff.b2")));
}

template <typename Real, typename StoreT>
nn::Var encode_impl(nn::Graph<Real>& g, StoreT& store, const TransformerConfig& config,
                    const TokenBatch& batch) {
  if (batch.seq > config.max_positions) {
    throw std::invalid_argument("sequence of length " + std::to_string(batch.seq) +
                                " exceeds the model's " + std::to_string(config.max_positions) +
                                " positions");
  }
  if (batch.tokens.size() != batch.batch * batch.seq || batch.valid.size() != batch.tokens.size()) {
    throw std::invalid_argument("malformed token batch");
  }
  std::vector<int32_t> positions(batch.tokens.size());
  for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int32_t>(i % batch.seq);
  nn::Var x = g.add(g.embedding(g.parameter(store, "tok_emb"), batch.tokens),
                    g.embedding(g.parameter(store, "pos_emb"), positions));
  for (size_t l = 0; l < config.layers; ++l) {
    x = transformer_block(g, store, "layers." + std::to_string(l) + ".", x, batch, config.heads);
  }
  return g.layer_norm(x, g.parameter(store, "final_ln.gamma"), g.parameter(store, "final_ln.beta"));
}

template <typename Real, typename StoreT>
nn::Var token_log_probs_impl(nn::Graph<Real>& g, StoreT& store, const TransformerConfig& config,
                             nn::Var hidden, std::span<const TokenId> excluded) {
  nn::Var logits =
      g.add_bias(g.matmul_nt(hidden, g.parameter(store, "out.weight")), g.parameter(store, "out.bias"));
  std::vector<uint8_t> enabled(config.vocab_size, 1);
  for (TokenId t : excluded) enabled.at(static_cast<size_t>(t)) = 0;
  return g.log_softmax_rows(logits, enabled);
}

template <typename Real, typename StoreT>
nn::Var length_log_probs_impl(nn::Graph<Real>& g, StoreT& store, const TransformerConfig& config,
                              const LengthHeadConfig& length, nn::Var hidden,
                              const TokenBatch& batch) {
  if (!length.enabled()) throw std::logic_error("model has no length head");
  nn::Var x = transformer_block(g, store, "len.block.", hidden, batch, config.heads);
  x = g.layer_norm(x, g.parameter(store, "len.ln.gamma"), g.parameter(store, "len.ln.beta"));
  nn::Var pooled = g.mean_pool(x, batch.batch, batch.seq, batch.valid);
  nn::Var h = g.gelu(
      g.add_bias(g.matmul(pooled, g.parameter(store, "len.fc1.weight")), g.parameter(store, "len.fc1.bias")));
  nn::Var logits =
      g.add_bias(g.matmul(h, g.parameter(store, "len.fc2.weight")), g.parameter(store, "len.fc2.bias"));
  return g.log_softmax_rows(logits);
}

void add_block_layout(std::vector<std::pair<std::string, nn::Shape>>& out, const std::string& prefix,
                      size_t d, size_t ff) {
  auto add = [&](const char* name, nn::Shape shape) { out.emplace_back(prefix + name, std::move(shape)); };
  add("ln1.gamma", {d});
  add("ln1.beta", {d});
  add("attn.wq", {d, d});
  add("attn.bq", {d});
  add("attn.wk", {d, d});
  add("attn.bk", {d});
  add("attn.wv", {d, d});
  add("attn.bv", {d});
  add("attn.wo", {d, d});
  add("attn.bo", {d});
  add("ln2.gamma", {d});
  add("ln2.beta", {d});
  add("ff.w1", {d, ff});
  add("ff.b1", {ff});
  add("ff.w2", {ff, d});
  add("ff.b2", {d});
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void TransformerConfig::validate() const {
  if (layers == 0 || heads == 0 || model_dim == 0 || ff_dim == 0 || max_positions == 0 ||
      vocab_size == 0) {
    throw std::invalid_argument("transformer config fields must all be positive");
  }
  if (model_dim % heads != 0) {
    throw std::invalid_argument("model_dim " + std::to_string(model_dim) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  }
}

TokenBatch make_token_batch(std::span<const std::vector<TokenId>> sequences, TokenId pad_id) {
  TokenBatch batch;
  batch.batch = sequences.size();
  for (const auto& s : sequences) batch.seq = std::max(batch.seq, s.size());
  batch.tokens.assign(batch.batch * batch.seq, pad_id);
  batch.valid.assign(batch.batch * batch.seq, 0);
  for (size_t b = 0; b < sequences.size(); ++b) {
    for (size_t i = 0; i < sequences[b].size(); ++i) {
      batch.tokens[b * batch.seq + i] = sequences[b][i];
      batch.valid[b * batch.seq + i] = sequences[b][i] != pad_id;
    }
  }
  return batch;
}

std::vector<std::pair<std::string, nn::Shape>> parameter_layout(const TransformerConfig& config,
                                                                 const LengthHeadConfig& length) {
  const size_t d = config.model_dim;
  std::vector<std::pair<std::string, nn::Shape>> out;
  out.emplace_back("tok_emb", nn::Shape{config.vocab_size, d});
  out.emplace_back("pos_emb", nn::Shape{config.max_positions, d});
  for (size_t l = 0; l < config.layers; ++l) {
    add_block_layout(out, "layers." + std::to_string(l) + ".", d, config.ff_dim);
  }
  out.emplace_back("final_ln.gamma", nn::Shape{d});
  out.emplace_back("final_ln.beta", nn::Shape{d});
  out.emplace_back("out.weight", nn::Shape{config.vocab_size, d});
  out.emplace_back("out.bias", nn::Shape{config.vocab_size});
  if (length.enabled()) {
    add_block_layout(out, "len.block.", d, config.ff_dim);
    out.emplace_back("len.ln.gamma", nn::Shape{d});
    out.emplace_back("len.ln.beta", nn::Shape{d});
    out.emplace_back("len.fc1.weight", nn::Shape{d, length.hidden_dim});
    out.emplace_back("len.fc1.bias", nn::Shape{length.hidden_dim});
    out.emplace_back("len.fc2.weight", nn::Shape{length.hidden_dim, length.max_length});
    out.emplace_back("len.fc2.bias", nn::Shape{length.max_length});
  }
  return out;
}

template <typename Real>
TransformerModel<Real>::TransformerModel(TransformerConfig config, LengthHeadConfig length,
                                         uint64_t seed)
    : config_(config), length_(length) {
  config_.validate();
  Rng rng(seed);
  const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config_.layers + 1));
  for (auto& [name, shape] : parameter_layout(config_, length_)) {
    nn::Tensor<Real> value(shape);
    if (ends_with(name, "gamma")) {
      value.fill(Real(1));
    } else if (shape.size() == 2) {
      double std_dev = name == "tok_emb" || name == "pos_emb" || name == "out.weight"
                           ? 0.1
                           : 1.0 / std::sqrt(static_cast<double>(shape[0]));
      if (ends_with(name, "attn.wo") || ends_with(name, "ff.w2")) std_dev *= residual_scale;
      for (Real& v : value.values()) v = static_cast<Real>(std_dev * rng.normal());
    }
    params_.add(name, std::move(value));
  }
}

template <typename Real>
TransformerModel<Real>::TransformerModel(TransformerConfig config, LengthHeadConfig length,
                                         Store params)
    : config_(config), length_(length), params_(std::move(params)) {
  config_.validate();
  check_params();
}

template <typename Real>
void TransformerModel<Real>::check_params() const {
  const auto layout = parameter_layout(config_, length_);
  if (layout.size() != params_.size()) {
    throw std::invalid_argument("model expects " + std::to_string(layout.size()) +
                                " parameters, store has " + std::to_string(params_.size()));
  }
  for (const auto& [name, shape] : layout) {
    if (!params_.contains(name)) throw std::invalid_argument("missing parameter '" + name + "'");
    if (params_.value(name).shape() != shape) {
      throw std::invalid_argument("parameter '" + name + "' has shape " +
                                  nn::shape_to_string(params_.value(name).shape()) +
                                  ", expected " + nn::shape_to_string(shape));
    }
  }
}

template <typename Real>
nn::Var TransformerModel<Real>::encode(nn::Graph<Real>& graph, const TokenBatch& batch) {
  return encode_impl(graph, params_, config_, batch);
}

template <typename Real>
nn::Var TransformerModel<Real>::encode(nn::Graph<Real>& graph, const TokenBatch& batch) const {
  return encode_impl(graph, params_, config_, batch);
}

template <typename Real>
nn::Var TransformerModel<Real>::token_log_probs(nn::Graph<Real>& graph, nn::Var hidden,
                                                std::span<const TokenId> excluded) {
  return token_log_probs_impl(graph, params_, config_, hidden, excluded);
}

template <typename Real>
nn::Var TransformerModel<Real>::token_log_probs(nn::Graph<Real>& graph, nn::Var hidden,
                                                std::span<const TokenId> excluded) const {
  return token_log_probs_impl(graph, params_, config_, hidden, excluded);
}

template <typename Real>
nn::Var TransformerModel<Real>::length_log_probs(nn::Graph<Real>& graph, nn::Var hidden,
                                                 const TokenBatch& batch) {
  return length_log_probs_impl(graph, params_, config_, length_, hidden, batch);
}

template <typename Real>
nn::Var TransformerModel<Real>::length_log_probs(nn::Graph<Real>& graph, nn::Var hidden,
                                                 const TokenBatch& batch) const {
  return length_log_probs_impl(graph, params_, config_, length_, hidden, batch);
}

template <typename Real>
TransformerDenoiser<Real>::TransformerDenoiser(std::shared_ptr<const TransformerModel<Real>> model,
                                               TokenId mask_id, TokenId pad_id,
                                               bool carry_over)
    : model_(std::move(model)),
      mask_id_(mask_id),
      pad_id_(pad_id),
      carry_over_(carry_over),
      never_emit_{mask_id, pad_id} {
  if (!model_) throw std::invalid_argument("null model");
}

template <typename Real>
TransformerDenoiser<Real>::TransformerDenoiser(std::shared_ptr<const TransformerModel<Real>> model,
                                               const Vocab& vocab, bool carry_over)
    : TransformerDenoiser(std::move(model), vocab.mask_id(), vocab.pad_id(), carry_over) {
  never_emit_.push_back(vocab.sep_id());
}

template <typename Real>
DenoiserOutput TransformerDenoiser<Real>::score(const SequenceState& state) const {
  return score_batch(std::span<const SequenceState>(&state, 1)).front();
}

template <typename Real>
std::vector<DenoiserOutput> TransformerDenoiser<Real>::score_batch(
    std::span<const SequenceState> states) const {
  std::vector<std::vector<TokenId>> seqs;
  seqs.reserve(states.size());
  for (const auto& s : states) {
    if (s.tokens.size() > max_positions()) {
      throw std::invalid_argument("input of length " + std::to_string(s.tokens.size()) +
                                  " exceeds the denoiser's " + std::to_string(max_positions()) +
                                  " positions");
    }
    seqs.push_back(s.tokens);
  }
  const TokenBatch batch = make_token_batch(seqs, pad_id_);
  nn::Graph<Real> graph(false);
  const nn::Var hidden = model_->encode(graph, batch);
  const nn::Var logp = model_->token_log_probs(graph, hidden, never_emit_);
  const auto& lp = graph.value(logp);
  const size_t vocab = vocab_size();

  std::vector<DenoiserOutput> outputs;
  outputs.reserve(states.size());
  std::vector<double> row(vocab);
  for (size_t b = 0; b < states.size(); ++b) {
    const SequenceState& s = states[b];
    DenoiserOutput out(s.response_len(), vocab);
    for (size_t i = 0; i < s.response_len(); ++i) {
      const TokenId visible = s.response()[i];
      if (carry_over_ && visible != mask_id_) {
        out.row(i)[static_cast<size_t>(visible)] = 0.0;
        continue;
      }
      const size_t r = b * batch.seq + s.condition_len + i;
      for (size_t v = 0; v < vocab; ++v) row[v] = static_cast<double>(lp.at(r, v));
      for (TokenId t : never_emit_) row[static_cast<size_t>(t)] = kNegInf;
      // Renormalize in double so rows sum to one at double precision.
      const double lse = log_sum_exp(row);
      auto dst = out.row(i);
      for (size_t v = 0; v < vocab; ++v) dst[v] = row[v] - lse;
    }
    outputs.push_back(std::move(out));
  }
  return outputs;
}

template class TransformerModel<float>;
template class TransformerModel<double>;
template class TransformerDenoiser<float>;
template class TransformerDenoiser<double>;

}  // namespace difflm
