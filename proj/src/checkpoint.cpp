#include "difflm/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "difflm/nn/serialize.hpp"
#include "json.hpp"

namespace difflm {

namespace {

using nlohmann::json;

constexpr const char* kFormatName = "difflm-checkpoint";

json to_json(const TransformerConfig& c) {
  return json{{"layers", c.layers},       {"heads", c.heads},
              {"model_dim", c.model_dim}, {"ff_dim", c.ff_dim},
              {"max_positions", c.max_positions}, {"vocab_size", c.vocab_size}};
}

TransformerConfig transformer_from_json(const json& j) {
  TransformerConfig c;
  c.layers = j.at("layers").get<size_t>();
  c.heads = j.at("heads").get<size_t>();
  c.model_dim = j.at("model_dim").get<size_t>();
  c.ff_dim = j.at("ff_dim").get<size_t>();
  c.max_positions = j.at("max_positions").get<size_t>();
  c.vocab_size = j.at("vocab_size").get<size_t>();
  return c;
}

}  // namespace

ModelCheckpoint initial_checkpoint(const TransformerConfig& model, const LengthHeadConfig& length,
                                   Vocab vocab, TokenizerMode tokenizer, uint64_t seed) {
  if (model.vocab_size != vocab.size()) {
    throw std::invalid_argument("model vocab size " + std::to_string(model.vocab_size) +
                                " does not match vocabulary of " + std::to_string(vocab.size()));
  }
  ModelCheckpoint ckpt;
  ckpt.model = model;
  ckpt.length = length;
  ckpt.vocab = std::move(vocab);
  ckpt.tokenizer = tokenizer;
  ckpt.params = TransformerModel<float>(model, length, seed).params();
  return ckpt;
}

void attach_length_head(ModelCheckpoint& checkpoint, const LengthHeadConfig& length,
                        uint64_t seed) {
  const TransformerModel<float> fresh(checkpoint.model, length, seed);
  nn::ParameterStore<float> params;
  for (const auto& [name, shape] : parameter_layout(checkpoint.model, length)) {
    const bool head = name.rfind("len.", 0) == 0;
    params.add(name, head ? fresh.params().value(name) : checkpoint.params.value(name));
  }
  checkpoint.params = std::move(params);
  checkpoint.length = length;
  checkpoint.length_head_trained = false;
}

std::string checkpoint_header(const ModelCheckpoint& c) {
  json run = json::array();
  for (const auto& [k, v] : c.run_config) run.push_back(json::array({k, v}));
  const json header{
      {"format", kFormatName},
      {"kind", c.kind},
      {"model", to_json(c.model)},
      {"length_head",
       {{"max_length", c.length.max_length},
        {"hidden_dim", c.length.hidden_dim},
        {"trained", c.length_head_trained}}},
      {"vocab",
       {{"tokens", c.vocab.tokens()},
        {"mask_id", c.vocab.mask_id()},
        {"pad_id", c.vocab.pad_id()},
        {"sep_id", c.vocab.sep_id()}}},
      {"tokenizer", std::string(to_string(c.tokenizer))},
      {"diffusion", {{"steps", c.diffusion_steps}, {"schedule", std::string(to_string(c.schedule))}}},
      {"remap", c.remap},
      {"run_config", run},
  };
  return header.dump(1);
}

void write_checkpoint(std::ostream& out, const ModelCheckpoint& checkpoint) {
  nn::write_parameters(out, checkpoint.params, checkpoint_header(checkpoint));
}

ModelCheckpoint read_checkpoint(std::istream& in) {
  auto loaded = nn::read_parameters<float>(in);
  ModelCheckpoint c;
  try {
    const json h = json::parse(loaded.header);
    if (h.at("format") != kFormatName) throw std::runtime_error("unknown checkpoint format");
    c.kind = h.at("kind").get<std::string>();
    c.model = transformer_from_json(h.at("model"));
    const json& len = h.at("length_head");
    c.length.max_length = len.at("max_length").get<size_t>();
    c.length.hidden_dim = len.at("hidden_dim").get<size_t>();
    c.length_head_trained = len.at("trained").get<bool>();
    const json& v = h.at("vocab");
    c.vocab = Vocab(v.at("tokens").get<std::vector<std::string>>(), v.at("mask_id").get<TokenId>(),
                    v.at("pad_id").get<TokenId>(), v.at("sep_id").get<TokenId>());
    c.tokenizer = parse_tokenizer_mode(h.at("tokenizer").get<std::string>());
    c.diffusion_steps = h.at("diffusion").at("steps").get<int>();
    c.schedule = parse_schedule_family(h.at("diffusion").at("schedule").get<std::string>());
    c.remap = h.at("remap").get<std::vector<TokenId>>();
    for (const auto& kv : h.at("run_config")) {
      c.run_config.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed checkpoint header: ") + e.what());
  }
  if (c.model.vocab_size != c.vocab.size()) {
    throw std::runtime_error("checkpoint vocab size disagrees with model config");
  }
  if (!c.remap.empty() && c.remap.size() != c.vocab.size()) {
    throw std::runtime_error("checkpoint remap table has the wrong size");
  }
  build_schedule(c.diffusion_steps, c.schedule);
  c.params = std::move(loaded.params);
  // Validates names and shapes against the config.
  TransformerModel<float>(c.model, c.length, c.params);
  return c;
}

void save_checkpoint(const std::string& path, const ModelCheckpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  write_checkpoint(out, checkpoint);
}

ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  try {
    return read_checkpoint(in);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

std::shared_ptr<const TransformerModel<float>> make_model(const ModelCheckpoint& checkpoint) {
  return std::make_shared<const TransformerModel<float>>(checkpoint.model, checkpoint.length,
                                                         checkpoint.params);
}

NoiseSchedule checkpoint_schedule(const ModelCheckpoint& checkpoint) {
  return build_schedule(checkpoint.diffusion_steps, checkpoint.schedule);
}

}  // namespace difflm
