// difflm: train, decode and evaluate absorbing-state diffusion language models.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "command.hpp"
#include "difflm/checkpoint.hpp"
#include "difflm/data.hpp"
#include "difflm/eval.hpp"
#include "difflm/length.hpp"
#include "difflm/training.hpp"

namespace difflm::cli {

namespace {

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  return out;
}

std::vector<Example> tokenize_file(const std::vector<TextPair>& pairs, const Tokenizer& tok,
                                   size_t max_positions, const std::string& path) {
  try {
    return tokenize_corpus(pairs, tok, max_positions);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + " " + e.what());
  }
}

void warn(const std::string& message) { std::cerr << "difflm: warning: " << message << "\n"; }

std::vector<TextPair> read_prompts(const std::string& path) {
  if (path == "-") return read_text_corpus(std::cin);
  return read_text_corpus_file(path);
}

std::vector<std::string> corpus_texts(std::initializer_list<const std::vector<TextPair>*> sets) {
  std::vector<std::string> texts;
  for (const auto* set : sets) {
    for (const auto& p : *set) {
      texts.push_back(p.prompt);
      if (p.paired) texts.push_back(p.response);
    }
  }
  return texts;
}

struct ModelOptions {
  size_t layers = 2;
  size_t heads = 4;
  size_t dim = 64;
  size_t ff_dim = 256;
  size_t max_positions = 64;
  std::string tokenizer = "char";

  void add(Command& c) {
    c.option("tokenizer", tokenizer, "Tokenizer for a new vocabulary: char|whitespace");
    c.option("layers", layers, "Transformer layers (new models)");
    c.option("heads", heads, "Attention heads (new models)");
    c.option("dim", dim, "Model width (new models)");
    c.option("ff-dim", ff_dim, "Feed-forward width (new models)");
    c.option("max-positions", max_positions, "Maximum prompt+response length (new models)");
  }

  TransformerConfig config(size_t vocab_size) const {
    TransformerConfig c;
    c.layers = layers;
    c.heads = heads;
    c.model_dim = dim;
    c.ff_dim = ff_dim;
    c.max_positions = max_positions;
    c.vocab_size = vocab_size;
    return c;
  }
};

struct TrainOptions {
  size_t steps = 1000;
  size_t batch_size = 32;
  double lr = 1e-3;
  size_t warmup = 100;
  double final_lr_fraction = 0.1;
  double clip_norm = 1.0;
  std::string label_smoothing = "auto";
  size_t log_interval = 100;
  bool log_timing = false;
  std::string metrics;

  void add(Command& c) {
    c.option("steps", steps, "Optimizer steps");
    c.option("batch-size", batch_size, "Sequences per batch")->check(CLI::PositiveNumber);
    c.option("lr", lr, "Peak learning rate");
    c.option("warmup", warmup, "Linear warmup steps");
    c.option("final-lr-fraction", final_lr_fraction, "Cosine decay floor as a fraction of lr");
    c.option("clip-norm", clip_norm, "Global gradient norm limit (0 disables)");
    c.option("label-smoothing", label_smoothing,
             "Label smoothing in [0,1), or auto (0.1 from scratch, 0 from a checkpoint)");
    c.option("log-interval", log_interval, "Steps per metrics line")->check(CLI::PositiveNumber);
    c.flag("log-timing", log_timing, "Report tokens/sec in the metrics log");
    c.option("metrics", metrics, "Metrics log path");
  }

  TrainConfig config(uint64_t seed) const {
    TrainConfig c;
    c.steps = steps;
    c.batch_size = batch_size;
    c.learning_rate = lr;
    c.warmup_steps = warmup;
    c.final_lr_fraction = final_lr_fraction;
    c.clip_norm = clip_norm;
    if (label_smoothing != "auto") {
      try {
        size_t used = 0;
        c.label_smoothing = std::stod(label_smoothing, &used);
        if (used != label_smoothing.size()) throw std::invalid_argument("");
      } catch (const std::exception&) {
        throw std::invalid_argument("label-smoothing must be a number or 'auto', got '" +
                                    label_smoothing + "'");
      }
    }
    c.log_interval = log_interval;
    c.log_timing = log_timing;
    c.seed = seed;
    return c;
  }
};

// ---------------------------------------------------------------------------

class SynthCommand final : public Command {
 public:
  explicit SynthCommand(CLI::App& app)
      : Command(app, "synth", "Write a synthetic task corpus") {
    option("task", task, "copy|reverse|cipher-translate|sorted-digits|grammar");
    option("vocab-size", vocab_size, "Payload alphabet size");
    option("min-len", min_len, "Shortest payload");
    option("max-len", max_len, "Longest payload");
    option("train-size", train_size, "Training examples");
    option("test-size", test_size, "Test examples");
    option("max-positions", max_positions, "Reject lengths that cannot fit (0: no limit)");
    option("train-out", train_out, "Training corpus output path")->required();
    option("test-out", test_out, "Test corpus output path");
  }

  void run() override {
    std::vector<TextPair> train;
    std::vector<TextPair> test;
    if (task == "grammar") {
      for (auto& s : generate_grammar_corpus(seed, train_size)) train.push_back({s, "", 0, false});
      for (auto& s : generate_grammar_corpus(derive_seed(seed, 1), test_size)) {
        test.push_back({s, "", 0, false});
      }
    } else {
      SyntheticTaskSpec spec;
      spec.task = parse_synthetic_task(task);
      spec.vocab_size = vocab_size;
      spec.min_len = min_len;
      spec.max_len = max_len;
      spec.seed = seed;
      spec.train_size = train_size;
      spec.test_size = test_out.empty() ? 0 : test_size;
      SyntheticData data = generate_synthetic(spec, max_positions);
      train = std::move(data.train);
      test = std::move(data.test);
    }
    write(train_out, train);
    if (!test_out.empty()) write(test_out, test);
  }

 private:
  void write(const std::string& path, const std::vector<TextPair>& pairs) const {
    auto out = open_output(path);
    out << config_line();
    write_corpus(out, pairs);
  }

  std::string task = "reverse";
  size_t vocab_size = 16;
  size_t min_len = 4;
  size_t max_len = 12;
  size_t train_size = 1000;
  size_t test_size = 100;
  size_t max_positions = 0;
  std::string train_out;
  std::string test_out;
};

class PretrainCommand final : public Command {
 public:
  explicit PretrainCommand(CLI::App& app)
      : Command(app, "pretrain", "Masked-LM pretraining at a fixed masking ratio") {
    option("corpus", corpus, "Training text: one sequence or prompt<TAB>response per line")
        ->required();
    option("heldout", heldout, "Held-out text for the metrics log");
    option("out", out, "Checkpoint output path")->required();
    option("mask-ratio", mask_ratio, "Fixed masking ratio in (0,1)");
    model.add(*this);
    train.add(*this);
  }

  void run() override {
    const auto corpus_pairs = read_text_corpus_file(corpus);
    if (corpus_pairs.empty()) throw std::invalid_argument("corpus '" + corpus + "' is empty");
    const auto heldout_pairs =
        heldout.empty() ? std::vector<TextPair>{} : read_text_corpus_file(heldout);
    const TokenizerMode mode = parse_tokenizer_mode(model.tokenizer);
    Vocab vocab = build_vocab(corpus_texts({&corpus_pairs, &heldout_pairs}), mode);
    const Tokenizer tok(vocab, mode);
    auto sequences = [&](const std::vector<TextPair>& pairs) {
      std::vector<std::vector<TokenId>> out;
      for (const auto& p : pairs) out.push_back(pretraining_sequence(p, tok));
      return out;
    };
    const auto train_seqs = sequences(corpus_pairs);
    const auto heldout_seqs = sequences(heldout_pairs);

    ModelCheckpoint init = initial_checkpoint(model.config(vocab.size()), LengthHeadConfig{},
                                              vocab, mode, derive_seed(seed, 4));
    std::optional<std::ofstream> log;
    if (!train.metrics.empty()) {
      log = open_output(train.metrics);
      *log << config_line();
    }
    TrainResult result = mlm_pretrain(train_seqs, heldout_seqs, std::move(init), mask_ratio,
                                      train.config(seed), log ? &*log : nullptr);
    result.checkpoint.run_config = resolved();
    save_checkpoint(out, result.checkpoint);
  }

 private:
  std::string corpus;
  std::string heldout;
  std::string out;
  double mask_ratio = 0.15;
  ModelOptions model;
  TrainOptions train;
};

class AdaptCommand final : public Command {
 public:
  explicit AdaptCommand(CLI::App& app)
      : Command(app, "adapt", "Diffusive adaptation on prompt/response pairs") {
    option("train", train_path, "Training corpus (prompt<TAB>response)")->required();
    option("heldout", heldout_path, "Held-out corpus for the metrics log");
    option("init", init, "scratch, or a checkpoint path to start from");
    option("out", out, "Checkpoint output path")->required();
    option("diffusion-steps", diffusion_steps, "Diffusion steps T")->check(CLI::PositiveNumber);
    option("schedule", schedule, "Corruption schedule: linear|cosine");
    option("max-length", max_length, "Length head classes (0: longest training response)");
    option("length-hidden", length_hidden, "Length head hidden width");
    option("length-weight", length_weight, "Weight of the length loss");
    option("heldout-corruptions", heldout_corruptions, "Fixed corruptions per held-out example");
    flag("prune-vocab", prune, "Drop tokens absent from the training corpus");
    model.add(*this);
    train.add(*this);
  }

  void run() override {
    const auto train_pairs = read_corpus_file(train_path);
    if (train_pairs.empty()) throw std::invalid_argument("corpus '" + train_path + "' is empty");
    const auto heldout_pairs =
        heldout_path.empty() ? std::vector<TextPair>{} : read_corpus_file(heldout_path);

    ModelCheckpoint ckpt;
    if (init == "scratch") {
      const TokenizerMode mode = parse_tokenizer_mode(model.tokenizer);
      Vocab vocab = build_vocab(corpus_texts({&train_pairs, &heldout_pairs}), mode);
      const TransformerConfig config = model.config(vocab.size());
      ckpt = initial_checkpoint(config, LengthHeadConfig{}, std::move(vocab), mode,
                                derive_seed(seed, 4));
    } else {
      ckpt = load_checkpoint(init);
    }
    if (prune) {
      const Tokenizer tok(ckpt.vocab, ckpt.tokenizer);
      ckpt = prune_vocab(ckpt, tokenize_file(train_pairs, tok, 0, train_path));
    }
    const Tokenizer tok(ckpt.vocab, ckpt.tokenizer);
    const auto train_set = tokenize_file(train_pairs, tok, ckpt.model.max_positions, train_path);
    const auto heldout_set =
        tokenize_file(heldout_pairs, tok, ckpt.model.max_positions, heldout_path);

    LengthHeadConfig head{max_length, length_hidden};
    if (head.max_length == 0) {
      for (const auto& ex : train_set) head.max_length = std::max(head.max_length, ex.response.size());
    }
    if (ckpt.length != head) attach_length_head(ckpt, head, derive_seed(seed, 5));
    ckpt.diffusion_steps = diffusion_steps;
    ckpt.schedule = parse_schedule_family(schedule);

    TrainConfig config = train.config(seed);
    config.length_weight = length_weight;
    config.heldout_corruptions = heldout_corruptions;
    std::optional<std::ofstream> log;
    if (!train.metrics.empty()) {
      log = open_output(train.metrics);
      *log << config_line();
    }
    TrainResult result =
        diffusive_adapt(train_set, heldout_set, std::move(ckpt), config, log ? &*log : nullptr);
    result.checkpoint.run_config = resolved();
    save_checkpoint(out, result.checkpoint);
  }

 private:
  std::string train_path;
  std::string heldout_path;
  std::string init = "scratch";
  std::string out;
  int diffusion_steps = 50;
  std::string schedule = "linear";
  size_t max_length = 0;
  size_t length_hidden = 64;
  double length_weight = 0.1;
  size_t heldout_corruptions = 4;
  bool prune = false;
  ModelOptions model;
  TrainOptions train;
};

// Shared decoding setup for generate, trace and eval.
class DecodingCommand : public Command {
 public:
  DecodingCommand(CLI::App& app, const std::string& name, const std::string& description)
      : Command(app, name, description) {
    option("checkpoint", checkpoint_path, "Model checkpoint")->required();
    option("mode", mode, "Decoding: topk|ancestral");
    option("steps", steps, "Denoising steps T")->check(CLI::PositiveNumber);
    option("length-beams", length_beams, "Lengths decoded per prompt")->check(CLI::PositiveNumber);
    flag("oracle-length", oracle_length, "Use the reference response length");
    option("length", fixed_length, "Decode exactly this many tokens (0: off)");
  }

 protected:
  struct Decoded {
    std::vector<TokenId> prompt;
    BeamResult beams;
  };

  void load() {
    ckpt_ = load_checkpoint(checkpoint_path);
    model_ = make_model(ckpt_);
    denoiser_ = std::make_unique<TransformerDenoiser<float>>(model_, ckpt_.vocab);
    schedule_.emplace(build_schedule(steps, ckpt_.schedule));
    tokenizer_.emplace(ckpt_.vocab, ckpt_.tokenizer);
    decode_mode_ = parse_decode_mode(mode);
  }

  Decoded decode(const TextPair& pair, size_t index) const {
    const std::string where = "prompt " + std::to_string(index + 1);
    Decoded d;
    d.prompt = tokenizer_->tokenize(pair.prompt);
    d.prompt.push_back(ckpt_.vocab.sep_id());
    const BeamOptions options{decode_mode_, derive_seed(seed, index), threads};
    const TokenId mask = ckpt_.vocab.mask_id();
    if (fixed_length > 0 || oracle_length) {
      size_t len = fixed_length;
      if (len == 0) {
        if (!pair.paired) throw std::invalid_argument(where + ": --oracle-length needs a reference");
        len = tokenizer_->tokenize(pair.response).size();
        if (len == 0) throw std::invalid_argument(where + ": empty reference");
      }
      d.beams = length_beam_generate(d.prompt, *denoiser_, std::span<const size_t>(&len, 1),
                                     *schedule_, mask, options);
    } else {
      if (!model_->length_config().enabled()) {
        throw std::invalid_argument("checkpoint has no length head; use --oracle-length or --length");
      }
      const auto dist = predict_length(d.prompt, *model_, mask, ckpt_.vocab.pad_id(),
                                       ckpt_.length_head_trained);
      d.beams = length_beam_generate(d.prompt, *denoiser_, dist, length_beams, *schedule_, mask,
                                     options);
    }
    for (const auto& w : d.beams.warnings) warn(where + ": " + w);
    return d;
  }

  std::string render(const std::vector<TokenId>& tokens) const {
    return tokenizer_->detokenize(tokens);
  }

  const ModelCheckpoint& checkpoint() const { return ckpt_; }
  const Tokenizer& tokenizer() const { return *tokenizer_; }

  std::string checkpoint_path;
  std::string mode = "topk";
  int steps = 50;
  size_t length_beams = 1;
  bool oracle_length = false;
  size_t fixed_length = 0;

 private:
  ModelCheckpoint ckpt_;
  std::shared_ptr<const TransformerModel<float>> model_;
  std::unique_ptr<TransformerDenoiser<float>> denoiser_;
  std::optional<NoiseSchedule> schedule_;
  std::optional<Tokenizer> tokenizer_;
  DecodeMode decode_mode_ = DecodeMode::kTopK;
};

class GenerateCommand final : public DecodingCommand {
 public:
  explicit GenerateCommand(CLI::App& app)
      : DecodingCommand(app, "generate", "Generate one response per prompt") {
    option("prompts", prompts, "Prompt file (- for stdin); prompt<TAB>reference lines allowed");
    option("out", out_path, "Output path (- for stdout)");
  }

  void run() override {
    load();
    const auto pairs = read_prompts(prompts);
    std::ostringstream text;
    text << config_line();
    for (size_t i = 0; i < pairs.size(); ++i) {
      text << escape_field(render(decode(pairs[i], i).beams.best_candidate().tokens)) << "\n";
    }
    if (out_path == "-") {
      std::cout << text.str() << std::flush;
    } else {
      open_output(out_path) << text.str();
    }
  }

 private:
  std::string prompts = "-";
  std::string out_path = "-";
};

class TraceCommand final : public DecodingCommand {
 public:
  explicit TraceCommand(CLI::App& app)
      : DecodingCommand(app, "trace", "Write a step-by-step denoising trace per prompt") {
    option("prompts", prompts, "Prompt file (- for stdin)");
    option("out-dir", out_dir, "Directory for trace-NNNN.tsv files and config.txt")->required();
  }

  void run() override {
    load();
    const auto pairs = read_prompts(prompts);
    std::filesystem::create_directories(out_dir);
    open_output(out_dir + "/config.txt") << config_line();
    for (size_t i = 0; i < pairs.size(); ++i) {
      const auto d = decode(pairs[i], i);
      char name[32];
      std::snprintf(name, sizeof(name), "/trace-%04zu.tsv", i + 1);
      open_output(out_dir + name) << format_trace(d.beams.best_candidate().trace,
                                                  checkpoint().vocab,
                                                  render_style(checkpoint().tokenizer));
    }
  }

 private:
  std::string prompts = "-";
  std::string out_dir;
};

class EvalCommand final : public Command {
 public:
  explicit EvalCommand(CLI::App& app) : Command(app, "eval", "Score generations against references") {
    decoding_ = std::make_unique<Decoding>(*this);
    option("test", test_path, "Test corpus (prompt<TAB>reference) decoded with --checkpoint");
    option("hypotheses", hypotheses_path, "Score this file instead of decoding (one per line)");
    option("references", references_path, "References for --hypotheses (one per line)");
    option("tokenizer", tokenizer, "Tokenizer for --hypotheses mode: char|whitespace");
    option("predictions", predictions_path, "Write decoded responses here");
    option("report", report_path, "Write the JSON report here");
  }

  void run() override {
    std::vector<TokenSeq> hyps;
    std::vector<TokenSeq> refs;
    if (!hypotheses_path.empty()) {
      if (references_path.empty()) throw std::invalid_argument("--hypotheses needs --references");
      score_files(hyps, refs);
    } else {
      if (test_path.empty()) throw std::invalid_argument("eval needs --test or --hypotheses");
      decoding_->run_decoding(test_path, predictions_path, hyps, refs);
    }
    EvalReport report;
    report.metrics = {{"exact_match", exact_match(hyps, refs)},
                      {"token_accuracy", token_accuracy(hyps, refs)},
                      {"bleu", bleu(hyps, refs)}};
    report.samples = hyps.size();
    report.config = resolved();
    std::cout << "# eval: bleu is plain corpus BLEU (4-gram, brevity penalty), not SacreBLEU\n"
              << report.to_line() << "\n"
              << report.to_json() << "\n";
    if (!report_path.empty()) open_output(report_path) << report.to_json() << "\n";
  }

 private:
  // Decoding options registered on the eval subcommand itself.
  class Decoding {
   public:
    explicit Decoding(Command& c) : c_(c) {
      c.option("checkpoint", checkpoint_path, "Model checkpoint");
      c.option("mode", mode, "Decoding: topk|ancestral");
      c.option("steps", steps, "Denoising steps T")->check(CLI::PositiveNumber);
      c.option("length-beams", length_beams, "Lengths decoded per prompt")
          ->check(CLI::PositiveNumber);
      c.flag("oracle-length", oracle_length, "Use the reference response length");
    }

    void run_decoding(const std::string& test_path, const std::string& predictions_path,
                      std::vector<TokenSeq>& hyps, std::vector<TokenSeq>& refs) {
      if (checkpoint_path.empty()) throw std::invalid_argument("--test needs --checkpoint");
      const ModelCheckpoint ckpt = load_checkpoint(checkpoint_path);
      const auto model = make_model(ckpt);
      const TransformerDenoiser<float> denoiser(model, ckpt.vocab);
      const NoiseSchedule schedule = build_schedule(steps, ckpt.schedule);
      const Tokenizer tok(ckpt.vocab, ckpt.tokenizer);
      const DecodeMode decode_mode = parse_decode_mode(mode);
      const auto pairs = read_corpus_file(test_path);
      if (!oracle_length && !model->length_config().enabled()) {
        throw std::invalid_argument("checkpoint has no length head; use --oracle-length");
      }
      std::string predictions = c_.config_line();
      for (size_t i = 0; i < pairs.size(); ++i) {
        std::vector<TokenId> prompt = tok.tokenize(pairs[i].prompt);
        prompt.push_back(ckpt.vocab.sep_id());
        refs.push_back(tok.tokenize(pairs[i].response));
        const BeamOptions options{decode_mode, derive_seed(c_.seed, i), c_.threads};
        BeamResult beams;
        if (oracle_length) {
          const size_t len = refs.back().size();
          beams = length_beam_generate(prompt, denoiser, std::span<const size_t>(&len, 1),
                                       schedule, ckpt.vocab.mask_id(), options);
        } else {
          const auto dist = predict_length(prompt, *model, ckpt.vocab.mask_id(),
                                           ckpt.vocab.pad_id(), ckpt.length_head_trained);
          beams = length_beam_generate(prompt, denoiser, dist, length_beams, schedule,
                                       ckpt.vocab.mask_id(), options);
        }
        for (const auto& w : beams.warnings) warn("example " + std::to_string(i + 1) + ": " + w);
        hyps.push_back(beams.best_candidate().tokens);
        predictions += escape_field(tok.detokenize(hyps.back())) + "\n";
      }
      if (!predictions_path.empty()) open_output(predictions_path) << predictions;
    }

    std::string checkpoint_path;
    std::string mode = "topk";
    int steps = 50;
    size_t length_beams = 1;
    bool oracle_length = false;

   private:
    Command& c_;
  };

  void score_files(std::vector<TokenSeq>& hyps, std::vector<TokenSeq>& refs) const {
    const TokenizerMode mode = parse_tokenizer_mode(tokenizer);
    std::unordered_map<std::string, TokenId> ids;
    auto load = [&](const std::string& path, std::vector<TokenSeq>& out) {
      std::ifstream in(path);
      if (!in) throw std::runtime_error("cannot open '" + path + "'");
      std::string line;
      while (std::getline(in, line)) {
        if (!line.empty() && line.front() == '#') continue;
        TokenSeq seq;
        for (const auto& sym : split_symbols(unescape_field(line), mode)) {
          seq.push_back(ids.emplace(sym, static_cast<TokenId>(ids.size())).first->second);
        }
        out.push_back(std::move(seq));
      }
    };
    load(hypotheses_path, hyps);
    load(references_path, refs);
  }

  std::unique_ptr<Decoding> decoding_;
  std::string test_path;
  std::string hypotheses_path;
  std::string references_path;
  std::string tokenizer = "char";
  std::string predictions_path;
  std::string report_path;
};

class InspectScheduleCommand final : public Command {
 public:
  explicit InspectScheduleCommand(CLI::App& app)
      : Command(app, "inspect-schedule", "Print the corruption schedule table") {
    option("steps", steps, "Diffusion steps T")->check(CLI::PositiveNumber);
    option("schedule", schedule, "linear|cosine");
    option("length", length, "Response length N for the unmask count")->check(CLI::PositiveNumber);
  }

  void run() override {
    const NoiseSchedule s = build_schedule(steps, parse_schedule_family(schedule));
    std::string text = config_line();
    text += "# t\talpha\tmask_ratio\tloss_weight\tunmask_count\n";
    for (int t = 0; t <= steps; ++t) {
      text += std::to_string(t) + "\t" + to_text(s.alpha(t)) + "\t" + to_text(s.mask_ratio(t)) +
              "\t" + (t == 0 ? std::string("-") : to_text(loss_weight(t, steps))) + "\t" +
              std::to_string(unmask_count(length, t, steps)) + "\n";
    }
    std::cout << text << std::flush;
  }

 private:
  int steps = 50;
  std::string schedule = "linear";
  int length = 10;
};

std::string one_line(std::string message) {
  for (char& c : message) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return message;
}

}  // namespace

}  // namespace difflm::cli

int main(int argc, char** argv) {
  using namespace difflm::cli;
  CLI::App app{"Absorbing-state discrete diffusion language models", "difflm"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Command>> commands;
  commands.push_back(std::make_unique<SynthCommand>(app));
  commands.push_back(std::make_unique<PretrainCommand>(app));
  commands.push_back(std::make_unique<AdaptCommand>(app));
  commands.push_back(std::make_unique<GenerateCommand>(app));
  commands.push_back(std::make_unique<TraceCommand>(app));
  commands.push_back(std::make_unique<EvalCommand>(app));
  commands.push_back(std::make_unique<InspectScheduleCommand>(app));

  try {
    std::vector<std::string> args = expand_config(app, argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
    for (auto& c : commands) {
      if (c->app()->parsed()) c->run();
    }
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "difflm: error: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "difflm: error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
