#include <stdexcept>
#include <vector>

#include "difflm/checkpoint.hpp"
#include "difflm/eval.hpp"
#include "difflm/length.hpp"
#include "difflm/training.hpp"
#include "doctest.h"

using namespace difflm;

TEST_SUITE("slow") {
  TEST_CASE("copy task is learned to near-perfect accuracy") {
    SyntheticTaskSpec spec;
    spec.task = SyntheticTask::kCopy;
    spec.vocab_size = 8;
    spec.min_len = 2;
    spec.max_len = 8;
    spec.seed = 3;
    spec.train_size = 4000;
    spec.test_size = 200;
    const SyntheticData data = generate_synthetic(spec);
    const Vocab vocab = Vocab::with_specials(data.alphabet);
    const Tokenizer tok(vocab, TokenizerMode::kChar);
    const auto train = tokenize_corpus(data.train, tok, 20);
    const auto test = tokenize_corpus(data.test, tok, 20);

    TransformerConfig model;
    model.layers = 2;
    model.heads = 4;
    model.model_dim = 32;
    model.ff_dim = 128;
    model.max_positions = 20;
    model.vocab_size = vocab.size();
    ModelCheckpoint init = initial_checkpoint(model, LengthHeadConfig{8, 32}, vocab, TokenizerMode::kChar, 1);
    init.diffusion_steps = 20;

    TrainConfig config;
    config.steps = 2500;
    config.learning_rate = 2e-3;
    config.warmup_steps = 200;
    config.seed = 4;
    config.log_interval = 500;
    const TrainResult result = diffusive_adapt(train, {}, init, config);

    const auto trained = make_model(result.checkpoint);
    const auto [loss, accuracy] =
        heldout_diffusion_loss(*trained, test, checkpoint_schedule(result.checkpoint), vocab, 4, 9, 64);
    MESSAGE("held-out loss " << loss << ", masked-token accuracy " << accuracy);
    CHECK(accuracy >= 0.99);

    size_t correct = 0;
    for (const Example& ex : test) {
      const LengthDistribution d =
          predict_length<float>(ex.prompt, *trained, vocab.mask_id(), vocab.pad_id(), true);
      correct += d.top_k(1).front() == ex.response.size();
    }
    const double top1 = static_cast<double>(correct) / static_cast<double>(test.size());
    MESSAGE("length head top-1 " << top1);
    CHECK(top1 >= 0.99);
  }
}

TEST_SUITE("slow") {
  TEST_CASE("mlm held-out accuracy improves over the first 500 steps") {
    const std::vector<std::string> sentences = generate_grammar_corpus(derive_seed(5, 1), 4000);
    const Vocab vocab = build_vocab(sentences, TokenizerMode::kWhitespace);
    const Tokenizer tok(vocab, TokenizerMode::kWhitespace);
    std::vector<std::vector<TokenId>> train;
    std::vector<std::vector<TokenId>> heldout;
    for (size_t i = 0; i < sentences.size(); ++i) {
      (i < 3000 ? train : heldout).push_back(tok.tokenize(sentences[i]));
    }
    TransformerConfig model;
    model.layers = 2;
    model.heads = 4;
    model.model_dim = 32;
    model.ff_dim = 128;
    model.max_positions = 32;
    model.vocab_size = vocab.size();
    const ModelCheckpoint init = initial_checkpoint(model, LengthHeadConfig{}, vocab, TokenizerMode::kWhitespace, 6);
    TrainConfig config;
    config.steps = 500;
    config.learning_rate = 5e-4;
    config.warmup_steps = 50;
    config.seed = 7;
    config.log_interval = 20;
    const TrainResult result = mlm_pretrain(train, heldout, init, 0.15, config);
    REQUIRE(result.history.size() == 25);
    // Mean accuracy per 100-step window.
    std::vector<double> windows(5, 0.0);
    for (const auto& r : result.history) windows[(r.step - 1) / 100] += r.heldout_accuracy / 5.0;
    for (size_t w = 1; w < windows.size(); ++w) {
      MESSAGE("window " << w << ": " << windows[w - 1] << " -> " << windows[w]);
      CHECK(windows[w] > windows[w - 1]);
    }
  }

  TEST_CASE("three length beams do no worse than one on reversal") {
    SyntheticTaskSpec spec;
    spec.task = SyntheticTask::kReverse;
    spec.vocab_size = 8;
    spec.min_len = 3;
    spec.max_len = 8;
    spec.seed = 11;
    spec.train_size = 5000;
    spec.test_size = 100;
    const SyntheticData data = generate_synthetic(spec);
    const Vocab vocab = Vocab::with_specials(data.alphabet);
    const Tokenizer tok(vocab, TokenizerMode::kChar);
    const auto train = tokenize_corpus(data.train, tok, 20);
    const auto test = tokenize_corpus(data.test, tok, 20);
    TransformerConfig model;
    model.layers = 2;
    model.heads = 4;
    model.model_dim = 32;
    model.ff_dim = 128;
    model.max_positions = 20;
    model.vocab_size = vocab.size();
    const ModelCheckpoint init =
        initial_checkpoint(model, LengthHeadConfig{8, 32}, vocab, TokenizerMode::kChar, 12);
    TrainConfig config;
    config.steps = 1500;
    config.learning_rate = 2e-3;
    config.warmup_steps = 150;
    config.seed = 13;
    config.log_interval = 500;
    const ModelCheckpoint trained = diffusive_adapt(train, {}, init, config).checkpoint;
    const auto net = make_model(trained);
    const TransformerDenoiser<float> denoiser(net, vocab);
    const NoiseSchedule schedule(20, trained.schedule);
    std::vector<TokenSeq> refs;
    std::vector<TokenSeq> one;
    std::vector<TokenSeq> three;
    for (size_t k = 0; k < test.size(); ++k) {
      refs.push_back(test[k].response);
      const LengthDistribution d = predict_length<float>(test[k].prompt, *net, vocab.mask_id(), vocab.pad_id(), true);
      const BeamOptions options{DecodeMode::kTopK, derive_seed(14, k), 1};
      one.push_back(length_beam_generate(test[k].prompt, denoiser, d, 1, schedule, vocab.mask_id(), options)
                        .best_candidate().tokens);
      three.push_back(length_beam_generate(test[k].prompt, denoiser, d, 3, schedule, vocab.mask_id(), options)
                          .best_candidate().tokens);
    }
    const double em1 = exact_match(one, refs);
    const double em3 = exact_match(three, refs);
    MESSAGE("exact match with 1 beam " << em1 << ", with 3 beams " << em3);
    CHECK(em1 > 0.5);
    CHECK(em3 >= em1);
  }
}
