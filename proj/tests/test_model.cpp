#include <stdexcept>
#include <array>
#include <cmath>
#include <memory>
#include <sstream>

#include "difflm/checkpoint.hpp"
#include "difflm/model.hpp"
#include "doctest.h"

using namespace difflm;

namespace {

constexpr TokenId kMask = 0;
constexpr TokenId kPad = 1;
constexpr TokenId kSep = 2;

TransformerConfig tiny_config() {
  TransformerConfig c;
  c.layers = 2;
  c.heads = 2;
  c.model_dim = 8;
  c.ff_dim = 16;
  c.max_positions = 12;
  c.vocab_size = 7;
  return c;
}

template <typename Real>
nn::Tensor<Real> log_probs(const TransformerModel<Real>& model, const TokenBatch& batch) {
  nn::Graph<Real> g(false);
  const std::array<TokenId, 1> excluded{kMask};
  return g.value(model.token_log_probs(g, model.encode(g, batch), excluded));
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("output shape and normalization") {
    auto model = std::make_shared<const TransformerModel<double>>(tiny_config(), LengthHeadConfig{}, 1);
    const TransformerDenoiser<double> denoiser(model, kMask, kPad);
    const SequenceState state{{3, 4, kSep, kMask, 5, kMask, kMask}, 3, 2};
    const DenoiserOutput out = denoiser.score(state);
    CHECK(out.rows() == 4);
    CHECK(out.vocab_size() == 7);
    for (size_t i = 0; i < out.rows(); ++i) {
      CHECK(std::abs(log_sum_exp(out.row(i))) < 1e-6);
      CHECK(out.at(i, kMask) == kNegInf);
    }
  }

  TEST_CASE("float rows are normalized too") {
    auto model = std::make_shared<const TransformerModel<float>>(tiny_config(), LengthHeadConfig{}, 2);
    const TransformerDenoiser<float> denoiser(model, kMask, kPad);
    const DenoiserOutput out = denoiser.score({{3, kSep, kMask, kMask, kMask}, 2, 5});
    for (size_t i = 0; i < out.rows(); ++i) CHECK(std::abs(log_sum_exp(out.row(i))) < 1e-6);
  }

  TEST_CASE("carry-over puts a point mass on visible tokens") {
    auto model = std::make_shared<const TransformerModel<double>>(tiny_config(), LengthHeadConfig{}, 3);
    const SequenceState state{{3, kSep, 4, kMask, 6}, 2, 1};
    const TransformerDenoiser<double> carry(model, kMask, kPad);
    const TransformerDenoiser<double> raw(model, kMask, kPad, false);
    CHECK(carry.carry_over());
    CHECK_FALSE(raw.carry_over());
    const auto a = carry.score(state);
    const auto b = raw.score(state);
    CHECK(a.at(0, 4) == 0.0);
    CHECK(a.at(2, 6) == 0.0);
    CHECK(a.at(0, 5) == kNegInf);
    CHECK(b.at(0, 4) < 0.0);
    for (size_t v = 0; v < 7; ++v) CHECK(a.at(1, static_cast<TokenId>(v)) == b.at(1, static_cast<TokenId>(v)));
  }

  TEST_CASE("masked rows put no mass on special tokens") {
    auto model = std::make_shared<const TransformerModel<double>>(tiny_config(), LengthHeadConfig{}, 12);
    const Vocab vocab = Vocab::with_specials({"a", "b", "c", "d"});
    const TransformerDenoiser<double> denoiser(model, vocab);
    const auto out = denoiser.score({{3, 4, kSep, kMask, kMask, 5}, 3, 2});
    for (size_t i = 0; i < 2; ++i) {
      CHECK(out.at(i, kMask) == kNegInf);
      CHECK(out.at(i, kPad) == kNegInf);
      CHECK(out.at(i, kSep) == kNegInf);
      CHECK(std::abs(log_sum_exp(out.row(i))) < 1e-12);
    }
  }

  TEST_CASE("padding does not change predictions") {
    const TransformerModel<double> model(tiny_config(), LengthHeadConfig{}, 4);
    const std::vector<std::vector<TokenId>> alone{{3, kSep, kMask, 5}};
    const std::vector<std::vector<TokenId>> padded{{3, kSep, kMask, 5}, {4, 4, 3, kSep, kMask, kMask, 6}};
    const auto a = log_probs(model, make_token_batch(alone, kPad));
    TokenBatch batch = make_token_batch(padded, kPad);
    const auto b = log_probs(model, batch);
    // Padding positions hold arbitrary ids; swapping them changes nothing.
    batch.tokens[4] = 6;
    batch.tokens[6] = 3;
    std::swap(batch.tokens[4], batch.tokens[5]);
    const auto c = log_probs(model, batch);
    for (size_t r = 0; r < 4; ++r) {
      for (size_t v = 1; v < 7; ++v) {
        CHECK(b.at(r, v) == doctest::Approx(a.at(r, v)).epsilon(1e-12));
        CHECK(c.at(r, v) == b.at(r, v));
      }
    }
  }

  TEST_CASE("predictions ignore the timestep field") {
    auto model = std::make_shared<const TransformerModel<float>>(tiny_config(), LengthHeadConfig{}, 5);
    const TransformerDenoiser<float> denoiser(model, kMask, kPad);
    const auto a = denoiser.score({{3, kSep, kMask, kMask}, 2, 1});
    const auto b = denoiser.score({{3, kSep, kMask, kMask}, 2, 40});
    for (size_t i = 0; i < 2; ++i) CHECK(std::equal(a.row(i).begin(), a.row(i).end(), b.row(i).begin()));
  }

  TEST_CASE("attention is bidirectional") {
    auto model = std::make_shared<const TransformerModel<double>>(tiny_config(), LengthHeadConfig{}, 6);
    const TransformerDenoiser<double> denoiser(model, kMask, kPad);
    // Swapping two condition tokens changes the response rows, and a later
    // response token influences an earlier position.
    const auto a = denoiser.score({{3, 4, kSep, kMask, kMask}, 3, 2});
    const auto b = denoiser.score({{4, 3, kSep, kMask, kMask}, 3, 2});
    const auto c = denoiser.score({{3, 4, kSep, kMask, 5}, 3, 1});
    const TransformerDenoiser<double> raw(model, kMask, kPad, false);
    const auto d = raw.score({{3, 4, kSep, kMask, 6}, 3, 1});
    CHECK(a.at(0, 5) != b.at(0, 5));
    CHECK(c.at(0, 5) != d.at(0, 5));
  }

  TEST_CASE("batched scoring equals one-at-a-time scoring") {
    auto model = std::make_shared<const TransformerModel<double>>(tiny_config(), LengthHeadConfig{}, 7);
    const TransformerDenoiser<double> denoiser(model, kMask, kPad);
    const std::vector<SequenceState> states{{{3, kSep, kMask, kMask}, 2, 2},
                                            {{4, 5, 6, kSep, kMask, 3, kMask}, 4, 1}};
    const auto batched = denoiser.score_batch(states);
    for (size_t b = 0; b < states.size(); ++b) {
      const auto single = denoiser.score(states[b]);
      for (size_t i = 0; i < single.rows(); ++i) {
        for (size_t v = 1; v < 7; ++v) {
          const double want = single.at(i, static_cast<TokenId>(v));
          const double got = batched[b].at(i, static_cast<TokenId>(v));
          if (std::isinf(want)) CHECK(got == want);
          else CHECK(got == doctest::Approx(want).epsilon(1e-12));
        }
      }
    }
  }

  TEST_CASE("overlong inputs are rejected") {
    auto model = std::make_shared<const TransformerModel<float>>(tiny_config(), LengthHeadConfig{}, 8);
    const TransformerDenoiser<float> denoiser(model, kMask, kPad);
    SequenceState state{std::vector<TokenId>(13, kMask), 0, 1};
    state.tokens[0] = kSep;
    state.condition_len = 1;
    CHECK_THROWS_AS(denoiser.score(state), std::invalid_argument);
  }

  TEST_CASE("config validation") {
    TransformerConfig c = tiny_config();
    c.heads = 3;
    CHECK_THROWS_AS(TransformerModel<float>(c, LengthHeadConfig{}, 1), std::invalid_argument);
    c = tiny_config();
    c.vocab_size = 0;
    CHECK_THROWS_AS(TransformerModel<float>(c, LengthHeadConfig{}, 1), std::invalid_argument);
  }

  TEST_CASE("parameters must match the layout") {
    const TransformerModel<float> model(tiny_config(), LengthHeadConfig{}, 9);
    nn::ParameterStore<float> params = model.params();
    params.replace("out.bias", nn::Tensor<float>({3}));
    CHECK_THROWS_AS(TransformerModel<float>(tiny_config(), LengthHeadConfig{}, params),
                    std::invalid_argument);
  }

  TEST_CASE("length head normalizes over its classes") {
    const TransformerModel<double> model(tiny_config(), LengthHeadConfig{5, 6}, 10);
    const std::vector<std::vector<TokenId>> seqs{{3, kSep, kMask}, {4, 5, 3, kSep, kMask}};
    const TokenBatch batch = make_token_batch(seqs, kPad);
    nn::Graph<double> g(false);
    const auto lp = g.value(model.length_log_probs(g, model.encode(g, batch), batch));
    REQUIRE(lp.rows() == 2);
    REQUIRE(lp.cols() == 5);
    for (size_t r = 0; r < 2; ++r) {
      double total = 0.0;
      for (size_t c = 0; c < 5; ++c) total += std::exp(lp.at(r, c));
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("checkpoints round-trip bit-exactly") {
    ModelCheckpoint ckpt = initial_checkpoint(
        [] {
          TransformerConfig c = tiny_config();
          c.vocab_size = 6;
          return c;
        }(),
        LengthHeadConfig{4, 8}, Vocab::with_specials({"a", "b", "\xc3\xa9"}), TokenizerMode::kChar, 11);
    ckpt.kind = "mlm";
    ckpt.diffusion_steps = 20;
    ckpt.schedule = ScheduleFamily::kCosine;
    ckpt.run_config = {{"seed", "3"}, {"lr", "0.001"}};
    std::stringstream a;
    write_checkpoint(a, ckpt);
    const ModelCheckpoint back = read_checkpoint(a);
    CHECK(back.kind == "mlm");
    CHECK(back.model == ckpt.model);
    CHECK(back.length == ckpt.length);
    CHECK(back.vocab.tokens() == ckpt.vocab.tokens());
    CHECK(back.diffusion_steps == 20);
    CHECK(back.schedule == ScheduleFamily::kCosine);
    CHECK(back.run_config == ckpt.run_config);
    REQUIRE(back.params.size() == ckpt.params.size());
    for (size_t i = 0; i < back.params.size(); ++i) {
      CHECK(back.params.entry(i).value == ckpt.params.entry(i).value);
    }
    std::stringstream b;
    write_checkpoint(b, back);
    CHECK(a.str() == b.str());
  }

  TEST_CASE("vocabulary size must match the model") {
    CHECK_THROWS_AS(initial_checkpoint(tiny_config(), LengthHeadConfig{}, Vocab::with_specials({"a"}),
                                       TokenizerMode::kChar, 1),
                    std::invalid_argument);
  }

  TEST_CASE("length head attachment") {
    TransformerConfig c = tiny_config();
    c.vocab_size = 4;
    ModelCheckpoint ckpt = initial_checkpoint(c, LengthHeadConfig{}, Vocab::with_specials({"a"}),
                                              TokenizerMode::kChar, 1);
    const size_t before = ckpt.params.size();
    attach_length_head(ckpt, LengthHeadConfig{6, 4}, 2);
    CHECK(ckpt.length.max_length == 6);
    CHECK_FALSE(ckpt.length_head_trained);
    CHECK(ckpt.params.size() > before);
    CHECK(make_model(ckpt)->length_config().enabled());
  }

  TEST_CASE("unreadable checkpoints report the path") {
    try {
      load_checkpoint("/nonexistent/model.ckpt");
      FAIL("expected an error");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("/nonexistent/model.ckpt") != std::string::npos);
    }
    std::stringstream junk("garbage");
    CHECK_THROWS(read_checkpoint(junk));
  }
}
