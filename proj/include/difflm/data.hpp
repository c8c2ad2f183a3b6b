#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "difflm/sequence.hpp"
#include "difflm/vocab.hpp"

namespace difflm {

enum class TokenizerMode { kChar, kWhitespace };

std::string_view to_string(TokenizerMode mode);
TokenizerMode parse_tokenizer_mode(std::string_view name);
RenderStyle render_style(TokenizerMode mode);

// Splits text into symbols: UTF-8 scalars (char) or space-separated words
// with runs of spaces collapsed (whitespace). Invalid UTF-8 is an error.
std::vector<std::string> split_symbols(std::string_view text, TokenizerMode mode);

// Closed-vocabulary tokenizer; unknown symbols are errors (there is no UNK).
class Tokenizer {
 public:
  Tokenizer(const Vocab& vocab, TokenizerMode mode) : vocab_(&vocab), mode_(mode) {}
  Tokenizer(Vocab&&, TokenizerMode) = delete;

  std::vector<TokenId> tokenize(std::string_view text) const;
  std::string detokenize(std::span<const TokenId> tokens) const;

  const Vocab& vocab() const { return *vocab_; }
  TokenizerMode mode() const { return mode_; }

 private:
  const Vocab* vocab_;
  TokenizerMode mode_;
};

// Vocab over the sorted distinct symbols of the given texts, specials first.
Vocab build_vocab(std::span<const std::string> texts, TokenizerMode mode);

// Prompt (ending in the separator) and response token arrays.
struct Example {
  std::vector<TokenId> prompt;
  std::vector<TokenId> response;

  size_t total_length() const { return prompt.size() + response.size(); }
  std::vector<TokenId> concatenated() const;
  bool operator==(const Example&) const = default;
};

// prompt = tokenize(instruction + " " + input) + [SEP]; response = tokenize(output).
// The joining space is dropped when either side is empty.
Example format_example(std::string_view instruction, std::string_view input,
                       std::string_view output, const Tokenizer& tokenizer, size_t max_positions);

// Checks the Example invariants; `index` is reported in errors.
void validate_example(const Example& example, const Vocab& vocab, size_t max_positions,
                      size_t index);

// A line of a corpus file: prompt text, response text. Unpaired lines (plain
// text, pretraining only) keep their text in `prompt`.
struct TextPair {
  std::string prompt;
  std::string response;
  size_t line = 0;
  bool paired = true;

  bool operator==(const TextPair& o) const { return prompt == o.prompt && response == o.response; }
};

// Corpus files: UTF-8, one example per line, prompt and response separated by
// a single tab; \t, \n and \\ escape those characters inside fields; lines
// starting with '#' are comments and blank lines are skipped.
std::vector<TextPair> read_corpus(std::istream& in);
std::vector<TextPair> read_corpus_file(const std::string& path);
void write_corpus(std::ostream& out, std::span<const TextPair> pairs);
void write_corpus_file(const std::string& path, std::span<const TextPair> pairs);
std::string escape_field(std::string_view field);
std::string unescape_field(std::string_view field);

// Like read_corpus, but lines without a tab are accepted as unpaired text.
std::vector<TextPair> read_text_corpus(std::istream& in);
std::vector<TextPair> read_text_corpus_file(const std::string& path);

// Pretraining sequence: prompt [SEP] response for pairs, the tokens otherwise.
std::vector<TokenId> pretraining_sequence(const TextPair& pair, const Tokenizer& tokenizer);

std::vector<Example> tokenize_corpus(std::span<const TextPair> pairs, const Tokenizer& tokenizer,
                                     size_t max_positions);

enum class SyntheticTask { kCopy, kReverse, kCipher, kSortedDigits };

std::string_view to_string(SyntheticTask task);
SyntheticTask parse_synthetic_task(std::string_view name);

struct SyntheticTaskSpec {
  SyntheticTask task = SyntheticTask::kReverse;
  size_t vocab_size = 16;  // payload alphabet size
  size_t min_len = 4;
  size_t max_len = 12;
  uint64_t seed = 0;
  size_t train_size = 1000;
  size_t test_size = 100;
};

struct SyntheticData {
  std::vector<std::string> alphabet;
  std::vector<TextPair> train;
  std::vector<TextPair> test;
};

// Payload alphabet: 'a'.. for copy/reverse/cipher, '0'.. for sorted-digits.
std::vector<std::string> synthetic_alphabet(const SyntheticTaskSpec& spec);
// Fixed random bijection of the alphabet used by the cipher task.
std::vector<size_t> cipher_permutation(const SyntheticTaskSpec& spec);

// Deterministic in the task description; train and test payloads are disjoint. Prompts
// hold the payload only; the tokenizer appends the separator.
SyntheticData generate_synthetic(const SyntheticTaskSpec& spec, size_t max_positions = 0);

// Sentences from a small agreement grammar (whitespace-tokenized), for MLM.
std::vector<std::string> generate_grammar_corpus(uint64_t seed, size_t count);

}  // namespace difflm
