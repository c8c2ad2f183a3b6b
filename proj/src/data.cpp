#include "difflm/data.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "difflm/rng.hpp"

namespace difflm {

namespace {

size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 0;
}

uint32_t decode_codepoint(std::string_view symbol) {
  const auto lead = static_cast<unsigned char>(symbol[0]);
  if (symbol.size() == 1) return lead;
  uint32_t cp = lead & (0x7F >> symbol.size());
  for (size_t i = 1; i < symbol.size(); ++i) {
    cp = (cp << 6) | (static_cast<unsigned char>(symbol[i]) & 0x3F);
  }
  return cp;
}

std::string codepoint_label(std::string_view symbol) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "U+%04X", decode_codepoint(symbol));
  return buf;
}

std::string join_prompt(std::string_view instruction, std::string_view input) {
  std::string text(instruction);
  if (!instruction.empty() && !input.empty()) text += ' ';
  text += input;
  return text;
}

}  // namespace

std::string_view to_string(TokenizerMode mode) {
  return mode == TokenizerMode::kChar ? "char" : "whitespace";
}

TokenizerMode parse_tokenizer_mode(std::string_view name) {
  if (name == "char") return TokenizerMode::kChar;
  if (name == "whitespace") return TokenizerMode::kWhitespace;
  throw std::invalid_argument("unknown tokenizer mode '" + std::string(name) +
                              "' (expected char|whitespace)");
}

RenderStyle render_style(TokenizerMode mode) {
  return mode == TokenizerMode::kChar ? RenderStyle::kConcat : RenderStyle::kSpaced;
}

std::vector<std::string> split_symbols(std::string_view text, TokenizerMode mode) {
  std::vector<std::string> out;
  if (mode == TokenizerMode::kWhitespace) {
    size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && text[i] == ' ') ++i;
      const size_t start = i;
      while (i < text.size() && text[i] != ' ') ++i;
      if (i > start) out.emplace_back(text.substr(start, i - start));
    }
    return out;
  }
  size_t i = 0;
  while (i < text.size()) {
    const size_t n = utf8_length(static_cast<unsigned char>(text[i]));
    if (n == 0 || i + n > text.size()) {
      throw std::invalid_argument("invalid UTF-8 at byte " + std::to_string(i));
    }
    for (size_t k = 1; k < n; ++k) {
      if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
        throw std::invalid_argument("invalid UTF-8 at byte " + std::to_string(i + k));
      }
    }
    out.emplace_back(text.substr(i, n));
    i += n;
  }
  return out;
}

std::vector<TokenId> Tokenizer::tokenize(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const std::string& symbol : split_symbols(text, mode_)) {
    const auto id = vocab_->find(symbol);
    if (!id || vocab_->is_special(*id)) {
      const std::string label = mode_ == TokenizerMode::kChar ? codepoint_label(symbol)
                                                               : "'" + symbol + "'";
      throw std::invalid_argument("out-of-vocabulary symbol " + label);
    }
    ids.push_back(*id);
  }
  return ids;
}

std::string Tokenizer::detokenize(std::span<const TokenId> tokens) const {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (mode_ == TokenizerMode::kWhitespace && i > 0) out += ' ';
    out += vocab_->token(tokens[i]);
  }
  return out;
}

Vocab build_vocab(std::span<const std::string> texts, TokenizerMode mode) {
  std::set<std::string> symbols;
  for (const auto& text : texts) {
    for (auto& s : split_symbols(text, mode)) symbols.insert(std::move(s));
  }
  for (std::string_view special : {kMaskToken, kPadToken, kSepToken}) {
    symbols.erase(std::string(special));
  }
  return Vocab::with_specials(std::vector<std::string>(symbols.begin(), symbols.end()));
}

std::vector<TokenId> Example::concatenated() const {
  std::vector<TokenId> out = prompt;
  out.insert(out.end(), response.begin(), response.end());
  return out;
}

Example format_example(std::string_view instruction, std::string_view input,
                       std::string_view output, const Tokenizer& tokenizer, size_t max_positions) {
  if (output.empty()) throw std::invalid_argument("format_example: empty output");
  Example ex;
  ex.prompt = tokenizer.tokenize(join_prompt(instruction, input));
  ex.prompt.push_back(tokenizer.vocab().sep_id());
  ex.response = tokenizer.tokenize(output);
  if (ex.response.empty()) throw std::invalid_argument("format_example: output has no tokens");
  if (max_positions > 0 && ex.total_length() > max_positions) {
    throw std::invalid_argument("format_example: prompt (" + std::to_string(ex.prompt.size()) +
                                ") + response (" + std::to_string(ex.response.size()) +
                                ") exceeds " + std::to_string(max_positions) + " positions");
  }
  return ex;
}

void validate_example(const Example& example, const Vocab& vocab, size_t max_positions,
                      size_t index) {
  const std::string where = "example " + std::to_string(index) + ": ";
  if (example.prompt.empty() || example.prompt.back() != vocab.sep_id()) {
    throw std::invalid_argument(where + "prompt must end with the separator");
  }
  if (example.response.empty()) throw std::invalid_argument(where + "empty response");
  for (const auto* part : {&example.prompt, &example.response}) {
    for (TokenId t : *part) {
      if (!vocab.contains(t)) throw std::invalid_argument(where + "token id outside vocab");
      if (t == vocab.mask_id()) throw std::invalid_argument(where + "contains the mask token");
    }
  }
  if (max_positions > 0 && example.total_length() > max_positions) {
    throw std::invalid_argument(where + "length " + std::to_string(example.total_length()) +
                                " exceeds " + std::to_string(max_positions) + " positions");
  }
}

std::string escape_field(std::string_view field) {
  std::string out;
  for (char c : field) {
    switch (c) {
      case '\t':
        out += "\\t";
        break;
      case '\n':
        out += "\\n";
        break;
      case '\\':
        out += "\\\\";
        break;
      default:
        out += c;
    }
  }
  return out;
}

std::string unescape_field(std::string_view field) {
  std::string out;
  for (size_t i = 0; i < field.size(); ++i) {
    if (field[i] != '\\' || i + 1 == field.size()) {
      out += field[i];
      continue;
    }
    const char next = field[++i];
    switch (next) {
      case 't':
        out += '\t';
        break;
      case 'n':
        out += '\n';
        break;
      case '\\':
        out += '\\';
        break;
      default:
        throw std::invalid_argument(std::string("unknown escape \\") + next);
    }
  }
  return out;
}

namespace {

std::vector<TextPair> read_lines(std::istream& in, bool allow_plain) {
  std::vector<TextPair> pairs;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const std::string where = "corpus line " + std::to_string(line_no) + ": ";
    const size_t tab = line.find('\t');
    if (tab != std::string::npos && line.find('\t', tab + 1) != std::string::npos) {
      throw std::invalid_argument(where + "more than one tab");
    }
    if (tab == std::string::npos && !allow_plain) {
      throw std::invalid_argument(where + "expected a tab separating prompt and response");
    }
    try {
      TextPair pair;
      pair.line = line_no;
      if (tab == std::string::npos) {
        pair.prompt = unescape_field(line);
        pair.paired = false;
      } else {
        pair.prompt = unescape_field(std::string_view(line).substr(0, tab));
        pair.response = unescape_field(std::string_view(line).substr(tab + 1));
      }
      pairs.push_back(std::move(pair));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + e.what());
    }
  }
  return pairs;
}

std::vector<TextPair> read_lines_file(const std::string& path, bool allow_plain) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file '" + path + "'");
  try {
    return read_lines(in, allow_plain);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

}  // namespace

std::vector<TextPair> read_corpus(std::istream& in) { return read_lines(in, false); }

std::vector<TextPair> read_corpus_file(const std::string& path) {
  return read_lines_file(path, false);
}

std::vector<TextPair> read_text_corpus(std::istream& in) { return read_lines(in, true); }

std::vector<TextPair> read_text_corpus_file(const std::string& path) {
  return read_lines_file(path, true);
}

std::vector<TokenId> pretraining_sequence(const TextPair& pair, const Tokenizer& tokenizer) {
  std::vector<TokenId> out = tokenizer.tokenize(pair.prompt);
  if (!pair.paired) return out;
  out.push_back(tokenizer.vocab().sep_id());
  const auto response = tokenizer.tokenize(pair.response);
  out.insert(out.end(), response.begin(), response.end());
  return out;
}

void write_corpus(std::ostream& out, std::span<const TextPair> pairs) {
  for (const auto& p : pairs) {
    out << escape_field(p.prompt);
    if (p.paired) out << '\t' << escape_field(p.response);
    out << '\n';
  }
}

void write_corpus_file(const std::string& path, std::span<const TextPair> pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus file '" + path + "'");
  write_corpus(out, pairs);
}

std::vector<Example> tokenize_corpus(std::span<const TextPair> pairs, const Tokenizer& tokenizer,
                                     size_t max_positions) {
  std::vector<Example> out;
  out.reserve(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    if (!pairs[i].paired) {
      throw std::invalid_argument("line " + std::to_string(pairs[i].line) +
                                  ": expected a prompt and a response");
    }
    const std::string where =
        pairs[i].line > 0 ? "line " + std::to_string(pairs[i].line) : "example " + std::to_string(i);
    try {
      out.push_back(format_example("", pairs[i].prompt, pairs[i].response, tokenizer, max_positions));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + ": " + e.what());
    }
  }
  return out;
}

std::string_view to_string(SyntheticTask task) {
  switch (task) {
    case SyntheticTask::kCopy:
      return "copy";
    case SyntheticTask::kReverse:
      return "reverse";
    case SyntheticTask::kCipher:
      return "cipher-translate";
    case SyntheticTask::kSortedDigits:
      return "sorted-digits";
  }
  return "unknown";
}

SyntheticTask parse_synthetic_task(std::string_view name) {
  for (auto task : {SyntheticTask::kCopy, SyntheticTask::kReverse, SyntheticTask::kCipher,
                    SyntheticTask::kSortedDigits}) {
    if (name == to_string(task)) return task;
  }
  throw std::invalid_argument("unknown synthetic task '" + std::string(name) +
                              "' (expected copy|reverse|cipher-translate|sorted-digits)");
}

std::vector<std::string> synthetic_alphabet(const SyntheticTaskSpec& spec) {
  const bool digits = spec.task == SyntheticTask::kSortedDigits;
  const size_t limit = digits ? 10 : 26;
  if (spec.vocab_size < 2 || spec.vocab_size > limit) {
    throw std::invalid_argument("synthetic vocab size must lie in [2, " + std::to_string(limit) +
                                "], got " + std::to_string(spec.vocab_size));
  }
  std::vector<std::string> alphabet;
  for (size_t i = 0; i < spec.vocab_size; ++i) {
    alphabet.emplace_back(1, static_cast<char>((digits ? '0' : 'a') + i));
  }
  return alphabet;
}

std::vector<size_t> cipher_permutation(const SyntheticTaskSpec& spec) {
  std::vector<size_t> perm(spec.vocab_size);
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng(derive_seed(spec.seed, 0xC1F4E2ULL));
  for (size_t i = perm.size(); i > 1; --i) {
    std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
  }
  return perm;
}

SyntheticData generate_synthetic(const SyntheticTaskSpec& spec, size_t max_positions) {
  if (spec.min_len < 1 || spec.min_len > spec.max_len) {
    throw std::invalid_argument("synthetic length range [" + std::to_string(spec.min_len) + ", " +
                                std::to_string(spec.max_len) + "] is invalid");
  }
  if (max_positions > 0 && 2 * spec.max_len + 1 > max_positions) {
    throw std::invalid_argument("synthetic length " + std::to_string(spec.max_len) +
                                " needs " + std::to_string(2 * spec.max_len + 1) +
                                " positions, capacity is " + std::to_string(max_positions));
  }
  SyntheticData data;
  data.alphabet = synthetic_alphabet(spec);
  const auto perm = cipher_permutation(spec);

  auto make_pair = [&](const std::vector<size_t>& payload) {
    std::vector<size_t> target = payload;
    switch (spec.task) {
      case SyntheticTask::kCopy:
        break;
      case SyntheticTask::kReverse:
        std::reverse(target.begin(), target.end());
        break;
      case SyntheticTask::kCipher:
        for (auto& s : target) s = perm[s];
        break;
      case SyntheticTask::kSortedDigits:
        std::sort(target.begin(), target.end());
        break;
    }
    TextPair pair;
    for (size_t s : payload) pair.prompt += data.alphabet[s];
    for (size_t s : target) pair.response += data.alphabet[s];
    return pair;
  };

  std::unordered_set<std::string> seen;
  const size_t wanted = spec.train_size + spec.test_size;
  const size_t max_attempts = 100 * wanted + 1000;
  size_t index = 0;
  while (data.train.size() + data.test.size() < wanted) {
    if (index >= max_attempts) {
      throw std::invalid_argument("synthetic spec cannot supply " + std::to_string(wanted) +
                                  " distinct payloads");
    }
    Rng rng(derive_seed(spec.seed, index++));
    const size_t len = spec.min_len + rng.uniform_index(spec.max_len - spec.min_len + 1);
    std::vector<size_t> payload(len);
    for (auto& s : payload) s = rng.uniform_index(spec.vocab_size);
    TextPair pair = make_pair(payload);
    if (!seen.insert(pair.prompt).second) continue;
    (data.test.size() < spec.test_size ? data.test : data.train).push_back(std::move(pair));
  }
  return data;
}

std::vector<std::string> generate_grammar_corpus(uint64_t seed, size_t count) {
  static const std::vector<std::string> det_sg{"the", "a", "this"};
  static const std::vector<std::string> det_pl{"the", "some", "these"};
  static const std::vector<std::string> adj{"big", "small", "red", "old"};
  static const std::vector<std::string> noun_sg{"cat", "dog", "bird", "fox", "mouse"};
  static const std::vector<std::string> noun_pl{"cats", "dogs", "birds", "foxes", "mice"};
  static const std::vector<std::string> verb_sg{"sees", "chases", "likes", "hears"};
  static const std::vector<std::string> verb_pl{"see", "chase", "like", "hear"};

  std::vector<std::string> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, i));
    auto pick = [&](const std::vector<std::string>& words) -> const std::string& {
      return words[rng.uniform_index(words.size())];
    };
    std::string sentence;
    auto append = [&](const std::string& w) {
      if (!sentence.empty()) sentence += ' ';
      sentence += w;
    };
    auto noun_phrase = [&](bool plural) {
      append(pick(plural ? det_pl : det_sg));
      if (rng.bernoulli(0.5)) append(pick(adj));
      append(pick(plural ? noun_pl : noun_sg));
    };
    const bool subject_plural = rng.bernoulli(0.5);
    noun_phrase(subject_plural);
    append(pick(subject_plural ? verb_pl : verb_sg));
    noun_phrase(rng.bernoulli(0.5));
    out.push_back(std::move(sentence));
  }
  return out;
}

}  // namespace difflm
