#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "difflm/vocab.hpp"

namespace difflm {

using TokenSeq = std::vector<TokenId>;

// Fraction of pairs that are identical.
double exact_match(std::span<const TokenSeq> hypotheses, std::span<const TokenSeq> references);

// Matching tokens at equal positions over the total of the longer side of
// every pair, so length errors count against the hypothesis.
double token_accuracy(std::span<const TokenSeq> hypotheses, std::span<const TokenSeq> references);

// Plain corpus BLEU in [0, 100]: clipped n-gram counts pooled over the corpus,
// geometric mean of precisions 1..max_n (any zero gives 0), brevity penalty.
double bleu(std::span<const TokenSeq> hypotheses, std::span<const TokenSeq> references,
            size_t max_n = 4);

// 1/2 sum |counts/total - p| over a shared support.
double tv_distance(std::span<const double> counts, std::span<const double> probs);

struct EvalReport {
  std::vector<std::pair<std::string, double>> metrics;
  size_t samples = 0;
  std::vector<std::pair<std::string, std::string>> config;  // echoed settings

  // One line: key=value for every metric, the sample count and the config.
  std::string to_line() const;
  // Machine-readable JSON block with the same content.
  std::string to_json() const;
};

}  // namespace difflm
