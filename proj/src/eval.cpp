#include "difflm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

#include "json.hpp"

namespace difflm {

namespace {

void check_pairs(std::span<const TokenSeq> hyp, std::span<const TokenSeq> ref, const char* what) {
  if (hyp.size() != ref.size()) {
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(hyp.size()) +
                                " hypotheses but " + std::to_string(ref.size()) + " references");
  }
  if (hyp.empty()) throw std::invalid_argument(std::string(what) + ": empty corpus");
}

std::map<TokenSeq, size_t> ngram_counts(const TokenSeq& seq, size_t n) {
  std::map<TokenSeq, size_t> counts;
  for (size_t i = 0; i + n <= seq.size(); ++i) ++counts[TokenSeq(seq.begin() + i, seq.begin() + i + n)];
  return counts;
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

double exact_match(std::span<const TokenSeq> hypotheses, std::span<const TokenSeq> references) {
  check_pairs(hypotheses, references, "exact_match");
  size_t hits = 0;
  for (size_t i = 0; i < hypotheses.size(); ++i) hits += hypotheses[i] == references[i];
  return static_cast<double>(hits) / static_cast<double>(hypotheses.size());
}

double token_accuracy(std::span<const TokenSeq> hypotheses, std::span<const TokenSeq> references) {
  check_pairs(hypotheses, references, "token_accuracy");
  size_t hits = 0;
  size_t total = 0;
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    const auto& h = hypotheses[i];
    const auto& r = references[i];
    for (size_t k = 0; k < std::min(h.size(), r.size()); ++k) hits += h[k] == r[k];
    total += std::max(h.size(), r.size());
  }
  return total == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(total);
}

double bleu(std::span<const TokenSeq> hypotheses, std::span<const TokenSeq> references,
            size_t max_n) {
  check_pairs(hypotheses, references, "bleu");
  if (max_n == 0) throw std::invalid_argument("bleu: max_n must be positive");
  std::vector<double> matched(max_n, 0.0);
  std::vector<double> possible(max_n, 0.0);
  double hyp_len = 0.0;
  double ref_len = 0.0;
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    hyp_len += static_cast<double>(hypotheses[i].size());
    ref_len += static_cast<double>(references[i].size());
    for (size_t n = 1; n <= max_n; ++n) {
      const auto ref_counts = ngram_counts(references[i], n);
      for (const auto& [gram, count] : ngram_counts(hypotheses[i], n)) {
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matched[n - 1] += static_cast<double>(std::min(count, it->second));
        possible[n - 1] += static_cast<double>(count);
      }
    }
  }
  double log_sum = 0.0;
  for (size_t n = 0; n < max_n; ++n) {
    if (matched[n] == 0.0) return 0.0;
    log_sum += std::log(matched[n] / possible[n]);
  }
  const double brevity = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return 100.0 * brevity * std::exp(log_sum / static_cast<double>(max_n));
}

double tv_distance(std::span<const double> counts, std::span<const double> probs) {
  if (counts.size() != probs.size()) {
    throw std::invalid_argument("tv_distance: support sizes " + std::to_string(counts.size()) +
                                " and " + std::to_string(probs.size()) + " differ");
  }
  double total = 0.0;
  for (double c : counts) {
    if (c < 0.0) throw std::invalid_argument("tv_distance: negative count");
    total += c;
  }
  if (total <= 0.0) throw std::invalid_argument("tv_distance: no observations");
  double tv = 0.0;
  for (size_t i = 0; i < counts.size(); ++i) tv += std::abs(counts[i] / total - probs[i]);
  return 0.5 * tv;
}

std::string EvalReport::to_line() const {
  std::string line;
  auto append = [&](const std::string& k, const std::string& v) {
    if (!line.empty()) line += ' ';
    line += k + '=' + v;
  };
  for (const auto& [k, v] : metrics) append(k, format_value(v));
  append("samples", std::to_string(samples));
  for (const auto& [k, v] : config) append(k, v);
  return line;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  for (const auto& [k, v] : metrics) j["metrics"][k] = v;
  j["samples"] = samples;
  j["config"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config) j["config"][k] = v;
  return j.dump(2);
}

}  // namespace difflm
