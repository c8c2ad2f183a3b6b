#include "difflm/oracle.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace difflm {

double DataDistribution::entropy() const {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

OracleDenoiser::OracleDenoiser(DataDistribution data, size_t vocab_size, TokenId mask_id,
                               size_t max_positions)
    : data_(std::move(data)),
      vocab_size_(vocab_size),
      mask_id_(mask_id),
      max_positions_(max_positions) {
  if (data_.support.empty()) throw std::invalid_argument("oracle: empty support");
  if (data_.support.size() > kMaxSupport) {
    throw std::invalid_argument("oracle: support of size " + std::to_string(data_.support.size()) +
                                " is not enumerable (limit " + std::to_string(kMaxSupport) + ")");
  }
  if (data_.support.size() != data_.probs.size()) {
    throw std::invalid_argument("oracle: support and probability sizes differ");
  }
  double total = 0.0;
  const size_t len = data_.length();
  for (size_t s = 0; s < data_.support.size(); ++s) {
    if (data_.support[s].size() != len) {
      throw std::invalid_argument("oracle: support sequences must share one length");
    }
    for (TokenId token : data_.support[s]) {
      if (token == mask_id_ || token < 0 || static_cast<size_t>(token) >= vocab_size_) {
        throw std::invalid_argument("oracle: support sequence " + std::to_string(s) +
                                    " has invalid token " + std::to_string(token));
      }
    }
    if (!(data_.probs[s] >= 0.0)) throw std::invalid_argument("oracle: negative probability");
    total += data_.probs[s];
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("oracle: probabilities sum to " + std::to_string(total));
  }
}

DenoiserOutput OracleDenoiser::score(const SequenceState& state) const {
  const auto response = state.response();
  if (response.size() != data_.length()) {
    throw std::invalid_argument("oracle: response length " + std::to_string(response.size()) +
                                " differs from data length " + std::to_string(data_.length()));
  }
  const size_t n = response.size();
  std::vector<double> mass(n * vocab_size_, 0.0);
  double evidence = 0.0;
  for (size_t s = 0; s < data_.support.size(); ++s) {
    const auto& seq = data_.support[s];
    bool consistent = true;
    for (size_t i = 0; i < n && consistent; ++i) {
      consistent = response[i] == mask_id_ || response[i] == seq[i];
    }
    if (!consistent || data_.probs[s] == 0.0) continue;
    evidence += data_.probs[s];
    for (size_t i = 0; i < n; ++i) mass[i * vocab_size_ + static_cast<size_t>(seq[i])] += data_.probs[s];
  }
  if (evidence == 0.0) {
    throw std::invalid_argument("oracle: state has zero probability under the data distribution");
  }
  DenoiserOutput out(n, vocab_size_);
  for (size_t i = 0; i < n; ++i) {
    auto row = out.row(i);
    for (size_t v = 0; v < vocab_size_; ++v) {
      const double m = mass[i * vocab_size_ + v];
      row[v] = m > 0.0 ? std::log(m / evidence) : kNegInf;
    }
    row[static_cast<size_t>(mask_id_)] = kNegInf;
  }
  return out;
}

}  // namespace difflm
