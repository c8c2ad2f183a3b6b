#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "difflm/sequence.hpp"

namespace difflm {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Per-response-position log p(x0 | x_t) rows over the vocabulary. The mask
// column is always -inf.
class DenoiserOutput {
 public:
  DenoiserOutput() = default;
  DenoiserOutput(size_t rows, size_t vocab_size)
      : rows_(rows), vocab_size_(vocab_size), log_probs_(rows * vocab_size, kNegInf) {}

  size_t rows() const { return rows_; }
  size_t vocab_size() const { return vocab_size_; }
  std::span<double> row(size_t i) {
    return std::span<double>(log_probs_).subspan(i * vocab_size_, vocab_size_);
  }
  std::span<const double> row(size_t i) const {
    return std::span<const double>(log_probs_).subspan(i * vocab_size_, vocab_size_);
  }
  double at(size_t i, TokenId v) const { return log_probs_[i * vocab_size_ + static_cast<size_t>(v)]; }

  // Argmax token of row i; ties go to the lower token id.
  TokenId argmax(size_t i) const;

 private:
  size_t rows_ = 0;
  size_t vocab_size_ = 0;
  std::vector<double> log_probs_;
};

// Model of p(x0 | x_t). There is deliberately no timestep input: the
// corruption level is visible only through the mask pattern.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual DenoiserOutput score(const SequenceState& state) const = 0;
  virtual size_t max_positions() const = 0;
  virtual size_t vocab_size() const = 0;
};

// log-sum-exp of a row; -inf for an all -inf row.
double log_sum_exp(std::span<const double> row);

}  // namespace difflm
