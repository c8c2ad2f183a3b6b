#include "difflm/vocab.hpp"

#include <stdexcept>

namespace difflm {

Vocab::Vocab(std::vector<std::string> tokens, TokenId mask_id, TokenId pad_id,
             TokenId sep_id)
    : tokens_(std::move(tokens)), mask_id_(mask_id), pad_id_(pad_id), sep_id_(sep_id) {
  if (tokens_.empty()) throw std::invalid_argument("vocab is empty");
  for (TokenId id : {mask_id_, pad_id_, sep_id_}) {
    if (!contains(id)) {
      throw std::invalid_argument("special token id " + std::to_string(id) +
                                  " outside vocab of size " + std::to_string(tokens_.size()));
    }
  }
  if (mask_id_ == pad_id_ || mask_id_ == sep_id_ || pad_id_ == sep_id_) {
    throw std::invalid_argument("mask, pad and separator ids must be distinct");
  }
  index_.reserve(tokens_.size());
  for (size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw std::invalid_argument("duplicate token '" + tokens_[i] + "' in vocab");
    }
  }
}

Vocab Vocab::with_specials(const std::vector<std::string>& symbols) {
  std::vector<std::string> tokens{std::string(kMaskToken), std::string(kPadToken),
                                  std::string(kSepToken)};
  tokens.insert(tokens.end(), symbols.begin(), symbols.end());
  return Vocab(std::move(tokens), 0, 1, 2);
}

const std::string& Vocab::token(TokenId id) const {
  if (!contains(id)) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocab");
  }
  return tokens_[static_cast<size_t>(id)];
}

std::optional<TokenId> Vocab::find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

}  // namespace difflm
