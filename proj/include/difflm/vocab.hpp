#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace difflm {

using TokenId = int32_t;

inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kSepToken = "[SEP]";

// Closed token inventory with distinguished [MASK], [PAD] and separator ids.
class Vocab {
 public:
  Vocab(std::vector<std::string> tokens, TokenId mask_id, TokenId pad_id, TokenId sep_id);

  // Specials at ids 0, 1, 2 followed by `symbols` in the given order.
  static Vocab with_specials(const std::vector<std::string>& symbols);

  size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view symbol) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenId mask_id() const { return mask_id_; }
  TokenId pad_id() const { return pad_id_; }
  TokenId sep_id() const { return sep_id_; }
  std::array<TokenId, 3> special_ids() const { return {mask_id_, pad_id_, sep_id_}; }
  bool is_special(TokenId id) const {
    return id == mask_id_ || id == pad_id_ || id == sep_id_;
  }
  bool contains(TokenId id) const {
    return id >= 0 && static_cast<size_t>(id) < tokens_.size();
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId mask_id_;
  TokenId pad_id_;
  TokenId sep_id_;
};

}  // namespace difflm
