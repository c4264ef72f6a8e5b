#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace lmaug {

using TokenId = std::int32_t;

struct SpecialIds {
  TokenId pad = 0;
  TokenId start = 1;
  TokenId end = 2;
  TokenId unk = 3;
};

// Byte-pair-encoding subword model.
//
// Segmentation is word-internal: whitespace separates words and merges never
// cross a word boundary. Every word except the last one in a line carries a
// trailing boundary marker (U+2581) on its final symbol, which is how decode
// restores single spaces. Ids 0..3 are reserved for <pad>, <s>, </s>, <unk>;
// base symbols follow in byte order, then merged symbols in learned order.
class BpeModel {
 public:
  using Merge = std::pair<std::string, std::string>;

  static constexpr std::string_view kBoundary = "\xE2\x96\x81";
  static constexpr std::string_view kPad = "<pad>";
  static constexpr std::string_view kStart = "<s>";
  static constexpr std::string_view kEnd = "</s>";
  static constexpr std::string_view kUnk = "<unk>";

  BpeModel() = default;

  // Learns up to num_merges merges; stops early once no pair occurs at least
  // twice. Ties on pair frequency go to the lexicographically smaller pair.
  // Throws Error on an empty corpus and ParseError (with the 1-based line
  // number) on invalid UTF-8.
  static BpeModel learn(const std::vector<std::string>& lines, int num_merges);

  static BpeModel load(const std::string& merges_path, const std::string& vocab_path);
  void save(const std::string& merges_path, const std::string& vocab_path) const;

  // <s> + subword ids + </s>. Whitespace runs collapse to one boundary.
  std::vector<TokenId> encode(std::string_view text) const;

  // Subword ids only, no <s>/</s>. A trailing space marks the last word as
  // non-final, so decode(encode_partial("a b ")) == "a b ".
  std::vector<TokenId> encode_partial(std::string_view text) const;

  // Throws Error naming the offending position for ids outside the vocab.
  // <pad>, <s> and </s> are dropped; <unk> is rendered as "<unk>".
  std::string decode(std::span<const TokenId> tokens) const;

  const std::vector<Merge>& merges() const { return merges_; }
  const std::vector<std::string>& symbols() const { return symbols_; }
  std::size_t vocab_size() const { return symbols_.size(); }
  const SpecialIds& specials() const { return specials_; }

  // -1 when absent.
  TokenId id(std::string_view symbol) const;
  const std::string& symbol(TokenId id) const;

 private:
  void build_index();
  void add_symbol(const std::string& s);
  void encode_word(const std::vector<std::string>& chars, bool final_word,
                   std::vector<TokenId>& out) const;
  std::vector<TokenId> encode_impl(std::string_view text, bool partial) const;

  std::vector<Merge> merges_;
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> ids_;
  std::unordered_map<std::string, std::size_t> merge_rank_;
  SpecialIds specials_;
};

}  // namespace lmaug
