#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "lmaug/tokenizer.hpp"

namespace lmaug {

// Tokenized sentences. Each sentence is <s> ... </s>.
struct Corpus {
  std::vector<std::vector<TokenId>> sentences;
  // Whitespace word count per sentence (used for word-level perplexity).
  std::vector<std::size_t> word_counts;
  std::string source;
  std::size_t token_count = 0;

  std::size_t size() const { return sentences.size(); }
  bool empty() const { return sentences.empty(); }
  std::size_t total_words() const;
};

// Blank lines are skipped. Throws ParseError with the line number on invalid
// UTF-8 and Error when the file is missing.
Corpus load_corpus(const std::string& path, const BpeModel& bpe);
Corpus make_corpus(const std::vector<std::string>& lines, const BpeModel& bpe,
                   const std::string& source = "memory");

// Word-level view of a text file: blank lines dropped, words split on
// whitespace.
std::vector<std::vector<std::string>> load_word_sentences(const std::string& path);
std::vector<std::vector<std::string>> to_word_sentences(const std::vector<std::string>& lines);

struct PrefixCorpus {
  // Prefix tokens, without the implicit <s>.
  std::vector<std::vector<TokenId>> prefixes;
  std::vector<int> k;  // prefix length per entry
  std::set<int> k_values;

  std::size_t size() const { return prefixes.size(); }
};

// For each k, samples up to max_per_k distinct k-token openings uniformly
// without replacement (seeded shuffle). Output order: ascending k, then
// shuffled order. Throws when no sentence has at least min(k_values) tokens.
PrefixCorpus extract_prefixes(const Corpus& corpus, const std::set<int>& k_values,
                              std::size_t max_per_k, std::uint64_t seed);

// One detokenized prefix per line, plus a sidecar "k<TAB>ids" per line so the
// exact token sequence survives the round trip.
void save_prefixes(const PrefixCorpus& prefixes, const BpeModel& bpe, const std::string& path);
PrefixCorpus load_prefixes(const std::string& path);

}  // namespace lmaug
