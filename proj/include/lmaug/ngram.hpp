#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace lmaug::ngram {

using WordId = std::uint32_t;
using Sentences = std::vector<std::vector<std::string>>;

// n-grams are packed into 64-bit keys, 16 bits per word, oldest word in the
// most significant position. That caps the order at 4 and the vocabulary at
// 65535 words.
constexpr int kMaxOrder = 4;
constexpr std::size_t kMaxVocab = 0xFFFF;
using GramKey = std::uint64_t;

GramKey pack(std::span<const WordId> words);
std::vector<WordId> unpack(GramKey key, int order);
inline GramKey key_prefix(GramKey key) { return key >> 16; }
inline GramKey key_suffix(GramKey key, int order) {
  return order <= 1 ? 0 : key & ((GramKey{1} << (16 * (order - 1))) - 1);
}
inline WordId key_last(GramKey key) { return static_cast<WordId>(key & 0xFFFF); }

class Vocab {
 public:
  static constexpr WordId kStart = 0;
  static constexpr WordId kEnd = 1;
  static constexpr WordId kUnk = 2;
  static constexpr const char* kStartWord = "<s>";
  static constexpr const char* kEndWord = "</s>";
  static constexpr const char* kUnkWord = "<unk>";

  Vocab();

  WordId add(const std::string& word);
  // kUnk when absent.
  WordId find(const std::string& word) const;
  bool contains(const std::string& word) const { return ids_.count(word) > 0; }
  const std::string& word(WordId id) const { return words_.at(id); }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, WordId> ids_;
};

// Raw k-gram counts for k = 1..order. Each sentence is read as
// <s> w1 .. wn </s>; only grams ending on a predicted word (w1..wn, </s>)
// are counted, so <s> never appears as a predicted unigram.
struct CountTable {
  int order = 0;
  Vocab vocab;
  std::vector<std::unordered_map<GramKey, std::uint64_t>> counts;  // [k-1]

  std::uint64_t count(std::span<const WordId> gram) const;
  std::uint64_t count(const std::vector<std::string>& gram) const;
  std::size_t size(int k) const { return counts.at(static_cast<std::size_t>(k - 1)).size(); }
};

// `vocabulary` pre-registers words (closed-vocabulary estimation gives them
// smoothed mass even when unseen). Throws on an empty corpus, an order
// outside 1..kMaxOrder, or a vocabulary over kMaxVocab.
CountTable count_ngrams(const Sentences& sentences, int order,
                        const std::vector<std::string>& vocabulary = {});

// Removes k-grams with count < cutoffs[k-1] (unigrams of <s>, </s>, <unk> are
// kept), then drops grams whose prefix or suffix no longer exists so the
// result stays a valid backoff structure.
CountTable prune_counts(const CountTable& counts, const std::vector<std::uint64_t>& cutoffs);

// Debug dump: "w1 .. wk<TAB>count", ordered by k then gram.
void write_counts(const CountTable& counts, const std::string& path);

struct Discounts {
  std::array<double, 3> d{0.5, 0.5, 0.5};  // D1, D2, D3+
  bool fallback = false;                   // absolute discounting with D = 0.5
};

// Kneser-Ney adjusted counts for order k: raw counts at the highest order and
// for grams starting with <s>; otherwise the number of distinct left
// extensions present at order k+1.
std::unordered_map<GramKey, std::uint64_t> adjusted_counts(const CountTable& counts, int k);

// Modified-KN discounts from count-of-counts n1..n4 of a count map. Falls
// back to D = 0.5 when n1, n2 or n3 is zero or an estimate leaves (0, i].
Discounts estimate_discounts(const std::unordered_map<GramKey, std::uint64_t>& counts);

struct Entry {
  double log_prob = 0.0;     // log10 P(w | context)
  double log_backoff = 0.0;  // log10 backoff weight when this gram is a context
};

// Backoff n-gram model (ARPA semantics, log base 10).
class NGramModel {
 public:
  static constexpr double kUnkFloor = 1e-7;
  static constexpr double kMissing = -99.0;

  NGramModel() = default;
  NGramModel(int order, Vocab vocab);

  int order() const { return order_; }
  const Vocab& vocab() const { return vocab_; }
  Vocab& vocab() { return vocab_; }

  const std::unordered_map<GramKey, Entry>& grams(int k) const {
    return grams_.at(static_cast<std::size_t>(k - 1));
  }
  std::unordered_map<GramKey, Entry>& grams(int k) { return grams_.at(static_cast<std::size_t>(k - 1)); }

  const Entry* find(std::span<const WordId> gram) const;

  // log10 P(word | history); only the last order-1 history words matter.
  double log10_prob(WordId word, std::span<const WordId> history) const;
  double log10_prob(const std::string& word, const std::vector<std::string>& history) const;

  // Sentence log10 probability including </s>. When per_token is non-null it
  // receives one value per predicted event.
  double score(const std::vector<std::string>& sentence,
               std::vector<double>* per_token = nullptr) const;

  // Contexts usable for normalization checks: the empty context and every
  // stored gram below the highest order.
  std::vector<std::vector<WordId>> contexts() const;

 private:
  int order_ = 0;
  Vocab vocab_;
  std::vector<std::unordered_map<GramKey, Entry>> grams_;
};

// Interpolated modified Kneser-Ney. Vocabulary for the uniform base
// distribution is every counted or pre-registered word except <s>; <unk> is
// floored at NGramModel::kUnkFloor.
NGramModel estimate_kneser_ney(const CountTable& counts);

// 10^(-total log10 prob / events), events = words + one </s> per sentence.
double perplexity(const NGramModel& model, const Sentences& sentences);

// max over contexts of |sum_w P(w | context) - 1| with w ranging over the
// vocabulary minus <s>. Exhaustive: use on small vocabularies only.
double max_normalization_error(const NGramModel& model);

void write_arpa(const NGramModel& model, const std::string& path);
std::string to_arpa(const NGramModel& model);
// Throws ParseError (with line numbers) on malformed input.
NGramModel read_arpa(const std::string& path);
NGramModel parse_arpa(const std::string& text, const std::string& source = "arpa");

}  // namespace lmaug::ngram
