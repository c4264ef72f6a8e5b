#include <algorithm>
#include <fstream>

#include "lmaug/error.hpp"
#include "lmaug/ngram.hpp"

namespace lmaug::ngram {

GramKey pack(std::span<const WordId> words) {
  if (words.size() > static_cast<std::size_t>(kMaxOrder)) throw Error("n-gram longer than max order");
  GramKey key = 0;
  for (WordId w : words) key = (key << 16) | (w & 0xFFFF);
  return key;
}

std::vector<WordId> unpack(GramKey key, int order) {
  std::vector<WordId> out(static_cast<std::size_t>(order));
  for (int i = order - 1; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = static_cast<WordId>(key & 0xFFFF);
    key >>= 16;
  }
  return out;
}

Vocab::Vocab() {
  add(kStartWord);
  add(kEndWord);
  add(kUnkWord);
}

WordId Vocab::add(const std::string& word) {
  auto it = ids_.find(word);
  if (it != ids_.end()) return it->second;
  if (words_.size() >= kMaxVocab) throw Error("n-gram vocabulary exceeds 65535 words");
  auto id = static_cast<WordId>(words_.size());
  words_.push_back(word);
  ids_.emplace(word, id);
  return id;
}

WordId Vocab::find(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? kUnk : it->second;
}

std::uint64_t CountTable::count(std::span<const WordId> gram) const {
  if (gram.empty() || gram.size() > static_cast<std::size_t>(order)) return 0;
  const auto& m = counts[gram.size() - 1];
  auto it = m.find(pack(gram));
  return it == m.end() ? 0 : it->second;
}

std::uint64_t CountTable::count(const std::vector<std::string>& gram) const {
  std::vector<WordId> ids;
  for (const auto& w : gram) {
    if (!vocab.contains(w)) return 0;
    ids.push_back(vocab.find(w));
  }
  return count(ids);
}

CountTable count_ngrams(const Sentences& sentences, int order,
                        const std::vector<std::string>& vocabulary) {
  if (order < 1 || order > kMaxOrder)
    throw Error("n-gram order must be in 1.." + std::to_string(kMaxOrder) + ", got " +
                std::to_string(order));
  if (sentences.empty()) throw Error("cannot count n-grams of an empty corpus");
  CountTable t;
  t.order = order;
  t.counts.resize(static_cast<std::size_t>(order));
  for (const auto& w : vocabulary) t.vocab.add(w);

  std::vector<WordId> ids;
  for (const auto& s : sentences) {
    ids.clear();
    ids.push_back(Vocab::kStart);
    for (const auto& w : s) ids.push_back(t.vocab.add(w));
    ids.push_back(Vocab::kEnd);
    for (std::size_t i = 1; i < ids.size(); ++i) {
      GramKey key = 0;
      for (int k = 1; k <= order && static_cast<std::size_t>(k) <= i + 1; ++k) {
        GramKey w = ids[i + 1 - static_cast<std::size_t>(k)];
        key |= w << (16 * (k - 1));
        ++t.counts[static_cast<std::size_t>(k - 1)][key];
      }
    }
  }
  return t;
}

CountTable prune_counts(const CountTable& counts, const std::vector<std::uint64_t>& cutoffs) {
  if (cutoffs.size() != static_cast<std::size_t>(counts.order))
    throw Error("pruning needs one cutoff per order (" + std::to_string(counts.order) + "), got " +
                std::to_string(cutoffs.size()));
  CountTable out;
  out.order = counts.order;
  out.vocab = counts.vocab;
  out.counts.resize(counts.counts.size());
  for (int k = 1; k <= counts.order; ++k) {
    auto& dst = out.counts[static_cast<std::size_t>(k - 1)];
    const auto* lower = k > 1 ? &out.counts[static_cast<std::size_t>(k - 2)] : nullptr;
    for (const auto& [key, c] : counts.counts[static_cast<std::size_t>(k - 1)]) {
      bool special = k == 1 && key <= Vocab::kUnk;
      if (!special && c < cutoffs[static_cast<std::size_t>(k - 1)]) continue;
      if (lower) {
        GramKey prefix = key_prefix(key);
        // A bigram's prefix may be <s>, which is never a counted unigram.
        bool prefix_ok = (k == 2 && prefix == Vocab::kStart) || lower->count(prefix);
        if (!prefix_ok || !lower->count(key_suffix(key, k))) continue;
      }
      dst.emplace(key, c);
    }
  }
  return out;
}

void write_counts(const CountTable& counts, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  for (int k = 1; k <= counts.order; ++k) {
    std::vector<std::pair<std::vector<std::string>, std::uint64_t>> rows;
    for (const auto& [key, c] : counts.counts[static_cast<std::size_t>(k - 1)]) {
      std::vector<std::string> words;
      for (WordId id : unpack(key, k)) words.push_back(counts.vocab.word(id));
      rows.emplace_back(std::move(words), c);
    }
    std::sort(rows.begin(), rows.end());
    for (const auto& [words, c] : rows) {
      for (std::size_t i = 0; i < words.size(); ++i) out << (i ? " " : "") << words[i];
      out << '\t' << c << '\n';
    }
  }
}

}  // namespace lmaug::ngram
