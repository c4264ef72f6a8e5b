#include <algorithm>
#include <cmath>

#include "lmaug/error.hpp"
#include "lmaug/ngram.hpp"

namespace lmaug::ngram {

NGramModel::NGramModel(int order, Vocab vocab) : order_(order), vocab_(std::move(vocab)) {
  if (order < 1 || order > kMaxOrder)
    throw Error("n-gram order must be in 1.." + std::to_string(kMaxOrder) + ", got " +
                std::to_string(order));
  grams_.resize(static_cast<std::size_t>(order));
}

const Entry* NGramModel::find(std::span<const WordId> gram) const {
  if (gram.empty() || gram.size() > static_cast<std::size_t>(order_)) return nullptr;
  const auto& m = grams_[gram.size() - 1];
  auto it = m.find(pack(gram));
  return it == m.end() ? nullptr : &it->second;
}

double NGramModel::log10_prob(WordId word, std::span<const WordId> history) const {
  std::size_t n = std::min(history.size(), static_cast<std::size_t>(order_ - 1));
  auto h = history.last(n);
  double backoff = 0.0;
  for (std::size_t len = n;; --len) {
    auto ctx = h.last(len);
    GramKey key = (pack(ctx) << 16) | word;
    const auto& m = grams_[len];
    if (auto it = m.find(key); it != m.end()) return backoff + it->second.log_prob;
    if (len == 0) return kMissing;
    if (const Entry* e = find(ctx)) backoff += e->log_backoff;
  }
}

double NGramModel::log10_prob(const std::string& word,
                              const std::vector<std::string>& history) const {
  std::vector<WordId> h;
  h.reserve(history.size());
  for (const auto& w : history) h.push_back(vocab_.find(w));
  return log10_prob(vocab_.find(word), h);
}

double NGramModel::score(const std::vector<std::string>& sentence,
                         std::vector<double>* per_token) const {
  std::vector<WordId> history{Vocab::kStart};
  history.reserve(sentence.size() + 2);
  if (per_token) per_token->clear();
  double total = 0.0;
  auto step = [&](WordId id) {
    double lp = log10_prob(id, history);
    total += lp;
    if (per_token) per_token->push_back(lp);
    history.push_back(id);
  };
  for (const auto& w : sentence) step(vocab_.find(w));
  step(Vocab::kEnd);
  return total;
}

std::vector<std::vector<WordId>> NGramModel::contexts() const {
  std::vector<std::vector<WordId>> out{{}};
  for (int k = 1; k < order_; ++k)
    for (const auto& kv : grams_[static_cast<std::size_t>(k - 1)]) out.push_back(unpack(kv.first, k));
  return out;
}

double perplexity(const NGramModel& model, const Sentences& sentences) {
  if (sentences.empty()) throw Error("perplexity of an empty corpus");
  double total = 0.0;
  std::size_t events = 0;
  for (const auto& s : sentences) {
    total += model.score(s);
    events += s.size() + 1;
  }
  return std::pow(10.0, -total / static_cast<double>(events));
}

double max_normalization_error(const NGramModel& model) {
  double worst = 0.0;
  for (const auto& ctx : model.contexts()) {
    double sum = 0.0;
    for (WordId w = 0; w < model.vocab().size(); ++w) {
      if (w == Vocab::kStart) continue;
      sum += std::pow(10.0, model.log10_prob(w, ctx));
    }
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return worst;
}

}  // namespace lmaug::ngram
