#include <cmath>

#include "lmaug/error.hpp"
#include "lmaug/ngram.hpp"

namespace lmaug::ngram {

namespace {

bool starts_with_bos(GramKey key, int k) { return (key >> (16 * (k - 1))) == Vocab::kStart; }

struct ContextStats {
  double denom = 0.0;
  std::uint64_t n1 = 0, n2 = 0, n3 = 0;

  double gamma(const Discounts& d) const {
    if (denom <= 0.0) return 1.0;
    return (d.d[0] * static_cast<double>(n1) + d.d[1] * static_cast<double>(n2) +
            d.d[2] * static_cast<double>(n3)) /
           denom;
  }
};

double discount(const Discounts& d, std::uint64_t c) {
  if (c == 0) return 0.0;
  return d.d[std::min<std::uint64_t>(c, 3) - 1];
}

std::unordered_map<GramKey, ContextStats> context_stats(
    const std::unordered_map<GramKey, std::uint64_t>& adjusted) {
  std::unordered_map<GramKey, ContextStats> out;
  for (const auto& [key, a] : adjusted) {
    auto& s = out[key_prefix(key)];
    s.denom += static_cast<double>(a);
    if (a == 1) ++s.n1;
    else if (a == 2) ++s.n2;
    else if (a >= 3) ++s.n3;
  }
  return out;
}

}  // namespace

std::unordered_map<GramKey, std::uint64_t> adjusted_counts(const CountTable& counts, int k) {
  if (k < 1 || k > counts.order) throw Error("adjusted_counts: order out of range");
  const auto& raw = counts.counts[static_cast<std::size_t>(k - 1)];
  if (k == counts.order) return raw;
  std::unordered_map<GramKey, std::uint64_t> out;
  out.reserve(raw.size());
  for (const auto& [key, c] : raw) out.emplace(key, starts_with_bos(key, k) ? c : 0);
  for (const auto& kv : counts.counts[static_cast<std::size_t>(k)]) {
    auto it = out.find(key_suffix(kv.first, k + 1));
    if (it != out.end() && !starts_with_bos(it->first, k)) ++it->second;
  }
  return out;
}

Discounts estimate_discounts(const std::unordered_map<GramKey, std::uint64_t>& counts) {
  std::array<double, 4> n{};
  for (const auto& kv : counts)
    if (kv.second >= 1 && kv.second <= 4) n[kv.second - 1] += 1.0;
  Discounts d;
  if (n[0] == 0 || n[1] == 0 || n[2] == 0) {
    d.fallback = true;
    return d;
  }
  double y = n[0] / (n[0] + 2.0 * n[1]);
  std::array<double, 3> est{1.0 - 2.0 * y * n[1] / n[0], 2.0 - 3.0 * y * n[2] / n[1],
                            3.0 - 4.0 * y * n[3] / n[2]};
  for (int i = 0; i < 3; ++i) {
    if (!(est[static_cast<std::size_t>(i)] > 0.0) || est[static_cast<std::size_t>(i)] > i + 1) {
      d.fallback = true;
      return d;
    }
  }
  d.d = est;
  return d;
}

NGramModel estimate_kneser_ney(const CountTable& counts) {
  NGramModel model(counts.order, counts.vocab);
  const std::size_t vocab_size = counts.vocab.size() - 1;  // excludes <s>

  // Unigrams: discounted continuation counts plus a uniform share.
  {
    auto adjusted = adjusted_counts(counts, 1);
    Discounts d = estimate_discounts(adjusted);
    auto stats = context_stats(adjusted);
    ContextStats root = stats.count(0) ? stats[0] : ContextStats{};
    double uniform = root.gamma(d) / static_cast<double>(vocab_size);
    std::vector<double> p(counts.vocab.size(), uniform);
    p[Vocab::kStart] = 0.0;
    if (root.denom > 0.0)
      for (const auto& [key, a] : adjusted)
        p[key] += (static_cast<double>(a) - discount(d, a)) / root.denom;
    p[Vocab::kUnk] = std::max(p[Vocab::kUnk], NGramModel::kUnkFloor);
    double total = 0.0;
    for (double v : p) total += v;
    auto& uni = model.grams(1);
    for (WordId w = 0; w < p.size(); ++w)
      uni[w].log_prob = w == Vocab::kStart ? NGramModel::kMissing : std::log10(p[w] / total);
  }

  for (int k = 2; k <= counts.order; ++k) {
    auto adjusted = adjusted_counts(counts, k);
    Discounts d = estimate_discounts(adjusted);
    auto stats = context_stats(adjusted);
    auto& lower = model.grams(k - 1);
    for (const auto& [ctx, s] : stats) {
      auto it = lower.find(ctx);
      if (it == lower.end()) throw Error("n-gram counts are missing a context at order " + std::to_string(k - 1));
      it->second.log_backoff = std::log10(s.gamma(d));
    }
    auto& level = model.grams(k);
    level.reserve(adjusted.size());
    for (const auto& [key, a] : adjusted) {
      const ContextStats& s = stats.at(key_prefix(key));
      auto ctx = unpack(key_suffix(key, k), k - 1);
      double lower_p = std::pow(10.0, model.log10_prob(key_last(key), std::span<const WordId>(ctx).first(k - 2)));
      double p = s.gamma(d) * lower_p;
      if (s.denom > 0.0) p += (static_cast<double>(a) - discount(d, a)) / s.denom;
      level[key].log_prob = std::log10(p);
    }
  }
  return model;
}

}  // namespace lmaug::ngram
