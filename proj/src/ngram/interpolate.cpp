#include "lmaug/interpolate.hpp"

#include <algorithm>
#include <cmath>

#include "lmaug/error.hpp"

namespace lmaug::ngram {

void InterpolatedModel::validate() const {
  if (components.empty()) throw Error("interpolated model has no components");
  if (weights.size() != components.size())
    throw Error("interpolated model has " + std::to_string(components.size()) + " components but " +
                std::to_string(weights.size()) + " weights");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw Error("interpolation weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error("interpolation weights must sum to 1");
}

int InterpolatedModel::order() const {
  int n = 0;
  for (const auto* c : components) n = std::max(n, c->order());
  return n;
}

double InterpolatedModel::prob(const std::string& word, const std::vector<std::string>& history) const {
  double p = 0.0;
  for (std::size_t i = 0; i < components.size(); ++i)
    p += weights[i] * std::pow(10.0, components[i]->log10_prob(word, history));
  return p;
}

double InterpolatedModel::score(const std::vector<std::string>& sentence) const {
  std::vector<std::string> history{Vocab::kStartWord};
  double total = 0.0;
  for (const auto& w : sentence) {
    total += std::log10(prob(w, history));
    history.push_back(w);
  }
  return total + std::log10(prob(Vocab::kEndWord, history));
}

double interpolate_prob(const InterpolatedModel& model, const std::string& word,
                        const std::vector<std::string>& history) {
  return model.prob(word, history);
}

double perplexity(const InterpolatedModel& model, const Sentences& sentences) {
  if (sentences.empty()) throw Error("perplexity of an empty corpus");
  double total = 0.0;
  std::size_t events = 0;
  for (const auto& s : sentences) {
    total += model.score(s);
    events += s.size() + 1;
  }
  return std::pow(10.0, -total / static_cast<double>(events));
}

EmResult optimize_weights_em(const std::vector<const NGramModel*>& components, const Sentences& dev,
                             double tol, int max_iters) {
  if (components.empty()) throw Error("EM needs at least one component");
  if (dev.empty()) throw Error("EM needs a non-empty dev corpus");
  const std::size_t m = components.size();

  // Event-major probability table, one row per predicted dev event.
  std::vector<double> probs;
  std::vector<double> per_token;
  for (std::size_t s = 0; s < dev.size(); ++s) {
    std::size_t base = probs.size();
    probs.resize(base + (dev[s].size() + 1) * m);
    for (std::size_t i = 0; i < m; ++i) {
      components[i]->score(dev[s], &per_token);
      for (std::size_t e = 0; e < per_token.size(); ++e)
        probs[base + e * m + i] = per_token[e] <= NGramModel::kMissing ? 0.0 : std::pow(10.0, per_token[e]);
    }
    for (std::size_t e = 0; e <= dev[s].size(); ++e) {
      double any = 0.0;
      for (std::size_t i = 0; i < m; ++i) any += probs[base + e * m + i];
      if (any == 0.0) {
        std::string word = e < dev[s].size() ? dev[s][e] : Vocab::kEndWord;
        throw Error("every component assigns zero probability to '" + word + "' (dev sentence " +
                    std::to_string(s + 1) + ", position " + std::to_string(e + 1) + ")");
      }
    }
  }
  const std::size_t events = probs.size() / m;

  EmResult r;
  r.weights.assign(m, 1.0 / static_cast<double>(m));
  std::vector<double> acc(m);
  auto log_likelihood = [&](const std::vector<double>& w) {
    double ll = 0.0;
    for (std::size_t e = 0; e < events; ++e) {
      double p = 0.0;
      for (std::size_t i = 0; i < m; ++i) p += w[i] * probs[e * m + i];
      ll += std::log(p);
    }
    return ll / static_cast<double>(events);
  };
  r.log_likelihood.push_back(log_likelihood(r.weights));

  for (int it = 1; it <= max_iters; ++it) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t e = 0; e < events; ++e) {
      double p = 0.0;
      for (std::size_t i = 0; i < m; ++i) p += r.weights[i] * probs[e * m + i];
      for (std::size_t i = 0; i < m; ++i) acc[i] += r.weights[i] * probs[e * m + i] / p;
    }
    double total = 0.0;
    for (double a : acc) total += a;
    for (std::size_t i = 0; i < m; ++i) r.weights[i] = acc[i] / total;
    r.log_likelihood.push_back(log_likelihood(r.weights));
    r.iterations = it;
    if (r.log_likelihood[static_cast<std::size_t>(it)] - r.log_likelihood[static_cast<std::size_t>(it - 1)] < tol) {
      r.converged = true;
      break;
    }
  }

  // EM approaches an optimum on the simplex boundary only geometrically, so a
  // single component can still beat the stopped iterate.
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> w(m, 0.0);
    w[i] = 1.0;
    const double ll = log_likelihood(w);
    if (ll > r.log_likelihood.back()) {
      r.weights = w;
      r.log_likelihood.push_back(ll);
    }
  }
  return r;
}

NGramModel flatten(const InterpolatedModel& model) {
  model.validate();
  const int order = model.order();
  Vocab vocab;
  for (const auto* c : model.components)
    for (const auto& w : c->vocab().words()) vocab.add(w);
  NGramModel flat(order, vocab);

  // Union id -> component id, <unk> when the component lacks the word.
  std::vector<std::vector<WordId>> to_comp(model.components.size());
  for (std::size_t i = 0; i < model.components.size(); ++i)
    for (const auto& w : vocab.words()) to_comp[i].push_back(model.components[i]->vocab().find(w));

  auto mixture = [&](std::span<const WordId> gram) {
    double p = 0.0;
    std::vector<WordId> local(gram.size());
    for (std::size_t i = 0; i < model.components.size(); ++i) {
      for (std::size_t j = 0; j < gram.size(); ++j) local[j] = to_comp[i][gram[j]];
      std::span<const WordId> g(local);
      p += model.weights[i] * std::pow(10.0, model.components[i]->log10_prob(g.back(), g.first(g.size() - 1)));
    }
    return p;
  };

  {
    std::vector<double> p(vocab.size(), 0.0);
    double total = 0.0;
    for (WordId w = 0; w < vocab.size(); ++w) {
      if (w == Vocab::kStart) continue;
      p[w] = mixture(std::span<const WordId>(&w, 1));
      total += p[w];
    }
    auto& uni = flat.grams(1);
    for (WordId w = 0; w < vocab.size(); ++w)
      uni[w].log_prob = w == Vocab::kStart ? NGramModel::kMissing : std::log10(p[w] / total);
  }

  for (int k = 2; k <= order; ++k) {
    std::unordered_map<GramKey, Entry> level;
    for (std::size_t i = 0; i < model.components.size(); ++i) {
      const auto* c = model.components[i];
      if (c->order() < k) continue;
      for (const auto& kv : c->grams(k)) {
        std::vector<WordId> ids;
        for (WordId id : unpack(kv.first, k)) ids.push_back(vocab.find(c->vocab().word(id)));
        level.emplace(pack(ids), Entry{});
      }
    }
    // Contexts must exist one order down for the backoff weights to live on.
    auto& lower = flat.grams(k - 1);
    for (const auto& kv : level) {
      if (!lower.count(key_prefix(kv.first)))
        throw Error("flatten: component n-grams are missing a context at order " + std::to_string(k - 1));
    }

    struct Mass {
      double high = 0.0, low = 0.0;
    };
    std::unordered_map<GramKey, Mass> mass;
    for (auto& [key, e] : level) {
      auto ids = unpack(key, k);
      double p = mixture(ids);
      e.log_prob = std::log10(p);
      std::span<const WordId> g(ids);
      double low = std::pow(10.0, flat.log10_prob(g.back(), g.subspan(1, k - 2)));
      auto& ms = mass[key_prefix(key)];
      ms.high += p;
      ms.low += low;
    }
    for (const auto& [ctx, ms] : mass) {
      double num = 1.0 - ms.high, den = 1.0 - ms.low;
      double bo = den <= 1e-12 ? 1.0 : std::max(num, 1e-300) / den;
      lower.at(ctx).log_backoff = std::log10(bo);
    }
    flat.grams(k) = std::move(level);
  }
  return flat;
}

}  // namespace lmaug::ngram
