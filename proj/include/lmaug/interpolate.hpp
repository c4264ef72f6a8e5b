#pragma once

#include <string>
#include <vector>

#include "lmaug/ngram.hpp"

namespace lmaug::ngram {

// Linear mixture of backoff models. Components are borrowed and must outlive
// the mixture. Each component maps words it does not know to its own <unk>.
struct InterpolatedModel {
  std::vector<const NGramModel*> components;
  std::vector<double> weights;

  // Throws unless weights are non-negative, sum to 1 within 1e-9 and match
  // the component count.
  void validate() const;
  int order() const;

  double prob(const std::string& word, const std::vector<std::string>& history) const;
  // Sentence log10 probability including </s>.
  double score(const std::vector<std::string>& sentence) const;
};

double interpolate_prob(const InterpolatedModel& model, const std::string& word,
                        const std::vector<std::string>& history);

double perplexity(const InterpolatedModel& model, const Sentences& sentences);

struct EmResult {
  std::vector<double> weights;
  // Mean dev log-likelihood (nats per event): entry 0 is the uniform start,
  // entry i the value after iteration i. One more entry follows when a single
  // component scores better than the last iterate and replaces it.
  std::vector<double> log_likelihood;
  int iterations = 0;
  bool converged = false;
};

// Mixture EM from uniform weights; stops once an iteration improves the dev
// log-likelihood by less than tol nats/event. Throws when every component
// gives some dev event zero probability (log10 <= -99).
EmResult optimize_weights_em(const std::vector<const NGramModel*>& components, const Sentences& dev,
                             double tol = 1e-5, int max_iters = 100);

// Single backoff model over the union of the components' n-grams: stored
// probabilities are the mixture values, backoff weights are recomputed so
// each context normalizes against the flattened lower order.
NGramModel flatten(const InterpolatedModel& model);

}  // namespace lmaug::ngram
