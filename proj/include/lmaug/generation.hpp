#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lmaug/corpus.hpp"
#include "lmaug/neural/model.hpp"
#include "lmaug/neural/transformer.hpp"
#include "lmaug/tokenizer.hpp"

namespace lmaug::gen {

struct GenerationConfig {
  double temperature = 1.0;
  int samples_per_prefix = 25;
  int keep_top = 5;
  double length_penalty = 1.0;  // alpha in score = logprob / length^alpha
  int max_new_tokens = 40;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticSentence {
  std::vector<TokenId> tokens;  // prefix + generated tokens (ends with </s> when one was drawn)
  std::string text;
  std::vector<TokenId> prefix;
  double score = 0.0;
  int duplicate_count = 1;
};

struct SyntheticCorpus {
  std::vector<SyntheticSentence> sentences;
  std::size_t size() const { return sentences.size(); }
};

// p_i = exp(h_i / tau) / sum_j exp(h_j / tau), computed after subtracting the
// max logit. Throws for tau <= 0 or non-finite logits.
std::vector<double> temperature_softmax(std::span<const double> logits, double tau);

// Draws samples_per_prefix continuations of <s> + prefix. The sampler never
// emits <pad>, <s> or <unk>. Hypotheses are scored with the untempered model
// log-probabilities of the generated tokens (including </s>), divided by
// (generated length)^alpha; identical token sequences are merged and the
// keep_top best distinct ones returned, best first. Sample j of a prefix uses
// an RNG stream derived from (seed, prefix tokens, j), so results do not
// depend on prefix order and grow monotonically with samples_per_prefix.
// `bpe` (optional) fills in the text fields.
std::vector<SyntheticSentence> sample_continuations(const nn::Transformer<float>& model,
                                                    std::span<const TokenId> prefix,
                                                    const GenerationConfig& cfg,
                                                    const BpeModel* bpe = nullptr);
std::vector<SyntheticSentence> sample_continuations(const nn::Checkpoint& ckpt,
                                                    std::span<const TokenId> prefix,
                                                    const GenerationConfig& cfg,
                                                    const BpeModel* bpe = nullptr);

using GenerationProgress = std::function<void(std::size_t done, std::size_t total)>;

SyntheticCorpus generate_corpus(const nn::Checkpoint& ckpt, const PrefixCorpus& prefixes,
                                const GenerationConfig& cfg, const BpeModel& bpe,
                                const GenerationProgress& progress = {});

// One sentence per line plus `path`.tsv with "line<TAB>prefix<TAB>score<TAB>duplicate_count".
void write_synthetic(const SyntheticCorpus& corpus, const BpeModel& bpe, const std::string& path);

}  // namespace lmaug::gen
