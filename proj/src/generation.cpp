#include "lmaug/generation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include "lmaug/error.hpp"
#include "lmaug/random.hpp"
#include "lmaug/text.hpp"

namespace lmaug::gen {

void GenerationConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw Error("generation: temperature must be > 0");
  if (samples_per_prefix < 1) throw Error("generation: samples_per_prefix must be >= 1");
  if (keep_top < 1 || keep_top > samples_per_prefix)
    throw Error("generation: keep_top must be in 1..samples_per_prefix");
  if (max_new_tokens < 1) throw Error("generation: max_new_tokens must be >= 1");
  if (!std::isfinite(length_penalty)) throw Error("generation: length_penalty must be finite");
}

std::vector<double> temperature_softmax(std::span<const double> logits, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw Error("temperature must be > 0");
  if (logits.empty()) throw Error("temperature_softmax of an empty logit vector");
  double mx = -std::numeric_limits<double>::infinity();
  for (double h : logits) {
    if (!std::isfinite(h)) throw Error("temperature_softmax: non-finite logit");
    mx = std::max(mx, h);
  }
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp((logits[i] - mx) / tau);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

namespace {

std::uint64_t prefix_hash(std::span<const TokenId> prefix) {
  std::uint64_t h = text::fnv1a("prefix");
  for (TokenId t : prefix) {
    auto u = static_cast<std::uint32_t>(t);
    h = text::fnv1a(std::string_view(reinterpret_cast<const char*>(&u), sizeof u), h);
  }
  return h;
}

struct Hypothesis {
  std::vector<TokenId> generated;
  double logprob = 0.0;
};

}  // namespace

std::vector<SyntheticSentence> sample_continuations(const nn::Transformer<float>& model,
                                                    std::span<const TokenId> prefix,
                                                    const GenerationConfig& cfg, const BpeModel* bpe) {
  cfg.validate();
  const auto& mc = model.config();
  if (prefix.size() + 2 > static_cast<std::size_t>(mc.max_seq_len))
    throw Error("prefix of " + std::to_string(prefix.size()) + " tokens leaves no room below max_seq_len " +
                std::to_string(mc.max_seq_len));
  const SpecialIds specials;
  const std::size_t n = static_cast<std::size_t>(cfg.samples_per_prefix);
  const std::size_t max_new =
      std::min<std::size_t>(static_cast<std::size_t>(cfg.max_new_tokens),
                            static_cast<std::size_t>(mc.max_seq_len) - 1 - prefix.size());
  const std::uint64_t base = derive_seed(cfg.seed, prefix_hash(prefix));

  // Shared context once, then fan out to one row per sample.
  nn::IncrementalDecoder<float> dec(model, 1);
  std::vector<TokenId> one{specials.start};
  const nn::IncrementalDecoder<float>::Mat* logits = &dec.step(one);
  for (TokenId t : prefix) {
    one[0] = t;
    logits = &dec.step(one);
  }
  std::vector<std::size_t> fan(n, 0);
  Eigen::RowVectorXf first = logits->row(0);
  dec.keep_rows(fan);

  std::vector<Hypothesis> hyps(n);
  std::vector<Rng> rngs;
  rngs.reserve(n);
  for (std::size_t j = 0; j < n; ++j) rngs.emplace_back(derive_seed(base, j));
  std::vector<std::size_t> active(n);
  std::iota(active.begin(), active.end(), 0);

  const auto V = static_cast<std::size_t>(mc.vocab_size);
  std::vector<double> row(V), p(V);
  std::vector<char> banned(V, 0);
  for (TokenId s : {specials.pad, specials.start, specials.unk})
    if (static_cast<std::size_t>(s) < V) banned[static_cast<std::size_t>(s)] = 1;
  std::vector<TokenId> feed;
  std::vector<std::size_t> keep, still;
  for (std::size_t step = 0; step < max_new && !active.empty(); ++step) {
    feed.clear();
    keep.clear();
    still.clear();
    for (std::size_t r = 0; r < active.size(); ++r) {
      for (std::size_t v = 0; v < V; ++v)
        row[v] = step == 0 ? first(static_cast<Eigen::Index>(v)) : (*logits)(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(v));
      double mx = *std::max_element(row.begin(), row.end());
      double lse = 0.0;
      for (double h : row) lse += std::exp(h - mx);
      lse = mx + std::log(lse);

      double mm = -std::numeric_limits<double>::infinity();
      for (std::size_t v = 0; v < V; ++v)
        if (!banned[v]) mm = std::max(mm, row[v]);
      double sum = 0.0;
      for (std::size_t v = 0; v < V; ++v) {
        p[v] = banned[v] ? 0.0 : std::exp((row[v] - mm) / cfg.temperature);
        sum += p[v];
      }
      for (double& x : p) x /= sum;

      Hypothesis& h = hyps[active[r]];
      double u = rngs[active[r]].uniform();
      std::size_t tok = 0;
      double acc = 0.0;
      for (; tok + 1 < V; ++tok) {
        acc += p[tok];
        if (u < acc && p[tok] > 0.0) break;
      }
      while (p[tok] == 0.0) --tok;  // round-off can leave u past the last non-zero bin
      h.generated.push_back(static_cast<TokenId>(tok));
      h.logprob += row[tok] - lse;
      if (static_cast<TokenId>(tok) != specials.end && step + 1 < max_new) {
        keep.push_back(r);
        still.push_back(active[r]);
        feed.push_back(static_cast<TokenId>(tok));
      }
    }
    active.swap(still);
    if (active.empty()) break;
    if (keep.size() != dec.rows()) dec.keep_rows(keep);
    logits = &dec.step(feed);
  }

  // Merge identical continuations; the first sample index breaks score ties.
  std::map<std::vector<TokenId>, std::size_t> seen;
  std::vector<SyntheticSentence> distinct;
  for (std::size_t j = 0; j < n; ++j) {
    auto [it, fresh] = seen.emplace(hyps[j].generated, distinct.size());
    if (!fresh) {
      ++distinct[it->second].duplicate_count;
      continue;
    }
    SyntheticSentence s;
    s.prefix.assign(prefix.begin(), prefix.end());
    s.tokens = s.prefix;
    s.tokens.insert(s.tokens.end(), hyps[j].generated.begin(), hyps[j].generated.end());
    double len = static_cast<double>(hyps[j].generated.size());
    s.score = hyps[j].logprob / std::pow(len, cfg.length_penalty);
    distinct.push_back(std::move(s));
  }
  std::vector<std::size_t> order(distinct.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return distinct[a].score > distinct[b].score; });
  std::vector<SyntheticSentence> out;
  for (std::size_t i = 0; i < order.size() && out.size() < static_cast<std::size_t>(cfg.keep_top); ++i) {
    out.push_back(std::move(distinct[order[i]]));
    if (bpe) out.back().text = bpe->decode(out.back().tokens);
  }
  return out;
}

std::vector<SyntheticSentence> sample_continuations(const nn::Checkpoint& ckpt,
                                                    std::span<const TokenId> prefix,
                                                    const GenerationConfig& cfg, const BpeModel* bpe) {
  nn::Transformer<float> model(ckpt.config, ckpt.params);
  return sample_continuations(model, prefix, cfg, bpe);
}

SyntheticCorpus generate_corpus(const nn::Checkpoint& ckpt, const PrefixCorpus& prefixes,
                                const GenerationConfig& cfg, const BpeModel& bpe,
                                const GenerationProgress& progress) {
  if (prefixes.prefixes.empty()) throw Error("generation needs at least one prefix");
  cfg.validate();
  nn::Transformer<float> model(ckpt.config, ckpt.params);
  SyntheticCorpus out;
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    auto batch = sample_continuations(model, prefixes.prefixes[i], cfg, &bpe);
    for (auto& s : batch) out.sentences.push_back(std::move(s));
    if (progress) progress(i + 1, prefixes.size());
  }
  return out;
}

void write_synthetic(const SyntheticCorpus& corpus, const BpeModel& bpe, const std::string& path) {
  std::ofstream text_out(path, std::ios::binary), side(path + ".tsv", std::ios::binary);
  if (!text_out || !side) throw Error("cannot write " + path);
  char buf[64];
  for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
    const auto& s = corpus.sentences[i];
    text_out << (s.text.empty() ? bpe.decode(s.tokens) : s.text) << '\n';
    std::snprintf(buf, sizeof buf, "%.6f", s.score);
    side << (i + 1) << '\t' << bpe.decode(s.prefix) << '\t' << buf << '\t' << s.duplicate_count << '\n';
  }
  if (!text_out || !side) throw Error("failed writing " + path);
}

}  // namespace lmaug::gen
