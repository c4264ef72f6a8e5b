// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. Criteria can be selected by number on
// the command line (default: all).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lmaug/error.hpp"
#include "lmaug/generation.hpp"
#include "lmaug/interpolate.hpp"
#include "lmaug/ngram.hpp"
#include "lmaug/pipeline.hpp"
#include "lmaug/random.hpp"
#include "support/filter_props.hpp"
#include "support/gradcheck.hpp"
#include "support/kn_oracle.hpp"
#include "support/toy_corpus.hpp"

namespace fs = std::filesystem;
using namespace lmaug;
using namespace lmaug::ngram;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail.clear();
    pass = false;
    detail += (detail.empty() ? "" : "; ") + why;
  }
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path work_root() { return fs::path(LMAUG_ACCEPTANCE_WORK_DIR); }

// ------------------------------------------------------------------ 1

Outcome gradient_correctness() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  struct Case {
    int blocks, heads, d_model;
    bool tied;
    double dropout;
  };
  const std::vector<Case> cases{{1, 1, 2, true, 0.0}, {1, 2, 4, false, 0.0}, {2, 2, 8, true, 0.0},
                                {2, 2, 8, false, 0.0}, {2, 2, 8, true, 0.2}};
  const std::vector<std::vector<TokenId>> batch{{1, 4, 7, 2}, {1, 9, 3, 10, 5, 2}, {1, 6, 2}};
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    nn::TransformerConfig cfg;
    cfg.n_blocks = c.blocks;
    cfg.n_heads = c.heads;
    cfg.d_model = c.d_model;
    cfg.d_ff = 2 * c.d_model;
    cfg.max_seq_len = 8;
    cfg.vocab_size = 11;
    cfg.tie_embeddings = c.tied;
    cfg.dropout_rate = c.dropout;
    const auto init = nn::init_params(cfg, 40 + i);
    Rng rng(140 + i);
    std::vector<double> params(init.params.begin(), init.params.end());
    for (auto& p : params) p += 0.5 * rng.normal();
    const auto r = testing::gradient_check(cfg, params, batch, c.dropout > 0, 7 + i);
    checked += r.checked;
    worst = std::max(worst, r.worst_rel);
    if (r.failures > 0)
      o.fail(std::to_string(r.failures) + " entries off in config " + std::to_string(i) + " (worst " +
             r.worst_tensor + ")");
  }
  const double secs = seconds_since(t0);
  if (secs >= 60.0) o.fail(fmt("runtime %.1fs >= 60s", secs));
  if (o.pass)
    o.detail = std::to_string(checked) + " gradient entries, worst relative error " + fmt("%.2e", worst) + ", " +
               fmt("%.1fs", secs);
  return o;
}

// ------------------------------------------------------------------ 2

Outcome normalization() {
  Outcome o;
  Rng rng(2);
  double worst_softmax = 0.0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> logits(1 + rng.index(200));
    const double scale = 0.1 + 20.0 * rng.uniform();
    for (auto& l : logits) l = scale * rng.normal();
    for (double tau : {0.5, 1.0, 1.5}) {
      double sum = 0.0;
      for (double p : gen::temperature_softmax(logits, tau)) sum += p;
      worst_softmax = std::max(worst_softmax, std::abs(sum - 1.0));
    }
  }
  if (worst_softmax > 1e-9) o.fail(fmt("softmax sum off by %.2e", worst_softmax));

  double worst_ngram = 0.0, worst_flat = 0.0;
  std::size_t models = 0;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    for (int order = 1; order <= 4; ++order) {
      const std::size_t vocab = 10 + seed * 3;  // at most 28 words plus </s>
      auto counts = count_ngrams(testing::toy_corpus(40 * seed, vocab, seed * 7 + order), order,
                                 testing::shared_vocab(vocab));
      auto m = estimate_kneser_ney(counts);
      worst_ngram = std::max(worst_ngram, max_normalization_error(m));
      if (order >= 2) {
        std::vector<std::uint64_t> cutoffs(static_cast<std::size_t>(order), 2);
        cutoffs[0] = 1;
        worst_ngram = std::max(worst_ngram, max_normalization_error(estimate_kneser_ney(prune_counts(counts, cutoffs))));
        ++models;
      }
      ++models;
    }
    auto a = testing::toy_model(200, seed * 11, 3, 20);
    auto b = testing::toy_model(60, seed * 13, 2, 20);
    auto c = testing::toy_model(120, seed * 17, 4, 20);
    auto dev = testing::toy_corpus(40, 20, seed * 19);
    auto em = optimize_weights_em({&a, &b, &c}, dev);
    worst_flat = std::max(worst_flat, max_normalization_error(flatten(InterpolatedModel{{&a, &b, &c}, em.weights})));
    worst_flat = std::max(worst_flat, max_normalization_error(flatten(InterpolatedModel{{&a, &b}, {0.3, 0.7}})));
  }
  if (worst_ngram > 1e-6) o.fail(fmt("n-gram context sum off by %.2e", worst_ngram));
  if (worst_flat > 1e-6) o.fail(fmt("flattened context sum off by %.2e", worst_flat));
  if (o.pass)
    o.detail = "softmax 3000 vectors (worst " + fmt("%.1e", worst_softmax) + "), " + std::to_string(models) +
               " n-gram models (worst " + fmt("%.1e", worst_ngram) + "), 12 flattened mixtures (worst " +
               fmt("%.1e", worst_flat) + ")";
  return o;
}

// ------------------------------------------------------------------ 3

Outcome oracle_equivalence() {
  Outcome o;
  std::size_t count_checks = 0;
  for (int order = 1; order <= 4; ++order) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      auto corpus = testing::toy_corpus(50, 12, seed * 97 + static_cast<std::uint64_t>(order), 10);
      auto t = count_ngrams(corpus, order);
      auto naive = testing::naive_counts(corpus, order);
      for (int k = 1; k <= order; ++k) {
        const auto& ref = naive[static_cast<std::size_t>(k - 1)];
        if (t.size(k) != ref.size()) o.fail("count table size differs at order " + std::to_string(k));
        for (const auto& [g, c] : ref) {
          ++count_checks;
          if (t.count(g) != static_cast<std::uint64_t>(c)) o.fail("count mismatch for a " + std::to_string(k) + "-gram");
        }
      }
    }
  }

  double worst_kn = 0.0;
  for (int order = 1; order <= 4; ++order) {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      auto corpus = testing::toy_corpus(50, 10, seed * 53 + static_cast<std::uint64_t>(order));
      const std::vector<std::string> extra{"unseen"};
      auto model = estimate_kneser_ney(count_ngrams(corpus, order, extra));
      testing::KneserNeyOracle oracle(corpus, order, extra);
      auto contexts = model.contexts();
      contexts.push_back({Vocab::kStart, model.vocab().find("w1"), model.vocab().find("w2")});
      for (const auto& ctx : contexts) {
        testing::Gram h;
        for (WordId id : ctx) h.push_back(model.vocab().word(id));
        for (const auto& w : oracle.vocab())
          worst_kn = std::max(worst_kn, std::abs(std::pow(10.0, model.log10_prob(w, h)) - oracle.prob(w, h)));
      }
    }
  }
  if (worst_kn > 1e-6) o.fail(fmt("KN differs from the oracle by %.2e", worst_kn));

  std::size_t round_trips = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto counts = count_ngrams(testing::toy_corpus(200, 25, seed), 4);
    for (const auto& cutoffs : std::vector<std::vector<std::uint64_t>>{{1, 1, 1, 1}, {1, 2, 2, 3}}) {
      const auto first = to_arpa(estimate_kneser_ney(prune_counts(counts, cutoffs)));
      const auto second = to_arpa(parse_arpa(first));
      const auto third = to_arpa(parse_arpa(second));
      ++round_trips;
      if (first != second || second != third) o.fail("ARPA round trip not byte-stable (seed " + std::to_string(seed) + ")");
    }
  }
  if (o.pass)
    o.detail = std::to_string(count_checks) + " counts exact, KN worst " + fmt("%.1e", worst_kn) + ", " +
               std::to_string(round_trips) + " ARPA round trips byte-stable";
  return o;
}

// ------------------------------------------------------------------ 4

Outcome em_behavior() {
  Outcome o;
  double worst_drop = 0.0, worst_excess = -1e300;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng(1000 + trial);
    const std::size_t m = 2 + rng.index(3);
    std::vector<NGramModel> models;
    for (std::size_t i = 0; i < m; ++i)
      models.push_back(testing::toy_model(20 + rng.index(300), trial * 100 + i, 1 + static_cast<int>(rng.index(4))));
    std::vector<const NGramModel*> comps;
    for (const auto& x : models) comps.push_back(&x);
    const auto dev = testing::toy_corpus(30 + rng.index(50), 20, trial * 100 + 77);
    const auto r = optimize_weights_em(comps, dev);
    for (std::size_t i = 1; i < r.log_likelihood.size(); ++i)
      worst_drop = std::max(worst_drop, r.log_likelihood[i - 1] - r.log_likelihood[i]);
    const double mix = perplexity(InterpolatedModel{comps, r.weights}, dev);
    double best = 1e300;
    for (const auto* c : comps) best = std::min(best, perplexity(*c, dev));
    worst_excess = std::max(worst_excess, mix - best);
  }
  if (worst_drop > 0.0) o.fail(fmt("dev log-likelihood decreased by %.2e", worst_drop));
  if (worst_excess > 1e-9) o.fail(fmt("mixture perplexity exceeds best component by %.2e", worst_excess));

  const auto vocab = testing::shared_vocab(15);
  std::vector<std::string> all = vocab;
  for (const auto& w : vocab) all.push_back("z" + w);
  auto a = estimate_kneser_ney(count_ngrams(testing::toy_corpus(400, 15, 5), 3, all));
  auto b = estimate_kneser_ney(count_ngrams(testing::relabel(testing::toy_corpus(400, 15, 6), "z"), 3, all));
  const auto planted = optimize_weights_em({&a, &b}, testing::toy_corpus(100, 15, 1005));
  if (planted.weights[0] < 0.95) o.fail(fmt("planted component weight %.4f < 0.95", planted.weights[0]));
  if (o.pass)
    o.detail = "100 mixtures monotone, mixture - best component ppl <= " + fmt("%.2e", std::max(0.0, worst_excess)) +
               ", planted lambda_A = " + fmt("%.4f", planted.weights[0]);
  return o;
}

// ------------------------------------------------------------------ 5

pipeline::PipelineConfig load_config(const std::string& name, const fs::path& work) {
  auto cfg = pipeline::PipelineConfig::load((fs::path(LMAUG_SOURCE_DIR) / "configs" / name).string());
  cfg.work_dir = work.string();
  return cfg;
}

double at(const pipeline::Json& j, const std::string& path) {
  const pipeline::Json* cur = &j;
  std::size_t pos = 0;
  while (pos <= path.size()) {
    auto dot = path.find('.', pos);
    if (dot == std::string::npos) dot = path.size();
    cur = &cur->at(path.substr(pos, dot - pos));
    pos = dot + 1;
  }
  return cur->get<double>();
}

double arm_test_ppl(const pipeline::Json& r, std::size_t size) {
  for (const auto& a : r.at("arms"))
    if (a.at("size").get<std::size_t>() == size) return a.at("interpolated").at("test").get<double>();
  throw Error("report has no arm of size " + std::to_string(size));
}

Outcome directional_replication() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> lines;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto work = work_root() / ("benchmark-seed" + std::to_string(seed));
    fs::remove_all(work);
    auto cfg = load_config("benchmark.json", work);
    cfg.seed = seed;
    pipeline::RunOptions opts;
    opts.quiet = true;
    const auto r = pipeline::run_pipeline(cfg, opts).results;
    const double ft = at(r, "neural.finetuned.test"), sc = at(r, "neural.scratch.test");
    const double base = at(r, "ngram.baseline.test"), interp = at(r, "ngram.interpolated.test");
    const double flat = at(r, "ngram.flattened.test");
    const double small = arm_test_ppl(r, 50000), large = arm_test_ppl(r, 200000);
    const double gain = (base - interp) / base;
    char buf[320];
    std::snprintf(buf, sizeof buf,
                  "    seed %llu: finetuned %.3f vs scratch %.3f | interpolated %.3f (flattened %.3f) vs baseline %.3f "
                  "(%.1f%%) | 50k %.3f -> 200k %.3f",
                  static_cast<unsigned long long>(seed), ft, sc, interp, flat, base, 100.0 * gain, small, large);
    lines.push_back(buf);
    const std::string s = "seed " + std::to_string(seed) + ": ";
    if (!(ft < sc)) o.fail(s + "(a) fine-tuned not better than scratch");
    if (!(gain >= 0.02)) o.fail(s + "(b) interpolated gain " + fmt("%.2f%%", 100.0 * gain) + " < 2%");
    if (!(large <= small)) o.fail(s + "(c) 200k arm worse than 50k arm");
  }
  const double secs = seconds_since(t0);
  if (secs >= 7200.0) o.fail(fmt("runtime %.0fs >= 2h", secs));
  std::string detail = "3 seeds in " + fmt("%.0fs", secs);
  for (const auto& l : lines) detail += "\n" + l;
  o.detail = o.pass ? detail : o.detail + "\n" + detail;
  return o;
}

// ------------------------------------------------------------------ 6

Outcome filter_correctness() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(6);
  std::size_t rule_sets = 0;
  for (std::uint64_t corpus_seed = 0; corpus_seed < 5; ++corpus_seed) {
    const auto corpus = testing::random_filter_corpus(10000, 600 + corpus_seed);
    for (int i = 0; i < 4; ++i) {
      const auto rules = testing::random_rules(rng);
      ++rule_sets;
      for (const auto& bad : testing::filter_property_violations(corpus, rules)) o.fail(bad);
    }
  }
  const double secs = seconds_since(t0);
  if (secs >= 10.0) o.fail(fmt("runtime %.2fs >= 10s", secs));
  if (o.pass)
    o.detail = std::to_string(rule_sets) + " rule sets on 10k-sentence corpora, " + fmt("%.2fs", secs);
  return o;
}

// ------------------------------------------------------------------ 7

std::vector<std::string> arpa_files(const pipeline::PipelineConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& stage : {"ngram", "interpolate"})
    for (const auto& e : fs::directory_iterator(pipeline::stage_dir(cfg, stage)))
      if (e.path().extension() == ".arpa") out.push_back(e.path().lexically_relative(cfg.work_dir).string());
  std::sort(out.begin(), out.end());
  return out;
}

Outcome end_to_end_smoke() {
  Outcome o;
  const auto root = work_root() / "smoke";
  fs::remove_all(root);
  auto a = load_config("smoke.json", root / "a");
  auto b = load_config("smoke.json", root / "b");
  pipeline::RunOptions quiet;
  quiet.quiet = true;

  const auto t0 = std::chrono::steady_clock::now();
  const auto run_a = pipeline::run_pipeline(a, quiet);
  const double secs = seconds_since(t0);
  if (secs >= 300.0) o.fail(fmt("smoke run took %.0fs >= 5 min", secs));
  if (run_a.results.is_null()) o.fail("no report");

  // Second run: stop after generation, leave a half-written filter stage
  // behind, then resume.
  auto partial = quiet;
  partial.until = "generate";
  pipeline::run_pipeline(b, partial);
  const auto filter_dir = pipeline::stage_dir(b, "filter");
  fs::create_directories(filter_dir);
  std::ofstream(fs::path(filter_dir) / "filtered.txt") << "truncated";
  const auto run_b = pipeline::run_pipeline(b, quiet);
  for (const auto& s : run_b.stages) {
    const bool before = s.name == "data" || s.name == "bpe" || s.name == "pretrain" || s.name == "finetune" ||
                        s.name == "scratch" || s.name == "prefixes" || s.name == "generate";
    if (before && !s.skipped) o.fail("stage " + s.name + " was recomputed on resume");
    if (!before && s.skipped) o.fail("stage " + s.name + " was not run on resume");
  }
  if (run_a.results != run_b.results) o.fail("resumed run's report differs from an uninterrupted run");

  const auto files = arpa_files(a);
  if (files.size() < 3) o.fail("expected baseline, synthetic and interpolated ARPA files");
  if (files != arpa_files(b)) o.fail("runs produced different ARPA file sets");
  for (const auto& f : files)
    if (slurp((fs::path(a.work_dir) / f).string()) != slurp((fs::path(b.work_dir) / f).string()))
      o.fail(f + " differs between runs");

  const auto& r = run_a.results;
  for (const char* key : {"neural.pretrained.dev", "neural.finetuned.dev", "ngram.baseline.dev", "ngram.baseline.test",
                          "ngram.synthetic.dev", "ngram.synthetic.test", "ngram.interpolated.dev",
                          "ngram.interpolated.test", "corpus_sizes.filtered", "filter.input"}) {
    try {
      if (!std::isfinite(at(r, key))) o.fail(std::string(key) + " is not finite");
    } catch (const std::exception&) {
      o.fail(std::string("report lacks ") + key);
    }
  }
  if (!r.contains("em") || r["em"]["weights"].size() != 2) o.fail("report lacks EM weights");
  if (run_a.stages.size() != pipeline::stage_names().size()) o.fail("report does not list every stage");
  if (o.pass && at(r, "ngram.interpolated.dev") > at(r, "ngram.baseline.dev"))
    o.fail("interpolated dev perplexity above baseline");
  if (o.pass && pipeline::eval_report(a) != r) o.fail("eval from artifacts does not reproduce the report");
  if (o.pass)
    o.detail = fmt("smoke run %.1fs", secs) + ", resumed after 'generate' with identical report, " +
               std::to_string(files.size()) + " ARPA files byte-identical across runs";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"normalization", normalization},
      {"oracle equivalence", oracle_equivalence},
      {"EM behavior", em_behavior},
      {"directional replication", directional_replication},
      {"filter correctness", filter_correctness},
      {"end-to-end smoke", end_to_end_smoke},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.fail(std::string("error: ") + e.what());
    }
    if (!o.pass) ++failures;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
