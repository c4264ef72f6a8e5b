// Command-line front end: one subcommand per pipeline stage plus `run`,
// which drives the whole pipeline from a config file.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "CLI11.hpp"
#include "lmaug/benchmark.hpp"
#include "lmaug/corpus.hpp"
#include "lmaug/error.hpp"
#include "lmaug/filter.hpp"
#include "lmaug/generation.hpp"
#include "lmaug/interpolate.hpp"
#include "lmaug/ngram.hpp"
#include "lmaug/neural/train.hpp"
#include "lmaug/pipeline.hpp"
#include "lmaug/random.hpp"
#include "lmaug/text.hpp"
#include "lmaug/tokenizer.hpp"

namespace fs = std::filesystem;
using namespace lmaug;

namespace {

struct ModelFlags {
  nn::TransformerConfig model;
  nn::TrainHyper hyper;
  std::uint64_t seed = 1;
};

void add_model_flags(CLI::App* app, ModelFlags& f) {
  app->add_option("--blocks", f.model.n_blocks, "Transformer blocks")->capture_default_str();
  app->add_option("--heads", f.model.n_heads, "Attention heads")->capture_default_str();
  app->add_option("--d-model", f.model.d_model, "Model width")->capture_default_str();
  app->add_option("--d-ff", f.model.d_ff, "Feed-forward width")->capture_default_str();
  app->add_option("--max-seq-len", f.model.max_seq_len, "Maximum sequence length in tokens")->capture_default_str();
  app->add_option("--dropout", f.model.dropout_rate, "Dropout rate")->capture_default_str();
}

void add_train_flags(CLI::App* app, ModelFlags& f) {
  app->add_option("--steps", f.hyper.total_steps, "Optimizer steps")->capture_default_str();
  app->add_option("--batch", f.hyper.batch_size, "Sentences per batch")->capture_default_str();
  app->add_option("--lr", f.hyper.learning_rate, "Peak learning rate")->capture_default_str();
  app->add_option("--warmup", f.hyper.warmup_steps, "Warmup steps (negative: 1% of steps)")->capture_default_str();
  app->add_option("--decay", f.hyper.decay, "linear or constant")->capture_default_str();
  app->add_option("--clip", f.hyper.clip_norm, "Global gradient-norm clip")->capture_default_str();
  app->add_option("--eval-interval", f.hyper.eval_interval, "Dev evaluation cadence (0: no early stopping)")
      ->capture_default_str();
  app->add_option("--patience", f.hyper.patience, "Early-stopping patience in evaluations")->capture_default_str();
  app->add_option("--seed", f.seed, "Random seed")->capture_default_str();
}

BpeModel load_bpe_dir(const std::string& dir) {
  return BpeModel::load((fs::path(dir) / "merges.txt").string(), (fs::path(dir) / "vocab.txt").string());
}

nn::ProgressFn print_progress(int total) {
  const int every = std::max(1, total / 20);
  return [every, total](const nn::LossLogEntry& e) {
    if (e.step % every == 0 || e.step == total)
      std::fprintf(stderr, "step %lld/%d loss %.4f lr %.2e\n", static_cast<long long>(e.step), total, e.loss, e.lr);
  };
}

void save_result(const nn::TrainResult& r, const std::string& out) {
  nn::save_checkpoint(r.checkpoint, out);
  nn::write_loss_log(r.log, out + ".loss.csv");
  std::fprintf(stderr, "wrote %s (best step %lld)\n", out.c_str(), static_cast<long long>(r.best_step));
}

ngram::Sentences read_many(const std::vector<std::string>& paths) {
  ngram::Sentences out;
  for (const auto& p : paths)
    for (auto& s : load_word_sentences(p)) out.push_back(std::move(s));
  return out;
}

std::vector<std::uint64_t> parse_cutoffs(const std::string& s, int order) {
  std::vector<std::uint64_t> out;
  if (s.empty()) return std::vector<std::uint64_t>(static_cast<std::size_t>(order), 1);
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    out.push_back(std::stoull(s.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  if (out.size() != static_cast<std::size_t>(order)) throw Error("--cutoffs needs one value per order");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lmaug: language-model data augmentation toolkit"};
  app.require_subcommand(1);

  // bpe-learn
  std::vector<std::string> bpe_inputs;
  int bpe_merges = 500;
  std::string bpe_out;
  auto* bpe = app.add_subcommand("bpe-learn", "Learn a BPE subword model");
  bpe->add_option("-i,--input", bpe_inputs, "Training text files")->required();
  bpe->add_option("-n,--merges", bpe_merges, "Number of merges")->capture_default_str();
  bpe->add_option("-o,--out", bpe_out, "Output directory (merges.txt, vocab.txt)")->required();

  // pretrain
  ModelFlags pre_flags;
  std::string pre_bpe, pre_train, pre_dev, pre_out;
  auto* pre = app.add_subcommand("pretrain", "Train a Transformer LM from scratch");
  pre->add_option("--bpe", pre_bpe, "BPE directory")->required();
  pre->add_option("--train", pre_train, "Training text")->required();
  pre->add_option("--dev", pre_dev, "Dev text (for early stopping)");
  pre->add_option("-o,--out", pre_out, "Output checkpoint")->required();
  add_model_flags(pre, pre_flags);
  add_train_flags(pre, pre_flags);

  // finetune
  ModelFlags ft_flags;
  std::string ft_bpe, ft_init, ft_train, ft_dev, ft_out;
  auto* ft = app.add_subcommand("finetune", "Continue training a checkpoint on in-domain text");
  ft->add_option("--bpe", ft_bpe, "BPE directory")->required();
  ft->add_option("--init", ft_init, "Pretrained checkpoint")->required();
  ft->add_option("--train", ft_train, "In-domain text")->required();
  ft->add_option("--dev", ft_dev, "Dev text (for early stopping)");
  ft->add_option("-o,--out", ft_out, "Output checkpoint")->required();
  add_train_flags(ft, ft_flags);

  // prefixes
  std::string px_bpe, px_train, px_out;
  std::vector<int> px_k{1, 2, 3, 4, 5, 6};
  std::size_t px_max = 1000;
  std::uint64_t px_seed = 1;
  auto* px = app.add_subcommand("prefixes", "Extract sentence openings from in-domain text");
  px->add_option("--bpe", px_bpe, "BPE directory")->required();
  px->add_option("--train", px_train, "In-domain text")->required();
  px->add_option("-k", px_k, "Prefix lengths in tokens")->delimiter(',')->capture_default_str();
  px->add_option("--max-per-k", px_max, "Prefixes per length")->capture_default_str();
  px->add_option("--seed", px_seed, "Random seed")->capture_default_str();
  px->add_option("-o,--out", px_out, "Output prefix file")->required();

  // generate
  std::string gn_bpe, gn_model, gn_prefixes, gn_out;
  std::vector<double> gn_temps{1.0};
  gen::GenerationConfig gn_cfg;
  auto* gn = app.add_subcommand("generate", "Sample synthetic sentences from prefixes");
  gn->add_option("--bpe", gn_bpe, "BPE directory")->required();
  gn->add_option("--model", gn_model, "Checkpoint")->required();
  gn->add_option("--prefixes", gn_prefixes, "Prefix file")->required();
  gn->add_option("-t,--temperature", gn_temps, "Temperatures (outputs are concatenated)")
      ->delimiter(',')
      ->capture_default_str();
  gn->add_option("--samples", gn_cfg.samples_per_prefix, "Samples per prefix")->capture_default_str();
  gn->add_option("--keep-top", gn_cfg.keep_top, "Hypotheses kept per prefix")->capture_default_str();
  gn->add_option("--length-penalty", gn_cfg.length_penalty, "Score exponent alpha")->capture_default_str();
  gn->add_option("--max-new", gn_cfg.max_new_tokens, "Maximum generated tokens")->capture_default_str();
  gn->add_option("--seed", gn_cfg.seed, "Random seed")->capture_default_str();
  gn->add_option("-o,--out", gn_out, "Output text (plus .tsv metadata)")->required();

  // filter
  std::string fl_in, fl_ref, fl_out, fl_report;
  double fl_low = 0.01, fl_high = 0.99;
  std::size_t fl_oov = 0, fl_dup = 0;
  std::vector<std::string> fl_req, fl_ban;
  auto* fl = app.add_subcommand("filter", "Apply rule-based filters to synthetic text");
  fl->add_option("-i,--input", fl_in, "Synthetic text")->required();
  fl->add_option("--reference", fl_ref, "In-domain text for length quantiles and vocabulary")->required();
  fl->add_option("--low", fl_low, "Lower length quantile")->capture_default_str();
  fl->add_option("--high", fl_high, "Upper length quantile")->capture_default_str();
  fl->add_option("--max-oov", fl_oov, "Allowed out-of-vocabulary words per sentence")->capture_default_str();
  fl->add_option("--max-duplicates", fl_dup, "Copies kept per distinct sentence (0: unlimited)")
      ->capture_default_str();
  fl->add_option("--required", fl_req, "Keep only sentences with one of these words")->delimiter(',');
  fl->add_option("--banned", fl_ban, "Drop sentences with any of these words")->delimiter(',');
  fl->add_option("-o,--out", fl_out, "Filtered text")->required();
  fl->add_option("--report", fl_report, "Report file (default: stdout)");

  // ngram-train
  std::vector<std::string> ng_in;
  int ng_order = 4;
  std::string ng_cutoffs, ng_vocab, ng_out, ng_counts;
  auto* ng = app.add_subcommand("ngram-train", "Estimate a modified Kneser-Ney n-gram model");
  ng->add_option("-i,--input", ng_in, "Training text files")->required();
  ng->add_option("--order", ng_order, "Model order (1-4)")->capture_default_str();
  ng->add_option("--cutoffs", ng_cutoffs, "Minimum counts per order, e.g. 1,1,2,2");
  ng->add_option("--vocab", ng_vocab, "Closed vocabulary file (one word per line)");
  ng->add_option("--write-counts", ng_counts, "Also dump raw counts");
  ng->add_option("-o,--out", ng_out, "Output ARPA file")->required();

  // interpolate
  std::vector<std::string> ip_arpa;
  std::string ip_dev, ip_out;
  double ip_tol = 1e-5;
  int ip_iters = 100;
  auto* ip = app.add_subcommand("interpolate", "Fit mixture weights on dev text and flatten to one ARPA");
  ip->add_option("--arpa", ip_arpa, "Component ARPA files")->required();
  ip->add_option("--dev", ip_dev, "Dev text")->required();
  ip->add_option("--tol", ip_tol, "Convergence tolerance (nats per event)")->capture_default_str();
  ip->add_option("--max-iters", ip_iters, "Iteration cap")->capture_default_str();
  ip->add_option("-o,--out", ip_out, "Flattened ARPA output");

  // eval
  std::string ev_config, ev_arpa, ev_text;
  std::uint64_t ev_seed = 0;
  auto* ev = app.add_subcommand("eval", "Perplexity report from pipeline artifacts or one ARPA file");
  ev->add_option("--config", ev_config, "Pipeline config");
  ev->add_option("--seed", ev_seed, "Seed override");
  ev->add_option("--arpa", ev_arpa, "ARPA model to score");
  ev->add_option("--text", ev_text, "Text to score with --arpa");

  // run
  std::string run_config, run_stage, run_work;
  std::vector<std::string> run_force;
  std::uint64_t run_seed = 0;
  bool run_quiet = false;
  auto* run = app.add_subcommand("run", "Run the pipeline (resuming finished stages)");
  run->add_option("--config", run_config, "Pipeline config")->required();
  run->add_option("--stage", run_stage, "Stop after this stage");
  run->add_option("--force", run_force, "Recompute these stages ('all' for every stage)")->delimiter(',');
  run->add_option("--seed", run_seed, "Seed override");
  run->add_option("--work-dir", run_work, "Work directory override");
  run->add_flag("-q,--quiet", run_quiet, "No progress output");

  // make-benchmark
  bench::BenchmarkConfig mb_cfg;
  std::string mb_out;
  auto* mb = app.add_subcommand("make-benchmark", "Write the synthetic two-domain benchmark corpora");
  mb->add_option("--general", mb_cfg.general_sentences, "General-domain sentences")->capture_default_str();
  mb->add_option("--train", mb_cfg.train_sentences, "In-domain training sentences")->capture_default_str();
  mb->add_option("--dev", mb_cfg.dev_sentences, "In-domain dev sentences")->capture_default_str();
  mb->add_option("--test", mb_cfg.test_sentences, "In-domain test sentences")->capture_default_str();
  mb->add_option("--seed", mb_cfg.seed, "Sampling seed")->capture_default_str();
  mb->add_option("--lexicon-seed", mb_cfg.lexicon_seed, "Lexicon seed")->capture_default_str();
  mb->add_option("-o,--out", mb_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*bpe) {
      std::vector<std::string> lines;
      for (const auto& p : bpe_inputs)
        for (auto& l : text::read_lines(p)) lines.push_back(std::move(l));
      const auto model = BpeModel::learn(lines, bpe_merges);
      fs::create_directories(bpe_out);
      model.save((fs::path(bpe_out) / "merges.txt").string(), (fs::path(bpe_out) / "vocab.txt").string());
      std::printf("merges=%zu vocab=%zu\n", model.merges().size(), model.vocab_size());
    } else if (*pre) {
      const auto tok = load_bpe_dir(pre_bpe);
      const auto train = load_corpus(pre_train, tok);
      Corpus dev;
      if (!pre_dev.empty()) dev = load_corpus(pre_dev, tok);
      auto mc = pre_flags.model;
      mc.vocab_size = static_cast<int>(tok.vocab_size());
      auto h = pre_flags.hyper;
      h.seed = pre_flags.seed;
      auto r = nn::train(nn::init_params(mc, derive_seed(pre_flags.seed, 1)), train, h,
                         pre_dev.empty() ? nullptr : &dev, print_progress(h.total_steps));
      save_result(r, pre_out);
    } else if (*ft) {
      const auto tok = load_bpe_dir(ft_bpe);
      const auto init = nn::load_checkpoint(ft_init);
      const auto train = load_corpus(ft_train, tok);
      Corpus dev;
      if (!ft_dev.empty()) dev = load_corpus(ft_dev, tok);
      auto expected = init.config;
      expected.vocab_size = static_cast<int>(tok.vocab_size());
      auto h = ft_flags.hyper;
      h.seed = ft_flags.seed;
      save_result(nn::finetune(init, expected, train, h, ft_dev.empty() ? nullptr : &dev,
                               print_progress(h.total_steps)),
                  ft_out);
    } else if (*px) {
      const auto tok = load_bpe_dir(px_bpe);
      const auto pc = extract_prefixes(load_corpus(px_train, tok), std::set<int>(px_k.begin(), px_k.end()), px_max,
                                       px_seed);
      save_prefixes(pc, tok, px_out);
      std::printf("prefixes=%zu\n", pc.size());
    } else if (*gn) {
      const auto tok = load_bpe_dir(gn_bpe);
      const auto ckpt = nn::load_checkpoint(gn_model);
      const auto pc = load_prefixes(gn_prefixes);
      gen::SyntheticCorpus all;
      for (std::size_t i = 0; i < gn_temps.size(); ++i) {
        auto c = gn_cfg;
        c.temperature = gn_temps[i];
        c.seed = derive_seed(gn_cfg.seed, i);
        auto part = gen::generate_corpus(ckpt, pc, c, tok);
        for (auto& s : part.sentences) all.sentences.push_back(std::move(s));
      }
      gen::write_synthetic(all, tok, gn_out);
      std::printf("sentences=%zu\n", all.size());
    } else if (*fl) {
      auto rules = filter::derive_thresholds(load_word_sentences(fl_ref), fl_low, fl_high);
      rules.max_oov_per_sentence = fl_oov;
      rules.max_duplicates = fl_dup == 0 ? filter::kUnlimited : fl_dup;
      rules.required_keywords = {fl_req.begin(), fl_req.end()};
      rules.banned_keywords = {fl_ban.begin(), fl_ban.end()};
      const auto input = load_word_sentences(fl_in);
      const auto r = filter::apply_filters(input, rules);
      std::vector<std::string> lines;
      for (auto i : r.kept) lines.push_back(text::join(input[i]));
      text::write_lines(fl_out, lines);
      if (fl_report.empty()) {
        std::cout << r.report.to_text();
      } else {
        std::ofstream(fl_report, std::ios::binary) << r.report.to_text();
      }
    } else if (*ng) {
      std::vector<std::string> vocab;
      if (!ng_vocab.empty())
        for (const auto& l : text::read_lines(ng_vocab))
          if (!text::trim(l).empty()) vocab.emplace_back(text::trim(l));
      auto counts = ngram::count_ngrams(read_many(ng_in), ng_order, vocab);
      const auto cutoffs = parse_cutoffs(ng_cutoffs, ng_order);
      if (std::any_of(cutoffs.begin(), cutoffs.end(), [](auto c) { return c > 1; }))
        counts = ngram::prune_counts(counts, cutoffs);
      if (!ng_counts.empty()) ngram::write_counts(counts, ng_counts);
      const auto model = ngram::estimate_kneser_ney(counts);
      ngram::write_arpa(model, ng_out);
      for (int k = 1; k <= model.order(); ++k) std::printf("ngram %d=%zu\n", k, model.grams(k).size());
    } else if (*ip) {
      std::vector<ngram::NGramModel> models;
      for (const auto& p : ip_arpa) models.push_back(ngram::read_arpa(p));
      std::vector<const ngram::NGramModel*> ptrs;
      for (const auto& m : models) ptrs.push_back(&m);
      const auto dev = load_word_sentences(ip_dev);
      const auto em = ngram::optimize_weights_em(ptrs, dev, ip_tol, ip_iters);
      for (std::size_t i = 0; i < ip_arpa.size(); ++i) std::printf("weight %s %.6f\n", ip_arpa[i].c_str(), em.weights[i]);
      ngram::InterpolatedModel mix{ptrs, em.weights};
      std::printf("iterations=%d converged=%d dev_ppl=%.4f\n", em.iterations, em.converged ? 1 : 0,
                  ngram::perplexity(mix, dev));
      if (!ip_out.empty()) ngram::write_arpa(ngram::flatten(mix), ip_out);
    } else if (*ev) {
      if (!ev_arpa.empty()) {
        if (ev_text.empty()) throw Error("eval: --arpa needs --text");
        const auto model = ngram::read_arpa(ev_arpa);
        const auto sents = load_word_sentences(ev_text);
        std::size_t words = 0;
        for (const auto& s : sents) words += s.size();
        std::printf("sentences=%zu words=%zu ppl=%.4f\n", sents.size(), words, ngram::perplexity(model, sents));
      } else {
        if (ev_config.empty()) throw Error("eval: give --config or --arpa/--text");
        auto cfg = pipeline::PipelineConfig::load(ev_config);
        if (ev->count("--seed")) cfg.seed = ev_seed;
        std::cout << pipeline::format_report(pipeline::eval_report(cfg));
      }
    } else if (*run) {
      auto cfg = pipeline::PipelineConfig::load(run_config);
      if (run->count("--seed")) cfg.seed = run_seed;
      if (!run_work.empty()) cfg.work_dir = run_work;
      pipeline::RunOptions opts;
      opts.until = run_stage;
      opts.force = run_force;
      opts.quiet = run_quiet;
      const auto report = pipeline::run_pipeline(cfg, opts);
      for (const auto& s : report.stages) {
        const char* state = s.disabled ? "disabled" : s.skipped ? "reused" : "ran";
        std::fprintf(stderr, "%-12s %-8s %8.1fs  %s\n", s.name.c_str(), state, s.seconds, s.dir.c_str());
      }
      if (!report.results.is_null()) std::cout << pipeline::format_report(report.results);
    } else if (*mb) {
      bench::write_benchmark(bench::make_benchmark(mb_cfg), mb_out);
      std::printf("wrote %s\n", mb_out.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
