#include "lmaug/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "lmaug/corpus.hpp"
#include "lmaug/error.hpp"
#include "lmaug/interpolate.hpp"
#include "lmaug/ngram.hpp"
#include "lmaug/random.hpp"
#include "lmaug/text.hpp"
#include "lmaug/tokenizer.hpp"

namespace fs = std::filesystem;

namespace lmaug::pipeline {

namespace {

// ---------------------------------------------------------------- config I/O

void check_keys(const Json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw Error("config: '" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw Error("config: unknown key '" + key + "' in '" + where + "'");
  }
}

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("config: bad value for '" + where + "." + key + "': " + e.what());
  }
}

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

void read_hyper(const Json& j, const std::string& where, NeuralStage& s, bool allow_enabled) {
  if (allow_enabled) {
    check_keys(j, where, {"enabled", "steps", "batch_size", "learning_rate", "warmup_steps", "decay", "clip_norm",
                          "eval_interval", "patience"});
    read(j, "enabled", s.enabled, where);
  } else {
    check_keys(j, where, {"steps", "batch_size", "learning_rate", "warmup_steps", "decay", "clip_norm",
                          "eval_interval", "patience"});
  }
  auto& h = s.hyper;
  read(j, "steps", h.total_steps, where);
  read(j, "batch_size", h.batch_size, where);
  read(j, "learning_rate", h.learning_rate, where);
  read(j, "warmup_steps", h.warmup_steps, where);
  read(j, "decay", h.decay, where);
  read(j, "clip_norm", h.clip_norm, where);
  read(j, "eval_interval", h.eval_interval, where);
  read(j, "patience", h.patience, where);
}

Json hyper_json(const NeuralStage& s, bool with_enabled) {
  const auto& h = s.hyper;
  Json j{{"steps", h.total_steps},     {"batch_size", h.batch_size}, {"learning_rate", h.learning_rate},
         {"warmup_steps", h.warmup_steps}, {"decay", h.decay},       {"clip_norm", h.clip_norm},
         {"eval_interval", h.eval_interval}, {"patience", h.patience}};
  if (with_enabled) j["enabled"] = s.enabled;
  return j;
}

std::size_t unlimited_from_json(std::size_t v) { return v == 0 ? filter::kUnlimited : v; }
std::size_t unlimited_to_json(std::size_t v) { return v == filter::kUnlimited ? 0 : v; }

// ---------------------------------------------------------------- planning

const std::vector<std::string> kStages{"data",     "bpe",      "pretrain", "finetune", "scratch",     "prefixes",
                                       "generate", "filter",   "ngram",    "interpolate", "eval"};

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return text::fnv1a(ss.str());
}

std::uint64_t stage_seed(const PipelineConfig& cfg, const std::string& stage, std::uint64_t extra = 0) {
  return derive_seed(cfg.seed, text::fnv1a(stage), extra);
}

struct Plan {
  std::map<std::string, std::string> dir;
  std::map<std::string, bool> enabled;
};

Plan make_plan(const PipelineConfig& cfg) {
  const Json c = cfg.to_json();
  Plan plan;
  std::map<std::string, std::string> hash;
  auto add = [&](const std::string& name, Json j, std::initializer_list<const char*> upstream, bool on = true) {
    std::string material = name + "\n" + j.dump() + "\n";
    for (const char* u : upstream) material += hash.at(u) + "\n";
    hash[name] = hex(text::fnv1a(material));
    plan.dir[name] = (fs::path(cfg.work_dir) / (name + "-" + hash[name])).string();
    plan.enabled[name] = on;
  };

  Json data;
  if (cfg.benchmark) {
    data = c["data"];
    data["benchmark"]["seed"] = cfg.benchmark_seed_explicit ? cfg.benchmark->seed : cfg.seed;
  } else {
    for (const auto& [k, p] : std::vector<std::pair<std::string, std::string>>{
             {"general", cfg.general_path}, {"train", cfg.train_path}, {"dev", cfg.dev_path}, {"test", cfg.test_path}})
      data[k] = hex(file_hash(p));
  }
  const bool aug = cfg.augment;
  add("data", data, {});
  add("bpe", c["tokenizer"], {"data"});
  add("pretrain", Json{{"model", c["model"]}, {"hyper", c["pretrain"]}, {"seed", cfg.seed}}, {"data", "bpe"}, aug);
  add("finetune", Json{{"hyper", c["finetune"]}, {"seed", cfg.seed}}, {"pretrain"}, aug);
  add("scratch", Json{{"model", c["model"]}, {"hyper", c["scratch"]}, {"seed", cfg.seed}}, {"data", "bpe"},
      aug && cfg.scratch.enabled);
  add("prefixes", Json{{"prefixes", c["prefixes"]}, {"seed", cfg.seed}}, {"data", "bpe"}, aug);
  Json g = c["generation"];
  g.erase("subsample_sizes");
  add("generate", Json{{"generation", g}, {"seed", cfg.seed}}, {"finetune", "prefixes"}, aug);
  add("filter",
      Json{{"filter", c["filter"]}, {"subsample_sizes", c["generation"]["subsample_sizes"]}, {"seed", cfg.seed}},
      {"data", "generate"}, aug);
  if (aug)
    add("ngram", Json{{"ngram", c["ngram"]}, {"augment", true}}, {"data", "filter"});
  else
    add("ngram", Json{{"ngram", c["ngram"]}, {"augment", false}}, {"data"});
  add("interpolate", c["interpolation"], {"data", "ngram"}, aug);
  if (aug)
    add("eval", Json::object(), {"data", "bpe", "pretrain", "finetune", "scratch", "ngram", "interpolate"});
  else
    add("eval", Json::object(), {"data", "ngram"});
  return plan;
}

bool complete(const std::string& dir) { return fs::exists(fs::path(dir) / "stage.json"); }

std::string in(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

// ---------------------------------------------------------------- helpers

ngram::Sentences word_sentences(const std::string& path) { return load_word_sentences(path); }

nn::TransformerConfig model_config(const PipelineConfig& cfg, const BpeModel& bpe) {
  auto m = cfg.model;
  m.vocab_size = static_cast<int>(bpe.vocab_size());
  return m;
}

BpeModel load_bpe(const Plan& plan) {
  return BpeModel::load(in(plan.dir.at("bpe"), "merges.txt"), in(plan.dir.at("bpe"), "vocab.txt"));
}

Json ppl_pair(double dev, double test) { return Json{{"dev", dev}, {"test", test}}; }

Json em_json(const ngram::EmResult& em) {
  return Json{{"weights", em.weights},
              {"log_likelihood", em.log_likelihood},
              {"iterations", em.iterations},
              {"converged", em.converged}};
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << content;
}

Json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open " + path);
  try {
    return Json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": " + e.what());
  }
}

std::string arm_name(std::size_t size) { return "arm-" + std::to_string(size); }

// ---------------------------------------------------------------- stages

class Runner {
 public:
  Runner(const PipelineConfig& cfg, const Plan& plan, std::function<void(const std::string&)> log)
      : cfg_(cfg), plan_(plan), log_(std::move(log)) {}

  void run(const std::string& stage, const std::string& dir) {
    stage_ = stage;
    if (stage == "data") data(dir);
    else if (stage == "bpe") bpe(dir);
    else if (stage == "pretrain") pretrain(dir);
    else if (stage == "finetune") finetune(dir);
    else if (stage == "scratch") scratch(dir);
    else if (stage == "prefixes") prefixes(dir);
    else if (stage == "generate") generate(dir);
    else if (stage == "filter") filter_stage(dir);
    else if (stage == "ngram") ngram_stage(dir);
    else if (stage == "interpolate") interpolate(dir);
    else if (stage == "eval") eval(dir);
  }

 private:
  const std::string& dir(const std::string& stage) const { return plan_.dir.at(stage); }
  std::string data_file(const std::string& name) const { return in(dir("data"), name + ".txt"); }

  void say(const std::string& msg) const {
    if (log_) log_("[" + stage_ + "] " + msg);
  }

  void data(const std::string& out) {
    if (cfg_.benchmark) {
      auto b = *cfg_.benchmark;
      if (!cfg_.benchmark_seed_explicit) b.seed = cfg_.seed;
      bench::write_benchmark(bench::make_benchmark(b), out);
    } else {
      fs::copy_file(cfg_.general_path, data_file_in(out, "general"));
      fs::copy_file(cfg_.train_path, data_file_in(out, "train"));
      fs::copy_file(cfg_.dev_path, data_file_in(out, "dev"));
      fs::copy_file(cfg_.test_path, data_file_in(out, "test"));
    }
  }

  static std::string data_file_in(const std::string& d, const std::string& name) { return in(d, name + ".txt"); }

  void bpe(const std::string& out) {
    std::vector<std::string> lines;
    const auto general = text::read_lines(data_file("general"));
    const std::size_t n = cfg_.bpe_max_general_lines == 0 ? general.size()
                                                          : std::min(general.size(), cfg_.bpe_max_general_lines);
    lines.assign(general.begin(), general.begin() + static_cast<std::ptrdiff_t>(n));
    for (auto& l : text::read_lines(data_file("train"))) lines.push_back(std::move(l));
    auto model = BpeModel::learn(lines, cfg_.bpe_merges);
    model.save(in(out, "merges.txt"), in(out, "vocab.txt"));
    say("vocab size " + std::to_string(model.vocab_size()));
  }

  nn::ProgressFn progress(int total) const {
    const int every = std::max(1, total / 10);
    return [this, every, total](const nn::LossLogEntry& e) {
      if (e.step % every == 0 || e.step == total) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "step %lld/%d loss %.4f", static_cast<long long>(e.step), total, e.loss);
        say(buf);
      }
    };
  }

  void save_training(const nn::TrainResult& r, const std::string& out) const {
    nn::save_checkpoint(r.checkpoint, in(out, "model.ckpt"));
    nn::write_loss_log(r.log, in(out, "loss.csv"));
  }

  nn::TrainHyper hyper(const NeuralStage& s, const std::string& stage) const {
    auto h = s.hyper;
    h.seed = stage_seed(cfg_, stage);
    return h;
  }

  void pretrain(const std::string& out) {
    const auto tok = load_bpe(plan_);
    const auto general = load_corpus(data_file("general"), tok);
    const auto dev = load_corpus(data_file("dev"), tok);
    const auto h = hyper(cfg_.pretrain, "pretrain");
    auto init = nn::init_params(model_config(cfg_, tok), stage_seed(cfg_, "pretrain-init"));
    save_training(nn::train(std::move(init), general, h, h.eval_interval > 0 ? &dev : nullptr,
                            progress(h.total_steps)),
                  out);
  }

  void finetune(const std::string& out) {
    const auto tok = load_bpe(plan_);
    const auto pre = nn::load_checkpoint(in(dir("pretrain"), "model.ckpt"));
    const auto train = load_corpus(data_file("train"), tok);
    const auto dev = load_corpus(data_file("dev"), tok);
    const auto h = hyper(cfg_.finetune, "finetune");
    save_training(nn::finetune(pre, model_config(cfg_, tok), train, h, h.eval_interval > 0 ? &dev : nullptr,
                               progress(h.total_steps)),
                  out);
  }

  void scratch(const std::string& out) {
    const auto tok = load_bpe(plan_);
    const auto train = load_corpus(data_file("train"), tok);
    const auto dev = load_corpus(data_file("dev"), tok);
    const auto h = hyper(cfg_.scratch, "scratch");
    auto init = nn::init_params(model_config(cfg_, tok), stage_seed(cfg_, "scratch-init"));
    save_training(nn::train(std::move(init), train, h, h.eval_interval > 0 ? &dev : nullptr,
                            progress(h.total_steps)),
                  out);
  }

  void prefixes(const std::string& out) {
    const auto tok = load_bpe(plan_);
    const auto train = load_corpus(data_file("train"), tok);
    const std::set<int> ks(cfg_.prefix_k.begin(), cfg_.prefix_k.end());
    const auto pc = extract_prefixes(train, ks, cfg_.prefix_max_per_k, stage_seed(cfg_, "prefixes"));
    save_prefixes(pc, tok, in(out, "prefixes.txt"));
    say(std::to_string(pc.size()) + " prefixes");
  }

  void generate(const std::string& out) {
    const auto tok = load_bpe(plan_);
    const auto ckpt = nn::load_checkpoint(in(dir("finetune"), "model.ckpt"));
    const auto pc = load_prefixes(in(dir("prefixes"), "prefixes.txt"));
    gen::SyntheticCorpus all;
    for (std::size_t i = 0; i < cfg_.temperatures.size(); ++i) {
      auto g = cfg_.generation;
      g.temperature = cfg_.temperatures[i];
      g.seed = stage_seed(cfg_, "generate", i);
      char label[48];
      std::snprintf(label, sizeof label, "tau=%g", g.temperature);
      const std::string tag = label;
      auto part = gen::generate_corpus(ckpt, pc, g, tok, [this, tag](std::size_t done, std::size_t total) {
        const std::size_t every = std::max<std::size_t>(1, total / 5);
        if (done % every == 0 || done == total)
          say(tag + " " + std::to_string(done) + "/" + std::to_string(total) + " prefixes");
      });
      for (auto& s : part.sentences) all.sentences.push_back(std::move(s));
    }
    gen::write_synthetic(all, tok, in(out, "synthetic.txt"));
    say(std::to_string(all.size()) + " sentences");
  }

  filter::FilterRuleSet rules() const {
    auto r = filter::derive_thresholds(word_sentences(data_file("train")), cfg_.filter_low, cfg_.filter_high);
    if (cfg_.min_len) r.min_len = *cfg_.min_len;
    if (cfg_.max_len) r.max_len = *cfg_.max_len;
    r.max_oov_per_sentence = cfg_.max_oov_per_sentence;
    r.required_keywords = {cfg_.required_keywords.begin(), cfg_.required_keywords.end()};
    r.banned_keywords = {cfg_.banned_keywords.begin(), cfg_.banned_keywords.end()};
    r.max_duplicates = cfg_.max_duplicates;
    return r;
  }

  void filter_stage(const std::string& out) {
    ngram::Sentences generated;
    for (const auto& line : text::read_lines(in(dir("generate"), "synthetic.txt"))) {
      auto w = text::split_words(line);
      if (!w.empty()) generated.push_back(std::move(w));
    }
    const auto r = rules();
    Json rj{{"min_len", r.min_len},
            {"max_len", unlimited_to_json(r.max_len)},
            {"vocab_size", r.vocab ? r.vocab->size() : 0},
            {"max_oov_per_sentence", r.max_oov_per_sentence},
            {"required_keywords", r.required_keywords},
            {"banned_keywords", r.banned_keywords},
            {"max_duplicates", unlimited_to_json(r.max_duplicates)}};
    write_text(in(out, "rules.json"), rj.dump(2) + "\n");

    auto run_one = [&](const ngram::Sentences& input, const std::string& name) {
      const auto res = filter::apply_filters(input, r);
      std::vector<std::string> lines;
      lines.reserve(res.kept.size());
      for (auto i : res.kept) lines.push_back(text::join(input[i]));
      text::write_lines(in(out, name + ".txt"), lines);
      write_text(in(out, name + "_report.txt"), res.report.to_text());
      say(name + ": " + std::to_string(res.report.input) + " -> " + std::to_string(res.report.output));
    };
    run_one(generated, "filtered");
    for (std::size_t size : cfg_.subsample_sizes) {
      std::vector<std::size_t> idx(generated.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      Rng rng(stage_seed(cfg_, "subsample", size));
      rng.shuffle(idx);
      idx.resize(std::min(size, idx.size()));
      std::sort(idx.begin(), idx.end());
      ngram::Sentences subset;
      subset.reserve(idx.size());
      for (auto i : idx) subset.push_back(generated[i]);
      run_one(subset, arm_name(size));
    }
  }

  ngram::NGramModel estimate(const ngram::Sentences& s, const std::vector<std::string>& vocab) const {
    auto counts = ngram::count_ngrams(s, cfg_.ngram_order, vocab);
    if (std::any_of(cfg_.ngram_cutoffs.begin(), cfg_.ngram_cutoffs.end(), [](auto c) { return c > 1; }))
      counts = ngram::prune_counts(counts, cfg_.ngram_cutoffs);
    return ngram::estimate_kneser_ney(counts);
  }

  void ngram_stage(const std::string& out) {
    ngram::Sentences baseline;
    for (const auto& name : cfg_.baseline_corpora)
      for (auto& s : word_sentences(data_file(name))) baseline.push_back(std::move(s));

    std::vector<std::pair<std::string, ngram::Sentences>> synthetic;
    if (cfg_.augment) {
      synthetic.emplace_back("synthetic", word_sentences(in(dir("filter"), "filtered.txt")));
      for (std::size_t size : cfg_.subsample_sizes)
        synthetic.emplace_back(arm_name(size), word_sentences(in(dir("filter"), arm_name(size) + ".txt")));
    }

    // One closed vocabulary for every model so their perplexities compare.
    std::set<std::string> words;
    for (const auto& s : word_sentences(data_file("train")))
      for (const auto& w : s) words.insert(w);
    for (const auto& s : baseline)
      for (const auto& w : s) words.insert(w);
    for (const auto& [name, sents] : synthetic)
      for (const auto& s : sents)
        for (const auto& w : s) words.insert(w);
    const std::vector<std::string> vocab(words.begin(), words.end());
    text::write_lines(in(out, "vocab.txt"), vocab);

    ngram::write_arpa(estimate(baseline, vocab), in(out, "baseline.arpa"));
    say("baseline: " + std::to_string(baseline.size()) + " sentences, vocab " + std::to_string(vocab.size()));
    for (const auto& [name, sents] : synthetic) {
      if (sents.empty()) throw Error(name + ": no sentence survived filtering");
      ngram::write_arpa(estimate(sents, vocab), in(out, name + ".arpa"));
      say(name + ": " + std::to_string(sents.size()) + " sentences");
    }
  }

  void interpolate(const std::string& out) {
    const auto dev = word_sentences(data_file("dev"));
    const auto base = ngram::read_arpa(in(dir("ngram"), "baseline.arpa"));
    const auto syn = ngram::read_arpa(in(dir("ngram"), "synthetic.arpa"));
    const auto em = ngram::optimize_weights_em({&base, &syn}, dev, cfg_.em_tol, cfg_.em_max_iters);
    char buf[96];
    std::snprintf(buf, sizeof buf, "weights baseline=%.4f synthetic=%.4f (%d iterations)", em.weights[0],
                  em.weights[1], em.iterations);
    say(buf);
    ngram::InterpolatedModel mix{{&base, &syn}, em.weights};
    ngram::write_arpa(ngram::flatten(mix), in(out, "interpolated.arpa"));

    Json j{{"main", em_json(em)}, {"arms", Json::object()}};
    for (std::size_t size : cfg_.subsample_sizes) {
      const auto arm = ngram::read_arpa(in(dir("ngram"), arm_name(size) + ".arpa"));
      j["arms"][std::to_string(size)] =
          em_json(ngram::optimize_weights_em({&base, &arm}, dev, cfg_.em_tol, cfg_.em_max_iters));
    }
    write_text(in(out, "weights.json"), j.dump(2) + "\n");
  }

  void eval(const std::string& out) {
    const auto report = eval_report(cfg_);
    write_text(in(out, "report.json"), report.dump(2) + "\n");
    write_text(in(out, "report.txt"), format_report(report));
  }

  const PipelineConfig& cfg_;
  const Plan& plan_;
  std::function<void(const std::string&)> log_;
  std::string stage_;
};

std::size_t line_count(const std::string& path) {
  std::size_t n = 0;
  for (const auto& l : text::read_lines(path))
    if (!text::trim(l).empty()) ++n;
  return n;
}

void flatten_json(const Json& j, const std::string& prefix, std::ostringstream& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten_json(v, prefix.empty() ? k : prefix + "." + k, out);
  } else if (j.is_array() && !j.empty() && j.front().is_object()) {
    for (std::size_t i = 0; i < j.size(); ++i) flatten_json(j[i], prefix + "." + std::to_string(i), out);
  } else if (j.is_number_float()) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", j.get<double>());
    out << prefix << " = " << buf << "\n";
  } else if (j.is_array()) {
    out << prefix << " =";
    for (const auto& v : j) {
      if (v.is_number_float()) {
        char buf[64];
        std::snprintf(buf, sizeof buf, " %.6f", v.get<double>());
        out << buf;
      } else {
        out << " " << v.dump();
      }
    }
    out << "\n";
  } else if (j.is_string()) {
    out << prefix << " = " << j.get<std::string>() << "\n";
  } else {
    out << prefix << " = " << j.dump() << "\n";
  }
}

}  // namespace

// ---------------------------------------------------------------- config

PipelineConfig PipelineConfig::from_json(const Json& j, const std::string& base_dir) {
  PipelineConfig c;
  check_keys(j, "config", {"seed", "work_dir", "data", "tokenizer", "augment", "model", "pretrain", "finetune",
                           "scratch", "prefixes", "generation", "filter", "ngram", "interpolation"});
  read(j, "seed", c.seed, "config");
  read(j, "work_dir", c.work_dir, "config");
  c.work_dir = resolve(base_dir, c.work_dir);
  read(j, "augment", c.augment, "config");

  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, "data", {"benchmark", "general", "train", "dev", "test"});
    if (d.contains("benchmark")) {
      const auto& b = d["benchmark"];
      check_keys(b, "data.benchmark",
                 {"general_sentences", "train_sentences", "dev_sentences", "test_sentences", "seed", "lexicon_seed"});
      bench::BenchmarkConfig bc;
      read(b, "general_sentences", bc.general_sentences, "data.benchmark");
      read(b, "train_sentences", bc.train_sentences, "data.benchmark");
      read(b, "dev_sentences", bc.dev_sentences, "data.benchmark");
      read(b, "test_sentences", bc.test_sentences, "data.benchmark");
      read(b, "lexicon_seed", bc.lexicon_seed, "data.benchmark");
      c.benchmark_seed_explicit = b.contains("seed");
      read(b, "seed", bc.seed, "data.benchmark");
      c.benchmark = bc;
    }
    read(d, "general", c.general_path, "data");
    read(d, "train", c.train_path, "data");
    read(d, "dev", c.dev_path, "data");
    read(d, "test", c.test_path, "data");
    c.general_path = resolve(base_dir, c.general_path);
    c.train_path = resolve(base_dir, c.train_path);
    c.dev_path = resolve(base_dir, c.dev_path);
    c.test_path = resolve(base_dir, c.test_path);
  }
  if (j.contains("tokenizer")) {
    const auto& t = j["tokenizer"];
    check_keys(t, "tokenizer", {"merges", "max_general_lines"});
    read(t, "merges", c.bpe_merges, "tokenizer");
    read(t, "max_general_lines", c.bpe_max_general_lines, "tokenizer");
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    check_keys(m, "model", {"n_blocks", "n_heads", "d_model", "d_ff", "max_seq_len", "dropout", "tie_embeddings"});
    read(m, "n_blocks", c.model.n_blocks, "model");
    read(m, "n_heads", c.model.n_heads, "model");
    read(m, "d_model", c.model.d_model, "model");
    read(m, "d_ff", c.model.d_ff, "model");
    read(m, "max_seq_len", c.model.max_seq_len, "model");
    read(m, "dropout", c.model.dropout_rate, "model");
    read(m, "tie_embeddings", c.model.tie_embeddings, "model");
  }
  if (j.contains("pretrain")) read_hyper(j["pretrain"], "pretrain", c.pretrain, false);
  if (j.contains("finetune")) read_hyper(j["finetune"], "finetune", c.finetune, false);
  if (j.contains("scratch")) read_hyper(j["scratch"], "scratch", c.scratch, true);
  if (j.contains("prefixes")) {
    const auto& p = j["prefixes"];
    check_keys(p, "prefixes", {"k_values", "max_per_k"});
    read(p, "k_values", c.prefix_k, "prefixes");
    read(p, "max_per_k", c.prefix_max_per_k, "prefixes");
  }
  if (j.contains("generation")) {
    const auto& g = j["generation"];
    check_keys(g, "generation", {"temperatures", "samples_per_prefix", "keep_top", "length_penalty", "max_new_tokens",
                                 "subsample_sizes"});
    read(g, "temperatures", c.temperatures, "generation");
    read(g, "samples_per_prefix", c.generation.samples_per_prefix, "generation");
    read(g, "keep_top", c.generation.keep_top, "generation");
    read(g, "length_penalty", c.generation.length_penalty, "generation");
    read(g, "max_new_tokens", c.generation.max_new_tokens, "generation");
    read(g, "subsample_sizes", c.subsample_sizes, "generation");
  }
  if (j.contains("filter")) {
    const auto& f = j["filter"];
    check_keys(f, "filter", {"low_quantile", "high_quantile", "min_len", "max_len", "max_oov_per_sentence",
                             "required_keywords", "banned_keywords", "max_duplicates"});
    read(f, "low_quantile", c.filter_low, "filter");
    read(f, "high_quantile", c.filter_high, "filter");
    if (f.contains("min_len")) c.min_len = f["min_len"].get<std::size_t>();
    if (f.contains("max_len")) c.max_len = f["max_len"].get<std::size_t>();
    read(f, "max_oov_per_sentence", c.max_oov_per_sentence, "filter");
    read(f, "required_keywords", c.required_keywords, "filter");
    read(f, "banned_keywords", c.banned_keywords, "filter");
    std::size_t dup = 0;
    read(f, "max_duplicates", dup, "filter");
    c.max_duplicates = unlimited_from_json(dup);
  }
  if (j.contains("ngram")) {
    const auto& n = j["ngram"];
    check_keys(n, "ngram", {"order", "cutoffs", "baseline_corpora"});
    read(n, "order", c.ngram_order, "ngram");
    if (!n.contains("cutoffs")) c.ngram_cutoffs.assign(static_cast<std::size_t>(std::max(0, c.ngram_order)), 1);
    read(n, "cutoffs", c.ngram_cutoffs, "ngram");
    read(n, "baseline_corpora", c.baseline_corpora, "ngram");
  }
  if (j.contains("interpolation")) {
    const auto& e = j["interpolation"];
    check_keys(e, "interpolation", {"tol", "max_iters"});
    read(e, "tol", c.em_tol, "interpolation");
    read(e, "max_iters", c.em_max_iters, "interpolation");
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  const Json j = read_json(path);
  return from_json(j, fs::path(path).parent_path().string().empty() ? "." : fs::path(path).parent_path().string());
}

Json PipelineConfig::to_json() const {
  Json j;
  j["seed"] = seed;
  j["work_dir"] = work_dir;
  j["augment"] = augment;
  Json d = Json::object();
  if (benchmark) {
    d["benchmark"] = Json{{"general_sentences", benchmark->general_sentences},
                          {"train_sentences", benchmark->train_sentences},
                          {"dev_sentences", benchmark->dev_sentences},
                          {"test_sentences", benchmark->test_sentences},
                          {"lexicon_seed", benchmark->lexicon_seed}};
    if (benchmark_seed_explicit) d["benchmark"]["seed"] = benchmark->seed;
  } else {
    d = Json{{"general", general_path}, {"train", train_path}, {"dev", dev_path}, {"test", test_path}};
  }
  j["data"] = d;
  j["tokenizer"] = Json{{"merges", bpe_merges}, {"max_general_lines", bpe_max_general_lines}};
  j["model"] = Json{{"n_blocks", model.n_blocks},         {"n_heads", model.n_heads},
                    {"d_model", model.d_model},           {"d_ff", model.d_ff},
                    {"max_seq_len", model.max_seq_len},   {"dropout", model.dropout_rate},
                    {"tie_embeddings", model.tie_embeddings}};
  j["pretrain"] = hyper_json(pretrain, false);
  j["finetune"] = hyper_json(finetune, false);
  j["scratch"] = hyper_json(scratch, true);
  j["prefixes"] = Json{{"k_values", prefix_k}, {"max_per_k", prefix_max_per_k}};
  j["generation"] = Json{{"temperatures", temperatures},
                         {"samples_per_prefix", generation.samples_per_prefix},
                         {"keep_top", generation.keep_top},
                         {"length_penalty", generation.length_penalty},
                         {"max_new_tokens", generation.max_new_tokens},
                         {"subsample_sizes", subsample_sizes}};
  Json f{{"low_quantile", filter_low},
         {"high_quantile", filter_high},
         {"max_oov_per_sentence", max_oov_per_sentence},
         {"required_keywords", required_keywords},
         {"banned_keywords", banned_keywords},
         {"max_duplicates", unlimited_to_json(max_duplicates)}};
  if (min_len) f["min_len"] = *min_len;
  if (max_len) f["max_len"] = *max_len;
  j["filter"] = f;
  j["ngram"] = Json{{"order", ngram_order}, {"cutoffs", ngram_cutoffs}, {"baseline_corpora", baseline_corpora}};
  j["interpolation"] = Json{{"tol", em_tol}, {"max_iters", em_max_iters}};
  return j;
}

void PipelineConfig::validate() const {
  if (work_dir.empty()) throw Error("config: work_dir is empty");
  if (!benchmark) {
    for (const auto& [k, p] : std::vector<std::pair<std::string, std::string>>{
             {"general", general_path}, {"train", train_path}, {"dev", dev_path}, {"test", test_path}}) {
      if (p.empty()) throw Error("config: data." + k + " is not set (and no benchmark is configured)");
      if (!fs::is_regular_file(p)) throw Error("config: data." + k + " does not exist: " + p);
    }
  } else if (benchmark->train_sentences == 0 || benchmark->dev_sentences == 0 || benchmark->test_sentences == 0 ||
             benchmark->general_sentences == 0) {
    throw Error("config: benchmark corpus sizes must be positive");
  }
  if (bpe_merges < 0) throw Error("config: tokenizer.merges must be >= 0");
  auto m = model;
  m.vocab_size = std::max(m.vocab_size, 8);
  m.validate();
  for (const auto* s : {&pretrain, &finetune, &scratch}) {
    if (s->hyper.total_steps < 0 || s->hyper.batch_size <= 0 || !(s->hyper.learning_rate > 0))
      throw Error("config: training steps, batch_size and learning_rate must be positive");
    if (s->hyper.decay != "linear" && s->hyper.decay != "constant")
      throw Error("config: decay must be 'linear' or 'constant'");
  }
  if (augment) {
    if (prefix_k.empty() || prefix_max_per_k == 0) throw Error("config: prefixes need k_values and max_per_k > 0");
    for (int k : prefix_k)
      if (k < 1) throw Error("config: prefix k values must be >= 1");
    if (temperatures.empty()) throw Error("config: generation.temperatures is empty");
    for (double t : temperatures) {
      auto g = generation;
      g.temperature = t;
      g.validate();
    }
    for (auto s : subsample_sizes)
      if (s == 0) throw Error("config: subsample sizes must be positive");
  }
  if (!(filter_low >= 0.0 && filter_low < filter_high && filter_high <= 1.0))
    throw Error("config: filter quantiles must satisfy 0 <= low < high <= 1");
  if (min_len && max_len && *min_len > *max_len) throw Error("config: filter.min_len > filter.max_len");
  if (ngram_order < 1 || ngram_order > ngram::kMaxOrder) throw Error("config: ngram.order out of range");
  if (ngram_cutoffs.size() != static_cast<std::size_t>(ngram_order))
    throw Error("config: ngram.cutoffs needs one entry per order");
  if (baseline_corpora.empty()) throw Error("config: ngram.baseline_corpora is empty");
  for (const auto& b : baseline_corpora)
    if (b != "train" && b != "general") throw Error("config: unknown baseline corpus '" + b + "'");
  if (!(em_tol > 0) || em_max_iters < 1) throw Error("config: interpolation tol and max_iters must be positive");
}

// ---------------------------------------------------------------- running

const std::vector<std::string>& stage_names() { return kStages; }

std::string stage_dir(const PipelineConfig& cfg, const std::string& stage) {
  const auto plan = make_plan(cfg);
  auto it = plan.dir.find(stage);
  if (it == plan.dir.end()) throw Error("unknown stage '" + stage + "'");
  return it->second;
}

RunReport run_pipeline(const PipelineConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  if (!opts.until.empty() && std::find(kStages.begin(), kStages.end(), opts.until) == kStages.end())
    throw Error("unknown stage '" + opts.until + "'");
  for (const auto& f : opts.force)
    if (f != "all" && std::find(kStages.begin(), kStages.end(), f) == kStages.end())
      throw Error("unknown stage '" + f + "'");

  auto log = opts.log;
  if (!log && !opts.quiet) log = [](const std::string& m) { std::cerr << m << std::endl; };
  if (opts.quiet) log = nullptr;

  fs::create_directories(cfg.work_dir);
  const auto plan = make_plan(cfg);
  Runner runner(cfg, plan, log);
  RunReport report;
  for (const auto& name : kStages) {
    StageStatus st;
    st.name = name;
    st.dir = plan.dir.at(name);
    if (!plan.enabled.at(name)) {
      st.disabled = true;
      report.stages.push_back(st);
      if (name == opts.until) break;
      continue;
    }
    const bool forced = std::find(opts.force.begin(), opts.force.end(), name) != opts.force.end() ||
                        std::find(opts.force.begin(), opts.force.end(), "all") != opts.force.end();
    const auto marker = in(st.dir, "stage.json");
    if (complete(st.dir) && !forced) {
      st.skipped = true;
      st.seconds = read_json(marker).value("seconds", 0.0);
      if (log) log("[" + name + "] up to date (" + st.dir + ")");
    } else {
      fs::remove_all(st.dir);
      fs::create_directories(st.dir);
      if (log) log("[" + name + "] running in " + st.dir);
      const auto t0 = std::chrono::steady_clock::now();
      try {
        runner.run(name, st.dir);
      } catch (const std::exception& e) {
        throw Error("stage '" + name + "' failed: " + e.what());
      }
      st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      write_text(marker, Json{{"stage", name}, {"seconds", st.seconds}}.dump() + "\n");
    }
    report.stages.push_back(st);
    if (name == opts.until) break;
  }

  Json timings = Json::object();
  for (const auto& s : report.stages)
    if (!s.disabled) timings[s.name] = s.seconds;
  write_text(in(cfg.work_dir, "timings.json"), timings.dump(2) + "\n");

  const auto eval_dir = plan.dir.at("eval");
  if (complete(eval_dir) && (report.stages.size() == kStages.size())) {
    report.results = read_json(in(eval_dir, "report.json"));
    fs::copy_file(in(eval_dir, "report.json"), in(cfg.work_dir, "report.json"),
                  fs::copy_options::overwrite_existing);
    fs::copy_file(in(eval_dir, "report.txt"), in(cfg.work_dir, "report.txt"), fs::copy_options::overwrite_existing);
  }
  return report;
}

// ---------------------------------------------------------------- evaluation

Json eval_report(const PipelineConfig& cfg) {
  const auto plan = make_plan(cfg);
  const auto& data = plan.dir.at("data");
  const auto& ng = plan.dir.at("ngram");
  {
    std::vector<std::string> missing;
    for (const auto& p : {in(data, "dev.txt"), in(data, "test.txt"), in(ng, "baseline.arpa")})
      if (!complete(fs::path(p).parent_path().string()) || !fs::exists(p)) missing.push_back(p);
    if (!missing.empty()) {
      std::string msg = "eval: missing required artifacts:";
      for (const auto& m : missing) msg += " " + m;
      throw Error(msg);
    }
  }
  const auto dev = load_word_sentences(in(data, "dev.txt"));
  const auto test = load_word_sentences(in(data, "test.txt"));

  Json r;
  r["seed"] = cfg.seed;
  Json sizes{{"general", line_count(in(data, "general.txt"))},
             {"train", line_count(in(data, "train.txt"))},
             {"dev", dev.size()},
             {"test", test.size()}};

  // Neural models, scored with the stored tokenizer.
  if (complete(plan.dir.at("bpe"))) {
    const auto tok = load_bpe(plan);
    const auto dev_c = load_corpus(in(data, "dev.txt"), tok);
    const auto test_c = load_corpus(in(data, "test.txt"), tok);
    Json neural = Json::object();
    for (const auto& [key, stage] : std::vector<std::pair<std::string, std::string>>{
             {"pretrained", "pretrain"}, {"finetuned", "finetune"}, {"scratch", "scratch"}}) {
      if (!plan.enabled.at(stage) || !complete(plan.dir.at(stage))) continue;
      const auto ckpt = nn::load_checkpoint(in(plan.dir.at(stage), "model.ckpt"));
      neural[key] = ppl_pair(nn::neural_perplexity(ckpt, dev_c), nn::neural_perplexity(ckpt, test_c));
    }
    if (!neural.empty()) r["neural"] = neural;
  }

  const auto base = ngram::read_arpa(in(ng, "baseline.arpa"));
  Json ngr;
  ngr["baseline"] = ppl_pair(ngram::perplexity(base, dev), ngram::perplexity(base, test));
  ngr["vocab_size"] = base.vocab().size();

  const auto& interp = plan.dir.at("interpolate");
  if (cfg.augment && fs::exists(in(ng, "synthetic.arpa"))) {
    const auto syn = ngram::read_arpa(in(ng, "synthetic.arpa"));
    ngr["synthetic"] = ppl_pair(ngram::perplexity(syn, dev), ngram::perplexity(syn, test));
    if (complete(interp)) {
      const auto w = read_json(in(interp, "weights.json"));
      r["em"] = w["main"];
      ngram::InterpolatedModel mix{{&base, &syn}, w["main"]["weights"].get<std::vector<double>>()};
      ngr["interpolated"] = ppl_pair(ngram::perplexity(mix, dev), ngram::perplexity(mix, test));
      const auto flat = ngram::read_arpa(in(interp, "interpolated.arpa"));
      ngr["flattened"] = ppl_pair(ngram::perplexity(flat, dev), ngram::perplexity(flat, test));

      Json arms = Json::array();
      for (std::size_t size : cfg.subsample_sizes) {
        const auto arm = ngram::read_arpa(in(ng, arm_name(size) + ".arpa"));
        const auto& aw = w["arms"][std::to_string(size)];
        ngram::InterpolatedModel amix{{&base, &arm}, aw["weights"].get<std::vector<double>>()};
        arms.push_back(Json{{"size", size},
                            {"filtered", line_count(in(plan.dir.at("filter"), arm_name(size) + ".txt"))},
                            {"synthetic", ppl_pair(ngram::perplexity(arm, dev), ngram::perplexity(arm, test))},
                            {"interpolated", ppl_pair(ngram::perplexity(amix, dev), ngram::perplexity(amix, test))},
                            {"weights", aw["weights"]}});
      }
      if (!arms.empty()) r["arms"] = arms;
    }
  }
  r["ngram"] = ngr;

  const auto& flt = plan.dir.at("filter");
  if (cfg.augment && complete(flt)) {
    Json f;
    for (const auto& line : text::read_lines(in(flt, "filtered_report.txt"))) {
      auto eq = line.find('=');
      if (eq != std::string::npos) f[line.substr(0, eq)] = std::stoull(line.substr(eq + 1));
    }
    r["filter"] = f;
    sizes["generated"] = f.value("input", 0ULL);
    sizes["filtered"] = f.value("output", 0ULL);
  }
  if (cfg.augment && complete(plan.dir.at("prefixes")))
    sizes["prefixes"] = line_count(in(plan.dir.at("prefixes"), "prefixes.txt.k"));
  r["corpus_sizes"] = sizes;
  return r;
}

std::string format_report(const Json& report) {
  std::ostringstream out;
  flatten_json(report, "", out);
  return out.str();
}

}  // namespace lmaug::pipeline
