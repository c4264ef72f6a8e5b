#include "lmaug/neural/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "lmaug/error.hpp"
#include "lmaug/neural/transformer.hpp"
#include "lmaug/random.hpp"

namespace lmaug::nn {

int TrainHyper::effective_warmup() const {
  if (warmup_steps >= 0) return warmup_steps;
  return std::max(1, total_steps / 100);
}

double TrainHyper::lr_at(std::int64_t step) const {
  // `step` is 1-based: the update about to be applied.
  const int warm = effective_warmup();
  if (warm > 0 && step <= warm) return learning_rate * static_cast<double>(step) / warm;
  if (decay == "constant") return learning_rate;
  const double remaining = static_cast<double>(total_steps - step + 1);
  const double span = static_cast<double>(std::max(1, total_steps - warm));
  return learning_rate * std::clamp(remaining / span, 0.0, 1.0);
}

namespace {

// Deterministic epoch-permutation sampler addressable by step, so training
// resumed from a checkpoint sees the same batches as an uninterrupted run.
class BatchSampler {
 public:
  BatchSampler(std::vector<std::size_t> usable, std::size_t batch_size, std::uint64_t seed)
      : usable_(std::move(usable)), batch_size_(batch_size), seed_(seed) {}

  std::vector<std::size_t> batch(std::int64_t step) {
    std::vector<std::size_t> out;
    const std::size_t n = usable_.size();
    std::size_t pos = static_cast<std::size_t>(step) * batch_size_;
    while (out.size() < batch_size_) {
      const std::size_t epoch = pos / n;
      if (epoch != cached_epoch_) {
        perm_ = usable_;
        Rng rng(derive_seed(seed_, epoch, 0xba7c4));
        rng.shuffle(perm_);
        cached_epoch_ = epoch;
      }
      out.push_back(perm_[pos % n]);
      ++pos;
    }
    return out;
  }

 private:
  std::vector<std::size_t> usable_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::vector<std::size_t> perm_;
  std::size_t cached_epoch_ = static_cast<std::size_t>(-1);
};

}  // namespace

TrainResult train(Checkpoint ckpt, const Corpus& corpus, const TrainHyper& hyper,
                  const Corpus* dev, const ProgressFn& progress) {
  if (corpus.empty()) throw Error("train: empty corpus");
  if (hyper.batch_size <= 0) throw Error("train: batch_size must be positive");
  const ParamLayout layout(ckpt.config);
  if (ckpt.optimizer.m.size() != layout.total_size()) {
    ckpt.optimizer.m.assign(layout.total_size(), 0.0);
    ckpt.optimizer.v.assign(layout.total_size(), 0.0);
  }

  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto len = corpus.sentences[i].size();
    if (len >= 2 && len <= static_cast<std::size_t>(ckpt.config.max_seq_len)) usable.push_back(i);
  }
  if (usable.empty()) throw Error("train: no sentence fits within max_seq_len");

  TrainResult result;
  const bool early_stop = dev != nullptr && hyper.eval_interval > 0;
  double best_ppl = std::numeric_limits<double>::infinity();
  int evals_without_gain = 0;
  if (early_stop) {
    best_ppl = neural_perplexity(ckpt, *dev);
    result.dev_perplexity.emplace_back(ckpt.optimizer.step, best_ppl);
    result.checkpoint = ckpt;
    result.best_step = ckpt.optimizer.step;
  }

  BatchSampler sampler(usable, static_cast<std::size_t>(hyper.batch_size), hyper.seed);
  AlignedVector<float> grad;
  std::vector<std::vector<TokenId>> batch;
  auto& opt = ckpt.optimizer;
  while (opt.step < hyper.total_steps &&
         (hyper.stop_at_step < 0 || opt.step < hyper.stop_at_step)) {
    const std::int64_t step = opt.step + 1;
    batch.clear();
    for (auto idx : sampler.batch(opt.step)) batch.push_back(corpus.sentences[idx]);

    const Transformer<float> model(ckpt.config, ckpt.params);
    const auto loss = model.loss_and_grad(batch, grad, true, derive_seed(hyper.seed, step, 0xd0));
    const double mean = loss.mean();
    if (!std::isfinite(mean)) {
      throw Error("train: non-finite loss at step " + std::to_string(step));
    }

    double norm2 = 0.0;
    for (float g : grad) norm2 += static_cast<double>(g) * g;
    const double norm = std::sqrt(norm2);
    const double clip = (hyper.clip_norm > 0 && norm > hyper.clip_norm) ? hyper.clip_norm / norm : 1.0;

    const double lr = hyper.lr_at(step);
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double g = grad[i] * clip;
      opt.m[i] = hyper.beta1 * opt.m[i] + (1.0 - hyper.beta1) * g;
      opt.v[i] = hyper.beta2 * opt.v[i] + (1.0 - hyper.beta2) * g * g;
      const double update = lr * (opt.m[i] / bc1) / (std::sqrt(opt.v[i] / bc2) + hyper.adam_eps);
      ckpt.params[i] = static_cast<float>(ckpt.params[i] - update);
    }
    opt.step = step;
    result.log.push_back({step, mean, lr});
    if (progress) progress(result.log.back());

    if (early_stop && (step % hyper.eval_interval == 0 || step == hyper.total_steps)) {
      const double ppl = neural_perplexity(ckpt, *dev);
      result.dev_perplexity.emplace_back(step, ppl);
      if (ppl < best_ppl) {
        best_ppl = ppl;
        result.checkpoint = ckpt;
        result.best_step = step;
        evals_without_gain = 0;
      } else if (++evals_without_gain >= hyper.patience) {
        break;
      }
    }
  }
  if (!early_stop) {
    result.best_step = ckpt.optimizer.step;
    result.checkpoint = std::move(ckpt);
  }
  return result;
}

TrainResult finetune(const Checkpoint& pretrained, const TransformerConfig& expected,
                     const Corpus& in_domain, const TrainHyper& hyper, const Corpus* dev,
                     const ProgressFn& progress) {
  const auto differing = pretrained.config.diff(expected);
  if (!differing.empty()) {
    std::string msg = "finetune: checkpoint config differs in:";
    for (const auto& f : differing) msg += " " + f;
    throw Error(msg);
  }
  Checkpoint start = pretrained;
  start.optimizer.m.assign(start.params.size(), 0.0);
  start.optimizer.v.assign(start.params.size(), 0.0);
  start.optimizer.step = 0;
  return train(std::move(start), in_domain, hyper, dev, progress);
}

NllResult nll_loss(const Checkpoint& ckpt, std::span<const std::vector<TokenId>> batch) {
  const Transformer<float> model(ckpt.config, ckpt.params);
  const auto l = model.loss(batch);
  return {l.mean(), l.count};
}

std::map<std::string, std::vector<float>> backward(const Checkpoint& ckpt,
                                                   std::span<const std::vector<TokenId>> batch) {
  const Transformer<float> model(ckpt.config, ckpt.params);
  AlignedVector<float> grad;
  model.loss_and_grad(batch, grad);
  std::map<std::string, std::vector<float>> out;
  for (const auto& t : model.layout().tensors()) {
    out[t.name].assign(grad.begin() + static_cast<std::ptrdiff_t>(t.offset),
                       grad.begin() + static_cast<std::ptrdiff_t>(t.offset + t.size));
  }
  return out;
}

double neural_perplexity(const Checkpoint& ckpt, const Corpus& corpus) {
  if (corpus.empty()) throw Error("neural_perplexity: empty corpus");
  const Transformer<float> model(ckpt.config, ckpt.params);
  constexpr std::size_t kChunk = 64;
  double nll = 0.0;
  std::vector<std::vector<TokenId>> chunk;
  for (std::size_t i = 0; i < corpus.size(); i += kChunk) {
    chunk.assign(corpus.sentences.begin() + static_cast<std::ptrdiff_t>(i),
                 corpus.sentences.begin() +
                     static_cast<std::ptrdiff_t>(std::min(corpus.size(), i + kChunk)));
    nll += model.loss(chunk).nll_sum;
  }
  const double events = static_cast<double>(corpus.total_words() + corpus.size());
  return std::exp(nll / events);
}

void write_loss_log(const std::vector<LossLogEntry>& log, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write loss log: " + path);
  os.precision(9);
  os << "step,loss,lr\n";
  for (const auto& e : log) os << e.step << ',' << e.loss << ',' << e.lr << '\n';
}

}  // namespace lmaug::nn
