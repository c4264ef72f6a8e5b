#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lmaug/corpus.hpp"
#include "lmaug/neural/model.hpp"

namespace lmaug::nn {

struct TrainHyper {
  double learning_rate = 1e-3;
  // Warmup length; a negative value means 1% of total_steps.
  int warmup_steps = -1;
  // Optimizer step count to train up to (absolute, so a resumed checkpoint
  // continues where it stopped).
  int total_steps = 1000;
  int batch_size = 32;
  // "linear" (to zero at total_steps) or "constant".
  std::string decay = "linear";
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  // Dev evaluation cadence (0 disables early stopping) and patience in
  // evaluations.
  int eval_interval = 0;
  int patience = 5;
  // Stop early at this absolute step without altering the schedule (for
  // interrupt/resume); negative disables.
  std::int64_t stop_at_step = -1;

  int effective_warmup() const;
  double lr_at(std::int64_t step) const;
};

struct LossLogEntry {
  std::int64_t step;
  double loss;
  double lr;
};

struct TrainResult {
  Checkpoint checkpoint;  // best-on-dev when early stopping is active
  std::vector<LossLogEntry> log;
  std::vector<std::pair<std::int64_t, double>> dev_perplexity;
  std::int64_t best_step = 0;
};

using ProgressFn = std::function<void(const LossLogEntry&)>;

// Adam with linear warmup then decay and global-norm clipping. Sequences
// longer than max_seq_len are skipped. Throws when the loss becomes
// non-finite, naming the step.
TrainResult train(Checkpoint ckpt, const Corpus& corpus, const TrainHyper& hyper,
                  const Corpus* dev = nullptr, const ProgressFn& progress = {});

// Starts from `pretrained` parameters with fresh optimizer moments and a step
// count of zero. `expected` is the configuration the caller's tokenizer
// implies; any mismatch is reported field by field.
TrainResult finetune(const Checkpoint& pretrained, const TransformerConfig& expected,
                     const Corpus& in_domain, const TrainHyper& hyper,
                     const Corpus* dev = nullptr, const ProgressFn& progress = {});

struct NllResult {
  double loss = 0.0;       // mean natural-log NLL per predicted token
  std::size_t tokens = 0;  // predicted tokens
};

NllResult nll_loss(const Checkpoint& ckpt, std::span<const std::vector<TokenId>> batch);

// Gradient of nll_loss for every named tensor (dropout disabled).
std::map<std::string, std::vector<float>> backward(const Checkpoint& ckpt,
                                                   std::span<const std::vector<TokenId>> batch);

// exp(total subword NLL / (words + sentences)).
double neural_perplexity(const Checkpoint& ckpt, const Corpus& corpus);

void write_loss_log(const std::vector<LossLogEntry>& log, const std::string& path);

}  // namespace lmaug::nn
