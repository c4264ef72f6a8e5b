#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "lmaug/neural/model.hpp"
#include "lmaug/tokenizer.hpp"

namespace lmaug::nn {

// GPT-style decoder with pre-layer-norm blocks:
//   x = tok_emb[t] + pos_emb[i]
//   x = x + dropout(attn(ln1(x)));  x = x + dropout(ffn(ln2(x)))
//   logits = ln_f(x) * W_out + out.bias
// with W_out = tok_emb^T when embeddings are tied. Dropout is also applied to
// the embedding sum. The feed-forward non-linearity is tanh-approximated GELU.
template <typename Real>
class Transformer {
 public:
  using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  struct Loss {
    double nll_sum = 0.0;   // natural-log NLL summed over predicted positions
    std::size_t count = 0;  // predicted positions (every token after <s>)
    double mean() const { return count ? nll_sum / static_cast<double>(count) : 0.0; }
  };

  // `params` must outlive the model and follow ParamLayout(config).
  Transformer(const TransformerConfig& config, std::span<const Real> params);

  const TransformerConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  const Real* params() const { return params_.data(); }

  // Logits for every position (T x vocab). Throws when the sequence is longer
  // than max_seq_len or contains an id outside the vocabulary.
  Mat forward(std::span<const TokenId> tokens, bool train_mode = false,
              std::uint64_t seed = 0) const;

  // Causal attention weights (T x T, one per head) of the given block, in
  // eval mode.
  std::vector<Mat> attention_probs(std::span<const TokenId> tokens, std::size_t block) const;

  // Sequences must have at least two tokens; the first is conditioned on and
  // never predicted.
  Loss loss(std::span<const std::vector<TokenId>> batch, bool train_mode = false,
            std::uint64_t seed = 0) const;

  // Gradient of the mean per-token NLL, written into `grad` (resized to the
  // layout size and overwritten).
  Loss loss_and_grad(std::span<const std::vector<TokenId>> batch, AlignedVector<Real>& grad,
                     bool train_mode = false, std::uint64_t seed = 0) const;

 private:
  struct BlockCache;
  struct Cache;

  Mat run(std::span<const std::vector<TokenId>> batch, bool train_mode, std::uint64_t seed,
          Cache* cache) const;
  void check_sequence(std::span<const TokenId> tokens) const;

  TransformerConfig config_;
  ParamLayout layout_;
  std::span<const Real> params_;
};

// Batched autoregressive decoding with per-row key/value caches. All rows
// advance in lockstep; rows can be dropped with keep_rows().
template <typename Real>
class IncrementalDecoder {
 public:
  using Mat = typename Transformer<Real>::Mat;

  IncrementalDecoder(const Transformer<Real>& model, std::size_t rows);

  // Feeds one token per row at the next position; returns rows x vocab
  // logits for that position.
  const Mat& step(std::span<const TokenId> tokens);

  // Keeps only the listed rows (in the given order).
  void keep_rows(std::span<const std::size_t> rows);

  std::size_t rows() const { return rows_; }
  std::size_t length() const { return length_; }

 private:
  const Transformer<Real>& model_;
  std::size_t rows_;
  std::size_t length_ = 0;
  std::vector<Mat> k_cache_;  // per block: (rows * max_seq_len) x d_model
  std::vector<Mat> v_cache_;
  Mat logits_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;
extern template class IncrementalDecoder<float>;
extern template class IncrementalDecoder<double>;

}  // namespace lmaug::nn
