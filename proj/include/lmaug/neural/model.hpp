#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lmaug::nn {

struct TransformerConfig {
  int n_blocks = 4;
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 512;
  int max_seq_len = 128;
  int vocab_size = 0;
  double dropout_rate = 0.1;
  // Output projection shares the token embedding matrix.
  bool tie_embeddings = true;

  // Throws lmaug::Error describing the first violated constraint.
  void validate() const;

  // "key=value" lines, in fixed key order.
  std::string to_text() const;
  static TransformerConfig from_text(const std::string& text);

  // Names of fields that differ from `other` (empty when equal).
  std::vector<std::string> diff(const TransformerConfig& other) const;

  bool operator==(const TransformerConfig&) const = default;
};

// Parameter storage. A fixed base alignment keeps vectorized reductions (and
// therefore results) bit-reproducible regardless of where the buffer lands.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

struct TensorInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Flat layout of every named parameter tensor. Weight matrices are stored
// row-major as [in, out] so a projection is `x * W + b`.
class ParamLayout {
 public:
  struct Block {
    std::size_t ln1_gain, ln1_bias;
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln2_gain, ln2_bias;
    std::size_t w1, b1, w2, b2;
  };

  explicit ParamLayout(const TransformerConfig& config);

  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  const TensorInfo& find(const std::string& name) const;
  std::size_t total_size() const { return total_; }

  std::size_t tok_emb = 0;
  std::size_t pos_emb = 0;
  std::vector<Block> blocks;
  std::size_t lnf_gain = 0;
  std::size_t lnf_bias = 0;
  std::size_t out_w = 0;  // only meaningful when embeddings are untied
  std::size_t out_bias = 0;

 private:
  std::size_t add(std::string name, std::vector<std::size_t> shape);

  std::vector<TensorInfo> tensors_;
  std::size_t total_ = 0;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  bool operator==(const AdamState&) const = default;
};

struct Checkpoint {
  TransformerConfig config;
  AlignedVector<float> params;
  AdamState optimizer;
  std::uint64_t rng_seed = 0;

  std::span<const float> tensor(const std::string& name) const;
  std::span<float> tensor(const std::string& name);

  // Throws when a parameter is NaN or infinite.
  void check_finite() const;
};

// Weights ~ N(0, 0.02) (residual output projections scaled by
// 1/sqrt(2 * n_blocks)), biases zero, layer-norm gains one.
Checkpoint init_params(const TransformerConfig& config, std::uint64_t seed);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lmaug::nn
