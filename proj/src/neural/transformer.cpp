#include "lmaug/neural/transformer.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "lmaug/error.hpp"
#include "lmaug/random.hpp"

namespace lmaug::nn {

namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename Real>
using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

template <typename Real>
using Mat = typename Transformer<Real>::Mat;

template <typename Real>
Real gelu(Real x) {
  const Real c = static_cast<Real>(0.7978845608028654);  // sqrt(2/pi)
  const Real u = c * (x + static_cast<Real>(0.044715) * x * x * x);
  return static_cast<Real>(0.5) * x * (static_cast<Real>(1) + std::tanh(u));
}

template <typename Real>
Real gelu_grad(Real x) {
  const Real c = static_cast<Real>(0.7978845608028654);
  const Real a = static_cast<Real>(0.044715);
  const Real u = c * (x + a * x * x * x);
  const Real t = std::tanh(u);
  const Real du = c * (static_cast<Real>(1) + static_cast<Real>(3) * a * x * x);
  return static_cast<Real>(0.5) * (static_cast<Real>(1) + t) +
         static_cast<Real>(0.5) * x * (static_cast<Real>(1) - t * t) * du;
}

template <typename Real>
void layer_norm(const Mat<Real>& x, const Real* gain, const Real* bias, Mat<Real>& xhat,
                std::vector<Real>& rstd, Mat<Real>& y) {
  const auto n = x.rows();
  const auto d = x.cols();
  xhat.resize(n, d);
  y.resize(n, d);
  rstd.resize(static_cast<std::size_t>(n));
  Eigen::Map<const RowVec<Real>> g(gain, d);
  Eigen::Map<const RowVec<Real>> b(bias, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Real mean = x.row(i).mean();
    const Real var = (x.row(i).array() - mean).square().mean();
    const Real r = static_cast<Real>(1) / std::sqrt(var + static_cast<Real>(kLayerNormEps));
    rstd[static_cast<std::size_t>(i)] = r;
    xhat.row(i) = (x.row(i).array() - mean) * r;
    y.row(i) = xhat.row(i).cwiseProduct(g) + b;
  }
}

// Accumulates parameter gradients and adds dL/dx into `dx`.
template <typename Real>
void layer_norm_backward(const Mat<Real>& dy, const Mat<Real>& xhat, const std::vector<Real>& rstd,
                         const Real* gain, Real* dgain, Real* dbias, Mat<Real>& dx) {
  const auto n = dy.rows();
  const auto d = dy.cols();
  Eigen::Map<const RowVec<Real>> g(gain, d);
  Eigen::Map<RowVec<Real>> dg(dgain, d);
  Eigen::Map<RowVec<Real>> db(dbias, d);
  dg += dy.cwiseProduct(xhat).colwise().sum();
  db += dy.colwise().sum();
  RowVec<Real> dxhat(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    dxhat = dy.row(i).cwiseProduct(g);
    const Real m1 = dxhat.mean();
    const Real m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
    dx.row(i) += rstd[static_cast<std::size_t>(i)] *
                 (dxhat.array() - m1 - xhat.row(i).array() * m2).matrix();
  }
}

// Inverted-dropout mask (0 or 1/(1-p)); deterministic in (seed, site).
template <typename Real>
Mat<Real> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::uint64_t seed,
                       std::uint64_t site) {
  Mat<Real> m(rows, cols);
  Rng rng(derive_seed(seed, site, 0xd70f));
  const Real keep = static_cast<Real>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = rng.uniform() < p ? static_cast<Real>(0) : keep;
  }
  return m;
}

template <typename Real>
void softmax_row_inplace(Real* row, Eigen::Index n) {
  Real mx = row[0];
  for (Eigen::Index j = 1; j < n; ++j) mx = std::max(mx, row[j]);
  Real sum = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    row[j] = std::exp(row[j] - mx);
    sum += row[j];
  }
  for (Eigen::Index j = 0; j < n; ++j) row[j] /= sum;
}

}  // namespace

template <typename Real>
struct Transformer<Real>::BlockCache {
  Mat x_in, xhat1, h1, q, k, v, ctx, mask1, x_mid, xhat2, h2, f1, g, mask2;
  std::vector<Real> rstd1, rstd2;
  std::vector<Mat> probs;  // [segment * n_heads + head], T x T
};

template <typename Real>
struct Transformer<Real>::Cache {
  std::vector<Eigen::Index> seg_start;
  std::vector<Eigen::Index> seg_len;
  std::vector<TokenId> tokens;
  std::vector<Eigen::Index> positions;
  Mat mask0;
  std::vector<BlockCache> blocks;
  Mat xhatf, hf;
  std::vector<Real> rstdf;
  bool train = false;
};

template <typename Real>
Transformer<Real>::Transformer(const TransformerConfig& config, std::span<const Real> params)
    : config_(config), layout_(config), params_(params) {
  if (params.size() != layout_.total_size()) {
    throw Error("parameter vector has " + std::to_string(params.size()) + " values, layout needs " +
                std::to_string(layout_.total_size()));
  }
}

template <typename Real>
void Transformer<Real>::check_sequence(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw Error("empty token sequence");
  if (tokens.size() > static_cast<std::size_t>(config_.max_seq_len)) {
    throw Error("sequence of length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                std::to_string(config_.max_seq_len));
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= config_.vocab_size) {
      throw Error("token id " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                  " outside vocabulary of size " + std::to_string(config_.vocab_size));
    }
  }
}

template <typename Real>
typename Transformer<Real>::Mat Transformer<Real>::run(std::span<const std::vector<TokenId>> batch,
                                                       bool train_mode, std::uint64_t seed,
                                                       Cache* cache) const {
  const Eigen::Index D = config_.d_model;
  const Eigen::Index F = config_.d_ff;
  const Eigen::Index V = config_.vocab_size;
  const Eigen::Index H = config_.n_heads;
  const Eigen::Index dh = D / H;
  const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh)));
  const bool dropout = train_mode && config_.dropout_rate > 0.0;
  const Real* p = params_.data();

  auto mat = [&](std::size_t off, Eigen::Index r, Eigen::Index c) {
    return Eigen::Map<const Mat>(p + off, r, c);
  };
  auto vec = [&](std::size_t off, Eigen::Index n) {
    return Eigen::Map<const RowVec<Real>>(p + off, n);
  };

  Cache local;
  Cache& c = cache ? *cache : local;
  c.train = dropout;
  c.seg_start.clear();
  c.seg_len.clear();
  c.tokens.clear();
  c.positions.clear();
  Eigen::Index n = 0;
  for (const auto& seq : batch) {
    check_sequence(seq);
    c.seg_start.push_back(n);
    c.seg_len.push_back(static_cast<Eigen::Index>(seq.size()));
    for (std::size_t t = 0; t < seq.size(); ++t) {
      c.tokens.push_back(seq[t]);
      c.positions.push_back(static_cast<Eigen::Index>(t));
    }
    n += static_cast<Eigen::Index>(seq.size());
  }

  Mat x(n, D);
  const auto emb = mat(layout_.tok_emb, V, D);
  const auto pos = mat(layout_.pos_emb, config_.max_seq_len, D);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) = emb.row(c.tokens[static_cast<std::size_t>(i)]) +
               pos.row(c.positions[static_cast<std::size_t>(i)]);
  }
  if (dropout) {
    c.mask0 = dropout_mask<Real>(n, D, config_.dropout_rate, seed, 0);
    x = x.cwiseProduct(c.mask0);
  }

  c.blocks.resize(layout_.blocks.size());
  for (std::size_t b = 0; b < layout_.blocks.size(); ++b) {
    const auto& L = layout_.blocks[b];
    BlockCache& bc = c.blocks[b];
    bc.x_in = x;
    layer_norm<Real>(x, p + L.ln1_gain, p + L.ln1_bias, bc.xhat1, bc.rstd1, bc.h1);

    bc.q.noalias() = bc.h1 * mat(L.wq, D, D);
    bc.q.rowwise() += vec(L.bq, D);
    bc.k.noalias() = bc.h1 * mat(L.wk, D, D);
    bc.k.rowwise() += vec(L.bk, D);
    bc.v.noalias() = bc.h1 * mat(L.wv, D, D);
    bc.v.rowwise() += vec(L.bv, D);

    bc.ctx.setZero(n, D);
    bc.probs.resize(c.seg_start.size() * static_cast<std::size_t>(H));
    for (std::size_t s = 0; s < c.seg_start.size(); ++s) {
      const Eigen::Index st = c.seg_start[s];
      const Eigen::Index T = c.seg_len[s];
      for (Eigen::Index h = 0; h < H; ++h) {
        Mat& P = bc.probs[s * static_cast<std::size_t>(H) + static_cast<std::size_t>(h)];
        P.noalias() = bc.q.block(st, h * dh, T, dh) * bc.k.block(st, h * dh, T, dh).transpose();
        P *= scale;
        for (Eigen::Index i = 0; i < T; ++i) {
          softmax_row_inplace(P.data() + i * T, i + 1);
          for (Eigen::Index j = i + 1; j < T; ++j) P(i, j) = 0;
        }
        bc.ctx.block(st, h * dh, T, dh).noalias() = P * bc.v.block(st, h * dh, T, dh);
      }
    }

    Mat o = bc.ctx * mat(L.wo, D, D);
    o.rowwise() += vec(L.bo, D);
    if (dropout) {
      bc.mask1 = dropout_mask<Real>(n, D, config_.dropout_rate, seed, 1 + 2 * b);
      o = o.cwiseProduct(bc.mask1);
    }
    x += o;
    bc.x_mid = x;

    layer_norm<Real>(x, p + L.ln2_gain, p + L.ln2_bias, bc.xhat2, bc.rstd2, bc.h2);
    bc.f1.noalias() = bc.h2 * mat(L.w1, D, F);
    bc.f1.rowwise() += vec(L.b1, F);
    bc.g = bc.f1.unaryExpr([](Real v) { return gelu(v); });
    Mat f2 = bc.g * mat(L.w2, F, D);
    f2.rowwise() += vec(L.b2, D);
    if (dropout) {
      bc.mask2 = dropout_mask<Real>(n, D, config_.dropout_rate, seed, 2 + 2 * b);
      f2 = f2.cwiseProduct(bc.mask2);
    }
    x += f2;
  }

  layer_norm<Real>(x, p + layout_.lnf_gain, p + layout_.lnf_bias, c.xhatf, c.rstdf, c.hf);
  Mat logits;
  if (config_.tie_embeddings) {
    logits.noalias() = c.hf * emb.transpose();
  } else {
    logits.noalias() = c.hf * mat(layout_.out_w, D, V);
  }
  logits.rowwise() += vec(layout_.out_bias, V);
  return logits;
}

template <typename Real>
typename Transformer<Real>::Mat Transformer<Real>::forward(std::span<const TokenId> tokens,
                                                           bool train_mode,
                                                           std::uint64_t seed) const {
  std::vector<std::vector<TokenId>> batch{std::vector<TokenId>(tokens.begin(), tokens.end())};
  return run(batch, train_mode, seed, nullptr);
}

template <typename Real>
std::vector<typename Transformer<Real>::Mat> Transformer<Real>::attention_probs(
    std::span<const TokenId> tokens, std::size_t block) const {
  if (block >= layout_.blocks.size()) throw Error("attention_probs: block index out of range");
  std::vector<std::vector<TokenId>> batch{std::vector<TokenId>(tokens.begin(), tokens.end())};
  Cache c;
  run(batch, false, 0, &c);
  return c.blocks[block].probs;
}

namespace {

// Writes log-softmax NLL of the targets; replaces each predicted row of
// `logits` with its softmax (when keep_probs) so the caller can form the
// gradient in place.
template <typename Real, typename Seg>
double accumulate_nll(Mat<Real>& logits, const std::vector<TokenId>& tokens, const Seg& seg_start,
                      const Seg& seg_len, bool keep_probs, std::size_t& count) {
  double nll = 0.0;
  const Eigen::Index V = logits.cols();
  for (std::size_t s = 0; s < seg_start.size(); ++s) {
    for (Eigen::Index t = 0; t + 1 < seg_len[s]; ++t) {
      const Eigen::Index row = seg_start[s] + t;
      const TokenId target = tokens[static_cast<std::size_t>(row + 1)];
      Real* r = logits.data() + row * V;
      double mx = r[0];
      for (Eigen::Index j = 1; j < V; ++j) mx = std::max<double>(mx, r[j]);
      double sum = 0.0;
      for (Eigen::Index j = 0; j < V; ++j) sum += std::exp(static_cast<double>(r[j]) - mx);
      const double lse = mx + std::log(sum);
      nll += lse - static_cast<double>(r[target]);
      if (keep_probs) {
        for (Eigen::Index j = 0; j < V; ++j) {
          r[j] = static_cast<Real>(std::exp(static_cast<double>(r[j]) - lse));
        }
      }
      ++count;
    }
  }
  return nll;
}

}  // namespace

template <typename Real>
typename Transformer<Real>::Loss Transformer<Real>::loss(
    std::span<const std::vector<TokenId>> batch, bool train_mode, std::uint64_t seed) const {
  if (batch.empty()) throw Error("loss: empty batch");
  for (const auto& s : batch) {
    if (s.size() < 2) throw Error("loss: every sequence needs at least two tokens");
  }
  Cache c;
  Mat logits = run(batch, train_mode, seed, &c);
  Loss out;
  out.nll_sum = accumulate_nll<Real>(logits, c.tokens, c.seg_start, c.seg_len, false, out.count);
  return out;
}

template <typename Real>
typename Transformer<Real>::Loss Transformer<Real>::loss_and_grad(
    std::span<const std::vector<TokenId>> batch, AlignedVector<Real>& grad, bool train_mode,
    std::uint64_t seed) const {
  if (batch.empty()) throw Error("loss: empty batch");
  for (const auto& s : batch) {
    if (s.size() < 2) throw Error("loss: every sequence needs at least two tokens");
  }
  const Eigen::Index D = config_.d_model;
  const Eigen::Index F = config_.d_ff;
  const Eigen::Index V = config_.vocab_size;
  const Eigen::Index H = config_.n_heads;
  const Eigen::Index dh = D / H;
  const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh)));
  const Real* p = params_.data();

  Cache c;
  Mat dlogits = run(batch, train_mode, seed, &c);
  const Eigen::Index n = dlogits.rows();
  Loss out;
  out.nll_sum = accumulate_nll<Real>(dlogits, c.tokens, c.seg_start, c.seg_len, true, out.count);

  // dlogits = (softmax - onehot) / count on predicted rows, zero elsewhere.
  const Real inv = static_cast<Real>(1.0 / static_cast<double>(out.count));
  for (std::size_t s = 0; s < c.seg_start.size(); ++s) {
    const Eigen::Index last = c.seg_start[s] + c.seg_len[s] - 1;
    for (Eigen::Index t = 0; t + 1 < c.seg_len[s]; ++t) {
      const Eigen::Index row = c.seg_start[s] + t;
      dlogits(row, c.tokens[static_cast<std::size_t>(row + 1)]) -= static_cast<Real>(1);
      dlogits.row(row) *= inv;
    }
    dlogits.row(last).setZero();
  }

  grad.assign(layout_.total_size(), static_cast<Real>(0));
  Real* gp = grad.data();
  auto mat = [&](std::size_t off, Eigen::Index r, Eigen::Index cc) {
    return Eigen::Map<const Mat>(p + off, r, cc);
  };
  auto gmat = [&](std::size_t off, Eigen::Index r, Eigen::Index cc) {
    return Eigen::Map<Mat>(gp + off, r, cc);
  };
  auto gvec = [&](std::size_t off, Eigen::Index len) {
    return Eigen::Map<RowVec<Real>>(gp + off, len);
  };

  gvec(layout_.out_bias, V) += dlogits.colwise().sum();
  const auto emb = mat(layout_.tok_emb, V, D);
  Mat dhf;
  if (config_.tie_embeddings) {
    gmat(layout_.tok_emb, V, D).noalias() += dlogits.transpose() * c.hf;
    dhf.noalias() = dlogits * emb;
  } else {
    gmat(layout_.out_w, D, V).noalias() += c.hf.transpose() * dlogits;
    dhf.noalias() = dlogits * mat(layout_.out_w, D, V).transpose();
  }
  dlogits.resize(0, 0);

  Mat dx = Mat::Zero(n, D);
  layer_norm_backward<Real>(dhf, c.xhatf, c.rstdf, p + layout_.lnf_gain, gp + layout_.lnf_gain,
                            gp + layout_.lnf_bias, dx);

  for (std::size_t bi = layout_.blocks.size(); bi-- > 0;) {
    const auto& L = layout_.blocks[bi];
    const BlockCache& bc = c.blocks[bi];

    // Feed-forward sub-layer.
    Mat df2 = c.train ? Mat(dx.cwiseProduct(bc.mask2)) : dx;
    gmat(L.w2, F, D).noalias() += bc.g.transpose() * df2;
    gvec(L.b2, D) += df2.colwise().sum();
    Mat df1 = df2 * mat(L.w2, F, D).transpose();
    df1 = df1.cwiseProduct(bc.f1.unaryExpr([](Real v) { return gelu_grad(v); }));
    gmat(L.w1, D, F).noalias() += bc.h2.transpose() * df1;
    gvec(L.b1, F) += df1.colwise().sum();
    Mat dh2 = df1 * mat(L.w1, D, F).transpose();
    layer_norm_backward<Real>(dh2, bc.xhat2, bc.rstd2, p + L.ln2_gain, gp + L.ln2_gain,
                              gp + L.ln2_bias, dx);

    // Attention sub-layer.
    Mat dout = c.train ? Mat(dx.cwiseProduct(bc.mask1)) : dx;
    gmat(L.wo, D, D).noalias() += bc.ctx.transpose() * dout;
    gvec(L.bo, D) += dout.colwise().sum();
    Mat dctx = dout * mat(L.wo, D, D).transpose();

    Mat dq = Mat::Zero(n, D);
    Mat dk = Mat::Zero(n, D);
    Mat dv = Mat::Zero(n, D);
    for (std::size_t s = 0; s < c.seg_start.size(); ++s) {
      const Eigen::Index st = c.seg_start[s];
      const Eigen::Index T = c.seg_len[s];
      for (Eigen::Index h = 0; h < H; ++h) {
        const Mat& P = bc.probs[s * static_cast<std::size_t>(H) + static_cast<std::size_t>(h)];
        const auto dctx_b = dctx.block(st, h * dh, T, dh);
        Mat dP = dctx_b * bc.v.block(st, h * dh, T, dh).transpose();
        dv.block(st, h * dh, T, dh).noalias() += P.transpose() * dctx_b;
        for (Eigen::Index i = 0; i < T; ++i) {
          Real dot = 0;
          for (Eigen::Index j = 0; j <= i; ++j) dot += P(i, j) * dP(i, j);
          for (Eigen::Index j = 0; j < T; ++j) {
            dP(i, j) = j <= i ? P(i, j) * (dP(i, j) - dot) * scale : static_cast<Real>(0);
          }
        }
        dq.block(st, h * dh, T, dh).noalias() += dP * bc.k.block(st, h * dh, T, dh);
        dk.block(st, h * dh, T, dh).noalias() += dP.transpose() * bc.q.block(st, h * dh, T, dh);
      }
    }
    gmat(L.wq, D, D).noalias() += bc.h1.transpose() * dq;
    gvec(L.bq, D) += dq.colwise().sum();
    gmat(L.wk, D, D).noalias() += bc.h1.transpose() * dk;
    gvec(L.bk, D) += dk.colwise().sum();
    gmat(L.wv, D, D).noalias() += bc.h1.transpose() * dv;
    gvec(L.bv, D) += dv.colwise().sum();
    Mat dh1 = dq * mat(L.wq, D, D).transpose();
    dh1.noalias() += dk * mat(L.wk, D, D).transpose();
    dh1.noalias() += dv * mat(L.wv, D, D).transpose();
    layer_norm_backward<Real>(dh1, bc.xhat1, bc.rstd1, p + L.ln1_gain, gp + L.ln1_gain,
                              gp + L.ln1_bias, dx);
  }

  if (c.train) dx = dx.cwiseProduct(c.mask0);
  auto gemb = gmat(layout_.tok_emb, V, D);
  auto gpos = gmat(layout_.pos_emb, config_.max_seq_len, D);
  for (Eigen::Index i = 0; i < n; ++i) {
    gemb.row(c.tokens[static_cast<std::size_t>(i)]) += dx.row(i);
    gpos.row(c.positions[static_cast<std::size_t>(i)]) += dx.row(i);
  }
  return out;
}

template <typename Real>
IncrementalDecoder<Real>::IncrementalDecoder(const Transformer<Real>& model, std::size_t rows)
    : model_(model), rows_(rows) {
  const auto& cfg = model.config();
  const auto total = static_cast<Eigen::Index>(rows) * cfg.max_seq_len;
  k_cache_.assign(model.layout().blocks.size(), Mat(total, cfg.d_model));
  v_cache_.assign(model.layout().blocks.size(), Mat(total, cfg.d_model));
}

template <typename Real>
const typename IncrementalDecoder<Real>::Mat& IncrementalDecoder<Real>::step(
    std::span<const TokenId> tokens) {
  const auto& cfg = model_.config();
  const auto& layout = model_.layout();
  if (tokens.size() != rows_) throw Error("decoder step: expected one token per row");
  if (length_ >= static_cast<std::size_t>(cfg.max_seq_len)) {
    throw Error("decoder step: sequence would exceed max_seq_len " +
                std::to_string(cfg.max_seq_len));
  }
  const Eigen::Index R = static_cast<Eigen::Index>(rows_);
  const Eigen::Index D = cfg.d_model;
  const Eigen::Index F = cfg.d_ff;
  const Eigen::Index V = cfg.vocab_size;
  const Eigen::Index H = cfg.n_heads;
  const Eigen::Index dh = D / H;
  const Eigen::Index Lmax = cfg.max_seq_len;
  const Eigen::Index t = static_cast<Eigen::Index>(length_);
  const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh)));
  const Real* p = model_.params();
  auto mat = [&](std::size_t off, Eigen::Index r, Eigen::Index c) {
    return Eigen::Map<const Mat>(p + off, r, c);
  };
  auto vec = [&](std::size_t off, Eigen::Index n) {
    return Eigen::Map<const RowVec<Real>>(p + off, n);
  };

  const auto emb = mat(layout.tok_emb, V, D);
  const auto pos = mat(layout.pos_emb, Lmax, D);
  Mat x(R, D);
  for (Eigen::Index r = 0; r < R; ++r) {
    const TokenId tok = tokens[static_cast<std::size_t>(r)];
    if (tok < 0 || tok >= V) throw Error("decoder step: token id out of range");
    x.row(r) = emb.row(tok) + pos.row(t);
  }

  Mat xhat, h, q, kv, ctx(R, D), tmp;
  std::vector<Real> rstd;
  RowVec<Real> scores(t + 1);
  for (std::size_t b = 0; b < layout.blocks.size(); ++b) {
    const auto& L = layout.blocks[b];
    layer_norm<Real>(x, p + L.ln1_gain, p + L.ln1_bias, xhat, rstd, h);
    q.noalias() = h * mat(L.wq, D, D);
    q.rowwise() += vec(L.bq, D);
    kv.noalias() = h * mat(L.wk, D, D);
    kv.rowwise() += vec(L.bk, D);
    for (Eigen::Index r = 0; r < R; ++r) k_cache_[b].row(r * Lmax + t) = kv.row(r);
    kv.noalias() = h * mat(L.wv, D, D);
    kv.rowwise() += vec(L.bv, D);
    for (Eigen::Index r = 0; r < R; ++r) v_cache_[b].row(r * Lmax + t) = kv.row(r);

    for (Eigen::Index r = 0; r < R; ++r) {
      for (Eigen::Index hh = 0; hh < H; ++hh) {
        const auto keys = k_cache_[b].block(r * Lmax, hh * dh, t + 1, dh);
        const auto vals = v_cache_[b].block(r * Lmax, hh * dh, t + 1, dh);
        scores.noalias() = q.row(r).segment(hh * dh, dh) * keys.transpose();
        scores *= scale;
        softmax_row_inplace(scores.data(), t + 1);
        ctx.row(r).segment(hh * dh, dh).noalias() = scores * vals;
      }
    }
    tmp.noalias() = ctx * mat(L.wo, D, D);
    tmp.rowwise() += vec(L.bo, D);
    x += tmp;

    layer_norm<Real>(x, p + L.ln2_gain, p + L.ln2_bias, xhat, rstd, h);
    tmp.noalias() = h * mat(L.w1, D, F);
    tmp.rowwise() += vec(L.b1, F);
    tmp = tmp.unaryExpr([](Real v) { return gelu(v); });
    Mat f2 = tmp * mat(L.w2, F, D);
    f2.rowwise() += vec(L.b2, D);
    x += f2;
  }
  layer_norm<Real>(x, p + layout.lnf_gain, p + layout.lnf_bias, xhat, rstd, h);
  if (cfg.tie_embeddings) {
    logits_.noalias() = h * emb.transpose();
  } else {
    logits_.noalias() = h * mat(layout.out_w, D, V);
  }
  logits_.rowwise() += vec(layout.out_bias, V);
  ++length_;
  return logits_;
}

template <typename Real>
void IncrementalDecoder<Real>::keep_rows(std::span<const std::size_t> rows) {
  const Eigen::Index Lmax = model_.config().max_seq_len;
  const Eigen::Index D = model_.config().d_model;
  const Eigen::Index t = static_cast<Eigen::Index>(length_);
  for (auto* caches : {&k_cache_, &v_cache_}) {
    for (auto& cache : *caches) {
      Mat next(static_cast<Eigen::Index>(rows.size()) * Lmax, D);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= rows_) throw Error("keep_rows: row index out of range");
        if (t > 0) {
          next.block(static_cast<Eigen::Index>(i) * Lmax, 0, t, D) =
              cache.block(static_cast<Eigen::Index>(rows[i]) * Lmax, 0, t, D);
        }
      }
      cache = std::move(next);
    }
  }
  rows_ = rows.size();
}

template class Transformer<float>;
template class Transformer<double>;
template class IncrementalDecoder<float>;
template class IncrementalDecoder<double>;

}  // namespace lmaug::nn
