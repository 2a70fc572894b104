#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "layerflow/predictor/model.hpp"
#include "layerflow/predictor/ordinal.hpp"

namespace layerflow {

namespace nn {

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Matrix normalized;                 // xhat
  Eigen::VectorXd inv_std;           // per row
};

inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache* cache) {
  const auto cols = static_cast<double>(x.cols());
  Eigen::VectorXd mean = x.rowwise().sum() / cols;
  Matrix centered = x.colwise() - mean;
  Eigen::VectorXd var = centered.rowwise().squaredNorm() / cols;
  Eigen::VectorXd inv_std = (var.array() + kLayerNormEps).rsqrt();
  Matrix xhat = inv_std.asDiagonal() * centered;
  Matrix y = (xhat.array().rowwise() * gain.row(0).array()).matrix();
  y.rowwise() += bias.row(0);
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const Matrix& gain, const LayerNormCache& cache,
                                  Matrix& dgain, Matrix& dbias) {
  const auto& xhat = cache.normalized;
  dgain.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  Matrix dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
  const auto cols = static_cast<double>(dy.cols());
  Eigen::VectorXd mean_dxhat = dxhat.rowwise().sum() / cols;
  Eigen::VectorXd mean_dxhat_xhat = (dxhat.array() * xhat.array()).rowwise().sum() / cols;
  Matrix dx = dxhat.colwise() - mean_dxhat;
  dx -= (xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
  return cache.inv_std.asDiagonal() * dx;
}

inline Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

inline void softmax_rows(Matrix& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    double mx = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - mx).exp();
    s.row(r) /= s.row(r).sum();
  }
}

/// x W^T + b where x may be dominated by zeros (hashed bag-of-words input).
inline Matrix project(const Matrix& x, const Matrix& weight) {
  Matrix out = Matrix::Zero(x.rows(), weight.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Eigen::Index nnz = (x.row(r).array() != 0.0).count();
    if (nnz * 8 < x.cols()) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        double v = x(r, c);
        if (v != 0.0) out.row(r) += v * weight.col(c).transpose();
      }
    } else {
      out.row(r) = x.row(r) * weight.transpose();
    }
  }
  return out;
}

/// dW += dy^T x with the same sparsity shortcut as project().
inline void project_backward(const Matrix& x, const Matrix& dy, Matrix& dweight) {
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Eigen::Index nnz = (x.row(r).array() != 0.0).count();
    if (nnz * 8 < x.cols()) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        double v = x(r, c);
        if (v != 0.0) dweight.col(c) += v * dy.row(r).transpose();
      }
    } else {
      dweight.noalias() += dy.row(r).transpose() * x.row(r);
    }
  }
}

struct BlockCache {
  Matrix input;
  LayerNormCache ln1;
  Matrix normed1, q, k, v;
  std::vector<Matrix> attn;  // per-head softmax weights
  Matrix concat;
  Matrix drop1;              // dropout scale mask (empty when inactive)
  Matrix mid;
  LayerNormCache ln2;
  Matrix normed2, ffn_pre, ffn_act;
  Matrix drop2;
};

/// Per-example dropout source. Inactive when rate is zero.
struct Dropout {
  double rate = 0.0;
  Rng* rng = nullptr;

  bool active() const { return rate > 0.0 && rng != nullptr; }

  Matrix mask(Eigen::Index rows, Eigen::Index cols) const {
    Matrix m(rows, cols);
    const double keep_scale = 1.0 / (1.0 - rate);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng->uniform() < rate ? 0.0 : keep_scale;
    return m;
  }
};

inline Matrix block_forward(const EncoderBlockParams& p, const Matrix& x, int heads, const Dropout& dropout,
                            BlockCache* cache) {
  const Eigen::Index n = x.rows();
  const Eigen::Index dm = x.cols();
  const Eigen::Index dh = dm / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  LayerNormCache ln1;
  Matrix a = layer_norm(x, p.ln1_gain, p.ln1_bias, cache ? &ln1 : nullptr);
  Matrix q = a * p.w_query.transpose();
  q.rowwise() += p.b_query.row(0);
  Matrix k = a * p.w_key.transpose();
  k.rowwise() += p.b_key.row(0);
  Matrix v = a * p.w_value.transpose();
  v.rowwise() += p.b_value.row(0);

  Matrix concat(n, dm);
  std::vector<Matrix> attn;
  for (int h = 0; h < heads; ++h) {
    Matrix s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    softmax_rows(s);
    concat.middleCols(h * dh, dh) = s * v.middleCols(h * dh, dh);
    if (cache) attn.push_back(std::move(s));
  }
  Matrix attn_out = concat * p.w_out.transpose();
  attn_out.rowwise() += p.b_out.row(0);
  Matrix drop1;
  if (dropout.active()) {
    drop1 = dropout.mask(n, dm);
    attn_out = attn_out.cwiseProduct(drop1);
  }
  Matrix mid = x + attn_out;

  LayerNormCache ln2;
  Matrix c = layer_norm(mid, p.ln2_gain, p.ln2_bias, cache ? &ln2 : nullptr);
  Matrix pre = c * p.w_ffn1.transpose();
  pre.rowwise() += p.b_ffn1.row(0);
  Matrix act = relu(pre);
  Matrix ffn_out = act * p.w_ffn2.transpose();
  ffn_out.rowwise() += p.b_ffn2.row(0);
  Matrix drop2;
  if (dropout.active()) {
    drop2 = dropout.mask(n, dm);
    ffn_out = ffn_out.cwiseProduct(drop2);
  }
  Matrix out = mid + ffn_out;

  if (cache) {
    cache->input = x;
    cache->ln1 = std::move(ln1);
    cache->normed1 = std::move(a);
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->attn = std::move(attn);
    cache->concat = std::move(concat);
    cache->drop1 = std::move(drop1);
    cache->mid = std::move(mid);
    cache->ln2 = std::move(ln2);
    cache->normed2 = std::move(c);
    cache->ffn_pre = std::move(pre);
    cache->ffn_act = std::move(act);
    cache->drop2 = std::move(drop2);
  }
  return out;
}

inline Matrix block_backward(const EncoderBlockParams& p, const BlockCache& c, const Matrix& dout, int heads,
                             EncoderBlockParams& g) {
  const Eigen::Index dm = dout.cols();
  const Eigen::Index dh = dm / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // FFN branch.
  Matrix dffn = c.drop2.size() ? Matrix(dout.cwiseProduct(c.drop2)) : dout;
  g.w_ffn2.noalias() += dffn.transpose() * c.ffn_act;
  g.b_ffn2.row(0) += dffn.colwise().sum();
  Matrix dact = dffn * p.w_ffn2;
  Matrix dpre = (c.ffn_pre.array() > 0.0).select(dact.array(), 0.0).matrix();
  g.w_ffn1.noalias() += dpre.transpose() * c.normed2;
  g.b_ffn1.row(0) += dpre.colwise().sum();
  Matrix dnormed2 = dpre * p.w_ffn1;
  Matrix dmid = dout + layer_norm_backward(dnormed2, p.ln2_gain, c.ln2, g.ln2_gain, g.ln2_bias);

  // Attention branch.
  Matrix dattn = c.drop1.size() ? Matrix(dmid.cwiseProduct(c.drop1)) : dmid;
  g.w_out.noalias() += dattn.transpose() * c.concat;
  g.b_out.row(0) += dattn.colwise().sum();
  Matrix dconcat = dattn * p.w_out;
  Matrix dq(dout.rows(), dm), dk(dout.rows(), dm), dv(dout.rows(), dm);
  for (int h = 0; h < heads; ++h) {
    const Matrix& a = c.attn[static_cast<std::size_t>(h)];
    Matrix dO = dconcat.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh) = a.transpose() * dO;
    Matrix da = dO * c.v.middleCols(h * dh, dh).transpose();
    Eigen::VectorXd row_dot = (da.array() * a.array()).rowwise().sum();
    Matrix ds = (a.array() * (da.colwise() - row_dot).array()).matrix() * scale;
    dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  g.w_query.noalias() += dq.transpose() * c.normed1;
  g.b_query.row(0) += dq.colwise().sum();
  g.w_key.noalias() += dk.transpose() * c.normed1;
  g.b_key.row(0) += dk.colwise().sum();
  g.w_value.noalias() += dv.transpose() * c.normed1;
  g.b_value.row(0) += dv.colwise().sum();
  Matrix dnormed1 = dq * p.w_query + dk * p.w_key + dv * p.w_value;
  return dmid + layer_norm_backward(dnormed1, p.ln1_gain, c.ln1, g.ln1_gain, g.ln1_bias);
}

}  // namespace nn

/// Intermediate values of one forward pass, retained for backpropagation.
struct ForwardCache {
  Matrix query_input, tool_input;    // 1 x d, N x d
  nn::LayerNormCache query_ln, tool_ln;
  Matrix query_pre_relu, tool_pre_relu;
  std::vector<nn::BlockCache> blocks;
  Matrix hidden;                     // (1+N) x d'
};

struct ForwardResult {
  Matrix logits;         // N x (L-1)
  Matrix probabilities;  // N x (L-1), P(l_i > k)
  Matrix hidden;         // (1+N) x d'; row 0 is the query position
};

namespace detail {

inline Matrix stack_embeddings(std::span<const Embedding> rows, int dim) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<int>(rows[i].size()) != dim)
      throw Error(ErrorCode::DimensionMismatch, "embedding has dimension " + std::to_string(rows[i].size()) +
                                                    ", expected " + std::to_string(dim));
    m.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const RowVector>(rows[i].data(), dim);
  }
  return m;
}

}  // namespace detail

/// Runs the projection, the encoder stack over [query; tools], and the shared-weight
/// ordinal head. Inference mode when `dropout` is inactive.
inline ForwardResult forward(const PredictorModel& model, const Matrix& query, const Matrix& tools,
                             const nn::Dropout& dropout = {}, ForwardCache* cache = nullptr) {
  const auto& h = model.hyper;
  const auto& p = model.params;
  if (query.rows() != 1 || query.cols() != h.input_dim || tools.cols() != h.input_dim)
    throw Error(ErrorCode::DimensionMismatch, "embedding dimension does not match model input_dim " +
                                                  std::to_string(h.input_dim));
  if (tools.rows() < 1) throw Error(ErrorCode::InvalidArgument, "forward needs at least one tool");
  const Eigen::Index n = tools.rows();

  nn::LayerNormCache qln, tln;
  Matrix q_pre = nn::layer_norm(nn::project(query, p.query_proj), p.query_ln_gain, p.query_ln_bias,
                                cache ? &qln : nullptr);
  Matrix t_pre = nn::layer_norm(nn::project(tools, p.tool_proj), p.tool_ln_gain, p.tool_ln_bias,
                                cache ? &tln : nullptr);
  Matrix x(n + 1, h.model_dim);
  x.row(0) = nn::relu(q_pre);
  x.bottomRows(n) = nn::relu(t_pre);

  std::vector<nn::BlockCache> block_caches(cache ? p.blocks.size() : 0);
  for (std::size_t b = 0; b < p.blocks.size(); ++b)
    x = nn::block_forward(p.blocks[b], x, h.heads, dropout, cache ? &block_caches[b] : nullptr);

  ForwardResult result;
  Eigen::VectorXd scores = x.bottomRows(n) * p.head_weight.row(0).transpose();
  result.logits = scores.replicate(1, h.thresholds());
  result.logits.rowwise() += p.head_bias.row(0);
  if (!result.logits.allFinite()) throw Error(ErrorCode::NonFiniteActivation, "non-finite logits");
  result.probabilities = result.logits.unaryExpr([](double z) { return sigmoid(z); });
  result.hidden = x;

  if (cache) {
    cache->query_input = query;
    cache->tool_input = tools;
    cache->query_ln = std::move(qln);
    cache->tool_ln = std::move(tln);
    cache->query_pre_relu = std::move(q_pre);
    cache->tool_pre_relu = std::move(t_pre);
    cache->blocks = std::move(block_caches);
    cache->hidden = std::move(x);
  }
  return result;
}

inline ForwardResult forward(const PredictorModel& model, const Embedding& query, std::span<const Embedding> tools) {
  const int d = model.hyper.input_dim;
  return forward(model, detail::stack_embeddings(std::span<const Embedding>(&query, 1), d),
                 detail::stack_embeddings(tools, d));
}

/// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(logits).
inline void backward(const PredictorModel& model, const ForwardCache& cache, const Matrix& dlogits,
                     PredictorParams& grad) {
  const auto& h = model.hyper;
  const auto& p = model.params;
  const Eigen::Index n = dlogits.rows();

  Eigen::VectorXd dscore = dlogits.rowwise().sum();
  grad.head_bias.row(0) += dlogits.colwise().sum();
  grad.head_weight.row(0) += dscore.transpose() * cache.hidden.bottomRows(n);
  Matrix dx = Matrix::Zero(n + 1, h.model_dim);
  dx.bottomRows(n) = dscore * p.head_weight.row(0);

  for (std::size_t b = p.blocks.size(); b-- > 0;)
    dx = nn::block_backward(p.blocks[b], cache.blocks[b], dx, h.heads, grad.blocks[b]);

  Matrix dq_pre = (cache.query_pre_relu.array() > 0.0).select(dx.topRows(1).array(), 0.0).matrix();
  Matrix dt_pre = (cache.tool_pre_relu.array() > 0.0).select(dx.bottomRows(n).array(), 0.0).matrix();
  Matrix dq_proj = nn::layer_norm_backward(dq_pre, p.query_ln_gain, cache.query_ln, grad.query_ln_gain,
                                           grad.query_ln_bias);
  Matrix dt_proj = nn::layer_norm_backward(dt_pre, p.tool_ln_gain, cache.tool_ln, grad.tool_ln_gain,
                                           grad.tool_ln_bias);
  nn::project_backward(cache.query_input, dq_proj, grad.query_proj);
  nn::project_backward(cache.tool_input, dt_proj, grad.tool_proj);
}

/// One example prepared for the network: stacked embeddings and gold layers.
struct EncodedExample {
  Matrix query;   // 1 x d
  Matrix tools;   // N x d
  std::vector<int> gold_layers;
};

/// Weighted ordinal BCE of one example, averaged over its tools. Writes
/// d(loss)/d(logits) when `dlogits` is given.
inline double example_loss(const ForwardResult& fwd, std::span<const int> gold, std::span<const double> weights,
                           int num_layers, Matrix* dlogits) {
  const auto n = fwd.probabilities.rows();
  if (static_cast<std::size_t>(n) != gold.size())
    throw Error(ErrorCode::DimensionMismatch, "gold layer count does not match tool count");
  if (dlogits) dlogits->setZero(n, num_layers - 1);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto labels = cumulative_labels(gold[static_cast<std::size_t>(i)], num_layers);
    for (int k = 0; k + 1 < num_layers; ++k) {
      double prob = fwd.probabilities(i, k);
      int y = labels[static_cast<std::size_t>(k)];
      double w = weights[static_cast<std::size_t>(k)];
      loss += weighted_bce(prob, y, w);
      if (dlogits) (*dlogits)(i, k) = weighted_bce_grad_logit(prob, y, w) / static_cast<double>(n);
    }
  }
  return loss / static_cast<double>(n);
}

struct LossAndGradient {
  double loss = 0.0;
  PredictorParams gradient;
};

/// Mean example loss over `batch` and its gradient, written into `out`. The
/// gradient buffer must already have the model's shapes; it is zeroed first so
/// one buffer can serve every optimizer step.
inline void accumulate_training_loss(const PredictorModel& model, std::span<const EncodedExample> batch,
                                     std::span<const double> weights, const nn::Dropout& dropout,
                                     LossAndGradient& out) {
  if (batch.empty()) throw Error(ErrorCode::EmptyDataset, "empty batch");
  const int L = model.hyper.num_layers;
  if (weights.size() != static_cast<std::size_t>(L - 1))
    throw Error(ErrorCode::InvalidArgument, "need one threshold weight per threshold");
  for (double w : weights)
    if (!(w > 0.0)) throw Error(ErrorCode::InvalidArgument, "threshold weights must be positive");

  out.loss = 0.0;
  out.gradient.visit([](const std::string&, Matrix& m) { m.setZero(); });
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  Matrix dlogits;
  for (const auto& example : batch) {
    ForwardCache cache;
    auto fwd = forward(model, example.query, example.tools, dropout, &cache);
    double loss = example_loss(fwd, example.gold_layers, weights, L, &dlogits);
    if (!std::isfinite(loss)) throw Error(ErrorCode::NonFiniteLoss, "loss is not finite");
    out.loss += loss * inv_batch;
    dlogits *= inv_batch;
    backward(model, cache, dlogits, out.gradient);
  }
}

/// Mean example loss over `batch` and its gradient for every tensor. Dropout is
/// applied only when `dropout` is active.
inline LossAndGradient training_loss(const PredictorModel& model, std::span<const EncodedExample> batch,
                                     std::span<const double> weights, const nn::Dropout& dropout = {}) {
  LossAndGradient out{0.0, model.params.zeros_like()};
  accumulate_training_loss(model, batch, weights, dropout, out);
  return out;
}

}  // namespace layerflow
