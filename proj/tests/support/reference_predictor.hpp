#pragma once

// Loop-based reference forward pass of the layer predictor. Written directly
// from the layer equations with plain vectors, without Eigen, so it can serve as
// an oracle for the production forward pass.

#include <cmath>
#include <vector>

#include "layerflow/predictor/model.hpp"

namespace reference {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat to_mat(const layerflow::Matrix& m) {
  Mat out(static_cast<std::size_t>(m.rows()), Vec(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

inline Vec to_vec(const layerflow::Matrix& m) { return to_mat(m)[0]; }

inline Vec linear(const Vec& x, const Mat& w, const Vec* b) {
  Vec y(w.size(), 0.0);
  for (std::size_t o = 0; o < w.size(); ++o) {
    double acc = b ? (*b)[o] : 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += w[o][i] * x[i];
    y[o] = acc;
  }
  return y;
}

inline Vec layer_norm(const Vec& x, const Vec& g, const Vec& b) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = g[i] * (x[i] - mean) / std::sqrt(var + 1e-5) + b[i];
  return y;
}

inline Vec relu(Vec x) {
  for (double& v : x) v = v > 0 ? v : 0.0;
  return x;
}

inline Mat block(const layerflow::EncoderBlockParams& p, const Mat& x, int heads) {
  const std::size_t n = x.size(), dm = x[0].size(), dh = dm / static_cast<std::size_t>(heads);
  Mat a(n), q(n), k(n), v(n);
  Vec bq = to_vec(p.b_query), bk = to_vec(p.b_key), bv = to_vec(p.b_value), bo = to_vec(p.b_out);
  Mat wq = to_mat(p.w_query), wk = to_mat(p.w_key), wv = to_mat(p.w_value), wo = to_mat(p.w_out);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = layer_norm(x[i], to_vec(p.ln1_gain), to_vec(p.ln1_bias));
    q[i] = linear(a[i], wq, &bq);
    k[i] = linear(a[i], wk, &bk);
    v[i] = linear(a[i], wv, &bv);
  }
  Mat concat(n, Vec(dm, 0.0));
  for (int h = 0; h < heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dh;
    for (std::size_t i = 0; i < n; ++i) {
      Vec scores(n);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += q[i][off + c] * k[j][off + c];
        scores[j] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (double& s : scores) z += (s = std::exp(s - mx));
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < dh; ++c) concat[i][off + c] += scores[j] / z * v[j][off + c];
    }
  }
  Mat out(n);
  Vec b1 = to_vec(p.b_ffn1), b2 = to_vec(p.b_ffn2);
  Mat w1 = to_mat(p.w_ffn1), w2 = to_mat(p.w_ffn2);
  for (std::size_t i = 0; i < n; ++i) {
    Vec att = linear(concat[i], wo, &bo);
    Vec mid(dm);
    for (std::size_t c = 0; c < dm; ++c) mid[c] = x[i][c] + att[c];
    Vec ff = linear(relu(linear(layer_norm(mid, to_vec(p.ln2_gain), to_vec(p.ln2_bias)), w1, &b1)), w2, &b2);
    out[i].resize(dm);
    for (std::size_t c = 0; c < dm; ++c) out[i][c] = mid[c] + ff[c];
  }
  return out;
}

/// Per-tool threshold probabilities P(l > k).
inline Mat probabilities(const layerflow::PredictorModel& model, const Vec& query, const Mat& tools) {
  const auto& p = model.params;
  Mat x;
  x.push_back(relu(layer_norm(linear(query, to_mat(p.query_proj), nullptr), to_vec(p.query_ln_gain),
                              to_vec(p.query_ln_bias))));
  for (const auto& t : tools)
    x.push_back(relu(layer_norm(linear(t, to_mat(p.tool_proj), nullptr), to_vec(p.tool_ln_gain),
                                to_vec(p.tool_ln_bias))));
  for (const auto& b : p.blocks) x = block(b, x, model.hyper.heads);
  Vec w = to_vec(p.head_weight), bias = to_vec(p.head_bias);
  Mat out;
  for (std::size_t i = 1; i < x.size(); ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < w.size(); ++c) s += w[c] * x[i][c];
    Vec row;
    for (double bk : bias) row.push_back(1.0 / (1.0 + std::exp(-(s + bk))));
    out.push_back(row);
  }
  return out;
}

}  // namespace reference
