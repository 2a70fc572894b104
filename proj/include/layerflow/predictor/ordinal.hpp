#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "layerflow/error.hpp"

namespace layerflow {

inline constexpr double kProbabilityClamp = 1e-7;

/// Number of thresholds whose probability strictly exceeds one half. Rows are
/// not assumed to be monotone.
inline int decode_layer(std::span<const double> probs) {
  int layer = 0;
  for (double p : probs)
    if (p > 0.5) ++layer;
  return layer;
}

/// y_k = 1 iff gold > k, for k = 0..num_layers-2.
inline std::vector<int> cumulative_labels(int gold, int num_layers) {
  if (num_layers < 1 || gold < 0 || gold > num_layers - 1)
    throw Error(ErrorCode::OutOfRangeLabel,
                "gold layer " + std::to_string(gold) + " outside [0, " + std::to_string(num_layers - 1) + "]");
  std::vector<int> labels(static_cast<std::size_t>(num_layers - 1));
  for (int k = 0; k + 1 < num_layers; ++k) labels[static_cast<std::size_t>(k)] = gold > k ? 1 : 0;
  return labels;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

/// Binary cross-entropy with the positive term scaled by `positive_weight`.
/// The probability is clamped to [eps, 1 - eps] before the logarithm.
inline double weighted_bce(double p, int y, double positive_weight) {
  double q = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return y ? -positive_weight * std::log(q) : -std::log(1.0 - q);
}

/// d weighted_bce / d logit, where p = sigmoid(logit). Zero inside the clamp region.
inline double weighted_bce_grad_logit(double p, int y, double positive_weight) {
  if (p < kProbabilityClamp || p > 1.0 - kProbabilityClamp) return 0.0;
  return y ? -positive_weight * (1.0 - p) : p;
}

/// Per-threshold positive-class weights n_neg / max(n_pos, 1), clamped to [0.1, 10].
inline std::vector<double> threshold_weights(std::span<const int> gold_layers, int num_layers) {
  std::vector<double> neg(static_cast<std::size_t>(num_layers - 1), 0.0);
  std::vector<double> pos(neg.size(), 0.0);
  for (int g : gold_layers) {
    auto labels = cumulative_labels(g, num_layers);
    for (std::size_t k = 0; k < labels.size(); ++k) (labels[k] ? pos : neg)[k] += 1.0;
  }
  std::vector<double> weights(neg.size());
  for (std::size_t k = 0; k < weights.size(); ++k)
    weights[k] = std::clamp(neg[k] / std::max(pos[k], 1.0), 0.1, 10.0);
  return weights;
}

}  // namespace layerflow
