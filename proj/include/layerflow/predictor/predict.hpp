#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "layerflow/catalog.hpp"
#include "layerflow/embedder.hpp"
#include "layerflow/predictor/assignment.hpp"
#include "layerflow/predictor/network.hpp"

namespace layerflow {

/// Inference-mode probabilities, bitwise independent of tool order: the network
/// always sees the tool rows in lexicographic order of their embeddings, and the
/// output rows are mapped back to the caller's order.
inline Matrix infer_probabilities(const PredictorModel& model, const Matrix& query, const Matrix& tools) {
  const auto n = tools.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    const double* ra = tools.row(a).data();
    const double* rb = tools.row(b).data();
    return std::lexicographical_compare(ra, ra + tools.cols(), rb, rb + tools.cols());
  });
  Matrix sorted(n, tools.cols());
  for (Eigen::Index i = 0; i < n; ++i) sorted.row(i) = tools.row(order[static_cast<std::size_t>(i)]);
  auto fwd = forward(model, query, sorted);
  Matrix out(n, fwd.probabilities.cols());
  for (Eigen::Index i = 0; i < n; ++i) out.row(order[static_cast<std::size_t>(i)]) = fwd.probabilities.row(i);
  return out;
}

inline Encoder encoder_for(const PredictorModel& model) {
  if (model.encoder.kind != EncoderKind::Hashing)
    throw Error(ErrorCode::InvalidArgument, "model expects a precomputed embedding store");
  return Encoder::hashing(static_cast<std::size_t>(model.hyper.input_dim), model.encoder.seed);
}

/// Embeds, runs the network, decodes each tool's layer, then applies the schema
/// shift. `tools` is the task's candidate set; the result follows its order.
inline LayerAssignment predict_layers(const PredictorModel& model, const Encoder& encoder, const ToolCatalog& tools,
                                      const std::string& query) {
  if (tools.empty()) throw Error(ErrorCode::InvalidArgument, "predict_layers needs at least one tool");
  if (encoder.dimension() != static_cast<std::size_t>(model.hyper.input_dim))
    throw Error(ErrorCode::DimensionMismatch, "encoder dimension differs from the model's input_dim");
  const auto d = static_cast<Eigen::Index>(encoder.dimension());
  Matrix q(1, d);
  auto eq = encoder.embed(query);
  q.row(0) = Eigen::Map<const RowVector>(eq.data(), d);
  Matrix t(static_cast<Eigen::Index>(tools.size()), d);
  for (std::size_t i = 0; i < tools.size(); ++i) {
    auto et = encoder.embed(textualize(tools.tools()[i]));
    t.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const RowVector>(et.data(), d);
  }
  Matrix probs = infer_probabilities(model, q, t);
  LayerAssignment assignment;
  assignment.num_layers = model.hyper.num_layers;
  for (std::size_t i = 0; i < tools.size(); ++i) {
    RowVector row = probs.row(static_cast<Eigen::Index>(i));
    int layer = decode_layer(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
    assignment.tools.push_back({tools.tools()[i].tool_id, layer, LayerSource::Predicted});
  }
  return apply_schema_shift(std::move(assignment), tools);
}

}  // namespace layerflow
