#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "layerflow/catalog.hpp"
#include "layerflow/embedder.hpp"
#include "layerflow/predictor/network.hpp"

namespace layerflow {

/// One layer-labelled task: the query, its candidate tools and their gold layers.
struct TrainingExample {
  std::string query;
  std::vector<std::string> tool_ids;
  std::vector<int> gold_layers;
};

inline void validate_example(const TrainingExample& ex, int num_layers) {
  if (ex.tool_ids.empty()) throw Error(ErrorCode::InvalidArgument, "training example without tools");
  if (ex.tool_ids.size() != ex.gold_layers.size())
    throw Error(ErrorCode::InvalidArgument, "tools and layers differ in length");
  for (int g : ex.gold_layers) cumulative_labels(g, num_layers);
}

inline Json training_example_to_json(const TrainingExample& ex) {
  return Json{{"query", ex.query}, {"tools", ex.tool_ids}, {"layers", ex.gold_layers}};
}

inline TrainingExample training_example_from_json(const Json& j) {
  TrainingExample ex;
  ex.query = j.at("query").get<std::string>();
  ex.tool_ids = j.at("tools").get<std::vector<std::string>>();
  ex.gold_layers = j.at("layers").get<std::vector<int>>();
  return ex;
}

inline std::vector<TrainingExample> load_training_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::vector<TrainingExample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = Json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::InvalidArgument, "bad training record in " + path);
    out.push_back(training_example_from_json(j));
  }
  return out;
}

/// Embeds queries and textualized tool documents; each tool is embedded once.
inline std::vector<EncodedExample> encode_examples(std::span<const TrainingExample> examples,
                                                   const ToolCatalog& catalog, const Encoder& encoder) {
  std::unordered_map<std::string, Embedding> cache;
  const auto d = static_cast<Eigen::Index>(encoder.dimension());
  std::vector<EncodedExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    EncodedExample enc;
    auto q = encoder.embed(ex.query);
    enc.query = Eigen::Map<const RowVector>(q.data(), d);
    enc.tools.resize(static_cast<Eigen::Index>(ex.tool_ids.size()), d);
    for (std::size_t i = 0; i < ex.tool_ids.size(); ++i) {
      auto it = cache.find(ex.tool_ids[i]);
      if (it == cache.end()) it = cache.emplace(ex.tool_ids[i], encoder.embed(textualize(catalog.at(ex.tool_ids[i])))).first;
      enc.tools.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const RowVector>(it->second.data(), d);
    }
    enc.gold_layers = ex.gold_layers;
    out.push_back(std::move(enc));
  }
  return out;
}

struct DatasetSplit {
  std::vector<std::size_t> train, validation, test;
};

/// Seeded shuffle, then floor(n * (1 - val - test)) / floor(n * val) / rest.
inline DatasetSplit split_dataset(std::size_t n, std::uint64_t seed, double val_fraction = 0.1,
                                  double test_fraction = 0.1) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_key({seed, 0x5B117ULL}));
  rng.shuffle(order);
  auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * val_fraction));
  auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_fraction));
  if (n_val + n_test >= n) n_val = n_test = 0;
  std::size_t n_train = n - n_val - n_test;
  DatasetSplit split;
  split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                          order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return split;
}

struct LayerAccuracy {
  double exact = 0.0;
  double within_one = 0.0;
  std::size_t tools = 0;
};

inline LayerAccuracy evaluate_accuracy(const PredictorModel& model, std::span<const EncodedExample> data,
                                       std::span<const std::size_t> indices) {
  LayerAccuracy acc;
  std::size_t exact = 0, near = 0;
  for (auto idx : indices) {
    const auto& ex = data[idx];
    auto fwd = forward(model, ex.query, ex.tools);
    for (Eigen::Index i = 0; i < fwd.probabilities.rows(); ++i) {
      RowVector row = fwd.probabilities.row(i);
      int predicted = decode_layer(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
      int gold = ex.gold_layers[static_cast<std::size_t>(i)];
      exact += predicted == gold;
      near += std::abs(predicted - gold) <= 1;
      ++acc.tools;
    }
  }
  if (acc.tools) {
    acc.exact = static_cast<double>(exact) / static_cast<double>(acc.tools);
    acc.within_one = static_cast<double>(near) / static_cast<double>(acc.tools);
  }
  return acc;
}

struct TrainConfig {
  PredictorHyper hyper;
  int epochs = 10;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  std::size_t batch_size = 2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm cap; 0 disables
  EncoderSpec encoder;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_exact = 0.0;
};

struct TrainResult {
  PredictorModel model;
  DatasetSplit split;
  std::vector<EpochStats> history;
  int best_epoch = -1;
};

class AdamOptimizer {
 public:
  AdamOptimizer(const PredictorParams& like, double lr, double beta1, double beta2, double eps)
      : m_(like.zeros_like()), v_(like.zeros_like()), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(PredictorParams& params, PredictorParams& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    const double step = lr_ / c1, inv_sqrt_c2 = 1.0 / std::sqrt(c2);
    std::vector<Matrix*> ps, gs, ms, vs;
    params.visit([&](const std::string&, Matrix& x) { ps.push_back(&x); });
    grad.visit([&](const std::string&, Matrix& x) { gs.push_back(&x); });
    m_.visit([&](const std::string&, Matrix& x) { ms.push_back(&x); });
    v_.visit([&](const std::string&, Matrix& x) { vs.push_back(&x); });
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto g = gs[i]->array();
      auto m = ms[i]->array();
      auto v = vs[i]->array();
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g.square();
      ps[i]->array() -= step * m / (v.sqrt() * inv_sqrt_c2 + eps_);
    }
  }

 private:
  PredictorParams m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Trains on the train split of `data`, keeping the checkpoint with the best
/// validation exact-layer accuracy (the train split stands in when there is no
/// validation split).
inline TrainResult train(std::span<const EncodedExample> data, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "no training examples");
  cfg.hyper.validate();
  TrainResult result;
  result.split = split_dataset(data.size(), cfg.seed, cfg.val_fraction, cfg.test_fraction);
  const auto& train_idx = result.split.train;
  const auto& select_idx = result.split.validation.empty() ? train_idx : result.split.validation;

  PredictorModel model = init_model(cfg.hyper, cfg.seed, cfg.encoder);
  std::vector<int> train_gold;
  for (auto i : train_idx)
    for (int g : data[i].gold_layers) train_gold.push_back(g);
  model.threshold_weights = threshold_weights(train_gold, cfg.hyper.num_layers);

  AdamOptimizer adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
  Rng shuffle_rng(mix_key({cfg.seed, 0x5EEDULL}));
  std::vector<std::size_t> order = train_idx;
  double best_acc = -1.0;
  std::vector<EncodedExample> batch;
  LossAndGradient lg{0.0, model.params.zeros_like()};

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
      Rng dropout_rng(mix_key({cfg.seed, static_cast<std::uint64_t>(epoch), start}));
      nn::Dropout dropout{cfg.hyper.dropout, &dropout_rng};
      try {
        accumulate_training_loss(model, batch, model.threshold_weights, dropout, lg);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::NonFiniteLoss || e.code() == ErrorCode::NonFiniteActivation)
          throw Error(ErrorCode::Divergence, e.what());
        throw;
      }
      if (cfg.grad_clip > 0.0) {
        double sq = 0.0;
        lg.gradient.visit([&](const std::string&, const Matrix& g) { sq += g.squaredNorm(); });
        if (double norm = std::sqrt(sq); norm > cfg.grad_clip)
          lg.gradient.visit([&](const std::string&, Matrix& g) { g *= cfg.grad_clip / norm; });
      }
      adam.step(model.params, lg.gradient);
      loss_sum += lg.loss;
      ++batches;
    }
    if (!model.params.all_finite()) throw Error(ErrorCode::Divergence, "parameters became non-finite");
    EpochStats stats{epoch, loss_sum / static_cast<double>(batches), 0.0};
    stats.val_exact = evaluate_accuracy(model, data, select_idx).exact;
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
    if (stats.val_exact > best_acc) {
      best_acc = stats.val_exact;
      result.best_epoch = epoch;
      result.model = model;
    }
  }
  if (cfg.epochs <= 0) result.model = model;
  return result;
}

}  // namespace layerflow
