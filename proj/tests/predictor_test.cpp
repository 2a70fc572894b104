#include <cstdio>
#include <filesystem>

#include <gtest/gtest.h>

#include "layerflow/predictor/predict.hpp"
#include "layerflow/predictor/train.hpp"
#include "layerflow/sim/synth.hpp"

namespace layerflow {
namespace {

TEST(Ordinal, DecodeCountsStrictExceedances) {
  std::vector<double> a{0.9, 0.8, 0.2, 0.1};
  std::vector<double> b{0.5, 0.5, 0.5, 0.5};
  std::vector<double> c{0.2, 0.7, 0.1, 0.9};  // non-monotone rows are still counted
  EXPECT_EQ(decode_layer(a), 2);
  EXPECT_EQ(decode_layer(b), 0);
  EXPECT_EQ(decode_layer(c), 2);
}

TEST(Ordinal, CumulativeLabels) {
  EXPECT_EQ(cumulative_labels(2, 5), (std::vector<int>{1, 1, 0, 0}));
  EXPECT_EQ(cumulative_labels(0, 5), (std::vector<int>{0, 0, 0, 0}));
  EXPECT_EQ(cumulative_labels(4, 5), (std::vector<int>{1, 1, 1, 1}));
  EXPECT_THROW(cumulative_labels(5, 5), Error);
  EXPECT_THROW(cumulative_labels(-1, 5), Error);
}

TEST(Ordinal, LossAtOneHalfAndClamp) {
  EXPECT_NEAR(weighted_bce(0.5, 1, 1.0), std::log(2.0), 1e-12);
  EXPECT_NEAR(weighted_bce(0.5, 1, 3.0), 3.0 * std::log(2.0), 1e-12);
  EXPECT_NEAR(weighted_bce(0.0, 1, 1.0), -std::log(kProbabilityClamp), 1e-9);
  EXPECT_TRUE(std::isfinite(weighted_bce(1.0, 0, 1.0)));
}

TEST(Ordinal, ThresholdWeightsBalanceAndClamp) {
  // Layers 0,0,0,1 with L=3: threshold 0 has 3 negatives and 1 positive, threshold 1 has none positive.
  std::vector<int> gold{0, 0, 0, 1};
  auto w = threshold_weights(gold, 3);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_DOUBLE_EQ(w[0], 3.0);
  EXPECT_DOUBLE_EQ(w[1], 4.0);
  std::vector<int> many(50, 0);
  many.push_back(1);
  EXPECT_DOUBLE_EQ(threshold_weights(many, 2)[0], 10.0);
  std::vector<int> mostly_high(50, 1);
  mostly_high.push_back(0);
  EXPECT_DOUBLE_EQ(threshold_weights(mostly_high, 2)[0], 0.1);
}

TEST(Ordinal, AddingToEveryLogitNeverLowersTheLayer) {
  Rng rng(3);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> logits(4), p(4), q(4);
    double c = rng.uniform(0.0, 3.0);
    for (int k = 0; k < 4; ++k) {
      logits[k] = rng.uniform(-4, 4);
      p[k] = sigmoid(logits[k]);
      q[k] = sigmoid(logits[k] + c);
    }
    ASSERT_GE(decode_layer(q), decode_layer(p));
  }
}

PredictorHyper tiny_hyper() {
  PredictorHyper h;
  h.input_dim = 64;
  h.model_dim = 16;
  h.heads = 2;
  h.blocks = 1;
  h.num_layers = 5;
  h.dropout = 0.1;
  return h;
}

TEST(ModelFile, RoundTripsBitExactly) {
  auto model = init_model(tiny_hyper(), 5, {EncoderKind::Hashing, 9});
  Rng rng(1);
  model.params.visit([&](const std::string&, Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1, 1);
  });
  model.threshold_weights = {1.5, 2.0, 0.25, 10.0};
  auto bytes = serialize_model(model);
  EXPECT_EQ(bytes.substr(0, 8), "LFPREDM1");
  auto back = deserialize_model(bytes);
  EXPECT_EQ(serialize_model(back), bytes);
  EXPECT_EQ(back.hyper, model.hyper);
  EXPECT_EQ(back.encoder, model.encoder);
  EXPECT_EQ(back.threshold_weights, model.threshold_weights);

  auto path = std::filesystem::temp_directory_path() / "layerflow_model_roundtrip.bin";
  save_model(model, path.string());
  EXPECT_EQ(serialize_model(load_model(path.string())), bytes);
  std::filesystem::remove(path);
}

TEST(ModelFile, RejectsCorruption) {
  auto bytes = serialize_model(init_model(tiny_hyper(), 5));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_model(bad_magic), Error);
  EXPECT_THROW(deserialize_model(bytes.substr(0, bytes.size() - 3)), Error);
  EXPECT_THROW(deserialize_model(bytes + "x"), Error);
  try {
    deserialize_model(bytes.substr(0, 10));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedModel);
  }
}

TEST(Split, SizesAndDisjointness) {
  auto s = split_dataset(2000, 7);
  EXPECT_EQ(s.train.size(), 1600u);
  EXPECT_EQ(s.validation.size(), 200u);
  EXPECT_EQ(s.test.size(), 200u);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.validation.begin(), s.validation.end());
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) ASSERT_EQ(all[i], i);
  auto again = split_dataset(2000, 7);
  EXPECT_EQ(again.test, s.test);
  EXPECT_NE(split_dataset(2000, 8).test, s.test);
}

struct TinyData {
  sim::SynthDataset ds;
  std::vector<EncodedExample> encoded;
};

TinyData tiny_data(int n) {
  sim::SynthConfig sc;
  sc.n_examples = n;
  sc.n_tasks = 0;
  TinyData out{sim::generate_synthetic_dataset(sc), {}};
  out.encoded = encode_examples(out.ds.examples, out.ds.catalog, Encoder::hashing(64, 0));
  return out;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.hyper = tiny_hyper();
  cfg.epochs = 3;
  cfg.seed = 4;
  return cfg;
}

TEST(Train, IsDeterministicForASeed) {
  auto data = tiny_data(60);
  auto a = train(data.encoded, tiny_config());
  auto b = train(data.encoded, tiny_config());
  EXPECT_EQ(serialize_model(a.model), serialize_model(b.model));
  EXPECT_EQ(a.best_epoch, b.best_epoch);
  ASSERT_EQ(a.history.size(), 3u);
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
  auto cfg = tiny_config();
  cfg.seed = 5;
  EXPECT_NE(serialize_model(train(data.encoded, cfg).model), serialize_model(a.model));
}

TEST(Train, FitsASmallTrainingSet) {
  auto data = tiny_data(120);
  auto cfg = tiny_config();
  cfg.epochs = 25;
  cfg.learning_rate = 1e-2;
  auto r = train(data.encoded, cfg);
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
  auto acc = evaluate_accuracy(r.model, data.encoded, r.split.train);
  EXPECT_GE(acc.exact, 0.9);
  EXPECT_GE(acc.within_one, 0.98);
}

TEST(Train, KeepsTheBestValidationCheckpoint) {
  auto data = tiny_data(80);
  auto cfg = tiny_config();
  cfg.epochs = 6;
  auto r = train(data.encoded, cfg);
  double best = 0.0;
  for (const auto& h : r.history) best = std::max(best, h.val_exact);
  EXPECT_DOUBLE_EQ(evaluate_accuracy(r.model, data.encoded, r.split.validation).exact, best);
  EXPECT_DOUBLE_EQ(r.history[static_cast<std::size_t>(r.best_epoch)].val_exact, best);
}

TEST(Train, ThresholdWeightsComeFromTheTrainSplit) {
  auto data = tiny_data(60);
  auto r = train(data.encoded, tiny_config());
  std::vector<int> gold;
  for (auto i : r.split.train) gold.insert(gold.end(), data.encoded[i].gold_layers.begin(), data.encoded[i].gold_layers.end());
  EXPECT_EQ(r.model.threshold_weights, threshold_weights(gold, 5));
}

TEST(Train, RejectsEmptyData) {
  std::vector<EncodedExample> none;
  EXPECT_THROW(train(none, tiny_config()), Error);
}

TEST(TrainingFile, LoadsRecordsAndValidatesLabels) {
  auto path = std::filesystem::temp_directory_path() / "layerflow_train_records.jsonl";
  {
    std::ofstream out(path);
    out << R"({"query":"q one","tools":["a","b"],"layers":[0,1]})" << "\n\n"
        << R"({"query":"q two","tools":["c"],"layers":[4]})" << "\n";
  }
  auto ex = load_training_file(path.string());
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0].tool_ids, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(training_example_to_json(ex[1]).dump(), R"({"layers":[4],"query":"q two","tools":["c"]})");
  EXPECT_NO_THROW(validate_example(ex[1], 5));
  EXPECT_THROW(validate_example(ex[1], 4), Error);
  std::filesystem::remove(path);
}

TEST(Predict, ProbabilitiesAreBitwisePermutationEquivariant) {
  auto model = init_model(tiny_hyper(), 2);
  Rng rng(8);
  model.params.visit([&](const std::string&, Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += rng.uniform(-0.3, 0.3);
  });
  for (int t = 0; t < 50; ++t) {
    Matrix q(1, 64), tools(3, 64);
    for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = rng.uniform(-1, 1);
    for (Eigen::Index i = 0; i < tools.size(); ++i) tools.data()[i] = rng.uniform(-1, 1);
    Matrix base = infer_probabilities(model, q, tools);
    std::vector<Eigen::Index> perm{2, 0, 1};
    Matrix permuted(3, 64);
    for (int i = 0; i < 3; ++i) permuted.row(i) = tools.row(perm[static_cast<std::size_t>(i)]);
    Matrix out = infer_probabilities(model, q, permuted);
    for (int i = 0; i < 3; ++i)
      for (Eigen::Index k = 0; k < out.cols(); ++k)
        ASSERT_EQ(out(i, k), base(perm[static_cast<std::size_t>(i)], k));
  }
}

TEST(Predict, ZeroHeadPutsEveryToolAtLayerZeroBeforeTheShift) {
  auto model = init_model(tiny_hyper(), 2);
  auto vocab = sim::synthetic_vocabulary();
  const auto& d = vocab.chain[0];
  ToolCatalog tools({vocab.catalog.at(d[0][0]), vocab.catalog.at(d[1][0])});
  auto a = predict_layers(model, Encoder::hashing(64, 0), tools, "find things");
  EXPECT_EQ(a.layer_of(d[0][0]), 0);
  EXPECT_EQ(a.layer_of(d[1][0]), 1);  // raised by its dependency on the search tool
  EXPECT_EQ(a.tools[1].source, LayerSource::Shifted);
  EXPECT_THROW(predict_layers(model, Encoder::hashing(32, 0), tools, "x"), Error);
}

}  // namespace
}  // namespace layerflow
