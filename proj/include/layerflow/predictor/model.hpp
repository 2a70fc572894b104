#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "layerflow/embedder.hpp"
#include "layerflow/error.hpp"
#include "layerflow/rng.hpp"

namespace layerflow {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct PredictorHyper {
  int input_dim = 768;   // d
  int model_dim = 256;   // d'
  int heads = 8;
  int blocks = 2;
  int num_layers = 5;    // L
  double dropout = 0.1;
  int ffn_mult = 4;

  int head_dim() const { return model_dim / heads; }
  int ffn_dim() const { return model_dim * ffn_mult; }
  int thresholds() const { return num_layers - 1; }

  void validate() const {
    if (input_dim <= 0 || model_dim <= 0 || heads <= 0 || blocks < 0 || ffn_mult <= 0)
      throw Error(ErrorCode::InvalidArgument, "predictor dimensions must be positive");
    if (model_dim % heads != 0)
      throw Error(ErrorCode::InvalidArgument, "model_dim must be divisible by heads");
    if (num_layers < 2) throw Error(ErrorCode::InvalidArgument, "need at least two layers");
    if (dropout < 0.0 || dropout >= 1.0) throw Error(ErrorCode::InvalidArgument, "dropout must be in [0, 1)");
  }

  bool operator==(const PredictorHyper&) const = default;
};

struct EncoderSpec {
  EncoderKind kind = EncoderKind::Hashing;
  std::uint64_t seed = 0;
  bool operator==(const EncoderSpec&) const = default;
};

// Pre-norm encoder block. Linear maps act on row vectors: y = x W^T + b.
struct EncoderBlockParams {
  Matrix ln1_gain, ln1_bias;
  Matrix w_query, b_query, w_key, b_key, w_value, b_value, w_out, b_out;
  Matrix ln2_gain, ln2_bias;
  Matrix w_ffn1, b_ffn1, w_ffn2, b_ffn2;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "ln1_gain", ln1_gain);
    f(prefix + "ln1_bias", ln1_bias);
    f(prefix + "w_query", w_query);
    f(prefix + "b_query", b_query);
    f(prefix + "w_key", w_key);
    f(prefix + "b_key", b_key);
    f(prefix + "w_value", w_value);
    f(prefix + "b_value", b_value);
    f(prefix + "w_out", w_out);
    f(prefix + "b_out", b_out);
    f(prefix + "ln2_gain", ln2_gain);
    f(prefix + "ln2_bias", ln2_bias);
    f(prefix + "w_ffn1", w_ffn1);
    f(prefix + "b_ffn1", b_ffn1);
    f(prefix + "w_ffn2", w_ffn2);
    f(prefix + "b_ffn2", b_ffn2);
  }
};

/// All learnable tensors of the layer predictor.
struct PredictorParams {
  Matrix query_proj, tool_proj;          // d' x d
  Matrix query_ln_gain, query_ln_bias;   // 1 x d'
  Matrix tool_ln_gain, tool_ln_bias;     // 1 x d'
  std::vector<EncoderBlockParams> blocks;
  Matrix head_weight;                    // 1 x d', shared across thresholds
  Matrix head_bias;                      // 1 x (L-1)

  template <class F>
  void visit(F&& f) {
    f(std::string("query_proj"), query_proj);
    f(std::string("tool_proj"), tool_proj);
    f(std::string("query_ln_gain"), query_ln_gain);
    f(std::string("query_ln_bias"), query_ln_bias);
    f(std::string("tool_ln_gain"), tool_ln_gain);
    f(std::string("tool_ln_bias"), tool_ln_bias);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit("block" + std::to_string(i) + ".", f);
    f(std::string("head_weight"), head_weight);
    f(std::string("head_bias"), head_bias);
  }

  template <class F>
  void visit(F&& f) const {
    const_cast<PredictorParams*>(this)->visit([&](const std::string& name, Matrix& m) {
      f(name, static_cast<const Matrix&>(m));
    });
  }

  /// Same shapes, all zeros.
  PredictorParams zeros_like() const {
    PredictorParams out = *this;
    out.visit([](const std::string&, Matrix& m) { m.setZero(); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    visit([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
    return ok;
  }
};

struct PredictorModel {
  PredictorHyper hyper;
  EncoderSpec encoder;
  std::vector<double> threshold_weights;
  PredictorParams params;
};

namespace detail {

inline Matrix uniform_matrix(int rows, int cols, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

}  // namespace detail

/// Matrices ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); LayerNorm gains 1 and biases 0;
/// linear biases and the ordinal head start at zero.
inline PredictorModel init_model(const PredictorHyper& hyper, std::uint64_t seed,
                                 EncoderSpec encoder = {}) {
  hyper.validate();
  Rng rng(mix_key({seed, 0x1A7E5ULL}));
  const int d = hyper.input_dim, m = hyper.model_dim, f = hyper.ffn_dim();
  PredictorModel model;
  model.hyper = hyper;
  model.encoder = encoder;
  model.threshold_weights.assign(static_cast<std::size_t>(hyper.thresholds()), 1.0);
  auto& p = model.params;
  p.query_proj = detail::uniform_matrix(m, d, rng);
  p.tool_proj = detail::uniform_matrix(m, d, rng);
  p.query_ln_gain = Matrix::Ones(1, m);
  p.query_ln_bias = Matrix::Zero(1, m);
  p.tool_ln_gain = Matrix::Ones(1, m);
  p.tool_ln_bias = Matrix::Zero(1, m);
  for (int b = 0; b < hyper.blocks; ++b) {
    EncoderBlockParams block;
    block.ln1_gain = Matrix::Ones(1, m);
    block.ln1_bias = Matrix::Zero(1, m);
    block.w_query = detail::uniform_matrix(m, m, rng);
    block.b_query = Matrix::Zero(1, m);
    block.w_key = detail::uniform_matrix(m, m, rng);
    block.b_key = Matrix::Zero(1, m);
    block.w_value = detail::uniform_matrix(m, m, rng);
    block.b_value = Matrix::Zero(1, m);
    block.w_out = detail::uniform_matrix(m, m, rng);
    block.b_out = Matrix::Zero(1, m);
    block.ln2_gain = Matrix::Ones(1, m);
    block.ln2_bias = Matrix::Zero(1, m);
    block.w_ffn1 = detail::uniform_matrix(f, m, rng);
    block.b_ffn1 = Matrix::Zero(1, f);
    block.w_ffn2 = detail::uniform_matrix(m, f, rng);
    block.b_ffn2 = Matrix::Zero(1, m);
    p.blocks.push_back(std::move(block));
  }
  p.head_weight = Matrix::Zero(1, m);
  p.head_bias = Matrix::Zero(1, hyper.thresholds());
  return model;
}

// Model container: 8-byte magic, u32 version, u64 header length, JSON header,
// then every tensor as little-endian float64, row-major, in header order.
inline constexpr char kModelMagic[8] = {'L', 'F', 'P', 'R', 'E', 'D', 'M', '1'};
inline constexpr std::uint32_t kModelVersion = 1;

inline std::string serialize_model(const PredictorModel& model) {
  nlohmann::json header;
  const auto& h = model.hyper;
  header["hyper"] = {{"input_dim", h.input_dim}, {"model_dim", h.model_dim}, {"heads", h.heads},
                     {"blocks", h.blocks},       {"num_layers", h.num_layers}, {"dropout", h.dropout},
                     {"ffn_mult", h.ffn_mult}};
  header["encoder"] = {{"kind", std::string(to_string(model.encoder.kind))},
                       {"seed", model.encoder.seed},
                       {"dimension", h.input_dim}};
  header["threshold_weights"] = model.threshold_weights;
  header["tensors"] = nlohmann::json::array();
  model.params.visit([&](const std::string& name, const Matrix& m) {
    header["tensors"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  });
  std::string header_text = header.dump();

  std::string out(kModelMagic, sizeof(kModelMagic));
  auto put = [&](const void* data, std::size_t n) { out.append(static_cast<const char*>(data), n); };
  std::uint32_t version = kModelVersion;
  std::uint64_t header_len = header_text.size();
  put(&version, sizeof(version));
  put(&header_len, sizeof(header_len));
  out += header_text;
  model.params.visit([&](const std::string&, const Matrix& m) {
    put(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
  });
  return out;
}

inline PredictorModel deserialize_model(std::string_view bytes) {
  auto fail = [](const std::string& what) { return Error(ErrorCode::MalformedModel, what); };
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (pos + n > bytes.size()) throw fail("truncated model file");
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  char magic[sizeof(kModelMagic)];
  take(magic, sizeof(magic));
  if (std::memcmp(magic, kModelMagic, sizeof(magic)) != 0) throw fail("bad magic");
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  take(&version, sizeof(version));
  if (version != kModelVersion) throw fail("unsupported model version " + std::to_string(version));
  take(&header_len, sizeof(header_len));
  if (pos + header_len > bytes.size()) throw fail("truncated header");
  auto header = nlohmann::json::parse(bytes.substr(pos, header_len), nullptr, false);
  pos += header_len;
  if (header.is_discarded()) throw fail("header is not JSON");

  PredictorHyper h;
  const auto& jh = header.at("hyper");
  h.input_dim = jh.at("input_dim");
  h.model_dim = jh.at("model_dim");
  h.heads = jh.at("heads");
  h.blocks = jh.at("blocks");
  h.num_layers = jh.at("num_layers");
  h.dropout = jh.at("dropout");
  h.ffn_mult = jh.at("ffn_mult");
  EncoderSpec enc;
  enc.kind = parse_encoder_kind(header.at("encoder").at("kind").get<std::string>());
  enc.seed = header.at("encoder").at("seed").get<std::uint64_t>();

  PredictorModel model = init_model(h, 0, enc);
  model.threshold_weights = header.at("threshold_weights").get<std::vector<double>>();
  const auto& tensors = header.at("tensors");
  std::size_t index = 0;
  model.params.visit([&](const std::string& name, Matrix& m) {
    if (index >= tensors.size()) throw fail("missing tensor " + name);
    const auto& t = tensors[index++];
    if (t.at("name") != name || t.at("rows") != m.rows() || t.at("cols") != m.cols())
      throw fail("tensor layout mismatch at " + name);
    take(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
  });
  if (index != tensors.size() || pos != bytes.size()) throw fail("trailing data in model file");
  if (!model.params.all_finite()) throw fail("non-finite tensor values");
  return model;
}

inline void save_model(const PredictorModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  auto bytes = serialize_model(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline PredictorModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize_model(buffer.str());
}

}  // namespace layerflow
