#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "layerflow/error.hpp"

namespace layerflow {

using Embedding = std::vector<double>;

enum class EncoderKind { Hashing, Precomputed };

inline std::string_view to_string(EncoderKind kind) {
  return kind == EncoderKind::Hashing ? "hashing" : "precomputed";
}

inline EncoderKind parse_encoder_kind(std::string_view text) {
  if (text == "hashing") return EncoderKind::Hashing;
  if (text == "precomputed") return EncoderKind::Precomputed;
  throw Error(ErrorCode::InvalidArgument, "unknown encoder kind '" + std::string(text) + "'");
}

namespace hashing {

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ULL;
inline constexpr std::uint64_t kSeedMix = 0x9E3779B97F4A7C15ULL;

/// FNV-1a over the token bytes; the seed perturbs the offset basis.
inline std::uint64_t token_hash(std::string_view token, std::uint64_t seed) {
  std::uint64_t h = kFnvOffset ^ (seed * kSeedMix);
  for (unsigned char c : token) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

/// Lowercased maximal runs of ASCII alphanumerics.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

}  // namespace hashing

/// Text encoder shared by queries and tool documents. The hashing kind is a
/// seeded bag-of-tokens projection; the precomputed kind looks vectors up by
/// exact text.
class Encoder {
 public:
  static Encoder hashing(std::size_t dimension, std::uint64_t seed = 0) {
    if (dimension == 0) throw Error(ErrorCode::InvalidArgument, "embedding dimension must be positive");
    Encoder enc;
    enc.kind_ = EncoderKind::Hashing;
    enc.dimension_ = dimension;
    enc.seed_ = seed;
    return enc;
  }

  static Encoder precomputed(std::size_t dimension,
                             std::unordered_map<std::string, Embedding> store) {
    if (dimension == 0) throw Error(ErrorCode::InvalidArgument, "embedding dimension must be positive");
    for (const auto& [text, vec] : store) {
      if (vec.size() != dimension)
        throw Error(ErrorCode::DimensionMismatch, "store vector for '" + text + "' has dimension " +
                                                      std::to_string(vec.size()));
    }
    Encoder enc;
    enc.kind_ = EncoderKind::Precomputed;
    enc.dimension_ = dimension;
    enc.store_ = std::make_shared<const std::unordered_map<std::string, Embedding>>(std::move(store));
    return enc;
  }

  /// Reads newline-delimited `{"text": ..., "vector": [...]}` records.
  static Encoder load_store(const std::string& path, std::size_t dimension) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open embedding store " + path);
    std::unordered_map<std::string, Embedding> store;
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      auto record = nlohmann::json::parse(line, nullptr, false);
      if (record.is_discarded() || !record.contains("text") || !record.contains("vector"))
        throw Error(ErrorCode::InvalidArgument, "bad embedding store record in " + path);
      store[record["text"].get<std::string>()] = record["vector"].get<Embedding>();
    }
    return precomputed(dimension, std::move(store));
  }

  EncoderKind kind() const { return kind_; }
  std::size_t dimension() const { return dimension_; }
  std::uint64_t seed() const { return seed_; }

  Embedding embed(std::string_view text) const {
    if (kind_ == EncoderKind::Precomputed) {
      auto it = store_->find(std::string(text));
      if (it == store_->end())
        throw Error(ErrorCode::MissingEmbedding, "no stored vector for '" + std::string(text) + "'");
      return it->second;
    }
    Embedding out(dimension_, 0.0);
    for (const auto& token : hashing::tokenize(text))
      out[hashing::token_hash(token, seed_) % dimension_] += 1.0;
    double norm = 0.0;
    for (double v : out) norm += v * v;
    if (norm > 0.0) {
      norm = std::sqrt(norm);
      for (double& v : out) v /= norm;
    }
    return out;
  }

 private:
  Encoder() = default;

  EncoderKind kind_ = EncoderKind::Hashing;
  std::size_t dimension_ = 768;
  std::uint64_t seed_ = 0;
  std::shared_ptr<const std::unordered_map<std::string, Embedding>> store_;
};

inline Embedding embed_text(const Encoder& encoder, std::string_view text) { return encoder.embed(text); }

}  // namespace layerflow
