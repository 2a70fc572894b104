#include <cmath>
#include <cstdio>
#include <fstream>

#include <gtest/gtest.h>

#include "layerflow/embedder.hpp"
#include "layerflow/rng.hpp"

namespace layerflow {
namespace {

double norm(const Embedding& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

TEST(HashingEncoder, EmptyTextIsZeroVector) {
  auto enc = Encoder::hashing(8, 0);
  EXPECT_EQ(embed_text(enc, ""), Embedding(8, 0.0));
  EXPECT_EQ(embed_text(enc, "  __ --"), Embedding(8, 0.0));
}

TEST(HashingEncoder, RepetitionIsNormalizedAway) {
  auto enc = Encoder::hashing(8, 0);
  EXPECT_EQ(embed_text(enc, "search search"), embed_text(enc, "search"));
}

// Buckets computed offline with an independent FNV-1a script:
// offerinfo->5, for->0, google->6, jobs->5.
TEST(HashingEncoder, KnownVectorForToolName) {
  auto v = embed_text(Encoder::hashing(8, 0), "offerinfo_for_google_jobs");
  const double a = 1.0 / std::sqrt(6.0);
  Embedding expected{a, 0, 0, 0, 0, 2 * a, a, 0};
  ASSERT_EQ(v.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(v[i], expected[i], 1e-15) << i;
}

TEST(HashingEncoder, SeedChangesBuckets) {
  auto a = embed_text(Encoder::hashing(64, 0), "search offers");
  auto b = embed_text(Encoder::hashing(64, 1), "search offers");
  EXPECT_NE(a, b);
}

TEST(HashingEncoder, CaseAndPunctuationInsensitive) {
  auto enc = Encoder::hashing(32, 5);
  EXPECT_EQ(embed_text(enc, "Search-Offers"), embed_text(enc, "search offers"));
}

TEST(HashingEncoder, PropertiesOnRandomText) {
  Rng rng(42);
  const char* words[] = {"search", "offers", "jobs", "id", "fetch", "detail", "Frankfurt", "x1", "a_b"};
  auto enc = Encoder::hashing(768, 0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::string> tokens;
    int n = rng.between(1, 8);
    for (int i = 0; i < n; ++i) tokens.push_back(words[rng.below(9)]);
    std::string text;
    for (auto& t : tokens) text += t + " ";
    auto v = embed_text(enc, text);
    EXPECT_NEAR(norm(v), 1.0, 1e-12);
    EXPECT_EQ(v, embed_text(enc, text));
    rng.shuffle(tokens);
    std::string shuffled;
    for (auto& t : tokens) shuffled += t + "   ";
    EXPECT_EQ(v, embed_text(enc, shuffled));
  }
}

TEST(PrecomputedEncoder, ExactLookup) {
  std::unordered_map<std::string, Embedding> store{{"hello", {1.0, 0.0}}, {"world", {0.0, 1.0}}};
  auto enc = Encoder::precomputed(2, store);
  EXPECT_EQ(embed_text(enc, "world"), (Embedding{0.0, 1.0}));
  try {
    embed_text(enc, "missing");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingEmbedding);
  }
}

TEST(PrecomputedEncoder, DimensionMismatchRejected) {
  std::unordered_map<std::string, Embedding> store{{"hello", {1.0, 0.0, 0.0}}};
  try {
    Encoder::precomputed(2, store);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(PrecomputedEncoder, LoadsNewlineDelimitedStore) {
  std::string path = ::testing::TempDir() + "/store.jsonl";
  {
    std::ofstream out(path);
    out << R"({"text":"a b","vector":[0.5,0.5,0.0]})" << "\n\n" << R"({"text":"c","vector":[0,0,1]})" << "\n";
  }
  auto enc = Encoder::load_store(path, 3);
  EXPECT_EQ(enc.kind(), EncoderKind::Precomputed);
  EXPECT_EQ(embed_text(enc, "c"), (Embedding{0, 0, 1}));
  std::remove(path.c_str());
}

}  // namespace
}  // namespace layerflow
