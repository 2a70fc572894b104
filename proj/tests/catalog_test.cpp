#include <functional>
#include <gtest/gtest.h>

#include "layerflow/catalog.hpp"
#include "layerflow/rng.hpp"

namespace layerflow {
namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::InvalidArgument;
}

TEST(ParseCatalog, HealthCheckToolHasEmptyRequiredSet) {
  auto catalog = parse_catalog(
      R"([{"name":"health_for_suivi_colis","description":"health check",)"
      R"("parameters":{"type":"object","properties":{},"required":[]}}])");
  ASSERT_EQ(catalog.size(), 1u);
  EXPECT_TRUE(catalog.schema("health_for_suivi_colis").required.empty());
  EXPECT_TRUE(catalog.schema("health_for_suivi_colis").properties.empty());
}

TEST(ParseCatalog, EmptyListIsEmptyCatalog) { EXPECT_TRUE(parse_catalog("[]").empty()); }

TEST(ParseCatalog, DuplicateIdsRejected) {
  EXPECT_EQ(code_of([] { parse_catalog(R"([{"name":"a"},{"name":"a"}])"); }), ErrorCode::DuplicateToolId);
}

TEST(ParseCatalog, SyntaxErrorsAreMalformed) {
  EXPECT_EQ(code_of([] { parse_catalog("[{"); }), ErrorCode::MalformedCatalog);
  EXPECT_EQ(code_of([] { parse_catalog(R"({"name":"a"})"); }), ErrorCode::MalformedCatalog);
  EXPECT_EQ(code_of([] { parse_catalog(R"([{"description":"no name"}])"); }), ErrorCode::MalformedCatalog);
}

TEST(ParseCatalog, BadParameterBlocksAreSchemaViolations) {
  EXPECT_EQ(code_of([] { parse_catalog(R"([{"name":"a","parameters":{"type":"array"}}])"); }),
            ErrorCode::SchemaViolation);
  EXPECT_EQ(code_of([] {
              parse_catalog(R"([{"name":"a","parameters":{"type":"object","properties":{},"required":["x"]}}])");
            }),
            ErrorCode::SchemaViolation);
  EXPECT_EQ(code_of([] {
              parse_catalog(R"([{"name":"a","parameters":{"properties":{"x":{"type":"integer","enum":["one"]}}}}])");
            }),
            ErrorCode::SchemaViolation);
  EXPECT_EQ(code_of([] {
              parse_catalog(R"([{"name":"a","parameters":{"properties":{"x":{"type":"date"}}}}])");
            }),
            ErrorCode::SchemaViolation);
  EXPECT_EQ(code_of([] {
              parse_catalog(R"([{"name":"a","parameters":{"properties":{"x":{"type":"string","enum":[]}}}}])");
            }),
            ErrorCode::SchemaViolation);
}

TEST(ParseCatalog, UnknownMetadataIsPreserved) {
  auto catalog = parse_catalog(R"([{"name":"a","category":"Logistics","description":"d"}])");
  EXPECT_EQ(catalog.at("a").extra.at("category"), "Logistics");
  auto again = parse_catalog(serialize_catalog(catalog));
  EXPECT_EQ(again.at("a").extra.at("category"), "Logistics");
}

TEST(BuildSchemaIndex, RequiredStringKey) {
  ToolDoc doc{"get_tracking_data_for_create_container_tracking", "get_tracking_data_for_create_container_tracking",
              "", Json::parse(R"({"type":"object","properties":{"is_id":{"type":"string"}},"required":["is_id"]})"),
              std::nullopt};
  auto index = build_schema_index(doc);
  EXPECT_EQ(index.required, std::set<std::string>{"is_id"});
  EXPECT_EQ(index.properties.at("is_id").primitive_type, FieldType::String);
}

TEST(BuildSchemaIndex, AbsentParametersGiveEmptyIndex) {
  ToolDoc doc{"t", "t", "", std::nullopt, std::nullopt};
  EXPECT_TRUE(build_schema_index(doc).empty());
}

TEST(BuildSchemaIndex, EnumLiteralsCarried) {
  ToolDoc doc{"Finish", "Finish", "",
              Json::parse(R"({"type":"object","properties":{"return_type":{"type":"string",)"
                          R"("enum":["give_answer","give_up"]},"final_answer":{"type":"string"}}})"),
              std::nullopt};
  auto index = build_schema_index(doc);
  const auto& spec = index.properties.at("return_type");
  ASSERT_TRUE(spec.enum_values.has_value());
  EXPECT_EQ(*spec.enum_values, (std::vector<Json>{"give_answer", "give_up"}));
}

TEST(BuildSchemaIndex, NestedPropertiesNotIndexed) {
  ToolDoc doc{"t", "t", "",
              Json::parse(R"({"type":"object","properties":{"filter":{"type":"object",)"
                          R"("properties":{"inner":{"type":"bogus"}},"required":["missing"]}}})"),
              std::nullopt};
  auto index = build_schema_index(doc);
  ASSERT_EQ(index.properties.size(), 1u);
  EXPECT_EQ(index.properties.at("filter").primitive_type, FieldType::Object);
}

TEST(Textualize, NameDescriptionAndSortedSchema) {
  ToolDoc doc{"geocode_for_dargan", "geocode_for_dargan", "get coordinates",
              Json::parse(R"({"type":"object","properties":{"postcode":{"type":"string"}}})"), std::nullopt};
  EXPECT_EQ(textualize(doc), "geocode_for_dargan get coordinates postcode:string");
}

TEST(Textualize, EmptyDescriptionNoParams) {
  ToolDoc doc{"ping", "ping", "", std::nullopt, std::nullopt};
  EXPECT_EQ(textualize(doc), "ping  ");
}

TEST(Textualize, KeyOrderDoesNotMatter) {
  ToolDoc a{"t", "t", "d",
            Json::parse(R"({"type":"object","properties":{"b":{"type":"integer"},"a":{"type":"string","enum":["x"]}},"required":["b"]})"),
            std::nullopt};
  ToolDoc b{"t", "t", "d",
            Json::parse(R"({"required":["b"],"properties":{"a":{"enum":["x"],"type":"string"},"b":{"type":"integer"}},"type":"object"})"),
            std::nullopt};
  EXPECT_EQ(textualize(a), textualize(b));
  EXPECT_EQ(textualize(a), R"(t d a:string=["x"] b*:integer)");
}

TEST(Textualize, DistinguishesRequirednessAndEnums) {
  auto make = [](const char* params) {
    return ToolDoc{"t", "t", "d", Json::parse(params), std::nullopt};
  };
  auto plain = textualize(make(R"({"properties":{"k":{"type":"string"}}})"));
  auto required = textualize(make(R"({"properties":{"k":{"type":"string"}},"required":["k"]})"));
  auto enumerated = textualize(make(R"({"properties":{"k":{"type":"string","enum":["v"]}}})"));
  auto typed = textualize(make(R"({"properties":{"k":{"type":"number"}}})"));
  EXPECT_NE(plain, required);
  EXPECT_NE(plain, enumerated);
  EXPECT_NE(plain, typed);
  EXPECT_NE(required, enumerated);
}

// Random catalogs survive serialize/parse with identical content.
TEST(CatalogRoundTrip, ParseSerializeParseIsFixedPoint) {
  Rng rng(99);
  const char* types[] = {"string", "integer", "number", "boolean", "array", "object"};
  for (int trial = 0; trial < 200; ++trial) {
    Json raw = Json::array();
    int tools = rng.between(0, 5);
    for (int t = 0; t < tools; ++t) {
      Json record{{"name", "tool_" + std::to_string(t)}, {"description", "desc " + std::to_string(rng.below(100))}};
      if (rng.bernoulli(0.8)) {
        Json props = Json::object();
        Json required = Json::array();
        int keys = rng.between(0, 4);
        for (int k = 0; k < keys; ++k) {
          std::string key = "k" + std::to_string(k);
          Json spec{{"type", types[rng.below(6)]}};
          if (spec["type"] == "string" && rng.bernoulli(0.3)) spec["enum"] = {"a", "b"};
          props[key] = spec;
          if (rng.bernoulli(0.5)) required.push_back(key);
        }
        record["parameters"] = {{"type", "object"}, {"properties", props}, {"required", required}};
      }
      if (rng.bernoulli(0.3)) record["output_type"] = "thing_id";
      if (rng.bernoulli(0.3)) record["meta"] = {{"x", 1}};
      raw.push_back(record);
    }
    auto first = parse_catalog(raw.dump());
    auto text = serialize_catalog(first);
    auto second = parse_catalog(text);
    EXPECT_EQ(serialize_catalog(second), text);
    ASSERT_EQ(first.size(), second.size());
    for (const auto& doc : first) {
      EXPECT_EQ(textualize(doc), textualize(second.at(doc.tool_id)));
      EXPECT_EQ(first.schema(doc.tool_id), second.schema(doc.tool_id));
    }
  }
}

TEST(ToolCatalog, SubsetKeepsCatalogOrder) {
  auto catalog = parse_catalog(R"([{"name":"a"},{"name":"b"},{"name":"c"}])");
  std::vector<std::string> ids{"c", "a"};
  auto sub = catalog.subset(ids);
  ASSERT_EQ(sub.size(), 2u);
  EXPECT_EQ(sub.tools()[0].tool_id, "a");
  EXPECT_EQ(sub.tools()[1].tool_id, "c");
  std::vector<std::string> missing{"zzz"};
  EXPECT_THROW(catalog.subset(missing), Error);
}

}  // namespace
}  // namespace layerflow
