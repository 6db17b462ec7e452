#include <gtest/gtest.h>

#include "comportal/json_io.hpp"

using namespace comportal;

TEST(JsonIo, MatrixFormats) {
  const Matrix F1 = (Matrix(2, 2) << -1, 0, 1, -1).finished();
  EXPECT_EQ(matrix_from_json(json::parse(R"({"n":2,"entries":[[-1,0],[1,-1]]})")), F1);
  EXPECT_EQ(matrix_from_json(json::parse(R"({"matrix":[[-1,0],[1,-1]]})")), F1);
  EXPECT_EQ(matrix_from_json(json::parse(R"([[-1,0],[1,-1]])")), F1);
  EXPECT_EQ(matrix_from_json(matrix_json(F1)), F1);
  EXPECT_THROW(matrix_from_json(json::parse(R"({"n":3,"entries":[[-1,0],[1,-1]]})")), InvalidArgument);
  EXPECT_THROW(matrix_from_json(json::parse(R"({"n":2})")), InvalidArgument);
  EXPECT_THROW(matrix_from_json(json::parse(R"([[1,2],[3]])")), InvalidArgument);
}

TEST(JsonIo, FamilyRoundTrip) {
  FamilyParams f;
  f.n = 4;
  f.l = 3;
  f.a = (Vector(3) << 0.5, 1, 2).finished();
  f.b = 0.25;
  const auto g = family_from_json(to_json(f));
  EXPECT_EQ(g.n, 4);
  EXPECT_EQ(g.l, 3);
  EXPECT_EQ(g.a, f.a);
  EXPECT_EQ(g.b, 0.25);
  EXPECT_THROW(family_from_json(json::parse(R"({"n":2,"l":2,"a":[1,-1],"b":0})")), InvalidArgument);
}

TEST(JsonIo, CertificateRoundTrip) {
  const auto c = linear_inverse_certificate(CompartmentalMatrix::from((Matrix(2, 2) << -1, 0, 1, -1).finished()));
  const json j = to_json(c);
  EXPECT_DOUBLE_EQ(j.at("gamma").get<double>(), 2.0);
  EXPECT_EQ(j.at("source"), "linear_inverse");
  const auto d = certificate_from_json(j);
  EXPECT_EQ(d.v, c.v);
  EXPECT_EQ(d.lambda, c.lambda);
  EXPECT_EQ(d.source, c.source);
}

TEST(JsonIo, CanonicalizationIsOneBased) {
  const auto c = canonicalize(CompartmentalMatrix::from((Matrix(2, 2) << -1, 1, 0, -1).finished()));
  const json j = to_json(c);
  EXPECT_EQ(j.at("schema"), "comportal.canonicalization/1");
  EXPECT_EQ(j.at("r"), json::parse("[2,1]"));
  EXPECT_EQ(j.at("l"), 2);
  EXPECT_EQ(matrix_from_json(j.at("A")), c.A.matrix());
  EXPECT_EQ(j.at("witness").at("downstream"), json::parse("[2,null]"));
}

TEST(JsonIo, GraphAndTrap) {
  const auto F = CompartmentalMatrix::from((Matrix(2, 2) << -1, 0, 1, 0).finished());
  const auto g = build_graph(F);
  const json j = to_json(g, check_outflow_connected(g));
  EXPECT_EQ(j.at("edges"), json::parse("[[1,2]]"));
  EXPECT_EQ(j.at("trap"), json::parse("[1,2]"));
  EXPECT_EQ(j.at("outflow_connected"), false);
}

TEST(JsonIo, StructuredSystem) {
  const auto j = json::parse(R"({
    "n": 2, "capacities": [1, 2],
    "constants": {"k": 3},
    "f0": [0, "k*0 + 1"],
    "f": {"2,1": "c - x"},
    "declared_lipschitz": {"f.2,1": 1}
  })");
  const auto s = structured_from_json(j);
  EXPECT_EQ(s.n, 2);
  ASSERT_TRUE(s.flow_fn(1, 0));
  EXPECT_DOUBLE_EQ((*s.flow_fn(1, 0))(0, 0.5), 1.5);  // c is the capacity of compartment 2
  EXPECT_DOUBLE_EQ(s.f0[1](0, 0), 1.0);
  EXPECT_DOUBLE_EQ(s.g[0](0, 0.3), 0.3);
  EXPECT_EQ(s.sources.at("f.2,1"), "c - x");
  EXPECT_EQ(s.declared_lipschitz.at("f.2,1"), 1.0);
  const auto t = structured_from_json(json::parse(R"({"n":1,"capacities":[1],"f0":["k"]})"), {{"k", 0.5}});
  EXPECT_DOUBLE_EQ(t.f0[0](0, 0), 0.5);
}

TEST(JsonIo, StructuredSystemErrors) {
  EXPECT_THROW(structured_from_json(json::parse(R"({"n":2,"capacities":[1]})")), InvalidArgument);
  EXPECT_THROW(structured_from_json(json::parse(R"({"n":2,"capacities":[1,1],"f":{"1,1":"x"}})")),
               InvalidArgument);
  EXPECT_THROW(structured_from_json(json::parse(R"({"n":2,"capacities":[1,1],"f":{"2-1":"x"}})")),
               InvalidArgument);
  EXPECT_THROW(structured_from_json(json::parse(R"({"n":1,"capacities":[1],"f0":["q"]})")), ParseError);
}

TEST(JsonIo, ReportsCarrySchemaAndVerdict) {
  CoefficientBounds b;
  b.n = 2;
  b.f0 = {Interval{}, Interval{1, 1}};
  b.flow[{1, 0}] = Interval{1, 2};
  const json j = to_json(classify_bounded_coefficients(b, 16));
  EXPECT_EQ(j.at("schema"), "comportal.es-report/1");
  EXPECT_EQ(j.at("verdict"), "certified-ES");
  EXPECT_EQ(j.at("exit_code"), 0);
  EXPECT_TRUE(j.contains("certificate"));
}

TEST(JsonIo, ReadFileErrors) {
  EXPECT_THROW(read_json_file("/nonexistent/file.json"), InvalidArgument);
}
