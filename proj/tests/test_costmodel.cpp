#include <doctest.h>

#include <cmath>
#include <json.hpp>

#include "lutnet/costmodel.hpp"
#include "support.hpp"

using namespace lutnet;

namespace {

// Independent oracle: count 6:1 LUTs by building the mux tree. An N-input
// single-output function splits into four (N-2)-input cofactors that a 6:1
// LUT (two select bits plus four data bits) combines, or into two cofactors
// when only one select bit is left over.
std::int64_t mux_tree_luts(int n) {
  if (n <= 6) return 1;
  if (n == 7) return 3;  // two 6-LUT halves and a 2:1 mux LUT
  return mux_tree_luts(n - 2) + (std::int64_t{1} << (n - 6));
}

std::string config(const std::string& name) { return std::string(LUTNET_SOURCE_DIR) + "/configs/" + name; }

}  // namespace

TEST_SUITE("costmodel") {

TEST_CASE("closed form equals the recurrence and the mux-tree count") {
  for (int n = 6; n <= 40; ++n)
    for (int m = 1; m <= 8; ++m) {
      REQUIRE(lut_cost_closed(n, m) == lut_cost_recursive(n, m));
      REQUIRE(lut_cost_closed(n, m) == m * mux_tree_luts(n));
    }
  for (int n = 1; n < 6; ++n) CHECK(lut_cost_closed(n, 3) == 3);
  CHECK_THROWS_AS(lut_cost_closed(0, 1), Error);
  CHECK_THROWS_AS(lut_cost_closed(6, 0), Error);
  CHECK_THROWS_AS(lut_cost_closed(63, 1), Error);
}

TEST_CASE("static mapping rows") {
  // Fan-in, LUTs, truth-table bits, config bits, utilization in percent.
  struct Row {
    int fan_in;
    std::int64_t luts, tt, cfg;
    double pct;
  };
  const Row rows[] = {{6, 1, 64, 64, 100.0},      {7, 3, 128, 192, 66.67},     {8, 5, 256, 320, 80.0},
                      {9, 11, 512, 704, 72.73},   {10, 21, 1024, 1344, 76.19}, {11, 43, 2048, 2752, 74.42}};
  for (const auto& r : rows) {
    const auto m = static_6lut_map(r.fan_in);
    CHECK(m.lut_count == r.luts);
    CHECK(m.truth_table_bits == r.tt);
    CHECK(m.config_bits == r.cfg);
    CHECK(std::round(m.utilization * 10000.0) / 100.0 == doctest::Approx(r.pct));
  }
}

TEST_CASE("static mapping invariants") {
  for (int n = 1; n <= 30; ++n) {
    const auto m = static_6lut_map(n);
    REQUIRE(m.config_bits == 64 * m.lut_count);
    REQUIRE(m.truth_table_bits == (std::int64_t{1} << n));
    REQUIRE(m.utilization > 0.0);
    REQUIRE(m.utilization <= 1.0);
  }
}

TEST_CASE("dense layer cost") {
  // Oracle: the fitted linear model evaluated by hand.
  const double expected = 10 * (512 * 2 * 4 * 1.0699 + 10.779);
  CHECK(dense_quant_linear_cost(10, 512, 2, 4) == doctest::Approx(expected));
  CHECK(dense_quant_linear_cost(10, 512, 2, 4) == doctest::Approx(43930.9));
  CHECK(dense_quant_linear_cost(0, 512, 2, 4) == 0.0);
}

TEST_CASE("convolution costs against a per-pixel count") {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const int outpix = 1 + static_cast<int>(rng.below(50));
    const int ob = 1 + static_cast<int>(rng.below(3));
    const int ofm = 1 + static_cast<int>(rng.below(8));
    const int ifm = 1 + static_cast<int>(rng.below(4));
    const int k = 1 + static_cast<int>(rng.below(3));
    const int ib = 1 + static_cast<int>(rng.below(3));
    const int xk = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(k * k)));
    const int xs = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(ifm)));
    const auto c = conv_costs(outpix, ob, ofm, ifm, k, ib, xk, xs);
    std::int64_t dense = 0, dw = 0, pw = 0;
    for (int p = 0; p < outpix; ++p)
      for (int f = 0; f < ofm; ++f)
        for (int b = 0; b < ob; ++b) {
          if (ifm * k * k * ib <= 62) dense += mux_tree_luts(ifm * k * k * ib);
          dw += mux_tree_luts(xk * ib);
          pw += mux_tree_luts(xs * ib);
        }
    if (ifm * k * k * ib <= 62)
      REQUIRE(c.dense == dense);
    else
      REQUIRE_FALSE(c.dense.has_value());
    REQUIRE(c.depthwise == dw);
    REQUIRE(c.pointwise == pw);
  }
}

TEST_CASE("jet model hidden-layer costs") {
  struct Expect {
    const char* file;
    double l1, l2, l3;
  };
  const Expect models[] = {{"model_a.json", 2112, 2112, 2112},
                           {"model_b.json", 4224, 2112, 1056},
                           {"model_c.json", 128, 64, 64},
                           {"model_d.json", 2688, 1344, 1344},
                           {"model_e.json", 640, 640, 640}};
  for (const auto& m : models) {
    CAPTURE(m.file);
    const auto r = report(load_topology(config(m.file)));
    REQUIRE(r.layers.size() == 4);
    CHECK(r.layers[0].luts == m.l1);
    CHECK(r.layers[1].luts == m.l2);
    CHECK(r.layers[2].luts == m.l3);
  }
}

TEST_CASE("MNIST hidden layers within the table's k rounding") {
  struct Expect {
    const char* file;
    std::vector<double> k;  // hidden layers only
  };
  const Expect models[] = {{"mnist_512.json", {87}},          {"mnist_1024x1.json", {43}},
                           {"mnist_2048x1.json", {86}},       {"mnist_512x2.json", {87, 87}},
                           {"mnist_1024x2.json", {43, 43}},   {"mnist_2048x2.json", {86, 86}},
                           {"mnist_512x3.json", {87, 87, 87}}, {"mnist_1024x3.json", {43, 43, 43}},
                           {"mnist_2048x3.json", {86, 86, 86}}};
  for (const auto& m : models) {
    CAPTURE(m.file);
    const auto r = report(load_topology(config(m.file)));
    REQUIRE(r.layers.size() == m.k.size() + 1);
    for (std::size_t i = 0; i < m.k.size(); ++i) CHECK(std::round(r.layers[i].luts / 1000.0) == m.k[i]);
  }
  // The one-hidden-layer heads match their column to the table's precision.
  CHECK(std::round(report(load_topology(config("mnist_512.json"))).layers[1].luts / 100.0) == 439);
  CHECK(std::round(report(load_topology(config("mnist_1024x1.json"))).layers[1].luts / 1000.0) == 88);
  CHECK(std::round(report(load_topology(config("mnist_2048x1.json"))).layers[1].luts / 1000.0) == 175);
}

TEST_CASE("report total and JSON form") {
  const auto r = report(load_topology(config("model_c.json")));
  double sum = 0.0;
  for (const auto& l : r.layers) sum += l.luts;
  CHECK(r.total == sum);
  const auto j = nlohmann::json::parse(format_json(r));
  CHECK(j.at("layers").size() == 4);
  CHECK(j.at("total").get<double>() == doctest::Approx(sum));
  CHECK(format_text(r).find("128") != std::string::npos);
}

}
