#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "excir/cca_engine.hpp"
#include "excir/cir_core.hpp"
#include "excir/stability_stats.hpp"
#include "excir/synth_bench.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace excir;
using testutil::sp;

TEST_SUITE("synth_bench") {
  TEST_CASE("vehicular event rate") {
    const auto d = generate(SynthConfig{});
    CHECK(d.data.rows() == 6000);
    CHECK(d.data.cols() == 20);
    const double rate = d.labels.mean();
    CHECK(rate >= 0.13);
    CHECK(rate <= 0.17);
    CHECK(d.output.kind() == OutputKind::logit);
    CHECK(d.data.feature_names()[d.drivers[0]] == "brake");
  }

  TEST_CASE("generation is deterministic") {
    for (Family f : {Family::vehicular, Family::linear, Family::nonlinear}) {
      SynthConfig c;
      c.family = f;
      c.n = 500;
      const auto a = generate(c), b = generate(c);
      CHECK(format_csv(a.data) == format_csv(b.data));
      CHECK(a.output.values() == b.output.values());
      CHECK(a.labels == b.labels);
      c.seed = 8;
      CHECK(generate(c).data.values() != a.data.values());
    }
  }

  TEST_CASE("linear family with a single weight") {
    SynthConfig c;
    c.family = Family::linear;
    c.weights = {1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    c.noise_sd = 0.3;
    c.n = 2000;
    const auto d = generate(c);
    CHECK(oracle::pearson(testutil::col(d.data.values(), 0), testutil::vec(d.output.values().col(0))) > 0.9);
    CHECK(d.drivers == std::vector<std::size_t>{0});
  }

  TEST_CASE("config validation") {
    SynthConfig c;
    c.event_rate = 0.0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = SynthConfig{};
    c.rho_block = 1.0;
    CHECK_THROWS_AS(generate(c), ValidationError);
    c = SynthConfig{};
    c.n = 1;
    CHECK_THROWS_AS(generate(c), ValidationError);
    CHECK_THROWS_AS(parse_family("tabular"), ValidationError);
    CHECK(parse_family("nonlinear") == Family::nonlinear);
  }

  TEST_CASE("ground truth report") {
    SynthConfig c;
    c.n = 200;
    const auto d = generate(c);
    const auto j = d.ground_truth(c);
    CHECK(j["drivers"].size() == d.drivers.size());
    CHECK(j["driver_names"][0] == "brake");
    CHECK(j["rho_block"] == 0.4);
  }

  TEST_CASE("feature maps") {
    CHECK(map_dimension(FeatureMapKind::sinusoid) == 3);
    CHECK(map_dimension(FeatureMapKind::polynomial3) == 3);
    CHECK(map_dimension(FeatureMapKind::identity) == 1);
    const std::vector<double> x{0.25, -1.0};
    const Matrix s = apply_feature_map(sp(x), FeatureMapKind::sinusoid);
    CHECK(s(0, 0) == 0.25);
    CHECK(s(0, 1) == doctest::Approx(1.0));
    CHECK(std::abs(s(0, 2)) < 1e-15);
    const Matrix p = apply_feature_map(sp(x), FeatureMapKind::polynomial3);
    CHECK(p(1, 1) == 1.0);
    CHECK(p(1, 2) == -1.0);
  }

  TEST_CASE("feature-space score on exact and symmetric quadratics") {
    std::vector<double> x(201), y(201);
    for (int i = 0; i <= 200; ++i) {
      x[static_cast<std::size_t>(i)] = -1.0 + i / 100.0;
      y[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
    }
    CHECK(feature_space_score(sp(x), sp(y), FeatureMapKind::polynomial3) >= 1.0 - 1e-10);
    CHECK(std::abs(oracle::pearson(x, y)) < 1e-10);
    CHECK(feature_space_score(sp(x), sp(y), FeatureMapKind::identity) < 1e-10);
    const std::vector<double> flat(201, 2.0);
    CHECK_THROWS_AS(feature_space_score(sp(flat), sp(y), FeatureMapKind::polynomial3), NumericalError);
    const std::vector<double> few{1, 2, 3, 4};
    CHECK_THROWS_AS(feature_space_score(sp(few), sp(few), FeatureMapKind::polynomial3), ValidationError);
  }

  TEST_CASE("quadratic driver scores far above its raw correlation") {
    SynthConfig c;
    c.family = Family::nonlinear;
    c.n = 2000;
    const auto d = generate(c);
    const auto x1 = testutil::col(d.data.values(), 1);
    const auto y = testutil::vec(d.output.values().col(0));
    const double r2 = feature_space_score(sp(x1), sp(y), FeatureMapKind::polynomial3);
    const double raw = std::abs(oracle::pearson(x1, y));
    CHECK(raw < 0.1);
    CHECK(r2 > raw + 0.3);
  }

  TEST_CASE("property: tire channels are equicorrelated at rho_block") {
    for (double rho : {0.0, 0.4, 0.8}) {
      SynthConfig c;
      c.rho_block = rho;
      const auto d = generate(c);
      const auto tires = std::find_if(d.blocks.groups.begin(), d.blocks.groups.end(),
                                      [](const FeatureGroup& g) { return g.name == "tires"; });
      REQUIRE(tires != d.blocks.groups.end());
      REQUIRE(tires->members.size() >= 2);
      for (std::size_t a = 0; a < tires->members.size(); ++a) {
        for (std::size_t b = a + 1; b < tires->members.size(); ++b) {
          const double r = oracle::pearson(testutil::col(d.data.values(), tires->members[a]),
                                           testutil::col(d.data.values(), tires->members[b]));
          CHECK(std::abs(r - rho) <= 0.05);
        }
      }
    }
  }

  TEST_CASE("property: nonlinear drivers beat every distractor") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      SynthConfig c;
      c.family = Family::nonlinear;
      c.n = 2000;
      c.seed = seed;
      const auto d = generate(c);
      const auto s = feature_space_scores(d.data.values(), testutil::vec(d.output.values().col(0)));
      const double distractor = *std::max_element(s.begin() + 3, s.end());
      for (std::size_t j = 0; j < 3; ++j) CHECK(s[j] > distractor);
    }
  }

  TEST_CASE("property: linear family CCA and CIR orderings agree") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      SynthConfig c;
      c.family = Family::linear;
      c.n = 3000;
      c.seed = seed;
      const auto d = generate(c);
      const Matrix y = d.output.values();
      std::vector<double> cca;
      for (Index j = 0; j < d.data.cols(); ++j) {
        const Matrix xj = d.data.values().col(j);
        cca.push_back(std::abs(top_canonical_pair(covariance_blocks(xj, y, 0.0)).rho));
      }
      const Vector cir = eta_by_feature(score_all_features(d.data, d.output, CirMode::correlation),
                                        static_cast<std::size_t>(d.data.cols()));
      CHECK(spearman_rho(sp(cca), as_span(cir)) >= 0.95);
    }
  }
}
