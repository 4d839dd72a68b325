#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "excir/lightweight_env.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace excir;
using testutil::sp;

namespace {
Matrix column(const std::vector<double>& v) {
  Matrix m(static_cast<Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Index>(i), 0) = v[i];
  return m;
}

// Binary predictions with the requested number of correct entries out of n.
Matrix predictions(const Vector& truth, int correct) {
  Matrix p(truth.size(), 1);
  for (Index i = 0; i < truth.size(); ++i) {
    const bool right = i < correct;
    p(i, 0) = (truth[i] > 0.5) == right ? 0.9 : 0.1;
  }
  return p;
}

GateInputs identical_inputs(std::mt19937_64& rng, Index n = 300) {
  GateInputs in;
  in.full_outputs = testutil::gaussian_matrix(n, 1, rng);
  in.lw_outputs = in.full_outputs;
  const Matrix z = testutil::gaussian_matrix(n, 1, rng);
  in.eval_pred_full = (1.0 / (1.0 + (-z.array()).exp())).matrix();
  in.eval_pred_lw = in.eval_pred_full;
  in.eval_truth = Vector(n);
  for (Index i = 0; i < n; ++i) in.eval_truth[i] = z(i, 0) > 0.2 ? 1.0 : 0.0;
  return in;
}
}  // namespace

TEST_SUITE("lightweight_env") {
  TEST_CASE("subsample sizes and determinism") {
    const auto all = subsample_indices(50, 1.0, 3);
    REQUIRE(all.size() == 50);
    for (Index i = 0; i < 50; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);
    const auto a = subsample_indices(4800, 0.2, 9);
    CHECK(a.size() == 960);
    CHECK(std::is_sorted(a.begin(), a.end()));
    CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
    CHECK(a == subsample_indices(4800, 0.2, 9));
    CHECK(a != subsample_indices(4800, 0.2, 10));
    CHECK_THROWS_AS(subsample_indices(10, 0.0, 1), ValidationError);
    CHECK_THROWS_AS(subsample_indices(10, 1.5, 1), ValidationError);
    CHECK_THROWS_AS(subsample_indices(10, 0.1, 1), ValidationError);
  }

  TEST_CASE("stratified subsample keeps the positive rate") {
    std::vector<double> labels(4800, 0.0);
    for (std::size_t i = 0; i < 720; ++i) labels[i * 6 + 1] = 1.0;
    const auto rows = subsample_indices(4800, 0.2, 4, sp(labels));
    double pos = 0;
    for (Index r : rows) pos += labels[static_cast<std::size_t>(r)];
    CHECK(rows.size() == 960);
    CHECK(std::abs(pos - 0.15 * 960) <= 1.0);
  }

  TEST_CASE("projection distance") {
    const std::vector<double> y{1, 2, 3, 5, 8};
    CHECK(projection_distance(sp(y), sp(y)).d_proj == doctest::Approx(0.0));
    std::vector<double> lin(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) lin[i] = 3 * y[i] - 7;
    const auto r = projection_distance(sp(y), sp(lin));
    CHECK(r.d_proj < 1e-12);
    CHECK(r.alpha(0, 0) == doctest::Approx(1.0 / 3.0));
    CHECK(r.beta[0] == doctest::Approx(7.0 / 3.0));

    const std::vector<double> ref{1, 2, 3}, lw{1, 2, 4};
    const auto line = oracle::normal_equations(lw, ref);
    const auto p = projection_distance(sp(ref), sp(lw));
    CHECK(p.d_proj == doctest::Approx(std::sqrt(line.sse / 14.0)).epsilon(1e-12));
    CHECK(p.alpha(0, 0) == doctest::Approx(line.slope).epsilon(1e-12));
    CHECK(p.beta[0] == doctest::Approx(line.intercept).epsilon(1e-12));

    const std::vector<double> zero(3, 0.0);
    CHECK_THROWS_AS(projection_distance(sp(zero), sp(lw)), ValidationError);
    CHECK_THROWS_AS(projection_distance(sp(y), sp(lw)), ValidationError);
  }

  TEST_CASE("multi-output projection absorbs an affine map") {
    std::mt19937_64 rng(1);
    const Matrix y = testutil::gaussian_matrix(100, 3, rng);
    const Matrix a = testutil::well_conditioned(3, rng);
    const Matrix lw = (y * a).rowwise() + Eigen::RowVector3d(1.0, -2.0, 0.5);
    CHECK(projection_distance(y, lw).d_proj < 1e-10);
    CHECK(projection_distance(y, testutil::gaussian_matrix(100, 3, rng)).d_proj > 0.5);
  }

  TEST_CASE("alpha calibration quantile") {
    const std::vector<double> v{5, 1, 4, 2, 3};
    CHECK(calibrate_threshold(sp(v), 0.75) == doctest::Approx(4.0));
    CHECK(calibrate_threshold(sp(v), 0.0) == 1.0);
    CHECK(calibrate_threshold(sp(v), 1.0) == 5.0);
    const std::vector<double> two{0.1, 0.4};
    CHECK(calibrate_threshold(sp(two), 0.75) == doctest::Approx(0.325));
    const std::vector<double> none;
    CHECK_THROWS_AS(calibrate_threshold(sp(none)), ValidationError);
  }

  TEST_CASE("MMD on identical samples") {
    std::mt19937_64 rng(2);
    const Matrix a = testutil::gaussian_matrix(200, 2, rng);
    MmdOptions o;
    o.permutations = 200;
    const auto r = mmd_gate(a, a, o);
    CHECK(std::abs(r.mmd2_biased) <= 1e-12);
    CHECK(r.mmd2 <= 0.0);
    CHECK(r.p_value > 0.5);
  }

  TEST_CASE("MMD matches a hand-summed kernel") {
    const std::vector<double> a{0.1, 0.7, -0.4}, b{1.2, 0.3, 2.0};
    MmdOptions o;
    o.bandwidth = 1.0;
    o.permutations = 20;
    const auto r = mmd_gate(column(a), column(b), o);
    CHECK(std::abs(r.mmd2 - oracle::mmd2_unbiased(a, b, 1.0)) <= 1e-12);
    CHECK(r.bandwidth == 1.0);
  }

  TEST_CASE("MMD separates shifted Gaussians") {
    std::mt19937_64 rng(3);
    const auto a = oracle::gaussian(500, rng), b = oracle::gaussian(500, rng, 3.0);
    MmdOptions o;
    o.permutations = 200;
    o.seed = 5;
    const auto r = mmd_gate(column(a), column(b), o);
    CHECK(r.p_value <= 0.01);
    CHECK(r.p_value >= 1.0 / 201.0);
  }

  TEST_CASE("MMD degenerate bandwidth falls back with a warning") {
    const Matrix c = Matrix::Constant(10, 1, 2.0);
    MmdOptions o;
    o.permutations = 20;
    const auto r = mmd_gate(c, c, o);
    CHECK(r.bandwidth == 1.0);
    CHECK(!r.warning.empty());
  }

  TEST_CASE("MMD permutation p-value is thread-count independent") {
    std::mt19937_64 rng(4);
    const Matrix a = testutil::gaussian_matrix(120, 1, rng), b = (testutil::gaussian_matrix(120, 1, rng).array() + 0.3).matrix();
    MmdOptions o;
    o.permutations = 100;
    const unsigned before = default_threads();
    set_default_threads(1);
    const auto one = mmd_gate(a, b, o);
    set_default_threads(4);
    const auto many = mmd_gate(a, b, o);
    set_default_threads(before);
    CHECK(one.p_value == many.p_value);
    CHECK(one.mmd2 == many.mmd2);
  }

  TEST_CASE("KL gate") {
    std::mt19937_64 rng(5);
    const auto a = oracle::gaussian(2000, rng);
    CHECK(kl_gate(sp(a), sp(a)) <= 1e-10);

    const auto b = oracle::gaussian(2000, rng, 0.1);
    const double truth = oracle::gaussian_kl_quadrature(0.0, 1.0, 0.1, 1.0);
    CHECK(truth == doctest::Approx(0.005).epsilon(1e-6));
    const double kl = kl_gate(sp(a), sp(b));
    CHECK(kl >= truth / 2);
    CHECK(kl <= truth * 2);

    auto far = a;
    for (double& v : far) v += 10.0;
    CHECK(kl_gate(sp(a), sp(far)) > 1.0);

    const std::vector<double> tiny{1, 2, 3, 4};
    CHECK_THROWS_AS(kl_gate(sp(tiny), sp(a)), ValidationError);
    KlOptions coarse;
    coarse.grid_points = 10;
    CHECK_THROWS_AS(kl_gate(sp(a), sp(b), coarse), ValidationError);
  }

  TEST_CASE("risk gap") {
    Vector truth(100);
    for (Index i = 0; i < 100; ++i) truth[i] = i % 3 == 0 ? 1.0 : 0.0;
    const Matrix p = predictions(truth, 80);
    const auto same = risk_gap(as_span(truth), p, p, TaskKind::classification);
    CHECK(same.ratio == 1.0);
    CHECK(same.risk_full == doctest::Approx(0.2));
    CHECK(risk_passes(same, 0.03));

    const auto drop = risk_gap(as_span(truth), predictions(truth, 70), predictions(truth, 60), TaskKind::classification);
    CHECK(drop.ratio == doctest::Approx(0.6 / 0.7));
    CHECK(!risk_passes(drop, 0.03));

    Vector t1000(1000);
    for (Index i = 0; i < 1000; ++i) t1000[i] = i % 2;
    const auto row = risk_gap(as_span(t1000), predictions(t1000, 1000), predictions(t1000, 974), TaskKind::classification);
    CHECK(row.ratio == doctest::Approx(0.974));
    CHECK(risk_passes(row, 0.03));

    const Vector y = Vector::LinSpaced(10, 0.0, 1.0);
    const auto reg = risk_gap(as_span(y), Matrix(y), Matrix((y.array() + 0.1).matrix()), TaskKind::regression);
    CHECK(reg.risk_full == 0.0);
    CHECK(reg.ratio == doctest::Approx(0.01));
    CHECK(risk_passes(reg, 0.03));
  }

  TEST_CASE("gate check on identical environments accepts") {
    std::mt19937_64 rng(6);
    const auto in = identical_inputs(rng);
    GateOptions o;
    o.mmd.permutations = 50;
    const auto r = gate_check(in, GateThresholds{}, o);
    CHECK(r.verdict.accept);
    CHECK(r.stats.d_proj == doctest::Approx(0.0).scale(1.0));
    CHECK(r.stats.kl <= 1e-10);
    CHECK(r.stats.risk.ratio == 1.0);
  }

  TEST_CASE("failing gates reject and every statistic is still reported") {
    std::mt19937_64 rng(7);
    auto in = identical_inputs(rng);
    in.lw_outputs.array() += 5.0;
    GateOptions o;
    o.mmd.permutations = 50;
    const auto r = gate_check(in, GateThresholds{}, o);
    CHECK(!r.verdict.accept);
    CHECK(!r.verdict.mmd);
    CHECK(!r.verdict.kl);
    CHECK(r.verdict.proj);
    CHECK(r.verdict.risk);
    CHECK(r.stats.kl > 0.1);
    CHECK(r.stats.d_proj == doctest::Approx(0.0).scale(1.0));
    const auto j = to_json(r);
    CHECK(j["verdict"] == "reject");
    CHECK(j["kl"]["pass"] == false);
    CHECK(j["projection"]["pass"] == true);
  }

  TEST_CASE("the measured vehicular row is accepted under defaults") {
    GateStatistics s;
    s.d_proj = 0.011;
    s.mmd_p = 0.10;
    s.kl = 0.009;
    s.risk.ratio = 0.974;
    s.risk.task = TaskKind::classification;
    CHECK(decide(s, GateThresholds{}).accept);
  }

  TEST_CASE("threshold validation and JSON") {
    GateThresholds t;
    t.beta = 1.5;
    CHECK_THROWS_AS(t.validate(), ValidationError);
    const auto j = nlohmann::json::parse(R"({"alpha": 0.2, "gamma": 0.05})");
    const auto p = GateThresholds::from_json(j);
    CHECK(p.alpha == 0.2);
    CHECK(p.gamma == 0.05);
    CHECK(p.beta == 0.05);
    CHECK(p.eps_acc == 0.03);
    CHECK_THROWS_AS(GateThresholds::from_json(nlohmann::json::parse(R"({"alpha": -1})")), ValidationError);
  }

  TEST_CASE("sample-size bounds") {
    const std::vector<double> req{3200, 5800, 4400};
    auto b = combine_requirements(req);
    CHECK(b.n_lb == 5800);
    const std::vector<std::pair<double, double>> prof{{3000, 4}, {5000, 7}, {6000, 9}, {8000, 12}};
    b.n_ub = budget_upper_bound(prof, 10);
    CHECK(*b.n_ub == 6000);
    CHECK(!b.window_empty());
    CHECK(budget_upper_bound(prof, 3) == 0);
    CHECK(budget_upper_bound(prof, 12) == 8000);

    const auto mmd = sample_size_lower_bound(std::nullopt, 0.01, std::nullopt, 0.05, 1);
    CHECK(mmd.n_mmd == std::ceil(16.0 * std::log(120.0) / 0.01));
    CHECK(mmd.n_lb == mmd.n_mmd);
    CHECK(mmd.n_proj == 0.0);

    const auto all = sample_size_lower_bound(0.1, 0.1, 0.1, 0.05, 1);
    CHECK(all.n_proj == std::ceil(std::log(60.0) / 0.01));
    CHECK(all.n_kl == std::ceil(std::pow(std::log(60.0) / 0.1, 1.25)));
    CHECK(all.n_lb == std::max({all.n_proj, all.n_mmd, all.n_kl}));
    const auto q3 = sample_size_lower_bound(std::nullopt, std::nullopt, 0.1, 0.05, 3);
    CHECK(q3.n_kl == std::ceil(std::pow(std::log(60.0) / 0.1, 7.0 / 4.0)));

    CHECK_THROWS_AS(sample_size_lower_bound(0.1, 0.1, 0.1, 1.5, 1), ValidationError);
    CHECK_THROWS_AS(sample_size_lower_bound(-0.1, 0.1, 0.1, 0.05, 1), ValidationError);
    const std::vector<std::pair<double, double>> bad{{5000, 4}, {3000, 7}};
    CHECK_THROWS_AS(budget_upper_bound(bad, 10), ValidationError);
  }

  TEST_CASE("property: loosening a threshold never flips accept to reject") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int flips = 0, accepted = 0;
    for (int t = 0; t < 100; ++t) {
      GateStatistics s;
      s.d_proj = u(rng) * 0.1;
      s.mmd_p = u(rng);
      s.kl = u(rng) * 0.2;
      s.risk.ratio = 0.9 + 0.1 * u(rng);
      GateThresholds th;
      th.alpha = u(rng) * 0.1;
      th.beta = u(rng) * 0.5;
      th.gamma = u(rng) * 0.2;
      th.eps_acc = u(rng) * 0.1;
      const bool before = decide(s, th).accept;
      accepted += before;
      GateThresholds loose = th;
      switch (t % 4) {
        case 0: loose.alpha += u(rng) * 0.05; break;
        case 1: loose.beta *= u(rng); break;
        case 2: loose.gamma += u(rng) * 0.05; break;
        default: loose.eps_acc += u(rng) * 0.05; break;
      }
      if (before && !decide(s, loose).accept) ++flips;
    }
    CHECK(flips == 0);
    CHECK(accepted > 0);
  }

  TEST_CASE("property: identity inputs accept for any admissible thresholds") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(1e-4, 1.0);
    const auto in = identical_inputs(rng, 120);
    for (int t = 0; t < 10; ++t) {
      GateThresholds th;
      th.alpha = u(rng);
      th.beta = u(rng) * 0.5;
      th.gamma = u(rng);
      th.eps_acc = u(rng) * 0.1;
      GateOptions o;
      o.mmd.permutations = 30;
      o.mmd.seed = static_cast<std::uint64_t>(t);
      CHECK(gate_check(in, th, o).verdict.accept);
    }
  }

  TEST_CASE("property: a 5 sd shift fails both distribution gates") {
    std::mt19937_64 rng(10);
    for (int t = 0; t < 3; ++t) {
      const Matrix a = testutil::gaussian_matrix(500, 1, rng);
      const Matrix b = testutil::gaussian_matrix(500, 1, rng).array() + 5.0;
      MmdOptions o;
      o.seed = static_cast<std::uint64_t>(t);
      CHECK(mmd_gate(a, b, o).p_value <= 0.05);
      CHECK(kl_gate(a, b) > 0.1);
    }
  }
}
