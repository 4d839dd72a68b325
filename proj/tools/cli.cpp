#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "excir/cca_engine.hpp"
#include "excir/cir_core.hpp"
#include "excir/data_io.hpp"
#include "excir/eval_harness.hpp"
#include "excir/group_multi.hpp"
#include "excir/lightweight_env.hpp"
#include "excir/stability_stats.hpp"
#include "excir/synth_bench.hpp"

namespace excir::cli {

namespace {

// Everything a subcommand reads, echoed into every report.
struct RunConfig {
  std::string command;
  std::string input;
  std::string target;
  std::string outputs;
  std::string label;
  std::string mode = "midmean";
  std::string blocks;
  std::string thresholds;
  std::uint64_t seed = 42;
  double fraction = 0.2;
  std::size_t B = 100;
  std::size_t head_k = 8;
  std::string output;
  bool no_header = false;
  std::string impute = "none";
  unsigned threads = 1;
  /// Subcommand-specific arguments.
  nlohmann::json extra = nlohmann::json::object();
};

nlohmann::json to_json(const RunConfig& c) {
  return {{"command", c.command}, {"input", c.input},     {"target", c.target},   {"outputs", c.outputs},
          {"label", c.label},     {"mode", c.mode},       {"blocks", c.blocks},   {"thresholds", c.thresholds},
          {"seed", c.seed},       {"fraction", c.fraction}, {"B", c.B},           {"head_k", c.head_k},
          {"output", c.output},   {"no_header", c.no_header}, {"impute", c.impute},
          {"args", c.extra}};
}

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Loaded {
  CsvTable table;
  std::optional<OutputBlock> outputs;
  std::optional<Vector> labels;
};

// Reads the CSV with the target (p = 1), an optional multi-output list and
// an optional label column kept out of the features.
Loaded load(const RunConfig& c, bool need_target) {
  if (c.input.empty()) throw ValidationError("--input is required");
  CsvOptions opts;
  opts.has_header = !c.no_header;
  if (c.impute == "median") {
    opts.missing = MissingPolicy::impute_median;
  } else if (c.impute != "none") {
    throw ValidationError("--impute accepts 'median' or 'none'");
  }
  opts.target = c.target.empty() ? "none" : c.target;
  const auto outs = split_list(c.outputs);
  opts.aux_columns = outs;
  if (!c.label.empty()) opts.aux_columns.push_back(c.label);
  Loaded l{load_csv(c.input, opts), std::nullopt, std::nullopt};
  if (need_target && !l.table.target && outs.empty()) throw ValidationError("--target (or --outputs) is required");
  if (!outs.empty()) {
    Matrix y(l.table.data.rows(), static_cast<Index>(outs.size()));
    for (std::size_t j = 0; j < outs.size(); ++j) y.col(static_cast<Index>(j)) = l.table.aux.at(outs[j]);
    l.outputs = OutputBlock(std::move(y), OutputKind::logit);
  }
  if (!c.label.empty()) l.labels = l.table.aux.at(c.label);
  return l;
}

void emit(const nlohmann::json& report, const RunConfig& c) {
  nlohmann::json full = report;
  full["run_config"] = to_json(c);
  if (c.output.empty()) {
    std::cout << serialize_report(full);
  } else {
    write_report(full, c.output);
  }
}

void write_curve_csv(const std::string& path, const std::vector<double>& x, const std::vector<double>& y,
                     const char* y_name) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << "fraction," << y_name << "\n";
  out.precision(17);
  for (std::size_t i = 0; i < x.size(); ++i) out << x[i] << "," << y[i] << "\n";
}

std::vector<std::size_t> ranking_from_scores(const Vector& s) { return descending_order(as_span(s)); }

// ---------------------------------------------------------------------------

void run_score(const RunConfig& c) {
  const auto l = load(c, true);
  const auto mode = parse_cir_mode(c.mode);
  if (!l.table.target) throw ValidationError("score needs a scalar --target");
  const auto scores = score_all_features(l.table.data, *l.table.target, mode);
  nlohmann::json r;
  r["scores"] = to_json(scores, l.table.data.feature_names());
  r["n"] = l.table.data.rows();
  emit(r, c);
}

void run_block(RunConfig c, std::optional<double> ridge) {
  c.extra = {{"ridge", opt(ridge)}};
  const auto l = load(c, true);
  const auto mode = parse_cir_mode(c.mode);
  const auto& y = l.outputs ? *l.outputs : *l.table.target;
  BlockSpec spec;
  if (!c.blocks.empty()) spec = BlockSpec::load(c.blocks, l.table.data.feature_names());
  BlockOptions opts;
  opts.ridge = ridge;
  const auto groups = block_cir(l.table.data, y, spec, mode, opts);
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& g : groups) arr.push_back(to_json(g, l.table.data.feature_names()));
  nlohmann::json r;
  r["blocks"] = arr;
  emit(r, c);
}

void run_ccir(RunConfig c, Index cls, const std::string& selector, const std::string& scheme,
              const std::vector<double>& alpha, std::optional<double> lambda) {
  c.extra = {{"class", cls}, {"selector", selector}, {"weights", scheme}, {"alpha", alpha}, {"lambda", opt(lambda)}};
  const auto l = load(c, true);
  if (!l.outputs) throw ValidationError("ccir needs --outputs with the output columns");
  const auto mode = parse_cir_mode(c.mode);
  const auto& names = l.table.data.feature_names();
  nlohmann::json r;
  r["class"] = cls;
  r["selector"] = selector;
  r["class_scores"] = to_json(cc_cir(l.table.data, *l.outputs, cls, parse_class_selector(selector), mode, lambda), names);
  WeightVector w;
  w.scheme = parse_weight_scheme(scheme);
  if (!alpha.empty()) w.alpha = to_vector(alpha);
  nlohmann::json mo = nlohmann::json::array();
  for (const auto& s : mo_excir(l.table.data, *l.outputs, w, mode, lambda)) mo.push_back(to_json(s, names));
  r["weights"] = scheme;
  r["multi_output"] = mo;
  if (lambda) r["lambda"] = *lambda;
  emit(r, c);
}

struct LwArgs {
  std::string task = "classification";
  double eval_fraction = 0.2;
  std::size_t permutations = 200;
  std::optional<double> eps_proj, eps_mmd, eps_kl;
  double delta = 0.05;
  std::string profile;
  std::optional<double> t_max;
  std::size_t calibrate_alpha = 0;
};

void run_lw_check(RunConfig c, const LwArgs& a) {
  c.extra = {{"task", a.task},           {"eval_fraction", a.eval_fraction}, {"permutations", a.permutations},
             {"eps_proj", opt(a.eps_proj)}, {"eps_mmd", opt(a.eps_mmd)},       {"eps_kl", opt(a.eps_kl)},
             {"delta", a.delta},         {"profile", a.profile},             {"t_max", opt(a.t_max)},
             {"calibrate_alpha", a.calibrate_alpha}};
  const auto l = load(c, true);
  if (!l.table.target) throw ValidationError("lw-check needs a scalar --target (model output column)");
  const TaskKind task = parse_task(a.task);
  GateThresholds th;
  if (!c.thresholds.empty()) {
    std::ifstream in(c.thresholds);
    if (!in) throw ValidationError("cannot open thresholds " + c.thresholds);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("thresholds: " + std::string(e.what()));
    }
    th = GateThresholds::from_json(j);
  }
  if (!(a.eval_fraction > 0.0 && a.eval_fraction < 1.0)) throw ValidationError("--eval-fraction must lie in (0, 1)");

  // Leading rows form the pool, trailing rows the common evaluation set.
  const Index n = l.table.data.rows();
  const Index n_eval = static_cast<Index>(std::llround(a.eval_fraction * static_cast<double>(n)));
  const Index n_pool = n - n_eval;
  if (n_eval < 2 || n_pool < 2) throw ValidationError("lw-check: too few rows for the pool/evaluation split");
  std::vector<Index> pool_rows(static_cast<std::size_t>(n_pool)), eval_rows(static_cast<std::size_t>(n_eval));
  for (Index i = 0; i < n_pool; ++i) pool_rows[static_cast<std::size_t>(i)] = i;
  for (Index i = 0; i < n_eval; ++i) eval_rows[static_cast<std::size_t>(i)] = n_pool + i;

  const DataMatrix pool = l.table.data.select_rows(pool_rows);
  const DataMatrix eval = l.table.data.select_rows(eval_rows);
  const OutputBlock pool_y = l.table.target->select_rows(pool_rows);
  const Vector truth_all = l.labels ? *l.labels : Vector(l.table.target->values().col(0));
  Vector pool_truth(n_pool), eval_truth(n_eval);
  for (Index i = 0; i < n_pool; ++i) pool_truth[i] = truth_all[i];
  for (Index i = 0; i < n_eval; ++i) eval_truth[i] = truth_all[n_pool + i];

  const auto lw_rows = subsample_indices(n_pool, c.fraction, c.seed);
  const DataMatrix lw = pool.select_rows(lw_rows);
  const OutputBlock lw_y = pool_y.select_rows(lw_rows);
  Vector lw_truth(static_cast<Index>(lw_rows.size()));
  for (std::size_t i = 0; i < lw_rows.size(); ++i) lw_truth[static_cast<Index>(i)] = pool_truth[lw_rows[i]];

  const auto full_model = train_reference(pool.values(), as_span(pool_truth), task);
  const auto lw_model = train_reference(lw.values(), as_span(lw_truth), task);
  const Matrix eval_full = full_model.predict_scores(eval.values());

  // Alpha from benign shifts: independent subsample draws of the same size.
  nlohmann::json calibration;
  if (a.calibrate_alpha > 0) {
    std::vector<double> shifts(a.calibrate_alpha);
    parallel_for(a.calibrate_alpha, [&](std::size_t r) {
      const auto rows = subsample_indices(n_pool, c.fraction, derive_seed(c.seed, 1000 + r));
      Vector t(static_cast<Index>(rows.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) t[static_cast<Index>(i)] = pool_truth[rows[i]];
      const auto m = train_reference(pool.select_rows(rows).values(), as_span(t), task);
      shifts[r] = projection_distance(eval_full, m.predict_scores(eval.values())).d_proj;
    });
    th.alpha = calibrate_threshold(shifts, 0.75);
    calibration = {{"draws", a.calibrate_alpha}, {"quantile", 0.75}, {"alpha", th.alpha}, {"benign_shifts", shifts}};
  }

  GateInputs in;
  in.full_outputs = pool_y.values();
  in.lw_outputs = lw_y.values();
  in.eval_pred_full = eval_full;
  in.eval_pred_lw = lw_model.predict_scores(eval.values());
  in.eval_truth = eval_truth;
  in.task = task;
  GateOptions opts;
  opts.mmd.permutations = a.permutations;
  opts.mmd.seed = c.seed;
  auto report = gate_check(in, th, opts);

  if (a.eps_proj || a.eps_mmd || a.eps_kl) {
    auto b = sample_size_lower_bound(a.eps_proj, a.eps_mmd, a.eps_kl, a.delta, 1);
    if (!a.profile.empty()) {
      if (!a.t_max) throw ValidationError("--profile needs --t-max");
      std::vector<std::pair<double, double>> prof;
      for (const auto& item : split_list(a.profile)) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ValidationError("--profile entries look like n:seconds");
        prof.emplace_back(std::stod(item.substr(0, colon)), std::stod(item.substr(colon + 1)));
      }
      b.n_ub = budget_upper_bound(prof, *a.t_max);
    }
    report.bounds = b;
  }

  const auto mode = parse_cir_mode(c.mode);
  const auto k = static_cast<std::size_t>(pool.cols());
  const Vector full_eta = eta_by_feature(score_all_features(pool, pool_y, mode), k);
  const Vector lw_eta = eta_by_feature(score_all_features(lw, lw_y, mode), k);
  const std::size_t head = std::min(c.head_k, k);

  nlohmann::json r = to_json(report);
  r["ranking_agreement"] = to_json(rank_agreement(as_span(full_eta), as_span(lw_eta), head));
  r["n_eval"] = n_eval;
  if (!calibration.is_null()) r["alpha_calibration"] = calibration;
  emit(r, c);
}

void run_bootstrap(RunConfig c, const std::string& ci, bool strata) {
  c.extra = {{"ci", ci}, {"strata", strata}};
  const auto l = load(c, true);
  if (!l.table.target) throw ValidationError("bootstrap needs a scalar --target");
  const auto mode = parse_cir_mode(c.mode);
  const auto& data = l.table.data;
  const auto& y = *l.table.target;
  BootstrapOptions opts;
  opts.replicates = c.B;
  opts.seed = c.seed;
  opts.quartile_strata = strata;
  if (ci == "normal") {
    opts.ci = CiKind::normal;
  } else if (ci == "percentile") {
    opts.ci = CiKind::percentile;
  } else {
    throw ValidationError("--ci accepts normal or percentile");
  }

  nlohmann::json r;
  std::vector<std::string> unit_names;
  ReplicateScorer scorer;
  Vector full;
  if (c.blocks.empty()) {
    scorer = per_feature_scorer(mode);
    unit_names = data.feature_names();
  } else {
    const auto spec = BlockSpec::load(c.blocks, data.feature_names());
    scorer = block_scorer(spec, mode);
    for (const auto& g : spec.resolve(data.feature_names())) unit_names.push_back(g.name);
  }
  full = scorer(data, y);
  const auto summary = bootstrap_scores(data, y, scorer, opts);
  r["bootstrap"] = to_json(summary, unit_names);

  const std::size_t units = static_cast<std::size_t>(full.size());
  const std::size_t head = std::min(c.head_k, units);
  std::vector<double> jac, tau_full, tau_head;
  for (Index b = 0; b < summary.scores.rows(); ++b) {
    const Vector rep = summary.scores.row(b).transpose();
    const auto agree = rank_agreement(as_span(full), as_span(rep), head);
    jac.push_back(agree.jaccard_topk);
    tau_full.push_back(agree.kendall_tau_full);
    tau_head.push_back(agree.kendall_tau_head);
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
  };
  r["rank_stability"] = {{"head_k", head},
                         {"O_" + std::to_string(head), median(jac)},
                         {"median_jaccard_topk", median(jac)},
                         {"median_kendall_tau_full", median(tau_full)},
                         {"median_kendall_tau_head", median(tau_head)}};
  const auto adj = adjacent_rank_probability(summary.scores);
  const Vector means = summary.mean;
  const auto order = descending_order(as_span(means));
  nlohmann::json adj_json = nlohmann::json::array();
  for (std::size_t i = 0; i < adj.size(); ++i) {
    adj_json.push_back({{"higher", unit_names[order[i]]}, {"lower", unit_names[order[i + 1]]}, {"p", adj[i]}});
  }
  r["adjacent_rank_probability"] = adj_json;
  emit(r, c);
}

struct EvalArgs {
  std::string task = "classification";
  double test_fraction = 0.2;
  std::size_t reps = 20;
  std::string curves;
  std::string drift_input;
  double q = 0.1;
};

void run_eval(RunConfig c, const EvalArgs& a) {
  c.extra = {{"task", a.task}, {"test_fraction", a.test_fraction}, {"reps", a.reps},
             {"curves", a.curves}, {"drift_input", a.drift_input}, {"q", a.q}};
  const auto l = load(c, true);
  if (!l.table.target) throw ValidationError("eval needs a scalar --target");
  const TaskKind task = parse_task(a.task);
  const auto mode = parse_cir_mode(c.mode);
  const auto& data = l.table.data;
  const Vector truth = l.labels ? *l.labels : Vector(l.table.target->values().col(0));
  const auto k = static_cast<std::size_t>(data.cols());
  const std::size_t head = std::min(c.head_k, k);

  // Scores and rankings come from the training rows only.
  Matrix with_target(data.rows(), data.cols() + 1);
  with_target.leftCols(data.cols()) = data.values();
  with_target.col(data.cols()) = l.table.target->values().col(0);
  const Split joint = train_test_split(with_target, as_span(truth), a.test_fraction, c.seed);
  Split split;
  split.x_train = joint.x_train.leftCols(data.cols());
  split.x_test = joint.x_test.leftCols(data.cols());
  split.y_train = joint.y_train;
  split.y_test = joint.y_test;
  const Vector train_target = joint.x_train.col(data.cols());

  const Vector eta = eta_by_feature(score_all_features(split.x_train, as_span(train_target), mode), k);
  const auto cir_rank = ranking_from_scores(eta);
  const auto model = train_reference(split.x_train, as_span(split.y_train), task);
  const auto pi = permutation_importance(model, split.x_test, as_span(split.y_test), a.reps, c.seed);
  const Vector pi_scores = to_vector(pi.mean_drop);
  const auto pi_rank = ranking_from_scores(pi_scores);

  const auto curves_cir = faithfulness_curves(model, cir_rank, split.x_test, as_span(split.y_test));
  const auto curves_pi = faithfulness_curves(model, pi_rank, split.x_test, as_span(split.y_test));

  std::vector<std::size_t> ks;
  for (std::size_t kk = 0; kk <= k; kk += std::max<std::size_t>(1, k / 8)) ks.push_back(kk);
  if (ks.back() != k) ks.push_back(k);

  nlohmann::json r;
  const auto& names = data.feature_names();
  nlohmann::json cir_json = nlohmann::json::array(), pi_json = nlohmann::json::array();
  for (std::size_t j = 0; j < k; ++j) {
    cir_json.push_back({{"feature", names[j]}, {"eta", eta[static_cast<Index>(j)]}});
    pi_json.push_back({{"feature", names[j]}, {"mean_drop", pi.mean_drop[j]}, {"standard_error", pi.standard_error[j]}});
  }
  r["cir"] = cir_json;
  r["permutation_importance"] = pi_json;
  r["faithfulness"] = {{"cir", to_json(curves_cir)}, {"permutation_importance", to_json(curves_pi)}};
  r["sufficiency"] = {{"k", ks},
                      {"cir", topk_sufficiency(cir_rank, split, task, ks)},
                      {"permutation_importance", topk_sufficiency(pi_rank, split, task, ks)}};
  r["necessity"] = {{"m", ks},
                    {"cir", necessity_curve(cir_rank, split, task, ks)},
                    {"permutation_importance", necessity_curve(pi_rank, split, task, ks)}};

  const std::vector<double> sigmas = {0.0, 0.05, 0.2, 1.0};
  nlohmann::json noise = nlohmann::json::array();
  for (const auto& lvl : noise_robustness(split.x_train, as_span(train_target), sigmas, a.reps, c.seed, head, mode)) {
    noise.push_back({{"sigma", lvl.sigma}, {"median_jaccard_topk", lvl.median_jaccard}, {"mean_kendall_tau_full", lvl.mean_tau_full}});
  }
  r["noise_robustness"] = noise;

  // Replicate curve metrics over bootstrap resamples of the test rows.
  std::vector<double> del_cir(a.reps), del_pi(a.reps), ins_cir(a.reps), ins_pi(a.reps);
  parallel_for(a.reps, [&](std::size_t b) {
    std::mt19937_64 rng(derive_seed(c.seed, 1000 + b));
    std::uniform_int_distribution<Index> pick(0, split.x_test.rows() - 1);
    Matrix xb(split.x_test.rows(), split.x_test.cols());
    Vector yb(split.x_test.rows());
    for (Index i = 0; i < xb.rows(); ++i) {
      const Index s = pick(rng);
      xb.row(i) = split.x_test.row(s);
      yb[i] = split.y_test[s];
    }
    const auto cc = faithfulness_curves(model, cir_rank, xb, as_span(yb));
    const auto pc = faithfulness_curves(model, pi_rank, xb, as_span(yb));
    del_cir[b] = cc.deletion_area;
    del_pi[b] = pc.deletion_area;
    ins_cir[b] = cc.aopc_insertion;
    ins_pi[b] = pc.aopc_insertion;
  });
  std::vector<SignificanceRecord> sig;
  if (a.reps >= 5) {
    sig.push_back(nonparametric_compare(del_cir, del_pi, Direction::lower_better, "deletion_area"));
    sig.push_back(nonparametric_compare(ins_cir, ins_pi, Direction::higher_better, "aopc_insertion"));
    apply_bh(sig, a.q);
  }
  nlohmann::json sig_json = nlohmann::json::array();
  for (const auto& s : sig) sig_json.push_back(to_json(s));
  r["significance"] = sig_json;
  r["ranking_agreement_cir_vs_permutation"] = to_json(rank_agreement(as_span(eta), as_span(pi_scores), head));

  if (!a.drift_input.empty()) {
    RunConfig dc = c;
    dc.input = a.drift_input;
    const auto dl = load(dc, true);
    if (dl.table.data.feature_names() != names) throw ValidationError("--drift-input must have the same features");
    const Vector eta_full = eta_by_feature(score_all_features(data, *l.table.target, mode), k);
    const Vector eta_drift = eta_by_feature(score_all_features(dl.table.data, *dl.table.target, mode), k);
    nlohmann::json drift = nlohmann::json::array();
    for (const auto& d : drift_delta(as_span(eta_full), as_span(eta_drift))) {
      drift.push_back({{"feature", names[d.feature]}, {"delta", d.delta}});
    }
    r["drift_delta"] = drift;
  }

  if (!a.curves.empty()) {
    write_curve_csv(a.curves + "_deletion_cir.csv", curves_cir.fractions, curves_cir.deletion, "accuracy");
    write_curve_csv(a.curves + "_insertion_cir.csv", curves_cir.fractions, curves_cir.insertion, "accuracy");
    write_curve_csv(a.curves + "_deletion_permutation.csv", curves_pi.fractions, curves_pi.deletion, "accuracy");
    write_curve_csv(a.curves + "_insertion_permutation.csv", curves_pi.fractions, curves_pi.insertion, "accuracy");
  }
  emit(r, c);
}

void run_synth(RunConfig c, SynthConfig cfg, const std::string& family, const std::string& truth_path) {
  c.extra = {{"family", family}, {"n", cfg.n}, {"rho_block", cfg.rho_block}, {"event_rate", cfg.event_rate},
             {"noise_sd", cfg.noise_sd}, {"truth", truth_path}};
  cfg.family = parse_family(family);
  cfg.seed = c.seed;
  if (c.output.empty()) throw ValidationError("synth-gen needs --output for the CSV");
  const auto s = generate(cfg);
  std::vector<std::pair<std::string, Vector>> extra;
  if (cfg.family == Family::vehicular) {
    extra.emplace_back("risk", s.output.values().col(0));
    extra.emplace_back("label", s.labels);
  } else {
    extra.emplace_back("y", s.output.values().col(0));
  }
  write_csv(c.output, s.data, extra);
  nlohmann::json truth = s.ground_truth(cfg);
  truth["run_config"] = to_json(c);
  write_report(truth, truth_path.empty() ? c.output + ".truth.json" : truth_path);
}

unsigned env_threads() {
  if (const char* v = std::getenv("EXCIR_THREADS")) {
    try {
      const long t = std::stol(v);
      if (t >= 1) return static_cast<unsigned>(t);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

}  // namespace

int dispatch(int argc, char** argv) {
  CLI::App app{"Correlation-impact-ratio attribution toolkit"};
  app.require_subcommand(1);
  RunConfig c;
  c.threads = env_threads();
  app.add_option("--threads", c.threads, "Worker threads (falls back to EXCIR_THREADS, then 1)")
      ->check(CLI::PositiveNumber);

  auto common = [&](CLI::App* sub, bool needs_mode = true) {
    sub->add_option("--input", c.input, "Input CSV")->required();
    sub->add_option("--target", c.target, "Scalar output column");
    sub->add_flag("--no-header", c.no_header, "CSV has no header row; columns are c0, c1, ...");
    sub->add_option("--impute", c.impute, "Missing-value policy: none or median")->capture_default_str();
    sub->add_option("--output", c.output, "Report path (stdout when omitted)");
    sub->add_option("--label", c.label, "Ground-truth column; never used as a feature");
    if (needs_mode) sub->add_option("--mode", c.mode, "CIR form: midmean or correlation")->capture_default_str();
  };

  auto* score = app.add_subcommand("score", "Per-feature CIR");
  common(score);

  std::optional<double> ridge;
  auto* block = app.add_subcommand("block", "BlockCIR over feature groups");
  common(block);
  block->add_option("--outputs", c.outputs, "Comma-separated output columns (p > 1)");
  block->add_option("--blocks", c.blocks, "Block spec JSON {\"blocks\": {name: [indices]}}");
  block->add_option("--ridge", ridge, "Covariance ridge (default 1e-6 * trace / dim)");

  Index cls = 0;
  std::string selector = "unit_axis", scheme = "uniform";
  std::vector<double> alpha;
  std::optional<double> lambda;
  auto* ccir = app.add_subcommand("ccir", "Class-conditioned and multi-output CIR");
  common(ccir);
  ccir->add_option("--outputs", c.outputs, "Comma-separated output (logit) columns")->required();
  ccir->add_option("--class", cls, "Class index c")->capture_default_str();
  ccir->add_option("--selector", selector, "unit_axis or cca_constrained")->capture_default_str();
  ccir->add_option("--weights", scheme, "uniform, per_output_corr, canonical_projection or fixed")
      ->capture_default_str();
  ccir->add_option("--alpha", alpha, "Fixed weights (with --weights fixed)")->delimiter(',');
  ccir->add_option("--lambda", lambda, "Output ridge (default 1e-6 * trace(Sigma_Y) / p)");

  LwArgs lw_args;
  auto* lw = app.add_subcommand("lw-check", "Subsample, similarity gates and sample-size bounds");
  common(lw);
  lw->add_option("--task", lw_args.task, "classification or regression")->capture_default_str();
  lw->add_option("--fraction", c.fraction, "Subsample fraction of the pool")->capture_default_str();
  lw->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  lw->add_option("--thresholds", c.thresholds, "Thresholds JSON {alpha, beta, gamma, eps_acc}");
  lw->add_option("--eval-fraction", lw_args.eval_fraction, "Trailing share of rows used as the evaluation set")
      ->capture_default_str();
  lw->add_option("--permutations", lw_args.permutations, "MMD permutations")->capture_default_str();
  lw->add_option("--eps-proj", lw_args.eps_proj, "Projection tolerance for the n' bound");
  lw->add_option("--eps-mmd", lw_args.eps_mmd, "MMD tolerance for the n' bound");
  lw->add_option("--eps-kl", lw_args.eps_kl, "KL tolerance for the n' bound");
  lw->add_option("--delta", lw_args.delta, "Confidence parameter for the n' bound")->capture_default_str();
  lw->add_option("--profile", lw_args.profile, "Runtime profile n:seconds,n:seconds,...");
  lw->add_option("--t-max", lw_args.t_max, "Runtime budget in seconds");
  lw->add_option("--calibrate-alpha", lw_args.calibrate_alpha,
                 "Set alpha to the 75th percentile of d_proj over this many benign subsample draws");
  lw->add_option("--head-k", c.head_k, "Head size for ranking agreement")->capture_default_str();

  std::string ci = "normal";
  bool strata = false;
  auto* boot = app.add_subcommand("bootstrap", "Bootstrap CIs, rank stability and adjacent-rank probabilities");
  common(boot);
  boot->add_option("--B", c.B, "Bootstrap replicates")->capture_default_str();
  boot->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  boot->add_option("--head-k", c.head_k, "Head size")->capture_default_str();
  boot->add_option("--ci", ci, "normal or percentile")->capture_default_str();
  boot->add_flag("--strata", strata, "Resample within quartiles of the target");
  boot->add_option("--blocks", c.blocks, "Block spec JSON; scores blocks instead of features");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Faithfulness, sufficiency, necessity, noise and significance");
  common(eval);
  eval->add_option("--task", eval_args.task, "classification or regression")->capture_default_str();
  eval->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  eval->add_option("--head-k", c.head_k, "Head size")->capture_default_str();
  eval->add_option("--test-fraction", eval_args.test_fraction, "Held-out share")->capture_default_str();
  eval->add_option("--reps", eval_args.reps, "Replicates for permutation importance, noise and significance")
      ->capture_default_str();
  eval->add_option("--q", eval_args.q, "BH-FDR level")->capture_default_str();
  eval->add_option("--curves", eval_args.curves, "Path prefix for two-column curve CSVs");
  eval->add_option("--drift-input", eval_args.drift_input, "Second CSV for per-feature drift deltas");

  SynthConfig synth_cfg;
  synth_cfg.seed = 7;
  std::string family = "vehicular", truth_path;
  auto* synth = app.add_subcommand("synth-gen", "Write a synthetic benchmark CSV and ground-truth JSON");
  synth->add_option("--family", family, "vehicular, linear or nonlinear")->capture_default_str();
  synth->add_option("--n", synth_cfg.n, "Rows")->capture_default_str();
  synth->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  synth->add_option("--rho-block", synth_cfg.rho_block, "Within-block correlation")->capture_default_str();
  synth->add_option("--event-rate", synth_cfg.event_rate, "Vehicular event rate")->capture_default_str();
  synth->add_option("--noise-sd", synth_cfg.noise_sd, "Linear-family noise sd")->capture_default_str();
  synth->add_option("--output", c.output, "CSV path")->required();
  synth->add_option("--truth", truth_path, "Ground-truth JSON path (default <output>.truth.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  set_default_threads(c.threads);
  try {
    if (*score) {
      c.command = "score";
      run_score(c);
    } else if (*block) {
      c.command = "block";
      run_block(c, ridge);
    } else if (*ccir) {
      c.command = "ccir";
      run_ccir(c, cls, selector, scheme, alpha, lambda);
    } else if (*lw) {
      c.command = "lw-check";
      run_lw_check(c, lw_args);
    } else if (*boot) {
      c.command = "bootstrap";
      run_bootstrap(c, ci, strata);
    } else if (*eval) {
      c.command = "eval";
      run_eval(c, eval_args);
    } else if (*synth) {
      c.command = "synth-gen";
      run_synth(c, synth_cfg, family, truth_path);
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace excir::cli
