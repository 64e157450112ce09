// Command-line front end: continual-learning benchmark runs, the two-task
// validation study, curvature diagnostics, and hyperparameter grids.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "efc/harness.hpp"

namespace {

using namespace efc;

struct CommonOpts {
  std::string method = "sgd";
  std::string scenario = "class-il";
  int seeds = 1;
  std::uint64_t seed0 = 0;
};

void add_run_options(CLI::App* cmd, RunConfig& cfg, CommonOpts& common) {
  cmd->add_option("--dataset", cfg.dataset,
                  "synthetic, mnist, or features:<base>");
  cmd->add_option("--data-dir", cfg.data_dir,
                  "IDX directory (or set EFC_DATA_DIR)");
  cmd->add_option("--method", common.method,
                  "sgd adam ewc oewc si fish efc cng joint");
  cmd->add_option("--scenario", common.scenario, "class-il or task-il")
      ->check(CLI::IsMember({"class-il", "task-il"}));
  cmd->add_option("--seeds", common.seeds, "number of seeds, starting at --seed");
  cmd->add_option("--seed", common.seed0, "first seed");
  cmd->add_option("--lr", cfg.learning_rate, "optimizer learning rate");
  cmd->add_option("--strength", cfg.strength, "penalty / preservation gain");
  cmd->add_option("--decay", cfg.fisher_decay, "online curvature decay");
  cmd->add_option("--cap", cfg.gamma_cap, "preservation saturation bound");
  cmd->add_option("--alpha", cfg.controller_alpha, "controller leak");
  cmd->add_option("--lambda", cfg.target_lambda, "output nudge size");
  cmd->add_option("--dt", cfg.settle_dt, "equilibrium settle Euler step");
  cmd->add_option("--settle-tol", cfg.settle_tol,
                  "equilibrium settle convergence tolerance");
  cmd->add_option("--epochs", cfg.epochs_per_task, "epochs per task");
  cmd->add_option("--batch", cfg.batch_size, "batch size");
  cmd->add_option("--hidden", cfg.hidden, "hidden layer widths")
      ->delimiter(',');
  cmd->add_option("--tasks", cfg.num_tasks, "number of tasks");
  cmd->add_option("--classes-per-task", cfg.classes_per_task);
  cmd->add_option("--input-dim", cfg.input_dim, "synthetic input dimension");
  cmd->add_option("--train-per-class", cfg.train_per_class);
  cmd->add_option("--test-per-class", cfg.test_per_class);
  cmd->add_option("--separation", cfg.separation, "synthetic cluster norm");
  cmd->add_option("--spread", cfg.spread, "synthetic within-cluster noise");
  cmd->add_option("--shared-rank", cfg.shared_rank,
                  "confine synthetic prototypes to a shared subspace");
  cmd->add_option("--task-overlap", cfg.task_overlap,
                  "cosine mixing of same-slot classes toward a shared parent");
  cmd->add_option("--optimizer", cfg.optimizer,
                  "step rule: default (per-method), sgd, or adam");
  cmd->add_option("--out", cfg.output_dir, "directory for run records");
  cmd->add_option("--name", cfg.run_name, "record base name");
  std::string settle = "mse";
  cmd->add_option_function<std::string>(
         "--settle-loss",
         [&cfg](const std::string& v) {
           cfg.settle_loss = v == "ce" ? LossKind::SoftmaxCrossEntropy
                                       : LossKind::SquaredError;
         },
         "equilibrium settle loss: mse or ce")
      ->check(CLI::IsMember({"mse", "ce"}));
  cmd->set_config("--config", "", "key=value config file");
}

void apply_method(RunConfig& cfg, const std::string& method) {
  if (method == "joint") {
    cfg.joint = true;
    cfg.learner = LearnerKind::Adam;
  } else {
    cfg.learner = learner_from_name(method);
  }
  if (cfg.learner == LearnerKind::Efc)
    cfg.readout_act = Activation::Softplus;  // gain modulation needs r > 0
}

int cmd_bench(RunConfig cfg, const CommonOpts& common) {
  apply_method(cfg, common.method);
  std::vector<double> cl, ti;
  for (int s = 0; s < common.seeds; ++s) {
    cfg.seed = common.seed0 + std::uint64_t(s);
    if (common.seeds > 1)
      cfg.run_name = cfg.run_name + "_s" + std::to_string(cfg.seed);
    RunRecord rec = run_continual(cfg);
    if (rec.failed) {
      std::printf("seed %llu: FAILED (%s)\n",
                  (unsigned long long)cfg.seed, rec.failure.c_str());
      continue;
    }
    std::printf("seed %llu: class-il %.2f  task-il %.2f  (%.1fs)\n",
                (unsigned long long)cfg.seed, rec.final_class_il,
                rec.final_task_il, rec.wall_seconds);
    cl.push_back(rec.final_class_il);
    ti.push_back(rec.final_task_il);
  }
  if (cl.empty()) return 1;
  auto stats = [](const std::vector<double>& v) {
    double m = 0, s = 0;
    for (double x : v) m += x;
    m /= double(v.size());
    for (double x : v) s += (x - m) * (x - m);
    s = v.size() > 1 ? std::sqrt(s / double(v.size() - 1)) : 0.0;
    return std::pair{m, s};
  };
  auto [mc, sc] = stats(cl);
  auto [mt, st] = stats(ti);
  std::printf("%s over %zu seed(s): class-il %.2f +- %.2f, task-il %.2f +- %.2f\n",
              common.method.c_str(), cl.size(), mc, sc, mt, st);
  return 0;
}

int cmd_validate(RunConfig cfg, const ValidationSetup& setup) {
  cfg.num_tasks = std::max(cfg.num_tasks, 2);
  auto rec = validation_experiment(cfg, setup);
  std::printf("alignment  identity:%.4f  diagonal:%.4f  equilibrium:%.4f\n",
              rec.align_identity, rec.align_diag, rec.align_tilde);
  std::printf("step-aligned: %s\n", rec.aligned ? "yes" : "no");
  for (const auto& m : rec.methods) {
    double final_loss = m.class_il_loss.empty() ? 0.0 : m.class_il_loss.back();
    double min_loss = final_loss;
    for (double v : m.class_il_loss) min_loss = std::min(min_loss, v);
    std::printf(
        "%-5s lr=%.5f t90=%d  dLa@t90=%.3f  union loss min=%.3f final=%.3f\n",
        m.name.c_str(), m.learning_rate, m.t90, m.delta_l_a_at_t90, min_loss,
        final_loss);
    if (!cfg.output_dir.empty()) {
      namespace fs = std::filesystem;
      fs::create_directories(cfg.output_dir);
      save_method_curves_csv(
          (fs::path(cfg.output_dir) / (m.name + "_curve.csv")).string(), m);
    }
  }
  if (!rec.methods.empty()) {
    const auto& bp = rec.methods.front();
    auto tl = regime_timeline(bp.grad_b_sq, bp.grad_dot);
    std::printf("bp regimes:");
    for (Regime r : tl.sequence)
      std::printf(" %s", r == Regime::Descending   ? "descending"
                         : r == Regime::Ascending ? "ascending"
                                                  : "stationary");
    std::printf("  crossing at step %d\n", tl.crossing_index);
  }
  for (const auto& e : rec.events) std::printf("  [%s]\n", e.c_str());
  return rec.aligned ? 0 : 2;
}

int cmd_diagnose(RunConfig cfg) {
  cfg.num_tasks = std::max(cfg.num_tasks, 2);
  TaskSequence seq = build_tasks(cfg);
  NetworkParams net = build_network(cfg, seq.input_dim, seq.num_classes);
  Learner pre = make_learner(LearnerKind::Adam, 1e-3);
  const Dataset& a = seq.tasks[0].train;
  for (int e = 0; e < 100; ++e) {
    for (Index at = 0; at < a.size(); at += cfg.batch_size) {
      std::vector<Index> idx;
      for (Index i = at; i < std::min<Index>(at + cfg.batch_size, a.size()); ++i)
        idx.push_back(i);
      train_step(pre, net, a.subset(idx), cfg.train_loss);
    }
    if (mean_loss(net, a, cfg.train_loss) < 0.02) break;
  }
  auto anchor = snapshot_anchor(net, a, cfg.train_loss, 1.0, true);
  auto trace = forward(net, Vec(a.inputs.row(0).transpose()));
  auto report = make_curvature_report(net, anchor, trace);
  std::printf("alignment identity/diag/equilibrium: %.4f %.4f %.4f\n",
              report.alignment_identity, report.alignment_diag,
              report.alignment_tilde);
  std::printf("eigen: full max %.4g, diag min %.4g, span rank %lld\n",
              report.eigen.lambda_max_full, report.eigen.lambda_min_diag,
              (long long)report.eigen.span_rank);
  try {
    std::printf("volume ratio (diag vs equilibrium correction): %.4g\n",
                volume_ratio(report));
  } catch (const std::exception& e) {
    std::printf("volume ratio unavailable: %s\n", e.what());
  }
  auto regime = curvature_regime(net, anchor, seq.tasks[1].train,
                                 cfg.train_loss, &seq.tasks[0].train);
  if (regime.available)
    std::printf("regime at anchor: %s (dL/dt %.4g)\n",
                regime.regime == Regime::Descending   ? "descending"
                : regime.regime == Regime::Ascending ? "ascending"
                                                     : "stationary",
                regime.d_loss_dt);
  return 0;
}

int cmd_grid(RunConfig cfg, const CommonOpts& common,
             std::vector<double> lrs, std::vector<double> strengths) {
  apply_method(cfg, common.method);
  cfg.seed = common.seed0;
  if (lrs.empty()) lrs = {cfg.learning_rate};
  if (strengths.empty()) strengths = {cfg.strength};
  Scenario sc =
      common.scenario == "task-il" ? Scenario::TaskIl : Scenario::ClassIl;
  auto res = grid_search(cfg, lrs, strengths, sc);
  for (const auto& c : res.table)
    std::printf("lr=%.5f strength=%.3f -> %.2f\n", c.learning_rate, c.strength,
                c.score);
  std::printf("best: lr=%.5f strength=%.3f (%.2f on held-out split)\n",
              res.best.learning_rate, res.best.strength, res.best.score);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual-learning control experiments"};
  app.require_subcommand(1);

  RunConfig cfg;
  CommonOpts common;
  ValidationSetup setup;
  std::vector<double> lrs, strengths;

  auto* bench = app.add_subcommand("bench", "continual benchmark over seeds");
  add_run_options(bench, cfg, common);

  auto* validate =
      app.add_subcommand("validate", "two-task step-aligned method comparison");
  add_run_options(validate, cfg, common);
  validate->add_option("--bp-lr", setup.bp_lr, "reference learning rate");
  validate->add_option("--ewc-strength", setup.ewc_strength);
  validate->add_option("--fish-strength", setup.fish_strength);
  validate->add_option("--efc-strength", setup.efc_strength);
  validate->add_option("--steps", setup.max_steps, "replay steps per method");

  auto* diagnose =
      app.add_subcommand("diagnose", "curvature report at a trained anchor");
  add_run_options(diagnose, cfg, common);

  auto* grid = app.add_subcommand("grid", "hyperparameter grid search");
  add_run_options(grid, cfg, common);
  grid->add_option("--lrs", lrs, "learning-rate axis")->delimiter(',');
  grid->add_option("--strengths", strengths, "strength axis")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (bench->parsed()) return cmd_bench(cfg, common);
    if (validate->parsed()) return cmd_validate(cfg, setup);
    if (diagnose->parsed()) return cmd_diagnose(cfg);
    if (grid->parsed()) return cmd_grid(cfg, common, lrs, strengths);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
