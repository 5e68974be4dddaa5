#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "proklsh/checkpoint.hpp"
#include "proklsh/harness.hpp"
#include "proklsh/kl_analysis.hpp"
#include "proklsh/linalg.hpp"
#include "proklsh/rng.hpp"
#include "proklsh/verify.hpp"

namespace {

using nlohmann::json;
using namespace proklsh;

struct ModelArgs {
  int m = 12, n = 16, rho = 2;
  double sigma = 1.0;
  std::uint64_t seed = 1;
  bool separable = false;
};

void add_model_options(CLI::App* cmd, ModelArgs& a) {
  cmd->add_option("--m", a.m, "gradient rows");
  cmd->add_option("--n", a.n, "gradient cols");
  cmd->add_option("--rho", a.rho, "planted rank");
  cmd->add_option("--sigma", a.sigma, "noise level");
  cmd->add_option("--seed", a.seed, "rng seed");
  cmd->add_flag("--separable", a.separable, "separable (non-identity) noise covariances");
}

kl::SpikedModel build_model(const ModelArgs& a) {
  std::mt19937_64 eng(a.seed);
  Matrix A = rng::gaussian(a.m, a.rho, eng);
  Matrix B = rng::gaussian(a.n, a.rho, eng);
  if (!a.separable) return kl::make_spiked(A, B, a.sigma);
  auto spec = [&](Eigen::Index k) {
    std::uniform_real_distribution<double> u(std::log(0.5), std::log(2.0));
    Vector v(k);
    for (Eigen::Index i = 0; i < k; ++i) v(i) = std::exp(u(eng));
    return v;
  };
  Matrix SigL = rng::spd_with_spectrum(spec(a.m), eng);
  Matrix SigR = rng::spd_with_spectrum(spec(a.n), eng);
  return kl::make_spiked_separable(A, B, a.sigma, SigL, SigR);
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) {
      std::cerr << "cannot open config " << config_path << "\n";
      return 1;
    }
    doc = json::parse(in);
  }
  for (const std::string& kv : overrides) harness::apply_override(doc, kv);
  harness::RunConfig cfg = harness::config_from_json(doc);
  harness::RunResult res = harness::run(cfg);
  json out{{"steps_run", res.steps_run},
           {"final_loss", res.final_loss},
           {"final_grad_norm", res.final_grad_norm},
           {"aborted_non_finite", res.aborted_non_finite},
           {"worst_clip_violation", res.worst_clip_violation},
           {"worst_orthonormality", res.worst_orthonormality},
           {"wall_seconds", res.wall_seconds}};
  std::cout << out.dump(2) << "\n";
  return res.aborted_non_finite ? 1 : 0;
}

int cmd_verify(const std::string& suite, const std::string& json_path) {
  verify::SuiteResult res = verify::run_suite(suite);
  for (const verify::CriterionResult& c : res.criteria)
    std::cout << verify::format_line(c) << "\n";
  std::printf("%s: %zu criteria, %s (%.1fs)\n", suite.c_str(), res.criteria.size(),
              res.all_pass ? "all passed" : "FAILURES", res.seconds);
  if (!json_path.empty()) {
    std::ofstream out(json_path);
    out << verify::report_to_json(res).dump(2) << "\n";
  }
  return res.all_pass ? 0 : 1;
}

int cmd_stationarity(const ModelArgs& a) {
  kl::SpikedModel mdl = build_model(a);
  kl::StationaryPair pt = kl::solve_full_stationary(mdl);
  Vector eigs = linalg::sym_eig(pt.R).lambda;
  json out{{"converged", pt.converged},
           {"iterations", pt.iterations},
           {"residual", pt.residual},
           {"objective", pt.objective},
           {"right_factor_eigenvalues", std::vector<double>(eigs.data(), eigs.data() + eigs.size())}};
  std::cout << out.dump(2) << "\n";
  return pt.converged ? 0 : 1;
}

int cmd_subspace(const ModelArgs& a, int r, int trials) {
  kl::SpikedModel mdl = build_model(a);
  kl::OptimalityReport rep = kl::subspace_optimality_check(mdl, r, trials, a.seed + 977);
  json out{{"f_opt", rep.f_opt},
           {"best_random", rep.best_random},
           {"max_violation", rep.max_violation}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_gap(const ModelArgs& a, int r) {
  kl::SpikedModel mdl = build_model(a);
  kl::GapReport rep = kl::approximation_gap(mdl, r);
  json out{{"converged", rep.converged}, {"j_full", rep.j_full},
           {"j_restricted", rep.j_restr}, {"gap", rep.gap},
           {"bound", rep.bound},          {"tail_am", rep.tail_am},
           {"tail_gm", rep.tail_gm}};
  std::cout << out.dump(2) << "\n";
  return rep.converged ? 0 : 1;
}

int cmd_calibrate(int m, int n, int r) {
  kl::Bracket b = kl::alpha_bracket(m, n, r);
  json out{{"c_a", b.c_a}, {"k", b.k}, {"lower", b.lower}, {"upper", b.upper}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_spectrum(const harness::RunConfig& cfg_in, int hint) {
  harness::RunConfig cfg = cfg_in;
  cfg.task = harness::TaskKind::SpikedStream;
  if (cfg.checkpoint_path.empty()) {
    std::cerr << "spectrum needs --checkpoint to stash the trained state\n";
    return 1;
  }
  harness::run(cfg);
  ckpt::Checkpoint ck = ckpt::load_checkpoint(cfg.checkpoint_path);
  harness::SpectrumReport rep;
  const std::string kind = ck.params.at(0).state.at("kind").get<std::string>();
  if (kind == "klshampoo")
    rep = harness::dump_spectrum(ckpt::klshampoo_from_json(ck.params.at(0).state), hint);
  else if (kind == "pro")
    rep = harness::dump_spectrum(ckpt::pro_from_json(ck.params.at(0).state), hint);
  else {
    std::cerr << "spectrum supports the projected optimizer and the full baseline\n";
    return 1;
  }
  json out{{"rank_hint", rep.rank_hint},
           {"eigenvalues",
            std::vector<double>(rep.eigenvalues.data(),
                                rep.eigenvalues.data() + rep.eigenvalues.size())},
           {"normalized",
            std::vector<double>(rep.normalized.data(),
                                rep.normalized.data() + rep.normalized.size())}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Projected KL-Shampoo optimizer and verification toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  CLI::App* train = app.add_subcommand("train", "run an optimizer on a synthetic task");
  train->add_option("--config", config_path, "JSON config file");
  train->add_option("--set", overrides, "dotted-path override, e.g. hyper.lr=0.05");

  std::string suite = "all", report_path;
  CLI::App* ver = app.add_subcommand("verify", "run acceptance criteria");
  ver->add_option("--suite", suite, "one of: all polar identity stationarity subspace gap bracket clamp descent");
  ver->add_option("--json", report_path, "write a JSON report here");

  ModelArgs stat_args;
  CLI::App* stat = app.add_subcommand("stationarity", "solve the two-sided stationarity system");
  add_model_options(stat, stat_args);

  ModelArgs sub_args;
  int sub_r = 3, sub_trials = 200;
  CLI::App* sub = app.add_subcommand("subspace", "compare the optimal eigenspace against random bases");
  add_model_options(sub, sub_args);
  sub->add_option("--r", sub_r, "subspace rank");
  sub->add_option("--trials", sub_trials, "random bases to sample");

  ModelArgs gap_args;
  int gap_r = 3;
  CLI::App* gap = app.add_subcommand("gap", "restricted-vs-full objective gap and its bound");
  add_model_options(gap, gap_args);
  gap->add_option("--r", gap_r, "subspace rank");

  int cal_m = 768, cal_n = 768, cal_r = 128;
  CLI::App* cal = app.add_subcommand("calibrate", "mixing-weight bracket for a weight shape");
  cal->add_option("--m", cal_m, "weight rows");
  cal->add_option("--n", cal_n, "weight cols");
  cal->add_option("--r", cal_r, "subspace rank");

  harness::RunConfig spec_cfg;
  spec_cfg.optimizer = harness::OptimizerKind::KlShampoo;
  spec_cfg.rows = 24;
  spec_cfg.cols = 32;
  spec_cfg.steps = 800;
  int spec_hint = 8;
  std::string spec_opt = "kl_shampoo";
  CLI::App* spec = app.add_subcommand("spectrum", "train on a spiked stream and dump the right-factor spectrum");
  spec->add_option("--rows", spec_cfg.rows, "gradient rows");
  spec->add_option("--cols", spec_cfg.cols, "gradient cols");
  spec->add_option("--spike-rank", spec_cfg.spike_rank, "planted rank");
  spec->add_option("--spike-scale", spec_cfg.spike_scale, "spike strength");
  spec->add_option("--spike-sigma", spec_cfg.spike_sigma, "noise level");
  spec->add_option("--steps", spec_cfg.steps, "steps to run");
  spec->add_option("--seed", spec_cfg.seed, "rng seed");
  spec->add_option("--ema", spec_cfg.hyper.ema, "statistics EMA factor");
  spec->add_option("--rank", spec_cfg.hyper.rank, "projection rank (projected optimizer)");
  spec->add_option("--optimizer", spec_opt, "kl_shampoo or pro_kl_shampoo");
  spec->add_option("--hint", spec_hint, "leading entries excluded from the bulk mean");
  spec->add_option("--checkpoint", spec_cfg.checkpoint_path, "state stash path (required)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, overrides);
    if (ver->parsed()) return cmd_verify(suite, report_path);
    if (stat->parsed()) return cmd_stationarity(stat_args);
    if (sub->parsed()) return cmd_subspace(sub_args, sub_r, sub_trials);
    if (gap->parsed()) return cmd_gap(gap_args, gap_r);
    if (cal->parsed()) return cmd_calibrate(cal_m, cal_n, cal_r);
    if (spec->parsed()) {
      spec_cfg.optimizer = harness::optimizer_from_name(spec_opt);
      spec_cfg.log_every = std::max(1, spec_cfg.steps);
      return cmd_spectrum(spec_cfg, spec_hint);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
