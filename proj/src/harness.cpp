#include "proklsh/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>
#include <thread>
#include <variant>

#include "proklsh/baselines.hpp"
#include "proklsh/checkpoint.hpp"
#include "proklsh/linalg.hpp"
#include "proklsh/rng.hpp"
#include "proklsh/step.hpp"

namespace proklsh::harness {

namespace {

std::string fmt17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

double side_floor(Eigen::Index dim, const Hyper& h) {
  const double c = std::max(static_cast<double>(h.clip_floor),
                            std::min(static_cast<double>(dim), static_cast<double>(h.clip_cap)));
  return 1.0 / (c * c);
}

bool is_pro_family(OptimizerKind o) {
  return o == OptimizerKind::ProKlShampoo || o == OptimizerKind::SmokHop ||
         o == OptimizerKind::SubspaceOnly || o == OptimizerKind::ComplementOnly;
}

using StateVariant =
    std::variant<std::monostate, ProState, KlShampooState, MuonState, AdamState>;

struct Param {
  std::string name;
  Matrix W;
  StateVariant state;
};

struct EvalOut {
  double loss = 0.0;
  std::vector<Matrix> grads;
};

struct TaskData {
  TaskKind kind;
  Matrix X, Y;          // regression / mlp batch
  Matrix A, B;          // spiked stream planted factors
  double spike_sigma = 1.0;
};

EvalOut evaluate(const TaskData& task, const std::vector<Param>& params,
                 std::mt19937_64& eng) {
  EvalOut out;
  const double batch = task.kind == TaskKind::SpikedStream
                           ? 1.0
                           : static_cast<double>(task.X.rows());
  switch (task.kind) {
    case TaskKind::MatrixRegression: {
      Matrix E = task.X * params[0].W - task.Y;
      out.loss = 0.5 * E.squaredNorm() / batch;
      out.grads.push_back(task.X.transpose() * E / batch);
      break;
    }
    case TaskKind::TwoLayerMlp: {
      Matrix H = (task.X * params[0].W).array().tanh().matrix();
      Matrix E = H * params[1].W - task.Y;
      out.loss = 0.5 * E.squaredNorm() / batch;
      out.grads.resize(2);
      out.grads[1] = H.transpose() * E / batch;
      Matrix back = (E * params[1].W.transpose()).cwiseProduct(
          (1.0 - H.array().square()).matrix());
      out.grads[0] = task.X.transpose() * back / batch;
      break;
    }
    case TaskKind::SpikedStream: {
      out.loss = 0.0;
      out.grads.push_back(task.A * task.B.transpose() +
                          task.spike_sigma *
                              rng::gaussian(params[0].W.rows(), params[0].W.cols(), eng));
      break;
    }
  }
  return out;
}

struct EigRange {
  double lo = 0.0, hi = 0.0;
  bool any = false;
};

void fold(EigRange& r, double lo, double hi) {
  if (!r.any) {
    r.lo = lo;
    r.hi = hi;
    r.any = true;
  } else {
    r.lo = std::min(r.lo, lo);
    r.hi = std::max(r.hi, hi);
  }
}

}  // namespace

TaskKind task_from_name(const std::string& name) {
  if (name == "matrix_regression") return TaskKind::MatrixRegression;
  if (name == "two_layer_mlp") return TaskKind::TwoLayerMlp;
  if (name == "spiked_stream") return TaskKind::SpikedStream;
  throw std::invalid_argument("unknown task: " + name);
}

OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "pro_kl_shampoo") return OptimizerKind::ProKlShampoo;
  if (name == "smok_hop") return OptimizerKind::SmokHop;
  if (name == "subspace_only") return OptimizerKind::SubspaceOnly;
  if (name == "complement_only") return OptimizerKind::ComplementOnly;
  if (name == "kl_shampoo") return OptimizerKind::KlShampoo;
  if (name == "muon") return OptimizerKind::Muon;
  if (name == "adam") return OptimizerKind::Adam;
  throw std::invalid_argument("unknown optimizer: " + name);
}

std::string to_name(TaskKind t) {
  switch (t) {
    case TaskKind::MatrixRegression: return "matrix_regression";
    case TaskKind::TwoLayerMlp: return "two_layer_mlp";
    case TaskKind::SpikedStream: return "spiked_stream";
  }
  return "?";
}

std::string to_name(OptimizerKind o) {
  switch (o) {
    case OptimizerKind::ProKlShampoo: return "pro_kl_shampoo";
    case OptimizerKind::SmokHop: return "smok_hop";
    case OptimizerKind::SubspaceOnly: return "subspace_only";
    case OptimizerKind::ComplementOnly: return "complement_only";
    case OptimizerKind::KlShampoo: return "kl_shampoo";
    case OptimizerKind::Muon: return "muon";
    case OptimizerKind::Adam: return "adam";
  }
  return "?";
}

RunConfig config_from_json(const json& j) {
  RunConfig cfg;
  cfg.task = task_from_name(j.value("task", to_name(cfg.task)));
  cfg.optimizer = optimizer_from_name(j.value("optimizer", to_name(cfg.optimizer)));
  cfg.steps = j.value("steps", cfg.steps);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.log_every = j.value("log_every", cfg.log_every);
  cfg.rows = j.value("rows", cfg.rows);
  cfg.cols = j.value("cols", cfg.cols);
  cfg.hidden = j.value("hidden", cfg.hidden);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.noise = j.value("noise", cfg.noise);
  cfg.spike_rank = j.value("spike_rank", cfg.spike_rank);
  cfg.spike_scale = j.value("spike_scale", cfg.spike_scale);
  cfg.spike_sigma = j.value("spike_sigma", cfg.spike_sigma);
  cfg.exact_polar = j.value("exact_polar", cfg.exact_polar);
  cfg.parallel_params = j.value("parallel_params", cfg.parallel_params);
  cfg.csv_path = j.value("csv_path", cfg.csv_path);
  cfg.checkpoint_path = j.value("checkpoint_path", cfg.checkpoint_path);
  cfg.summary_path = j.value("summary_path", cfg.summary_path);
  cfg.resume_path = j.value("resume_path", cfg.resume_path);
  if (j.contains("hyper")) {
    const json& hj = j.at("hyper");
    Hyper& h = cfg.hyper;
    h.lr = hj.value("lr", h.lr);
    h.momentum = hj.value("momentum", h.momentum);
    h.ema = hj.value("ema", h.ema);
    h.damping = hj.value("damping", h.damping);
    h.mixing = hj.value("mixing", h.mixing);
    h.qr_period = hj.value("qr_period", h.qr_period);
    h.ns.iters = hj.value("ns_iters", h.ns.iters);
    h.rank = hj.value("rank", h.rank);
    h.init_scale = hj.value("init_scale", h.init_scale);
    h.weight_decay = hj.value("weight_decay", h.weight_decay);
    h.clip_cap = hj.value("clip_cap", h.clip_cap);
    h.clip_floor = hj.value("clip_floor", h.clip_floor);
  }
  return cfg;
}

json config_to_json(const RunConfig& cfg) {
  const Hyper& h = cfg.hyper;
  return json{{"task", to_name(cfg.task)},
              {"optimizer", to_name(cfg.optimizer)},
              {"steps", cfg.steps},
              {"seed", cfg.seed},
              {"log_every", cfg.log_every},
              {"rows", cfg.rows},
              {"cols", cfg.cols},
              {"hidden", cfg.hidden},
              {"batch", cfg.batch},
              {"noise", cfg.noise},
              {"spike_rank", cfg.spike_rank},
              {"spike_scale", cfg.spike_scale},
              {"spike_sigma", cfg.spike_sigma},
              {"exact_polar", cfg.exact_polar},
              {"parallel_params", cfg.parallel_params},
              {"csv_path", cfg.csv_path},
              {"checkpoint_path", cfg.checkpoint_path},
              {"summary_path", cfg.summary_path},
              {"resume_path", cfg.resume_path},
              {"hyper",
               json{{"lr", h.lr},
                    {"momentum", h.momentum},
                    {"ema", h.ema},
                    {"damping", h.damping},
                    {"mixing", h.mixing},
                    {"qr_period", h.qr_period},
                    {"ns_iters", h.ns.iters},
                    {"rank", h.rank},
                    {"init_scale", h.init_scale},
                    {"weight_decay", h.weight_decay},
                    {"clip_cap", h.clip_cap},
                    {"clip_floor", h.clip_floor}}}};
}

void apply_override(json& j, const std::string& key_eq_value) {
  const auto eq = key_eq_value.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override must look like key=value: " + key_eq_value);
  std::string path = key_eq_value.substr(0, eq);
  std::string value = key_eq_value.substr(eq + 1);
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty()) throw std::invalid_argument("bad override path: " + path);
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

RunResult run(const RunConfig& cfg) {
  if (cfg.steps < 0) throw std::invalid_argument("run: steps must be >= 0");
  if (cfg.log_every < 1) throw std::invalid_argument("run: log_every must be >= 1");
  const auto t_start = std::chrono::steady_clock::now();
  std::mt19937_64 eng(cfg.seed);
  const Hyper& h = cfg.hyper;

  // Task data first, then initial weights, then (spiked only) per-step noise;
  // this draw order is part of the determinism contract.
  TaskData task;
  task.kind = cfg.task;
  std::vector<Param> params;
  switch (cfg.task) {
    case TaskKind::MatrixRegression: {
      Matrix Wstar = rng::gaussian(cfg.rows, cfg.cols, eng);
      task.X = rng::gaussian(cfg.batch, cfg.rows, eng) / std::sqrt(static_cast<double>(cfg.rows));
      task.Y = task.X * Wstar;
      if (cfg.noise > 0.0) task.Y += cfg.noise * rng::gaussian(cfg.batch, cfg.cols, eng);
      params.push_back({"w", Matrix::Zero(cfg.rows, cfg.cols), {}});
      break;
    }
    case TaskKind::TwoLayerMlp: {
      Matrix W1s = rng::gaussian(cfg.rows, cfg.hidden, eng) / std::sqrt(static_cast<double>(cfg.rows));
      Matrix W2s = rng::gaussian(cfg.hidden, cfg.cols, eng) / std::sqrt(static_cast<double>(cfg.hidden));
      task.X = rng::gaussian(cfg.batch, cfg.rows, eng);
      task.Y = (task.X * W1s).array().tanh().matrix() * W2s;
      if (cfg.noise > 0.0) task.Y += cfg.noise * rng::gaussian(cfg.batch, cfg.cols, eng);
      params.push_back({"w1", 0.1 * rng::gaussian(cfg.rows, cfg.hidden, eng), {}});
      params.push_back({"w2", 0.1 * rng::gaussian(cfg.hidden, cfg.cols, eng), {}});
      break;
    }
    case TaskKind::SpikedStream: {
      task.A = cfg.spike_scale * rng::orthonormal(cfg.rows, cfg.spike_rank, eng);
      task.B = rng::orthonormal(cfg.cols, cfg.spike_rank, eng);
      task.spike_sigma = cfg.spike_sigma;
      params.push_back({"w", Matrix::Zero(cfg.rows, cfg.cols), {}});
      break;
    }
  }

  if (!cfg.resume_path.empty()) {
    ckpt::Checkpoint ck = ckpt::load_checkpoint(cfg.resume_path);
    if (ck.optimizer != to_name(cfg.optimizer))
      throw std::runtime_error("run: checkpoint optimizer " + ck.optimizer +
                               " does not match config " + to_name(cfg.optimizer));
    if (ck.params.size() != params.size())
      throw std::runtime_error("run: checkpoint parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i].W = ck.params[i].weight;
      const json& s = ck.params[i].state;
      const std::string kind = s.at("kind").get<std::string>();
      if (kind == "pro")
        params[i].state = ckpt::pro_from_json(s);
      else if (kind == "klshampoo")
        params[i].state = ckpt::klshampoo_from_json(s);
      else if (kind == "muon")
        params[i].state = ckpt::muon_from_json(s);
      else if (kind == "adam")
        params[i].state = ckpt::adam_from_json(s);
      else
        throw std::runtime_error("run: unknown state kind " + kind);
    }
  }

  const polar::PolarMode mode =
      cfg.exact_polar ? polar::PolarMode::Exact : polar::PolarMode::NewtonSchulz;
  RunResult res;
  std::string csv = "step,train_loss,grad_fro_norm,mixed_norm_measure,state_min_eig,state_max_eig\n";

  for (int t = 0; t <= cfg.steps; ++t) {
    EvalOut ev = evaluate(task, params, eng);
    bool finite = std::isfinite(ev.loss);
    double grad_sq = 0.0;
    for (const Matrix& g : ev.grads) {
      if (!g.allFinite()) finite = false;
      grad_sq += g.squaredNorm();
    }
    const double grad_norm = std::sqrt(grad_sq);

    // Lazily build optimizer state from the first gradient seen.
    for (std::size_t i = 0; i < params.size() && finite; ++i) {
      if (!std::holds_alternative<std::monostate>(params[i].state)) continue;
      if (is_pro_family(cfg.optimizer))
        params[i].state = init_state(ev.grads[i], h);
      else if (cfg.optimizer == OptimizerKind::KlShampoo)
        params[i].state = klshampoo_init(ev.grads[i], h);
      else if (cfg.optimizer == OptimizerKind::Muon)
        params[i].state = muon_init(params[i].W.rows(), params[i].W.cols());
      else
        params[i].state = adam_init(params[i].W.rows(), params[i].W.cols());
    }

    const bool logged = t % cfg.log_every == 0 || t == cfg.steps || !finite;
    if (logged) {
      double measure = 0.0;
      EigRange eig;
      for (Param& p : params) {
        if (auto* ps = std::get_if<ProState>(&p.state)) {
          fold(eig, std::min({ps->lam_l.minCoeff(), ps->lam_s.minCoeff(), ps->mu_perp}),
               std::max({ps->lam_l.maxCoeff(), ps->lam_s.maxCoeff(), ps->mu_perp}));
          const ClipCeilings c = clip_ceilings(ps->rows, ps->cols, h);
          const double floor_violation =
              std::max({1.0 / (c.c_l * c.c_l) - ps->lam_l.minCoeff(),
                        1.0 / (c.c_s * c.c_s) - ps->lam_s.minCoeff(),
                        1.0 / (c.c_mu * c.c_mu) - ps->mu_perp, 0.0});
          res.worst_clip_violation = std::max(res.worst_clip_violation, floor_violation);
          res.worst_orthonormality = std::max(
              res.worst_orthonormality,
              (ps->U.transpose() * ps->U - Matrix::Identity(ps->rank(), ps->rank())).norm());
          if (finite) {
            const Matrix& g = ev.grads[&p - params.data()];
            Matrix gc = ps->orient == Orientation::Right ? g : Matrix(g.transpose());
            const double theta =
                std::max({ps->lam_l.maxCoeff(), ps->lam_s.maxCoeff(), ps->mu_perp});
            kl::MeasureConstants mc;
            mc.c_a = ps->aspect_scale();
            mc.clip = std::max({c.c_l, c.c_s, c.c_mu});
            mc.theta = std::pow(std::sqrt(theta) + h.damping, 2);
            mc.alpha_kl = h.mixing;
            measure += kl::mixed_norm_measure(gc, ps->U, mc);
          }
        } else if (auto* ks = std::get_if<KlShampooState>(&p.state)) {
          fold(eig, std::min(ks->lam_l.minCoeff(), ks->lam_r.minCoeff()),
               std::max(ks->lam_l.maxCoeff(), ks->lam_r.maxCoeff()));
          const double floor_violation =
              std::max({side_floor(ks->rows, h) - ks->lam_l.minCoeff(),
                        side_floor(ks->cols, h) - ks->lam_r.minCoeff(), 0.0});
          res.worst_clip_violation = std::max(res.worst_clip_violation, floor_violation);
        } else if (auto* as = std::get_if<AdamState>(&p.state)) {
          if (as->v2.size() > 0) fold(eig, as->v2.minCoeff(), as->v2.maxCoeff());
        }
      }
      csv += std::to_string(t) + "," + fmt17(ev.loss) + "," + fmt17(grad_norm) + "," +
             fmt17(measure) + "," + fmt17(eig.lo) + "," + fmt17(eig.hi) + "\n";
      res.final_loss = ev.loss;
      res.final_grad_norm = grad_norm;
    }
    res.steps_run = t;
    if (!finite) {
      res.aborted_non_finite = true;
      break;
    }
    if (t == cfg.steps) break;

    auto step_one = [&](std::size_t i) {
      Param& p = params[i];
      const Matrix& g = ev.grads[i];
      if (auto* ps = std::get_if<ProState>(&p.state)) {
        switch (cfg.optimizer) {
          case OptimizerKind::ProKlShampoo: p.W = pro_step(p.W, g, *ps, h, mode); break;
          case OptimizerKind::SmokHop: p.W = smok_hop_step(p.W, g, *ps, h); break;
          case OptimizerKind::SubspaceOnly:
            p.W = ablation_step(p.W, g, *ps, h, Ablation::SubspaceOnly, mode);
            break;
          case OptimizerKind::ComplementOnly:
            p.W = ablation_step(p.W, g, *ps, h, Ablation::ComplementOnly, mode);
            break;
          default: throw std::logic_error("run: state/optimizer mismatch");
        }
      } else if (auto* ks = std::get_if<KlShampooState>(&p.state)) {
        p.W = klshampoo_step(p.W, g, *ks, h);
      } else if (auto* ms = std::get_if<MuonState>(&p.state)) {
        p.W = muon_step(p.W, g, *ms, h, mode);
      } else if (auto* as = std::get_if<AdamState>(&p.state)) {
        p.W = adam_step(p.W, g, *as, h);
      }
    };
    if (cfg.parallel_params && params.size() > 1) {
      // Steps touch disjoint parameter slots, so plain threads are enough;
      // exceptions are carried back to the calling thread.
      std::vector<std::exception_ptr> errs(params.size());
      std::vector<std::thread> pool;
      for (std::size_t i = 0; i < params.size(); ++i)
        pool.emplace_back([&, i] {
          try {
            step_one(i);
          } catch (...) {
            errs[i] = std::current_exception();
          }
        });
      for (std::thread& th : pool) th.join();
      for (const std::exception_ptr& e : errs)
        if (e) std::rethrow_exception(e);
    } else {
      for (std::size_t i = 0; i < params.size(); ++i) step_one(i);
    }
  }

  res.csv_text = csv;
  if (!cfg.csv_path.empty()) {
    std::ofstream out(cfg.csv_path, std::ios::binary);
    if (!out) throw std::runtime_error("run: cannot open " + cfg.csv_path);
    out << csv;
  }

  if (!cfg.checkpoint_path.empty()) {
    std::vector<ckpt::ParamEntry> entries;
    for (const Param& p : params) {
      json s;
      if (const auto* ps = std::get_if<ProState>(&p.state)) s = ckpt::to_json(*ps);
      else if (const auto* ks = std::get_if<KlShampooState>(&p.state)) s = ckpt::to_json(*ks);
      else if (const auto* ms = std::get_if<MuonState>(&p.state)) s = ckpt::to_json(*ms);
      else if (const auto* as = std::get_if<AdamState>(&p.state)) s = ckpt::to_json(*as);
      else s = json{{"kind", "none"}};
      entries.push_back({p.name, p.W, std::move(s)});
    }
    ckpt::save_checkpoint(cfg.checkpoint_path, to_name(cfg.optimizer), entries);
  }

  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  if (!cfg.summary_path.empty()) {
    json summary{{"task", to_name(cfg.task)},
                 {"optimizer", to_name(cfg.optimizer)},
                 {"steps_run", res.steps_run},
                 {"final_loss", res.final_loss},
                 {"final_grad_norm", res.final_grad_norm},
                 {"aborted_non_finite", res.aborted_non_finite},
                 {"worst_clip_violation", res.worst_clip_violation},
                 {"worst_orthonormality", res.worst_orthonormality},
                 {"wall_seconds", res.wall_seconds}};
    std::ofstream out(cfg.summary_path);
    if (!out) throw std::runtime_error("run: cannot open " + cfg.summary_path);
    out << summary.dump(2) << "\n";
  }
  return res;
}

namespace {

SpectrumReport spectrum_of(const Matrix& sym, int rank_hint) {
  SpectrumReport rep;
  rep.rank_hint = rank_hint;
  rep.eigenvalues = linalg::sym_eig(sym).lambda;
  const Eigen::Index n = rep.eigenvalues.size();
  if (rank_hint < 0 || rank_hint >= n)
    throw std::invalid_argument("dump_spectrum: rank_hint out of range");
  const double tail_mean = rep.eigenvalues.tail(n - rank_hint).mean();
  rep.normalized = rep.eigenvalues / tail_mean;
  return rep;
}

}  // namespace

SpectrumReport dump_spectrum(const KlShampooState& st, int rank_hint) {
  return spectrum_of(st.R, rank_hint);
}

SpectrumReport dump_spectrum(const ProState& st, int rank_hint) {
  const Eigen::Index n = st.core_n();
  Matrix rhat = st.U * st.S * st.U.transpose() +
                st.mu_perp * (Matrix::Identity(n, n) - st.U * st.U.transpose());
  return spectrum_of(rhat, rank_hint);
}

std::int64_t pro_memory_formula(Eigen::Index rows, Eigen::Index cols, Eigen::Index r) {
  const std::int64_t mb = std::min(rows, cols), nb = std::max(rows, cols);
  return 2 * (mb * mb + r * r) + (mb + r) + nb * r + 1 + mb * nb;
}

std::int64_t klshampoo_memory_formula(Eigen::Index rows, Eigen::Index cols) {
  return 2 * (rows * rows + cols * cols) + (rows + cols) + rows * cols;
}

MemoryAudit memory_audit(const ProState& st) {
  MemoryAudit a;
  a.factors = st.L.size() + st.S.size();
  a.eigenbases = st.QL.size() + st.QS.size();
  a.eigenvalues = st.lam_l.size() + st.lam_s.size();
  a.basis = st.U.size();
  a.scalars = 1;
  a.momentum = st.M.size();
  a.total = a.factors + a.eigenbases + a.eigenvalues + a.basis + a.scalars + a.momentum;
  a.predicted = pro_memory_formula(st.rows, st.cols, st.rank());
  a.matches = a.total == a.predicted;
  return a;
}

MemoryAudit memory_audit(const KlShampooState& st) {
  MemoryAudit a;
  a.factors = st.L.size() + st.R.size();
  a.eigenbases = st.QL.size() + st.QR.size();
  a.eigenvalues = st.lam_l.size() + st.lam_r.size();
  a.basis = 0;
  a.scalars = 0;
  a.momentum = st.M.size();
  a.total = a.factors + a.eigenbases + a.eigenvalues + a.basis + a.scalars + a.momentum;
  a.predicted = klshampoo_memory_formula(st.rows, st.cols);
  a.matches = a.total == a.predicted;
  return a;
}

}  // namespace proklsh::harness
