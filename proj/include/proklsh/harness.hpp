#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "proklsh/baselines.hpp"
#include "proklsh/kl_analysis.hpp"
#include "proklsh/state.hpp"

namespace proklsh::harness {

using nlohmann::json;

enum class TaskKind {
  MatrixRegression,  // f(W) = 0.5 ||X W - Y||_F^2 / batch
  TwoLayerMlp,       // squared loss, tanh hidden layer, trains both weight matrices
  SpikedStream,      // gradients drawn from a spiked population, loss reported as 0
};

enum class OptimizerKind {
  ProKlShampoo,
  SmokHop,
  SubspaceOnly,
  ComplementOnly,
  KlShampoo,
  Muon,
  Adam,
};

TaskKind task_from_name(const std::string& name);
OptimizerKind optimizer_from_name(const std::string& name);
std::string to_name(TaskKind t);
std::string to_name(OptimizerKind o);

struct RunConfig {
  TaskKind task = TaskKind::MatrixRegression;
  OptimizerKind optimizer = OptimizerKind::ProKlShampoo;
  Hyper hyper;
  int steps = 100;
  std::uint64_t seed = 1;
  int log_every = 1;
  // task shape parameters
  Eigen::Index rows = 16, cols = 24;  // weight shape (first layer for the MLP)
  Eigen::Index hidden = 16;           // MLP hidden width
  Eigen::Index batch = 32;
  double noise = 0.0;        // observation noise for regression targets
  int spike_rank = 3;        // SpikedStream planted rank
  double spike_scale = 3.0;  // SpikedStream spike strength
  double spike_sigma = 1.0;  // SpikedStream noise level
  bool exact_polar = false;
  bool parallel_params = false;  // step parameters in separate threads
  std::string csv_path;         // empty: no trace written
  std::string checkpoint_path;  // empty: no checkpoint written
  std::string summary_path;     // empty: no summary written
  std::string resume_path;      // empty: fresh start
};

RunConfig config_from_json(const json& j);
json config_to_json(const RunConfig& cfg);
// Applies one dotted-path override, e.g. "hyper.lr=0.05" or "task=spiked_stream".
void apply_override(json& j, const std::string& key_eq_value);

struct RunResult {
  int steps_run = 0;
  double final_loss = 0.0;
  double final_grad_norm = 0.0;
  bool aborted_non_finite = false;
  double wall_seconds = 0.0;
  std::string csv_text;  // exact bytes written to csv_path
  // worst invariant violations seen at logged steps (pro-family runs only)
  double worst_clip_violation = 0.0;
  double worst_orthonormality = 0.0;
};

RunResult run(const RunConfig& cfg);

// Eigenvalue spectrum of the accumulated right factor, descending, after a
// final eigenbasis refresh; `normalized` divides by the mean of the entries
// past the leading `rank_hint`.
struct SpectrumReport {
  Vector eigenvalues;
  Vector normalized;
  int rank_hint = 0;
};

SpectrumReport dump_spectrum(const KlShampooState& st, int rank_hint);
SpectrumReport dump_spectrum(const ProState& st, int rank_hint);

// Per-category double counts for a single weight matrix, plus the closed-form
// prediction; `matches` is exact equality of the totals.
struct MemoryAudit {
  std::int64_t factors = 0;
  std::int64_t eigenbases = 0;
  std::int64_t eigenvalues = 0;
  std::int64_t basis = 0;
  std::int64_t scalars = 0;
  std::int64_t momentum = 0;
  std::int64_t total = 0;
  std::int64_t predicted = 0;
  bool matches = false;
};

MemoryAudit memory_audit(const ProState& st);
MemoryAudit memory_audit(const KlShampooState& st);
// Closed-form totals without materializing a state.
std::int64_t pro_memory_formula(Eigen::Index rows, Eigen::Index cols, Eigen::Index r);
std::int64_t klshampoo_memory_formula(Eigen::Index rows, Eigen::Index cols);

}  // namespace proklsh::harness
