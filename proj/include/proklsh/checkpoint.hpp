#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "proklsh/baselines.hpp"
#include "proklsh/state.hpp"

namespace proklsh::ckpt {

using nlohmann::json;

json matrix_to_json(const Matrix& M);
Matrix matrix_from_json(const json& j);
json vector_to_json(const Vector& v);
Vector vector_from_json(const json& j);

json to_json(const ProState& st);
ProState pro_from_json(const json& j);

json to_json(const KlShampooState& st);
KlShampooState klshampoo_from_json(const json& j);

json to_json(const MuonState& st);
MuonState muon_from_json(const json& j);

json to_json(const AdamState& st);
AdamState adam_from_json(const json& j);

// File layout: {"format": "proklsh-checkpoint-v1", "optimizer": <name>,
//               "params": [{"name": ..., "weight": ..., "state": ...}]}.
struct ParamEntry {
  std::string name;
  Matrix weight;
  json state;
};

void save_checkpoint(const std::string& path, const std::string& optimizer,
                     const std::vector<ParamEntry>& params);

struct Checkpoint {
  std::string optimizer;
  std::vector<ParamEntry> params;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace proklsh::ckpt
