#include "proklsh/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace proklsh::ckpt {

json matrix_to_json(const Matrix& M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return json{{"rows", M.rows()}, {"cols", M.cols()}, {"data", std::move(rows)}};
}

Matrix matrix_from_json(const json& j) {
  const Eigen::Index r = j.at("rows").get<Eigen::Index>();
  const Eigen::Index c = j.at("cols").get<Eigen::Index>();
  const json& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != r)
    throw std::runtime_error("checkpoint: matrix row count mismatch");
  Matrix M(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const json& row = data.at(i);
    if (static_cast<Eigen::Index>(row.size()) != c)
      throw std::runtime_error("checkpoint: matrix column count mismatch");
    for (Eigen::Index k = 0; k < c; ++k) M(i, k) = row.at(k).get<double>();
  }
  return M;
}

json vector_to_json(const Vector& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Vector vector_from_json(const json& j) {
  Vector v(j.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j.at(i).get<double>();
  return v;
}

json to_json(const ProState& st) {
  return json{{"kind", "pro"},
              {"orient", st.orient == Orientation::Right ? "right" : "left"},
              {"rows", st.rows},
              {"cols", st.cols},
              {"M", matrix_to_json(st.M)},
              {"U", matrix_to_json(st.U)},
              {"L", matrix_to_json(st.L)},
              {"S", matrix_to_json(st.S)},
              {"QL", matrix_to_json(st.QL)},
              {"lam_l", vector_to_json(st.lam_l)},
              {"QS", matrix_to_json(st.QS)},
              {"lam_s", vector_to_json(st.lam_s)},
              {"mu_perp", st.mu_perp},
              {"step_count", st.step_count},
              {"tracking_skips", st.tracking_skips},
              {"refresh_skips", st.refresh_skips}};
}

ProState pro_from_json(const json& j) {
  if (j.at("kind").get<std::string>() != "pro")
    throw std::runtime_error("checkpoint: expected a pro state");
  ProState st;
  st.orient = j.at("orient").get<std::string>() == "right" ? Orientation::Right
                                                           : Orientation::Left;
  st.rows = j.at("rows").get<Eigen::Index>();
  st.cols = j.at("cols").get<Eigen::Index>();
  st.M = matrix_from_json(j.at("M"));
  st.U = matrix_from_json(j.at("U"));
  st.L = matrix_from_json(j.at("L"));
  st.S = matrix_from_json(j.at("S"));
  st.QL = matrix_from_json(j.at("QL"));
  st.lam_l = vector_from_json(j.at("lam_l"));
  st.QS = matrix_from_json(j.at("QS"));
  st.lam_s = vector_from_json(j.at("lam_s"));
  st.mu_perp = j.at("mu_perp").get<double>();
  st.step_count = j.at("step_count").get<std::int64_t>();
  st.tracking_skips = j.at("tracking_skips").get<std::int64_t>();
  st.refresh_skips = j.at("refresh_skips").get<std::int64_t>();
  return st;
}

json to_json(const KlShampooState& st) {
  return json{{"kind", "klshampoo"},
              {"rows", st.rows},
              {"cols", st.cols},
              {"M", matrix_to_json(st.M)},
              {"L", matrix_to_json(st.L)},
              {"R", matrix_to_json(st.R)},
              {"QL", matrix_to_json(st.QL)},
              {"lam_l", vector_to_json(st.lam_l)},
              {"QR", matrix_to_json(st.QR)},
              {"lam_r", vector_to_json(st.lam_r)},
              {"step_count", st.step_count},
              {"refresh_skips", st.refresh_skips}};
}

KlShampooState klshampoo_from_json(const json& j) {
  if (j.at("kind").get<std::string>() != "klshampoo")
    throw std::runtime_error("checkpoint: expected a klshampoo state");
  KlShampooState st;
  st.rows = j.at("rows").get<Eigen::Index>();
  st.cols = j.at("cols").get<Eigen::Index>();
  st.M = matrix_from_json(j.at("M"));
  st.L = matrix_from_json(j.at("L"));
  st.R = matrix_from_json(j.at("R"));
  st.QL = matrix_from_json(j.at("QL"));
  st.lam_l = vector_from_json(j.at("lam_l"));
  st.QR = matrix_from_json(j.at("QR"));
  st.lam_r = vector_from_json(j.at("lam_r"));
  st.step_count = j.at("step_count").get<std::int64_t>();
  st.refresh_skips = j.at("refresh_skips").get<std::int64_t>();
  return st;
}

json to_json(const MuonState& st) {
  return json{{"kind", "muon"}, {"M", matrix_to_json(st.M)}};
}

MuonState muon_from_json(const json& j) {
  if (j.at("kind").get<std::string>() != "muon")
    throw std::runtime_error("checkpoint: expected a muon state");
  return MuonState{matrix_from_json(j.at("M"))};
}

json to_json(const AdamState& st) {
  return json{{"kind", "adam"},
              {"m1", matrix_to_json(st.m1)},
              {"v2", matrix_to_json(st.v2)},
              {"step_count", st.step_count}};
}

AdamState adam_from_json(const json& j) {
  if (j.at("kind").get<std::string>() != "adam")
    throw std::runtime_error("checkpoint: expected an adam state");
  AdamState st;
  st.m1 = matrix_from_json(j.at("m1"));
  st.v2 = matrix_from_json(j.at("v2"));
  st.step_count = j.at("step_count").get<std::int64_t>();
  return st;
}

void save_checkpoint(const std::string& path, const std::string& optimizer,
                     const std::vector<ParamEntry>& params) {
  json doc;
  doc["format"] = "proklsh-checkpoint-v1";
  doc["optimizer"] = optimizer;
  json plist = json::array();
  for (const ParamEntry& p : params) {
    plist.push_back(json{{"name", p.name}, {"weight", matrix_to_json(p.weight)},
                         {"state", p.state}});
  }
  doc["params"] = std::move(plist);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out << doc.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  json doc = json::parse(in);
  if (doc.at("format").get<std::string>() != "proklsh-checkpoint-v1")
    throw std::runtime_error("checkpoint: unrecognized format tag");
  Checkpoint ck;
  ck.optimizer = doc.at("optimizer").get<std::string>();
  for (const json& p : doc.at("params")) {
    ParamEntry e;
    e.name = p.at("name").get<std::string>();
    e.weight = matrix_from_json(p.at("weight"));
    e.state = p.at("state");
    ck.params.push_back(std::move(e));
  }
  return ck;
}

}  // namespace proklsh::ckpt
