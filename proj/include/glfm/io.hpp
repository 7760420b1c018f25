#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "glfm/model.hpp"

namespace glfm {
namespace io {

using json = nlohmann::ordered_json;

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline double parse_finite(const std::string& cell, const std::string& where) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &pos);
  } catch (const std::exception&) {
    throw ConfigError(where + ": cannot parse number '" + cell + "'");
  }
  if (pos != cell.size()) throw ConfigError(where + ": trailing characters in '" + cell + "'");
  if (!std::isfinite(v)) throw ConfigError(where + ": non-finite value '" + cell + "'");
  return v;
}

inline long parse_index(const std::string& cell, const std::string& where) {
  const double v = parse_finite(cell, where);
  if (v < 1.0 || std::floor(v) != v) throw ConfigError(where + ": expected a 1-based integer id");
  return static_cast<long>(v);
}

// Long-format responses: header person,item,time,value with contiguous
// 1-based ids. A wave (i, t) is observed iff rows exist for it, and an
// observed wave must list every item.
inline Dataset read_responses_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open responses file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": empty file");
  const auto header = split_csv_line(line);
  if (header.size() != 4 || header[0] != "person" || header[1] != "item" ||
      header[2] != "time" || header[3] != "value")
    throw ConfigError(path + ": header must be person,item,time,value");

  struct Row {
    long i, j, t;
    double v;
  };
  std::vector<Row> rows;
  long N = 0, J = 0, T = 0;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    const std::string where = path + ":" + std::to_string(line_no);
    if (cells.size() != 4) throw ConfigError(where + ": expected 4 columns");
    Row r;
    r.i = parse_index(cells[0], where);
    r.j = parse_index(cells[1], where);
    r.t = parse_index(cells[2], where);
    r.v = parse_finite(cells[3], where);
    N = std::max(N, r.i);
    J = std::max(J, r.j);
    T = std::max(T, r.t);
    rows.push_back(r);
  }
  if (rows.empty()) throw ConfigError(path + ": no data rows");

  Dataset data;
  data.n_persons = static_cast<int>(N);
  data.n_items = static_cast<int>(J);
  data.n_times = static_cast<int>(T);
  data.responses = Eigen::MatrixXd::Zero(N, J * T);
  data.observed = Eigen::MatrixXd::Zero(N, T);
  data.families.assign(static_cast<std::size_t>(J), Family::Bernoulli);
  Eigen::MatrixXi filled = Eigen::MatrixXi::Zero(N, J * T);
  for (const Row& r : rows) {
    const long col = (r.t - 1) * J + (r.j - 1);
    if (filled(r.i - 1, col))
      throw ConfigError(path + ": duplicate row for person " + std::to_string(r.i) + ", item " +
                        std::to_string(r.j) + ", time " + std::to_string(r.t));
    filled(r.i - 1, col) = 1;
    data.responses(r.i - 1, col) = r.v;
    data.observed(r.i - 1, r.t - 1) = 1.0;
  }
  for (long i = 0; i < N; ++i)
    for (long t = 0; t < T; ++t) {
      if (data.observed(i, t) == 0.0) continue;
      long have = 0;
      for (long j = 0; j < J; ++j) have += filled(i, t * J + j);
      if (have != J)
        throw ConfigError(path + ": person " + std::to_string(i + 1) + " at time " +
                          std::to_string(t + 1) + " lists " + std::to_string(have) + " of " +
                          std::to_string(J) + " items; waves must be complete or absent");
    }
  return data;
}

// Covariates: header person,<names...>, one row per person, contiguous ids.
inline Eigen::MatrixXd read_covariates_csv(const std::string& path, int n_persons) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open covariates file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": empty file");
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "person")
    throw ConfigError(path + ": header must start with person");
  const int p = static_cast<int>(header.size()) - 1;
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n_persons, p);
  std::vector<bool> seen(static_cast<std::size_t>(n_persons), false);
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    const std::string where = path + ":" + std::to_string(line_no);
    if (static_cast<int>(cells.size()) != p + 1)
      throw ConfigError(where + ": expected " + std::to_string(p + 1) + " columns");
    const long i = parse_index(cells[0], where);
    if (i > n_persons) throw ConfigError(where + ": person id exceeds the response file's count");
    if (seen[static_cast<std::size_t>(i - 1)]) throw ConfigError(where + ": duplicate person");
    seen[static_cast<std::size_t>(i - 1)] = true;
    for (int l = 0; l < p; ++l) X(i - 1, l) = parse_finite(cells[static_cast<std::size_t>(l + 1)], where);
  }
  for (int i = 0; i < n_persons; ++i)
    if (!seen[static_cast<std::size_t>(i)])
      throw ConfigError(path + ": missing covariates for person " + std::to_string(i + 1));
  return X;
}

// Time covariates: header person,time,<names...>, one row per (person, time).
inline std::vector<Eigen::MatrixXd> read_time_covariates_csv(const std::string& path,
                                                             int n_persons, int n_times) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open time covariates file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": empty file");
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "person" || header[1] != "time")
    throw ConfigError(path + ": header must start with person,time");
  const int pz = static_cast<int>(header.size()) - 2;
  std::vector<Eigen::MatrixXd> Z(static_cast<std::size_t>(n_times),
                                 Eigen::MatrixXd::Zero(n_persons, pz));
  std::vector<std::vector<bool>> seen(static_cast<std::size_t>(n_times),
                                      std::vector<bool>(static_cast<std::size_t>(n_persons), false));
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    const std::string where = path + ":" + std::to_string(line_no);
    if (static_cast<int>(cells.size()) != pz + 2)
      throw ConfigError(where + ": expected " + std::to_string(pz + 2) + " columns");
    const long i = parse_index(cells[0], where);
    const long t = parse_index(cells[1], where);
    if (i > n_persons || t > n_times) throw ConfigError(where + ": id out of range");
    if (seen[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(i - 1)])
      throw ConfigError(where + ": duplicate (person, time)");
    seen[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(i - 1)] = true;
    for (int l = 0; l < pz; ++l)
      Z[static_cast<std::size_t>(t - 1)](i - 1, l) =
          parse_finite(cells[static_cast<std::size_t>(l + 2)], where);
  }
  for (int t = 0; t < n_times; ++t)
    for (int i = 0; i < n_persons; ++i)
      if (!seen[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)])
        throw ConfigError(path + ": missing row for person " + std::to_string(i + 1) +
                          ", time " + std::to_string(t + 1));
  return Z;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (long i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (long j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& rows) {
  const long n = static_cast<long>(rows.size());
  const long m = n > 0 ? static_cast<long>(rows[0].size()) : 0;
  Eigen::MatrixXd out(n, m);
  for (long i = 0; i < n; ++i) {
    if (static_cast<long>(rows[static_cast<std::size_t>(i)].size()) != m)
      throw ConfigError("ragged matrix in json");
    for (long j = 0; j < m; ++j) out(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].get<double>();
  }
  return out;
}

inline Family family_from_string(const std::string& name) {
  if (name == "bernoulli") return Family::Bernoulli;
  if (name == "poisson") return Family::Poisson;
  if (name == "gaussian") return Family::Gaussian;
  throw ConfigError("unknown family: " + name);
}

inline json model_to_json(const ModelSpec& spec) {
  json j;
  j["k"] = spec.n_factors;
  j["time_varying_loadings"] = spec.time_varying_loadings;
  j["time_varying_coefficients"] = spec.time_varying_coefficients;
  j["linear_intercept"] = spec.linear_intercept;
  j["use_time_covariates"] = spec.use_time_covariates;
  j["c1"] = spec.c1;
  j["c2"] = spec.c2;
  return j;
}

inline ModelSpec model_from_json(const json& j) {
  ModelSpec spec;
  spec.n_factors = j.at("k").get<int>();
  spec.time_varying_loadings = j.at("time_varying_loadings").get<bool>();
  spec.time_varying_coefficients = j.at("time_varying_coefficients").get<bool>();
  spec.linear_intercept = j.at("linear_intercept").get<bool>();
  spec.use_time_covariates = j.at("use_time_covariates").get<bool>();
  spec.c1 = j.at("c1").get<double>();
  spec.c2 = j.at("c2").get<double>();
  return spec;
}

inline json params_to_json(const ModelSpec& spec, const Dataset& data,
                           const ParameterSet& params) {
  json j;
  j["dims"] = {{"n_persons", data.n_persons},
               {"n_items", data.n_items},
               {"n_times", data.n_times},
               {"p", data.n_covariates()},
               {"p_z", data.n_time_covariates()}};
  j["model"] = model_to_json(spec);
  json fams = json::array();
  for (const Family f : data.families) fams.push_back(family_name(f));
  j["families"] = std::move(fams);
  j["theta"] = matrix_to_json(params.theta);
  j["item_params"] = matrix_to_json(params.item_params);
  json sc = json::array();
  for (long k = 0; k < params.scale.size(); ++k) sc.push_back(params.scale(k));
  j["scale"] = std::move(sc);
  return j;
}

struct LoadedParams {
  ModelSpec spec;
  ParameterSet params;
  std::vector<Family> families;
};

inline LoadedParams params_from_json(const json& j) {
  LoadedParams out;
  out.spec = model_from_json(j.at("model"));
  out.params.theta = matrix_from_json(j.at("theta"));
  out.params.item_params = matrix_from_json(j.at("item_params"));
  const auto& sc = j.at("scale");
  out.params.scale.resize(static_cast<long>(sc.size()));
  for (long k = 0; k < out.params.scale.size(); ++k)
    out.params.scale(k) = sc[static_cast<std::size_t>(k)].get<double>();
  for (const auto& f : j.at("families")) out.families.push_back(family_from_string(f.get<std::string>()));
  return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path);
  out << content;
  if (!out) throw ConfigError("failed while writing file: " + path);
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open json file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& err) {
    throw ConfigError(path + ": " + err.what());
  }
  return j;
}

inline void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m,
                             const std::vector<std::string>& colnames) {
  std::ostringstream out;
  for (std::size_t c = 0; c < colnames.size(); ++c)
    out << (c ? "," : "") << colnames[c];
  out << "\n";
  for (long i = 0; i < m.rows(); ++i) {
    for (long j = 0; j < m.cols(); ++j) out << (j ? "," : "") << format_double(m(i, j));
    out << "\n";
  }
  write_text_file(path, out.str());
}

}  // namespace io
}  // namespace glfm
