#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ifa/matrix.hpp"
#include "ifa/solvers.hpp"

namespace ifa {

// All numeric file output goes through this: 17 significant digits round-trip
// doubles exactly through text.
inline std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Row-major CSV, one matrix row per line.
inline void write_matrix(const Matrix& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("write_matrix: cannot open '" + path + "' for writing");
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out << ',';
      out << format_value(m(i, j));
    }
    out << '\n';
  }
  if (!out) throw Error("write_matrix: failed writing '" + path + "'");
}

inline void write_vector(const Vector& v, const std::string& path) {
  write_matrix(Matrix(v), path);
}

inline Matrix read_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("read_matrix: cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const std::size_t comma = line.find(',', pos);
      const std::string field =
          line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      char* end = nullptr;
      const double v = std::strtod(field.c_str(), &end);
      if (end == field.c_str() || (end && *end != '\0')) {
        std::ostringstream os;
        os << path << ":" << lineno << ": cannot parse field '" << field << "'";
        throw ParseError(os.str());
      }
      row.push_back(v);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      std::ostringstream os;
      os << path << ":" << lineno << ": ragged row, expected " << rows.front().size()
         << " fields, got " << row.size();
      throw ParseError(os.str());
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(path + ": empty matrix file");
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)]
                                                       [static_cast<std::size_t>(j)];
  }
  return m;
}

inline Vector read_vector(const std::string& path) {
  Matrix m = read_matrix(path);
  if (m.cols() == 1) return m.col(0);
  if (m.rows() == 1) return m.row(0).transpose();
  throw ParseError(path + ": expected a single row or column");
}

// Symmetry validation happens in the CovMatrix constructor.
inline CovMatrix read_cov_matrix(const std::string& path) { return CovMatrix(read_matrix(path)); }

inline constexpr const char* kTraceHeader = "iter,divergence,l2,gain,r_H,r_D,min_D";

// Divergences are clamped for reporting; everything else is written raw.
inline void write_trace_csv(const SolverTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("write_trace_csv: cannot open '" + path + "' for writing");
  out << kTraceHeader << '\n';
  for (const TraceRow& row : trace.rows) {
    out << row.iter << ',' << format_value(DivergenceValue(row.divergence).nats()) << ','
        << format_value(row.l2) << ',' << format_value(row.gain) << ','
        << format_value(row.r_h) << ',' << format_value(row.r_d) << ','
        << format_value(row.min_d) << '\n';
  }
  if (!out) throw Error("write_trace_csv: failed writing '" + path + "'");
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("fnv1a64_file: cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return fnv1a64(os.str());
}

inline std::string checksum_hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Record of one CLI invocation: enough to rerun it and to verify the emitted
// artifacts byte for byte.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::map<std::string, std::string> inputs;
  std::vector<std::string> engines;
  int k = 0;
  std::optional<int> n2;
  SolverConfig config;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> outputs;
  std::map<std::string, std::string> checksums;
};

inline nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json j;
  j["command"] = m.command;
  j["argv"] = m.argv;
  j["inputs"] = m.inputs;
  j["engines"] = m.engines;
  j["k"] = m.k;
  if (m.n2) {
    j["n2"] = *m.n2;
  } else {
    j["n2"] = nullptr;
  }
  j["config"] = {{"max_iters", m.config.max_iters},
                 {"div_tol", m.config.div_tol},
                 {"residual_tol", m.config.residual_tol},
                 {"record_every", m.config.record_every}};
  j["seed"] = m.seed;
  j["outputs"] = m.outputs;
  j["checksums"] = m.checksums;
  return j;
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.argv = j.at("argv").get<std::vector<std::string>>();
  m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  m.engines = j.at("engines").get<std::vector<std::string>>();
  m.k = j.at("k").get<int>();
  if (!j.at("n2").is_null()) m.n2 = j.at("n2").get<int>();
  const nlohmann::json& c = j.at("config");
  m.config.max_iters = c.at("max_iters").get<int>();
  m.config.div_tol = c.at("div_tol").get<double>();
  m.config.residual_tol = c.at("residual_tol").get<double>();
  m.config.record_every = c.at("record_every").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  m.checksums = j.at("checksums").get<std::map<std::string, std::string>>();
  return m;
}

inline void write_manifest(const RunManifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("write_manifest: cannot open '" + path + "' for writing");
  out << to_json(m).dump(2) << '\n';
  if (!out) throw Error("write_manifest: failed writing '" + path + "'");
}

inline RunManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("read_manifest: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
    return manifest_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("read_manifest: " + path + ": " + e.what());
  }
}

}  // namespace ifa
