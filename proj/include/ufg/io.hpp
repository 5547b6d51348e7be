#pragma once

#include <charconv>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "ufg/catalog.hpp"
#include "ufg/diagnostics.hpp"

namespace ufg::io {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace detail {

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Split on commas that are not nested inside parentheses.
inline std::vector<std::string> split_top(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '(') ++depth;
    else if (s[i] == ')') --depth;
    else if (s[i] == sep && depth == 0) {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  out.push_back(trim(s.substr(start)));
  return out;
}

inline double parse_real(const std::string& s, const std::string& what) {
  double v = 0;
  auto t = trim(s);
  auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size())
    throw UsageError("cannot read " + what + " from '" + s + "'");
  return v;
}

inline std::string line_error(int line, const std::string& msg) {
  return "line " + std::to_string(line) + ": " + msg;
}

}  // namespace detail

inline Vec parse_point(const std::string& s) {
  auto parts = detail::split_top(s);
  Vec v(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) v[i] = detail::parse_real(parts[i], "point coordinate");
  return v;
}

inline std::vector<double> parse_list(const std::string& s) {
  std::vector<double> v;
  for (const auto& p : detail::split_top(s)) v.push_back(detail::parse_real(p, "list entry"));
  return v;
}

// "lo:hi,lo:hi,..."
inline std::vector<std::pair<double, double>> parse_box(const std::string& s) {
  std::vector<std::pair<double, double>> box;
  for (const auto& item : detail::split_top(s)) {
    // the separator is the first ':' that is not a leading sign position
    auto c = item.find(':', 1);
    if (c == std::string::npos) throw UsageError("box axis '" + item + "' is not of the form lo:hi");
    double lo = detail::parse_real(item.substr(0, c), "box bound");
    double hi = detail::parse_real(item.substr(c + 1), "box bound");
    if (!(lo < hi)) throw UsageError("box axis '" + item + "' needs lo < hi");
    box.emplace_back(lo, hi);
  }
  return box;
}

// "lo:hi:n"
inline std::vector<double> parse_grid(const std::string& s) {
  std::vector<std::string> p;
  std::size_t start = 0;
  for (std::size_t i = 1; i <= s.size(); ++i)
    if (i == s.size() || (s[i] == ':' && s[i - 1] != 'e' && s[i - 1] != 'E')) {
      p.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  if (p.size() != 3) throw UsageError("grid spec '" + s + "' is not of the form lo:hi:n");
  double lo = detail::parse_real(p[0], "grid bound"), hi = detail::parse_real(p[1], "grid bound");
  double n = detail::parse_real(p[2], "grid size");
  if (!(lo < hi) || !(n >= 1) || n != std::floor(n)) throw UsageError("grid spec '" + s + "' is invalid");
  return linspace(lo, hi, static_cast<std::size_t>(n));
}

inline std::vector<Vec> read_points(std::istream& in) {
  std::vector<Vec> pts;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    auto t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    try {
      pts.push_back(parse_point(t));
    } catch (const UsageError& e) {
      throw UsageError(detail::line_error(n, e.what()));
    }
  }
  return pts;
}

// ---------------------------------------------------------------------------
// System files

// overrides replace values of parameters declared in the file.
inline SDESystem parse_system(std::istream& in, const std::string& name = "file",
                              const std::map<std::string, double>& overrides = {}) {
  std::optional<int> dim, noise;
  std::vector<std::string> vars;
  std::map<std::string, double> params;
  std::map<int, std::pair<int, std::string>> fields;  // index -> (line, bracket text)
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    auto hash = line.find('#');
    auto t = detail::trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (t.empty()) continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError(detail::line_error(n, "expected 'key = value'"), 0, {"="});
    auto key = detail::trim(t.substr(0, eq));
    auto val = detail::trim(t.substr(eq + 1));
    try {
      if (key == "dim" || key == "noise") {
        double v = detail::parse_real(val, key);
        if (v != std::floor(v) || v < 1 || v > 1000) throw UsageError(key + " must be a positive integer");
        (key == "dim" ? dim : noise) = static_cast<int>(v);
      } else if (key == "vars") {
        vars = detail::split_top(val);
      } else if (key.rfind("param ", 0) == 0) {
        auto pname = detail::trim(key.substr(6));
        if (pname.empty()) throw UsageError("parameter without a name");
        params[pname] = detail::parse_real(val, "parameter " + pname);
      } else if (key.size() >= 2 && key[0] == 'V' &&
                 std::all_of(key.begin() + 1, key.end(), [](unsigned char c) { return std::isdigit(c); })) {
        int idx = std::stoi(key.substr(1));
        if (fields.count(idx)) throw UsageError("field " + key + " is defined twice");
        if (val.size() < 2 || val.front() != '[' || val.back() != ']')
          throw UsageError("field " + key + " must be a bracketed list [e1, e2, ...]");
        fields[idx] = {n, val.substr(1, val.size() - 2)};
      } else {
        throw UsageError("unknown key '" + key + "'");
      }
    } catch (const UsageError& e) {
      throw ParseError(detail::line_error(n, e.what()), 0, {"dim", "noise", "vars", "param NAME", "V0..Vd"});
    }
  }
  for (const auto& [k, v] : overrides) {
    if (!params.count(k)) throw UsageError("system file declares no parameter '" + k + "'");
    params[k] = v;
  }
  if (!dim) throw ParseError("system file: missing 'dim'", 0, {"dim"});
  if (!noise) throw ParseError("system file: missing 'noise'", 0, {"noise"});
  if (vars.empty())
    for (int i = 0; i < *dim; ++i) vars.push_back(default_variable_name(i));
  if (static_cast<int>(vars.size()) != *dim)
    throw DimensionError("system file: vars lists " + std::to_string(vars.size()) + " names but dim = " +
                         std::to_string(*dim));
  SDESystem s;
  s.name = name;
  s.variables = vars;
  s.parameters = params;
  for (int i = 0; i <= *noise; ++i) {
    auto it = fields.find(i);
    if (it == fields.end()) throw ParseError("system file: missing field V" + std::to_string(i), 0, {"V" + std::to_string(i)});
    auto comps = detail::split_top(it->second.second);
    const std::string fname = "V" + std::to_string(i);
    if (static_cast<int>(comps.size()) != *dim)
      throw DimensionError(detail::line_error(it->second.first, "field " + fname + " has " + std::to_string(comps.size()) +
                                                                    " components but dim = " + std::to_string(*dim)));
    std::vector<Expr> es;
    for (std::size_t j = 0; j < comps.size(); ++j) {
      try {
        es.push_back(parse_expression(comps[j], vars, params));
      } catch (const ParseError& e) {
        throw ParseError(detail::line_error(it->second.first, fname + " component " + std::to_string(j + 1) + ": " + e.what()),
                         e.position(), e.expected());
      }
    }
    (i == 0 ? s.drift : s.noise.emplace_back()) = VectorField(std::move(es));
  }
  for (const auto& [i, _] : fields)
    if (i > *noise) throw ParseError("system file: field V" + std::to_string(i) + " exceeds noise = " + std::to_string(*noise), 0);
  s.validate();
  return s;
}

inline SDESystem load_system_file(const std::string& path, const std::map<std::string, double>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open system file '" + path + "'");
  return parse_system(in, path, overrides);
}

// Parameters are already substituted into the expressions; they are listed for reference only.
inline void write_system(std::ostream& out, const SDESystem& s, const std::string& comment = {}) {
  if (!comment.empty()) out << "# " << comment << "\n";
  for (const auto& [k, v] : s.parameters) out << "# parameter " << k << " = " << format_double(v) << "\n";
  auto names = s.variable_names();
  out << "dim = " << s.dim() << "\n";
  out << "noise = " << s.noise_count() << "\n";
  out << "vars = ";
  for (std::size_t i = 0; i < names.size(); ++i) out << (i ? ", " : "") << names[i];
  out << "\n";
  auto fields = s.fields();
  for (std::size_t i = 0; i < fields.size(); ++i) {
    out << "V" << i << " = [";
    auto comps = fields[i].to_strings(names);
    for (std::size_t j = 0; j < comps.size(); ++j) out << (j ? ", " : "") << comps[j];
    out << "]\n";
  }
}

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline json to_json(const Mat& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vec(m.row(i).transpose())));
  return a;
}

inline json to_json(const PointRecord& r) {
  json j;
  j["index"] = r.index;
  j["point"] = to_json(r.point);
  j["residual"] = r.residual;
  j["max_coefficient"] = r.max_coefficient;
  j["min_eigenvalue"] = r.min_eigenvalue;
  j["max_eigenvalue"] = r.max_eigenvalue;
  j["min_singular_value"] = r.min_singular_value;
  j["certified_lambda0"] = r.certified_lambda0;
  j["rank"] = r.rank;
  j["singular"] = r.singular;
  j["failed"] = r.failed;
  j["violates"] = r.violates;
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

struct Metadata {
  std::optional<std::uint64_t> seed;
  std::optional<double> dt;
  std::optional<int> grid;
  std::optional<double> rtol;
  unsigned threads = 1;
};

inline json defaults_json() {
  return {{"rtol", 1e-8}, {"dt", 1e-3}, {"grid", 32}, {"lambda0_sweep", false}};
}

inline json report_skeleton(const std::string& command, const std::string& system,
                            const std::map<std::string, double>& params, const Metadata& meta) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["command"] = command;
  j["system"] = system;
  j["params"] = json::object();
  for (const auto& [k, v] : params) j["params"][k] = v;
  j["verdict"] = nullptr;
  j["worst_point"] = nullptr;
  j["records"] = json::array();
  json m;
  m["seed"] = meta.seed ? json(*meta.seed) : json(nullptr);
  m["dt"] = meta.dt ? json(*meta.dt) : json(nullptr);
  m["grid"] = meta.grid ? json(*meta.grid) : json(nullptr);
  m["rtol"] = meta.rtol ? json(*meta.rtol) : json(nullptr);
  j["metadata"] = m;
  j["defaults"] = defaults_json();
  return j;
}

inline void fill_report(json& j, const ConditionReport& r) {
  j["condition"] = r.condition;
  j["level"] = r.level;
  j["lambda0"] = r.lambda0 ? json(*r.lambda0) : json(nullptr);
  j["tolerance"] = r.tolerance;
  j["verdict"] = to_string(r.verdict);
  j["worst_point"] = r.worst ? to_json(r.records[*r.worst].point) : json(nullptr);
  j["summary"] = {{"points", r.records.size()},
                  {"singular", r.singular_count},
                  {"failed", r.failed_count},
                  {"max_residual", r.max_residual},
                  {"max_coefficient", r.max_coefficient},
                  {"certified_lambda0", r.certified_lambda0}};
  for (const auto& rec : r.records) j["records"].push_back(to_json(rec));
}

inline json to_json(const ConvergenceReport& r) {
  json j;
  j["times"] = r.times;
  json ks = json::array();
  for (const auto& row : r.ks) ks.push_back(row);
  j["ks"] = ks;
  j["escape_fraction"] = r.escape_fraction;
  j["decay_rate"] = r.decay_rate;
  json pass = json::array();
  for (const auto& p : r.pass) pass.push_back(p ? json(*p) : json(nullptr));
  j["pass"] = pass;
  j["blow_up_count"] = r.blow_up_count;
  return j;
}

// ---------------------------------------------------------------------------
// CSV

inline void write_paths_csv(std::ostream& out, const PathEnsemble& e) {
  out << "path_id,time";
  for (int j = 0; j < e.dim; ++j) out << ",x" << j + 1;
  out << "\n";
  for (std::size_t p = 0; p < e.n_paths; ++p)
    for (std::size_t k = 0; k < e.n_times(); ++k) {
      out << p << ',' << format_double(e.times[k]);
      for (int j = 0; j < e.dim; ++j) out << ',' << format_double(e.at(p, k, j));
      out << '\n';
    }
}

inline void write_convergence_csv(std::ostream& out, const ConvergenceReport& r) {
  out << "time,coordinate,ks,escape_fraction\n";
  for (std::size_t k = 0; k < r.ks.size(); ++k)
    for (std::size_t j = 0; j < r.ks[k].size(); ++j)
      out << format_double(r.times[k]) << ',' << j + 1 << ',' << format_double(r.ks[k][j]) << ','
          << format_double(r.escape_fraction[k]) << '\n';
}

}  // namespace ufg::io
