#pragma once

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "ufg/chart.hpp"
#include "ufg/io.hpp"
#include "ufg/malliavin.hpp"

namespace ufg::cli {

enum ExitCode : int { ok = 0, violated = 2, usage = 3, numeric = 4 };

struct Loaded {
  SDESystem system;
  std::optional<CatalogEntry> entry;
  std::string label;
  std::map<std::string, double> params;
};

inline std::map<std::string, double> parse_params(const std::vector<std::string>& items) {
  std::map<std::string, double> out;
  for (const auto& it : items) {
    auto eq = it.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--param expects NAME=VALUE, got '" + it + "'");
    out[io::detail::trim(it.substr(0, eq))] = io::detail::parse_real(it.substr(eq + 1), "parameter value");
  }
  return out;
}

inline Loaded load(const std::string& spec, const std::map<std::string, double>& params) {
  Loaded l;
  l.label = spec;
  auto names = catalog::list();
  if (std::find(names.begin(), names.end(), spec) != names.end()) {
    l.entry = catalog::get(spec, params);
    l.system = l.entry->system;
    l.params = l.system.parameters;
  } else if (std::filesystem::exists(spec)) {
    l.system = io::load_system_file(spec, params);
    l.params = l.system.parameters;
  } else {
    throw UsageError("'" + spec + "' is neither a catalog entry nor a readable system file");
  }
  return l;
}

struct Common {
  std::string system;
  std::vector<std::string> param_items;
  std::string out = "-";
  unsigned threads = 1;
  double rtol = 1e-8;
};

struct SimFlags {
  std::string x0;
  double t = 1.0;
  double dt = 1e-3;
  std::size_t paths = 100;
  std::uint64_t seed = 0;
  std::size_t stride = 1;
};

class Runner {
 public:
  Runner(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(int argc, const char* const* argv) {
    CLI::App app{"Analysis and simulation of degenerate diffusions under the UFG condition", "ufgtool"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "ufgtool 1.0");

    // catalog
    auto* cat = app.add_subcommand("catalog", "List or export built-in systems");
    std::string cat_action, cat_name;
    cat->add_option("action", cat_action, "list | show")->required()->check(CLI::IsMember({"list", "show"}));
    cat->add_option("name", cat_name, "entry name for show");
    add_params(cat);
    cat->add_option("--out", c_.out, "output file, - for stdout");

    // check
    auto* check = app.add_subcommand("check", "Check a condition on sample points");
    add_common(check);
    std::string condition;
    std::optional<int> level;
    std::optional<double> lambda0, tol;
    std::string box, points_file, phi, ode_initial, times;
    int grid = 32;
    double blowup = 1e6;
    std::optional<double> c1, c2;
    check->add_option("--condition", condition)->required()->check(
        CLI::IsMember({"ufg", "hc", "phc", "oac", "oac2", "kalman", "lyapunov"}));
    check->add_option("--level", level);
    check->add_option("--lambda0", lambda0);
    check->add_option("--box", box, "lo:hi per axis, comma separated");
    check->add_option("--grid", grid)->check(CLI::PositiveNumber);
    check->add_option("--points", points_file, "file with one point per line");
    check->add_option("--tol", tol, "residual or eigenvalue tolerance");
    check->add_option("--blowup", blowup, "coefficient blow-up threshold (ufg)");
    check->add_option("--phi", phi, "Lyapunov function");
    check->add_option("--c1", c1);
    check->add_option("--c2", c2);
    check->add_option("--ode-initial", ode_initial, "initial value of the ODE block (lyapunov)");
    check->add_option("--times", times, "ODE block times (lyapunov)");

    // decompose
    auto* dec = app.add_subcommand("decompose", "Split the drift into parts along and orthogonal to the bracket span");
    add_common(dec);
    std::optional<int> dec_level;
    std::string dec_box, dec_points;
    int dec_grid = 32;
    dec->add_option("--level", dec_level);
    dec->add_option("--points", dec_points);
    dec->add_option("--box", dec_box);
    dec->add_option("--grid", dec_grid)->check(CLI::PositiveNumber);

    // chart
    auto* chart = app.add_subcommand("chart", "Build and verify a local chart");
    add_common(chart);
    std::string chart_x0;
    double eps = 0.1;
    std::size_t chart_samples = 100;
    std::uint64_t chart_seed = 0;
    double chart_tol = 1e-5;
    std::optional<int> chart_level;
    chart->add_option("--x0", chart_x0)->required();
    chart->add_option("--eps", eps);
    chart->add_option("--samples", chart_samples);
    chart->add_option("--seed", chart_seed);
    chart->add_option("--tol", chart_tol);
    chart->add_option("--level", chart_level);

    // simulate, zproc, ranks
    SimFlags sim;
    auto* simulate = app.add_subcommand("simulate", "Simulate paths (CSV)");
    add_common(simulate);
    add_sim(simulate, sim, true);
    auto* zproc = app.add_subcommand("zproc", "Auxiliary process Z_t = exp(-t V0perp) X_t (CSV)");
    add_common(zproc);
    add_sim(zproc, sim, true);
    std::optional<int> z_level;
    zproc->add_option("--level", z_level);
    auto* ranks = app.add_subcommand("ranks", "Rank of the drift-augmented distribution along paths (CSV)");
    add_common(ranks);
    add_sim(ranks, sim, true);
    std::optional<int> r_level;
    ranks->add_option("--level", r_level);

    // malliavin
    auto* mall = app.add_subcommand("malliavin", "Malliavin matrices along paths (JSON)");
    add_common(mall);
    add_sim(mall, sim, false);
    int split = 1;
    double cond = 1e10, block_tol = 1e-6;
    mall->add_option("--split", split)->required();
    mall->add_option("--cond", cond);
    mall->add_option("--block-tol", block_tol);

    // converge
    auto* conv = app.add_subcommand("converge", "KS distances and escape fractions over time (CSV)");
    add_common(conv);
    add_sim(conv, sim, false);
    std::string conv_times, reference, conv_report, conv_tols;
    double escape = 1e6;
    conv->add_option("--times", conv_times)->required();
    conv->add_option("--reference", reference, "per coordinate, ';' separated: normal:MEAN:VAR | dirac:A | none")
        ->required();
    conv->add_option("--escape-radius", escape);
    conv->add_option("--report", conv_report, "also write the JSON report here");
    conv->add_option("--ks-tol", conv_tols, "per-coordinate pass thresholds at the final time");

    // fpresidual
    auto* fp = app.add_subcommand("fpresidual", "Stationary Fokker-Planck residual of a density (JSON)");
    add_common(fp);
    std::string density, fp_grid;
    double fp_tol = 1e-8;
    fp->add_option("--density", density)->required();
    fp->add_option("--grid", fp_grid, "lo:hi:n")->required();
    fp->add_option("--tol", fp_tol);

    // derivative
    auto* der = app.add_subcommand("derivative", "Monte Carlo derivative of the semigroup (JSON)");
    der->set_help_flag("--help", "Print this help message and exit");
    add_common(der);
    add_sim(der, sim, false);
    std::string f_text, direction, der_times;
    std::optional<double> h;
    bool independent = false;
    der->add_option("--f", f_text)->required();
    der->add_option("--direction", direction, "V0..Vd or [e1, ..., eN]")->required();
    der->add_option("--h", h);
    der->add_option("--times", der_times, "defaults to --t");
    der->add_flag("--independent", independent, "independent streams for the two shifted starts");

    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      int code = app.exit(e, out_, err_);
      return code == 0 ? ok : usage;
    }

    std::string command = app.get_subcommands().front()->get_name();
    try {
      if (command == "catalog") return do_catalog(cat_action, cat_name);
      Loaded sys = load(c_.system, parse_params(c_.param_items));
      if (command == "check") {
        if (condition == "kalman") return do_kalman(sys);
        if (condition == "lyapunov") return do_lyapunov(sys, phi, c1, c2, ode_initial, times, box, grid, points_file, tol);
        return do_check(sys, condition, level, lambda0, box, grid, points_file, tol, blowup);
      }
      if (command == "decompose") return do_decompose(sys, dec_level, dec_box, dec_grid, dec_points);
      if (command == "chart") return do_chart(sys, chart_x0, eps, chart_samples, chart_seed, chart_tol, chart_level);
      if (command == "simulate") return do_simulate(sys, sim);
      if (command == "zproc") return do_zproc(sys, sim, z_level);
      if (command == "ranks") return do_ranks(sys, sim, r_level);
      if (command == "malliavin") return do_malliavin(sys, sim, split, cond, block_tol);
      if (command == "converge") return do_converge(sys, sim, conv_times, reference, escape, conv_report, conv_tols);
      if (command == "fpresidual") return do_fp(sys, density, fp_grid, fp_tol);
      if (command == "derivative") return do_derivative(sys, sim, f_text, direction, h, der_times, independent);
      throw UsageError("unknown command");
    } catch (const ParseError& e) {
      return fail(command, "parse_error", e.what(), usage);
    } catch (const UsageError& e) {
      return fail(command, "usage_error", e.what(), usage);
    } catch (const DimensionError& e) {
      return fail(command, "dimension_error", e.what(), usage);
    } catch (const DomainError& e) {
      return fail(command, "domain_error", e.what(), numeric);
    } catch (const NumericError& e) {
      return fail(command, "numeric_error", e.what(), numeric);
    }
  }

 private:
  void add_params(CLI::App* a) { a->add_option("--param", c_.param_items, "NAME=VALUE, repeatable"); }

  void add_common(CLI::App* a) {
    a->add_option("--system", c_.system, "catalog name or system file")->required();
    add_params(a);
    a->add_option("--out", c_.out, "output file, - for stdout");
    a->add_option("--threads", c_.threads, "worker cap; results do not depend on it")->check(CLI::PositiveNumber);
    a->add_option("--rtol", c_.rtol, "relative rank tolerance");
  }

  void add_sim(CLI::App* a, SimFlags& s, bool stride) {
    a->add_option("--x0", s.x0)->required();
    a->add_option("--t", s.t);
    a->add_option("--dt", s.dt);
    a->add_option("--paths", s.paths)->check(CLI::PositiveNumber);
    a->add_option("--seed", s.seed);
    if (stride) a->add_option("--stride", s.stride)->check(CLI::PositiveNumber);
  }

  void emit(const std::string& text) {
    if (c_.out == "-") {
      out_ << text;
      out_.flush();
      return;
    }
    std::ofstream f(c_.out, std::ios::binary);
    if (!f) throw UsageError("cannot write '" + c_.out + "'");
    f << text;
  }

  void emit(const io::json& j) { emit(j.dump(2) + "\n"); }

  int fail(const std::string& command, const std::string& kind, const std::string& msg, int code) {
    io::json j;
    j["schema_version"] = io::kSchemaVersion;
    j["command"] = command;
    j["error"] = {{"kind", kind}, {"message", msg}, {"exit_code", code}};
    err_ << "error: " << msg << "\n";
    try {
      emit(j);
    } catch (const std::exception&) {
    }
    return code;
  }

  io::Metadata meta(std::optional<std::uint64_t> seed = {}, std::optional<double> dt = {},
                    std::optional<int> grid = {}) const {
    return {seed, dt, grid, c_.rtol, c_.threads};
  }

  static int verdict_code(Verdict v) { return v == Verdict::satisfied_on_samples ? ok : violated; }

  Vec point_for(const Loaded& s, const std::string& text) const {
    Vec x = io::parse_point(text);
    if (x.size() != s.system.dim())
      throw DimensionError("point has " + std::to_string(x.size()) + " coordinates, system dim = " +
                           std::to_string(s.system.dim()));
    return x;
  }

  SamplePlan plan_for(const Loaded& s, const std::string& box, int grid, const std::string& points_file,
                      int dim) const {
    if (!points_file.empty()) {
      std::ifstream in(points_file);
      if (!in) throw UsageError("cannot open points file '" + points_file + "'");
      auto pts = io::read_points(in);
      for (const auto& p : pts)
        if (p.size() != dim) throw DimensionError("points file: point has wrong dimension");
      if (pts.empty()) throw UsageError("points file is empty");
      return SamplePlan::explicit_points(std::move(pts));
    }
    std::vector<std::pair<double, double>> b;
    if (!box.empty()) b = io::parse_box(box);
    else if (s.entry) b = std::vector<std::pair<double, double>>(s.entry->sample_box.begin(), s.entry->sample_box.begin() + dim);
    else throw UsageError("--box or --points is required for systems outside the catalog");
    if (static_cast<int>(b.size()) != dim) throw DimensionError("box has " + std::to_string(b.size()) + " axes, expected " + std::to_string(dim));
    return SamplePlan::grid_box(std::move(b), grid);
  }

  static int default_level(const Loaded& s, std::optional<int> level) {
    int m = level ? *level : (s.entry ? s.entry->level : 1);
    if (m < 1) throw UsageError("--level must be at least 1");
    return m;
  }

  SimulationConfig sim_config(const SimFlags& f) const {
    SimulationConfig cfg;
    cfg.dt = f.dt;
    cfg.n_paths = f.paths;
    cfg.seed = f.seed;
    cfg.threads = c_.threads;
    return cfg;
  }

  // -------------------------------------------------------------------------

  int do_catalog(const std::string& action, const std::string& name) {
    if (action == "list") {
      std::string s;
      for (const auto& n : catalog::list()) s += n + "\n";
      emit(s);
      return ok;
    }
    if (name.empty()) throw UsageError("catalog show needs an entry name");
    auto e = catalog::get(name, parse_params(c_.param_items));
    std::ostringstream o;
    o << "# " << e.name << ": " << e.summary << "\n";
    if (!e.limit_law.empty()) o << "# " << e.limit_law << "\n";
    io::write_system(o, e.system);
    emit(o.str());
    return ok;
  }

  int do_check(const Loaded& s, const std::string& condition, std::optional<int> level, std::optional<double> lambda0,
               const std::string& box, int grid, const std::string& points_file, std::optional<double> tol,
               double blowup) {
    const int m = default_level(s, level);
    BracketTable table = build_hierarchy(s.system.fields(), m);
    SamplePlan plan = plan_for(s, box, grid, points_file, s.system.dim());
    ConditionReport rep;
    if (condition == "ufg") rep = check_ufg(table, plan, m, tol.value_or(1e-8), blowup, c_.rtol);
    else if (condition == "hc") rep = check_hormander(table, plan, HormanderVariant::hc, c_.rtol);
    else if (condition == "phc") rep = check_hormander(table, plan, HormanderVariant::phc, c_.rtol);
    else if (condition == "oac") rep = check_oac(table, plan, lambda0, tol.value_or(1e-9), m);
    else rep = check_oac2(table, plan, lambda0, tol.value_or(1e-9), m);
    auto j = io::report_skeleton("check", s.label, s.params, meta({}, {}, points_file.empty() ? std::optional<int>(grid) : std::nullopt));
    io::fill_report(j, rep);
    emit(j);
    return verdict_code(rep.verdict);
  }

  int do_kalman(const Loaded& s) {
    const int n = s.system.dim();
    Mat a(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        Expr d = differentiate(s.system.drift[i], j);
        if (!d.is_constant()) throw UsageError("kalman: the drift is not affine");
        a(i, j) = d.value();
      }
    Mat q(n, s.system.noise_count());
    for (int k = 0; k < s.system.noise_count(); ++k)
      for (int i = 0; i < n; ++i) {
        const Expr& e = s.system.noise[k][i];
        if (!e.is_constant()) throw UsageError("kalman: noise fields must be constant");
        q(i, k) = e.value();
      }
    auto r = check_kalman(a, q, c_.rtol);
    auto j = io::report_skeleton("check", s.label, s.params, meta());
    j["condition"] = "kalman";
    j["verdict"] = r.satisfied ? "satisfied_on_samples" : "violated";
    j["rank"] = r.rank;
    j["dim"] = n;
    emit(j);
    return r.satisfied ? ok : violated;
  }

  int do_lyapunov(const Loaded& s, const std::string& phi_text, std::optional<double> c1, std::optional<double> c2,
                  const std::string& ode_initial, const std::string& times, const std::string& box, int grid,
                  const std::string& points_file, std::optional<double> tol) {
    const auto vars = s.system.variable_names();
    std::optional<LyapunovData> ly = s.entry ? s.entry->lyapunov : std::nullopt;
    Expr phi = !phi_text.empty() ? parse_expression(phi_text, vars, s.params)
               : ly             ? ly->phi
                                : throw UsageError("lyapunov: --phi is required for this system");
    double a = c1 ? *c1 : ly ? ly->c1 : throw UsageError("lyapunov: --c1 is required");
    double b = c2 ? *c2 : ly ? ly->c2 : throw UsageError("lyapunov: --c2 is required");
    Vec zeta0 = ode_initial.empty() ? Vec() : io::parse_point(ode_initial);
    if (ode_initial.empty() && ly && ly->sde_block < s.system.dim())
      throw UsageError("lyapunov: --ode-initial is required for the ODE block");
    const int n = s.system.dim() - static_cast<int>(zeta0.size());
    std::vector<double> ts = times.empty() ? linspace(0.0, 10.0, 101) : io::parse_list(times);
    std::vector<std::pair<double, double>> b_box;
    SamplePlan plan;
    if (!points_file.empty() || !box.empty()) {
      plan = plan_for(s, box, grid, points_file, n);
    } else if (s.entry) {
      plan = SamplePlan::grid_box({s.entry->sample_box.begin(), s.entry->sample_box.begin() + n}, grid);
    } else {
      throw UsageError("lyapunov: --box or --points is required");
    }
    auto rep = check_lyapunov(s.system.fields(), phi, plan, a, b, ts, zeta0, {}, tol.value_or(1e-9));
    auto j = io::report_skeleton("check", s.label, s.params, meta({}, {}, grid));
    io::fill_report(j, rep);
    j["c1"] = a;
    j["c2"] = b;
    emit(j);
    return verdict_code(rep.verdict);
  }

  int do_decompose(const Loaded& s, std::optional<int> level, const std::string& box, int grid,
                   const std::string& points_file) {
    const int m = default_level(s, level);
    BracketTable table = build_hierarchy(s.system.fields(), m);
    auto pts = plan_for(s, box, grid, points_file, s.system.dim()).generate();
    auto j = io::report_skeleton("decompose", s.label, s.params, meta({}, {}, grid));
    double worst = -1;
    for (std::size_t k = 0; k < pts.size(); ++k) {
      auto d = decompose_drift(table, pts[k], c_.rtol);
      io::json r;
      r["index"] = k;
      r["point"] = io::to_json(pts[k]);
      r["parallel"] = io::to_json(d.parallel);
      r["perp"] = io::to_json(d.perp);
      r["residual"] = d.residual;
      r["rank"] = rank_at(table, Distribution::delta, pts[k], c_.rtol);
      j["records"].push_back(r);
      if (d.residual > worst) {
        worst = d.residual;
        j["worst_point"] = io::to_json(pts[k]);
      }
    }
    j["verdict"] = "satisfied_on_samples";
    j["level"] = m;
    emit(j);
    return ok;
  }

  int do_chart(const Loaded& s, const std::string& x0_text, double eps, std::size_t samples, std::uint64_t seed,
               double tol, std::optional<int> level) {
    const int m = default_level(s, level);
    Vec x0 = point_for(s, x0_text);
    BracketTable table = build_hierarchy(s.system.fields(), m);
    std::optional<VectorField> perp = s.entry ? s.entry->v0_perp : std::nullopt;
    Chart c = build_chart(table, x0, eps, c_.rtol, {}, {}, perp);
    auto pts = sample_chart_domain(c, samples, seed);
    auto v = verify_chart_structure(c, table, pts, 1e-5, tol);
    auto j = io::report_skeleton("chart", s.label, s.params, meta(seed));
    j["center"] = io::to_json(x0);
    j["rank"] = c.rank();
    j["radius"] = eps;
    j["level"] = m;
    io::json basis = io::json::array();
    for (const auto& a : c.basis_indices()) basis.push_back(a.to_string());
    j["basis"] = basis;
    j["uses_drift_direction"] = c.uses_drift_direction();
    j["verification"] = {{"samples", v.samples},
                         {"max_transverse", v.max_transverse},
                         {"max_sensitivity", v.max_sensitivity},
                         {"max_round_trip", v.max_round_trip},
                         {"transverse_ok", v.transverse_ok},
                         {"sensitivity_ok", v.sensitivity_ok}};
    bool pass = v.transverse_ok && v.sensitivity_ok;
    j["verdict"] = pass ? "satisfied_on_samples" : "violated";
    emit(j);
    return pass ? ok : violated;
  }

  int paths_status(const PathEnsemble& e) {
    if (e.blow_up_count == 0) return ok;
    err_ << "warning: " << e.blow_up_count << " path(s) blew up\n";
    return numeric;
  }

  int do_simulate(const Loaded& s, const SimFlags& f) {
    auto e = simulate_paths(s.system, point_for(s, f.x0), f.t, sim_config(f), f.stride);
    std::ostringstream o;
    io::write_paths_csv(o, e);
    emit(o.str());
    return paths_status(e);
  }

  int do_zproc(const Loaded& s, const SimFlags& f, std::optional<int> level) {
    auto e = simulate_paths(s.system, point_for(s, f.x0), f.t, sim_config(f), f.stride);
    PathEnsemble z;
    if (s.entry && s.entry->v0_perp) {
      z = auxiliary_process(e, CompiledField(*s.entry->v0_perp), {}, c_.threads);
    } else {
      auto table = std::make_shared<const BracketTable>(build_hierarchy(s.system.fields(), default_level(s, level)));
      z = auxiliary_process(e, v0_perp_field(table, c_.rtol), {}, c_.threads);
    }
    std::ostringstream o;
    io::write_paths_csv(o, z);
    emit(o.str());
    return paths_status(e);
  }

  int do_ranks(const Loaded& s, const SimFlags& f, std::optional<int> level) {
    auto e = simulate_paths(s.system, point_for(s, f.x0), f.t, sim_config(f), f.stride);
    BracketTable table = build_hierarchy(s.system.fields(), default_level(s, level));
    std::ostringstream o;
    o << "path_id,time,rank\n";
    bool monotone = true;
    for (std::size_t p = 0; p < e.n_paths; ++p) {
      auto r = rank_along_path(e, p, table, c_.rtol);
      for (std::size_t k = 0; k < r.size(); ++k) {
        if (k > 0 && r[k].rank > r[k - 1].rank) monotone = false;
        o << p << ',' << io::format_double(r[k].time) << ',' << r[k].rank << '\n';
      }
    }
    emit(o.str());
    if (!monotone) {
      err_ << "rank increased along a path\n";
      return violated;
    }
    return paths_status(e);
  }

  int do_malliavin(const Loaded& s, const SimFlags& f, int split, double cond, double block_tol) {
    Vec x0 = point_for(s, f.x0);
    const std::size_t n = f.paths;
    std::vector<MalliavinReport> reps(n);
    std::vector<double> inv_err(n);
    ufg::detail::parallel_paths(n, c_.threads, [&](std::size_t p) {
      auto path = simulate_variational(s.system, x0, f.t, f.dt, f.seed, p);
      reps[p] = block_and_rank_check(malliavin_matrix(path, s.system), split, cond, block_tol);
      inv_err[p] = path.max_inverse_error;
    });
    auto j = io::report_skeleton("malliavin", s.label, s.params, meta(f.seed, f.dt));
    bool all = true;
    double worst = -1;
    for (std::size_t p = 0; p < n; ++p) {
      const auto& r = reps[p];
      bool good = r.block_holds && r.upper_invertible;
      all = all && good;
      io::json rec;
      rec["path_id"] = p;
      rec["matrix"] = io::to_json(r.matrix);
      rec["off_block_max"] = r.off_block_max;
      rec["upper_condition"] = std::isfinite(r.upper_condition) ? io::json(r.upper_condition) : io::json(nullptr);
      rec["min_eigenvalue"] = r.min_eigenvalue;
      rec["max_eigenvalue"] = r.max_eigenvalue;
      rec["block_holds"] = r.block_holds;
      rec["upper_invertible"] = r.upper_invertible;
      rec["max_inverse_error"] = inv_err[p];
      j["records"].push_back(rec);
      if (r.off_block_max > worst) {
        worst = r.off_block_max;
        j["worst_point"] = p;
      }
    }
    j["split"] = split;
    j["t"] = f.t;
    j["verdict"] = all ? "satisfied_on_samples" : "violated";
    emit(j);
    return all ? ok : violated;
  }

  static std::vector<std::optional<Reference>> parse_reference(const std::string& spec, int dim) {
    auto items = io::detail::split_top(spec, ';');
    if (static_cast<int>(items.size()) != dim)
      throw DimensionError("--reference needs " + std::to_string(dim) + " ';'-separated entries");
    std::vector<std::optional<Reference>> out;
    for (const auto& it : items) {
      auto parts = io::detail::split_top(it, ':');
      if (parts[0] == "none" && parts.size() == 1) out.emplace_back();
      else if (parts[0] == "normal" && parts.size() == 3)
        out.push_back(Reference::gaussian(io::detail::parse_real(parts[1], "mean"), io::detail::parse_real(parts[2], "variance")));
      else if (parts[0] == "dirac" && parts.size() == 2)
        out.push_back(Reference::dirac(io::detail::parse_real(parts[1], "atom")));
      else throw UsageError("reference entry '" + it + "' is not normal:MEAN:VAR, dirac:A or none");
    }
    return out;
  }

  int do_converge(const Loaded& s, const SimFlags& f, const std::string& times, const std::string& reference,
                  double escape, const std::string& report, const std::string& tols) {
    auto refs = parse_reference(reference, s.system.dim());
    std::vector<double> tol = tols.empty() ? std::vector<double>{} : io::parse_list(tols);
    auto r = convergence_study(s.system, point_for(s, f.x0), io::parse_list(times), refs, sim_config(f), escape, tol);
    std::ostringstream o;
    io::write_convergence_csv(o, r);
    emit(o.str());
    bool pass = std::all_of(r.pass.begin(), r.pass.end(), [](const auto& p) { return !p || *p; });
    if (!report.empty()) {
      auto j = io::report_skeleton("converge", s.label, s.params, meta(f.seed, f.dt));
      j["verdict"] = pass ? "satisfied_on_samples" : "violated";
      j["convergence"] = io::to_json(r);
      std::ofstream rf(report, std::ios::binary);
      if (!rf) throw UsageError("cannot write '" + report + "'");
      rf << j.dump(2) << "\n";
    }
    if (!pass) return violated;
    return r.blow_up_count ? numeric : ok;
  }

  int do_fp(const Loaded& s, const std::string& density, const std::string& grid, double tol) {
    Expr rho = parse_expression(density, s.system.variable_names(), s.params);
    auto r = fokker_planck_residual(s.system, rho, io::parse_grid(grid));
    auto j = io::report_skeleton("fpresidual", s.label, s.params, meta({}, {}, static_cast<int>(r.grid.size())));
    for (std::size_t k = 0; k < r.grid.size(); ++k) j["records"].push_back({{"z", r.grid[k]}, {"residual", r.profile[k]}});
    j["max_abs_residual"] = r.max_abs;
    j["skipped"] = r.skipped;
    j["operator"] = print(fokker_planck_operator(s.system, rho), s.system.variable_names());
    bool pass = r.max_abs <= tol;
    j["verdict"] = pass ? "satisfied_on_samples" : "violated";
    emit(j);
    return pass ? ok : violated;
  }

  int do_derivative(const Loaded& s, const SimFlags& f, const std::string& f_text, const std::string& direction,
                    std::optional<double> h, const std::string& times, bool independent) {
    const auto vars = s.system.variable_names();
    Expr fe = parse_expression(f_text, vars, s.params);
    VectorField dir = direction_field(s, direction);
    std::vector<double> ts = times.empty() ? std::vector<double>{f.t} : io::parse_list(times);
    Vec x0 = point_for(s, f.x0);
    auto est = semigroup_derivative(s.system, fe, dir, x0, ts, sim_config(f), h, !independent);
    auto j = io::report_skeleton("derivative", s.label, s.params, meta(f.seed, f.dt));
    for (std::size_t k = 0; k < ts.size(); ++k)
      j["records"].push_back({{"time", ts[k]}, {"estimate", est[k].value}, {"stderr", est[k].stderr_}});
    j["h"] = h ? *h : 1e-3 * (1.0 + x0.norm());
    j["common_random_numbers"] = !independent;
    j["verdict"] = "satisfied_on_samples";
    emit(j);
    return ok;
  }

  static VectorField direction_field(const Loaded& s, const std::string& d) {
    if (d.size() >= 2 && d[0] == 'V' && std::all_of(d.begin() + 1, d.end(), [](unsigned char c) { return std::isdigit(c); })) {
      int i = std::stoi(d.substr(1));
      if (i > s.system.noise_count()) throw UsageError("direction " + d + " does not exist");
      return s.system.fields()[i];
    }
    std::string body = d;
    if (body.size() >= 2 && body.front() == '[' && body.back() == ']') body = body.substr(1, body.size() - 2);
    auto comps = io::detail::split_top(body);
    return VectorField::parse(comps, s.system.variable_names(), s.params);
  }

  std::ostream& out_;
  std::ostream& err_;
  Common c_;
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return Runner(out, err).run(argc, argv);
}

}  // namespace ufg::cli
