#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "ufg/cli.hpp"

using namespace ufg;
namespace fs = std::filesystem;

namespace {

const char* kRandomCircles =
    "dim = 2\n"
    "noise = 1\n"
    "vars = x, y\n"
    "V0 = [-y, x]\n"
    "V1 = [x, y]\n";

SDESystem parse(const std::string& text) {
  std::istringstream in(text);
  return io::parse_system(in);
}

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "ufgtool");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = ufg::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) { return fs::temp_directory_path() / ("ufg_test_" + name); }

template <class E>
std::string message_of(const std::string& text) {
  try {
    parse(text);
  } catch (const E& e) {
    return e.what();
  }
  ADD_FAILURE() << "no exception";
  return {};
}

}  // namespace

TEST(SystemFile, ParsesRandomCircles) {
  auto s = parse(kRandomCircles);
  auto e = catalog::get("random-circles");
  EXPECT_EQ(s.dim(), 2);
  EXPECT_EQ(s.noise_count(), 1);
  EXPECT_TRUE(s.drift == e.system.drift);
  EXPECT_TRUE(s.noise[0] == e.system.noise[0]);
}

TEST(SystemFile, RoundTripsThroughCatalogExport) {
  for (const auto& name : catalog::list()) {
    SCOPED_TRACE(name);
    auto e = catalog::get(name);
    std::ostringstream o;
    io::write_system(o, e.system, "export");
    auto back = parse(o.str());
    auto a = e.system.fields(), b = back.fields();
    ASSERT_EQ(a.size(), b.size());
    for (const auto& x : test::points_in(e, 10))
      for (std::size_t i = 0; i < a.size(); ++i)
        EXPECT_LE(test::max_abs(a[i].evaluate(x) - b[i].evaluate(x)), 1e-12 * (1 + test::max_abs(a[i].evaluate(x))));
  }
  // and the shipped sample file matches the export exactly
  std::ostringstream o;
  io::write_system(o, catalog::get("random-circles").system);
  auto shipped = io::load_system_file(UFG_DATA_DIR "/random-circles.sys");
  auto exported = parse(o.str());
  EXPECT_TRUE(shipped.drift == exported.drift);
  EXPECT_TRUE(shipped.noise[0] == exported.noise[0]);
}

TEST(SystemFile, DimensionMismatchNamesField) {
  std::string text = "dim = 2\nnoise = 1\nV0 = [1, 0]\nV1 = [x1, x2, 0]\n";
  auto msg = message_of<DimensionError>(text);
  EXPECT_NE(msg.find("V1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("line 4"), std::string::npos) << msg;
}

TEST(SystemFile, UnknownFunctionNamesIdentifier) {
  std::string text = "dim = 1\nnoise = 1\nvars = x\nV0 = [frobnicate(x)]\nV1 = [1]\n";
  auto msg = message_of<ParseError>(text);
  EXPECT_NE(msg.find("frobnicate"), std::string::npos) << msg;
  EXPECT_NE(msg.find("V0"), std::string::npos) << msg;
}

TEST(SystemFile, StructuralErrors) {
  EXPECT_THROW(parse("noise = 1\nV0 = [1]\nV1 = [1]\n"), ParseError);             // no dim
  EXPECT_THROW(parse("dim = 1\nnoise = 1\nV0 = [1]\n"), ParseError);              // no V1
  EXPECT_THROW(parse("dim = 1\nnoise = 1\nV0 = [1]\nV0 = [2]\nV1 = [1]\n"), ParseError);
  EXPECT_THROW(parse("dim = 1\nnoise = 1\nV0 = [1]\nV1 = [1]\nV2 = [1]\n"), ParseError);
  EXPECT_THROW(parse("dim = 1.5\nnoise = 1\nV0 = [1]\nV1 = [1]\n"), ParseError);
  EXPECT_THROW(parse("dim = 2\nnoise = 1\nvars = x\nV0 = [1, 1]\nV1 = [1, 1]\n"), DimensionError);
  EXPECT_THROW(parse("dim = 1\nnoise = 1\nwhat = 3\n"), ParseError);
}

TEST(SystemFile, ParametersAndOverrides) {
  std::string text = "# comment\ndim = 1\nnoise = 1\nvars = z\nparam k = 2\nV0 = [-k*z]  # drift\nV1 = [1]\n";
  std::vector<double> z{1.5};
  EXPECT_NEAR(evaluate(parse(text).drift.components()[0], z), -3.0, 1e-15);
  std::istringstream in(text);
  auto s = io::parse_system(in, "f", {{"k", 4.0}});
  EXPECT_NEAR(evaluate(s.drift.components()[0], z), -6.0, 1e-15);
  std::istringstream in2(text);
  EXPECT_THROW(io::parse_system(in2, "f", {{"q", 1.0}}), UsageError);
}

TEST(Specs, BoxGridPoint) {
  auto b = io::parse_box("-3:3, -1e-2:2");
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0], std::make_pair(-3.0, 3.0));
  EXPECT_EQ(b[1], std::make_pair(-1e-2, 2.0));
  EXPECT_THROW(io::parse_box("3:-3"), UsageError);
  EXPECT_THROW(io::parse_box("1"), UsageError);
  auto g = io::parse_grid("0.2:6:5");
  ASSERT_EQ(g.size(), 5u);
  EXPECT_DOUBLE_EQ(g.front(), 0.2);
  EXPECT_DOUBLE_EQ(g.back(), 6.0);
  EXPECT_THROW(io::parse_grid("0:1"), UsageError);
  EXPECT_THROW(io::parse_grid("0:1:2.5"), UsageError);
  Vec p = io::parse_point("1, -2.5e-1");
  EXPECT_EQ(p.size(), 2);
  EXPECT_DOUBLE_EQ(p[1], -0.25);
  EXPECT_THROW(io::parse_point("1, x"), UsageError);
  std::istringstream pts("# header\n1,2\n\n3,4\n");
  EXPECT_EQ(io::read_points(pts).size(), 2u);
}

TEST(Specs, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.283185307179586}) EXPECT_EQ(std::stod(io::format_double(v)), v);
}

TEST(Cli, SinfieldsUfgPasses) {
  auto r = invoke({"check", "--system", "sinfields", "--condition", "ufg", "--level", "1", "--box", "-3:3,-3:3", "--grid",
                "32"});
  EXPECT_EQ(r.code, 0) << r.err;
  auto j = io::json::parse(r.out);
  for (const char* k : {"schema_version", "command", "system", "params", "verdict", "worst_point", "records", "metadata"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["schema_version"], 1);
  for (const char* k : {"seed", "dt", "grid", "rtol"}) EXPECT_TRUE(j["metadata"].contains(k)) << k;
  EXPECT_EQ(j["metadata"]["grid"], 32);
}

TEST(Cli, GrushinOacViolated) {
  auto r = invoke({"check", "--system", "grushin", "--param", "k=-1", "--condition", "oac", "--lambda0", "0.5"});
  EXPECT_EQ(r.code, 2) << r.err;
  EXPECT_EQ(io::json::parse(r.out)["verdict"], "violated");
  auto ok = invoke({"check", "--system", "grushin", "--param", "k=1", "--condition", "oac", "--lambda0", "0.5"});
  EXPECT_EQ(ok.code, 0) << ok.err;
}

TEST(Cli, UsageErrors) {
  auto r = invoke({"check", "--system", "no-such-system", "--condition", "ufg"});
  EXPECT_EQ(r.code, 3);
  auto j = io::json::parse(r.out);
  EXPECT_EQ(j["error"]["kind"], "usage_error");
  EXPECT_EQ(j["error"]["exit_code"], 3);
  EXPECT_EQ(invoke({"check", "--system", "gbm", "--condition", "bogus"}).code, 3);
  EXPECT_EQ(invoke({"simulate", "--system", "gbm"}).code, 3);  // --x0 missing
  EXPECT_EQ(invoke({"simulate", "--system", "gbm", "--x0", "1,2"}).code, 3);
  EXPECT_EQ(invoke({}).code, 3);
}

TEST(Cli, SystemFileErrorsAreParseErrors) {
  auto p = scratch("bad.sys");
  std::ofstream(p) << "dim = 1\nnoise = 1\nV0 = [frobnicate(x1)]\nV1 = [1]\n";
  auto r = invoke({"check", "--system", p.string(), "--condition", "hc"});
  EXPECT_EQ(r.code, 3);
  auto j = io::json::parse(r.out);
  EXPECT_EQ(j["error"]["kind"], "parse_error");
  EXPECT_NE(j["error"]["message"].get<std::string>().find("frobnicate"), std::string::npos);
  fs::remove(p);
}

TEST(Cli, SimulateIsDeterministic) {
  std::vector<std::string> base{"simulate", "--system", "random-circles", "--x0", "1,0", "--t", "1.5707963", "--dt",
                                "0.001",    "--paths",  "100",            "--seed", "42", "--stride", "100"};
  auto a = invoke(base), b = invoke(base);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.out.substr(0, a.out.find('\n')), "path_id,time,x1,x2");
  auto threaded = base;
  threaded.insert(threaded.end(), {"--threads", "4"});
  EXPECT_EQ(invoke(threaded).out, a.out);
  auto other = base;
  other.back() = "50";
  EXPECT_NE(invoke(other).out, a.out);
}

TEST(Cli, OutFileMatchesStdout) {
  auto p = scratch("paths.csv");
  std::vector<std::string> base{"simulate", "--system", "sine-ou", "--x0", "0,4", "--t", "0.5", "--paths", "5",
                                "--seed",   "3",        "--stride", "50"};
  auto to_stdout = invoke(base);
  auto with_file = base;
  with_file.insert(with_file.end(), {"--out", p.string()});
  auto r = invoke(with_file);
  EXPECT_EQ(r.code, 0);
  EXPECT_TRUE(r.out.empty());
  EXPECT_EQ(slurp(p), to_stdout.out);
  fs::remove(p);
}

TEST(Cli, MalliavinAndConvergeDeterministic) {
  std::vector<std::string> m{"malliavin", "--system", "grushin", "--x0", "0,1", "--t", "0.5", "--paths", "8",
                             "--seed",    "9",        "--split",  "1"};
  auto a = invoke(m);
  EXPECT_EQ(a.code, 0) << a.err;
  m.insert(m.end(), {"--threads", "3"});
  EXPECT_EQ(invoke(m).out, a.out);
  std::vector<std::string> c{"converge", "--system", "grushin", "--x0", "0,1", "--paths", "200", "--seed", "5",
                             "--times",  "0.5,1",    "--reference", "normal:0:0.8646647167633873;none"};
  auto ca = invoke(c);
  EXPECT_NE(ca.code, 3) << ca.err;
  c.insert(c.end(), {"--threads", "2"});
  EXPECT_EQ(invoke(c).out, ca.out);
}

TEST(Cli, CatalogListAndShow) {
  auto l = invoke({"catalog", "list"});
  EXPECT_EQ(l.code, 0);
  for (const auto& n : catalog::list()) EXPECT_NE(l.out.find(n + "\n"), std::string::npos);
  auto s = invoke({"catalog", "show", "random-circles"});
  EXPECT_EQ(s.code, 0);
  auto sys = parse(s.out);
  EXPECT_TRUE(sys.drift == catalog::get("random-circles").system.drift);
  EXPECT_EQ(invoke({"catalog", "show"}).code, 3);
  EXPECT_EQ(invoke({"catalog", "show", "sine-ou", "--param", "k=0.5"}).code, 3);
}

TEST(Cli, OtherSubcommandsRun) {
  EXPECT_EQ(invoke({"check", "--system", "linear", "--condition", "kalman"}).code, 0);
  EXPECT_EQ(invoke({"check", "--system", "ufg-heisenberg", "--condition", "phc"}).code, 2);
  EXPECT_EQ(invoke({"decompose", "--system", "ufg-heisenberg", "--grid", "4"}).code, 0);
  EXPECT_EQ(invoke({"chart", "--system", "random-circles", "--x0", "1,0", "--samples", "20"}).code, 0);
  EXPECT_EQ(invoke({"fpresidual", "--system", "circle-line", "--density",
                 "exp(-1/(1-cos(z)))/(1-cos(z))", "--grid", "0.2:6.08:50"}).code, 0);
  auto z = invoke({"zproc", "--system", "random-circles", "--x0", "1,0", "--t", "0.1", "--paths", "3"});
  EXPECT_EQ(z.code, 0) << z.err;
  auto rk = invoke({"ranks", "--system", "ufg-heisenberg", "--x0", "1,0,0", "--t", "0.1", "--paths", "3"});
  EXPECT_EQ(rk.code, 0) << rk.err;
  auto d = invoke({"derivative", "--system", "grushin", "--param", "k=0.5", "--x0", "0,1", "--t", "0.5", "--paths", "200",
                "--f", "sin(z)", "--direction", "V1"});
  EXPECT_EQ(d.code, 0) << d.err;
}
