// End-to-end checks of the command-line tool: exit codes, file formats and
// manifest-based reproducibility. Takes the binary path as argv[1].

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ifa/io.hpp"

namespace fs = std::filesystem;

namespace {

std::string g_cli;
int g_failures = 0;

void expect(bool ok, const std::string& what) {
  std::printf("%s  %s\n", ok ? "ok  " : "FAIL", what.c_str());
  if (!ok) ++g_failures;
}

struct CliResult {
  int code;
  std::string out;
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = g_cli + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, "popen failed"};
  std::string out;
  char buf[512];
  while (std::size_t got = std::fread(buf, 1, sizeof(buf), pipe)) out.append(buf, got);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: cli_check <path-to-ifa-binary>\n");
    return 2;
  }
  g_cli = argv[1];
  const fs::path dir = fs::temp_directory_path() / "ifa_cli_tests";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string d = dir.string() + "/";

  // generate: determinism and eigenvalue report
  {
    const CliResult first = run_cli("generate --n 10 --m 5 --c 2 --seed 1 --out " + d + "p1");
    expect(first.code == 0, "generate exits 0");
    expect(first.out.find("positive definite") != std::string::npos,
           "generate reports definiteness");
    run_cli("generate --n 10 --m 5 --c 2 --seed 1 --out " + d + "p2");
    expect(slurp(d + "p1_sigma.csv") == slurp(d + "p2_sigma.csv"),
           "same seed gives byte-identical sigma");
    expect(slurp(d + "p1_A.csv") == slurp(d + "p2_A.csv"), "same seed gives identical A");

    const CliResult bad = run_cli("generate --n 3 --m 5 --c 2 --seed 1 --out " + d + "bad");
    expect(bad.code == 2, "m > n is a usage error (exit 2)");
  }

  // fit: strict budget hits max iterations (exit 3), loose tolerance converges
  {
    const CliResult strict =
        run_cli("fit --sigma " + d + "p1_sigma.csv --k 5 --engine alt --max-iters 80"
                " --div-tol 1e-300 --residual-tol 1e-300 --seed 3 --trace " + d + "t_strict.csv");
    expect(strict.code == 3, "unconverged fit exits 3");

    const CliResult loose =
        run_cli("fit --sigma " + d + "p1_sigma.csv --k 5 --engine alt --max-iters 4000"
                " --div-tol 1e-6 --seed 3 --trace " + d + "t.csv");
    expect(loose.code == 0, "converged fit exits 0");

    std::ifstream trace(d + "t.csv");
    std::string header;
    std::getline(trace, header);
    expect(header == "iter,divergence,l2,gain,r_H,r_D,min_D", "trace header is stable");

    const ifa::Matrix h = ifa::read_matrix(d + "t_H.csv");
    const ifa::Vector dd = ifa::read_vector(d + "t_D.csv");
    expect(h.rows() == 10 && h.cols() == 5, "loading sidecar has the right shape");
    expect(dd.size() == 10 && dd.minCoeff() >= 0.0, "noise sidecar is nonnegative");

    const ifa::RunManifest manifest = ifa::read_manifest(d + "t.csv.manifest.json");
    expect(manifest.command == "fit" && manifest.engines == std::vector<std::string>{"alt"},
           "manifest records the command");
    bool checksums_ok = !manifest.checksums.empty();
    for (const auto& [path, sum] : manifest.checksums) {
      checksums_ok = checksums_ok && sum == ifa::checksum_hex(ifa::fnv1a64_file(path));
    }
    expect(checksums_ok, "manifest checksums match the artifacts");

    // Reproducibility: rerun with the manifest's recorded inputs and compare bytes.
    std::ostringstream rerun;
    rerun << "fit --sigma " << manifest.inputs.at("sigma") << " --k " << manifest.k
          << " --engine " << manifest.engines[0] << " --max-iters "
          << manifest.config.max_iters << " --div-tol " << manifest.config.div_tol
          << " --seed " << manifest.seed << " --trace " << d << "t_rerun.csv";
    const CliResult again = run_cli(rerun.str());
    expect(again.code == 0, "manifest-driven rerun exits 0");
    expect(slurp(d + "t.csv") == slurp(d + "t_rerun.csv"),
           "manifest-driven rerun is byte-identical");
  }

  // fit: the singular engine on an exactly realizable covariance
  {
    ifa::Matrix s(2, 2);
    s << 2, 1, 1, 1;
    ifa::write_matrix(s, d + "exact.csv");
    const CliResult fit =
        run_cli("fit --sigma " + d + "exact.csv --k 1 --engine singular --n2 1 --trace " +
                d + "sing.csv");
    expect(fit.code == 0, "singular fit exits 0");
    expect(fit.out.find("one-step convergence") != std::string::npos,
           "singular n2 = k run stops in one step");

    ifa::Matrix wide(3, 3);
    wide << 2, 1, 0.5, 1, 2, 0.25, 0.5, 0.25, 2;
    ifa::write_matrix(wide, d + "wide.csv");
    const CliResult infeasible =
        run_cli("fit --sigma " + d + "wide.csv --k 1 --engine singular --n2 2 --trace " +
                d + "sing2.csv");
    expect(infeasible.code == 5, "n2 > k exits 5");
  }

  // fit: bad inputs
  {
    ifa::Vector v(3);
    v << 1, 2, 3;
    ifa::write_matrix(ifa::Matrix(v * v.transpose()), d + "rank1.csv");
    const CliResult notpd =
        run_cli("fit --sigma " + d + "rank1.csv --k 1 --engine alt --trace " + d + "x.csv");
    expect(notpd.code == 4, "semidefinite input exits 4");
    expect(notpd.out.find("eigenvalues") != std::string::npos,
           "semidefinite input reports the eigenvalue range");

    std::ofstream(d + "ragged.csv") << "1,2\n3\n";
    const CliResult ragged =
        run_cli("fit --sigma " + d + "ragged.csv --k 1 --engine alt --trace " + d + "y.csv");
    expect(ragged.code == 4, "ragged input exits 4");

    const CliResult unknown =
        run_cli("fit --sigma " + d + "exact.csv --k 1 --engine newton --trace " + d + "z.csv");
    expect(unknown.code == 2, "unknown engine exits 2");

    const CliResult missing = run_cli("fit --k 1 --engine alt --trace " + d + "w.csv");
    expect(missing.code == 2, "missing required flag exits 2");
  }

  // compare: matched-start traces for two engines
  {
    const CliResult cmp =
        run_cli("compare --sigma " + d + "p1_sigma.csv --k 5 --engines alt,em"
                " --max-iters 60 --div-tol 1e-300 --residual-tol 1e-300 --seed 3 --trace " +
                d + "cmp.csv");
    expect(cmp.code == 3, "budget-limited compare exits 3");
    expect(cmp.out.find("divergence ratio alt/em") != std::string::npos,
           "compare prints the final ratio");

    std::ifstream trace(d + "cmp.csv");
    std::string header;
    std::getline(trace, header);
    expect(header == "iter,divergence_alt,l2_alt,divergence_em,l2_em",
           "compare header carries one divergence and l2 column per engine");
    int rows = 0;
    std::string line;
    while (std::getline(trace, line)) ++rows;
    expect(rows == 60, "compare emits one row per iteration");
  }

  // check: exactness report and stationarity report
  {
    const CliResult exact = run_cli("check --sigma " + d + "exact.csv --n2 1 --k 1");
    expect(exact.code == 0 && exact.out.find("exactly realizable") != std::string::npos,
           "check reports exact realizability");

    const CliResult inexact = run_cli("check --sigma " + d + "p1_sigma.csv --n2 2");
    expect(inexact.code == 0 && inexact.out.find("not exactly realizable") != std::string::npos,
           "check reports a failed exactness test");

    const CliResult stationary = run_cli("check --sigma " + d + "exact.csv --n2 1 --H " + d +
                                         "sing_H.csv --D " + d + "sing_D.csv");
    expect(stationary.code == 0 &&
               stationary.out.find("stationarity structure residuals") != std::string::npos,
           "check reports stationarity residuals for fitted parameters");
  }

  if (g_failures > 0) std::printf("%d cli check(s) failed\n", g_failures);
  return g_failures;
}
