// Command-line front end: synthetic problem generation, model fitting with
// any of the five engines, side-by-side engine comparison, and exactness /
// stationarity checks. All matrices travel as row-major CSV.

#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ifa/ifa.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitMaxIters = 3;
constexpr int kExitBadMatrix = 4;
constexpr int kExitInfeasible = 5;

std::vector<std::string> collect_argv(int argc, char** argv) {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(argc));
  for (int i = 0; i < argc; ++i) out.emplace_back(argv[i]);
  return out;
}

// trace.csv -> trace_H.csv / trace_D.csv
std::string sidecar_path(const std::string& path, const std::string& tag) {
  const std::size_t dot = path.rfind('.');
  const std::size_t slash = path.find_last_of("/\\");
  const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
  if (!has_ext) return path + "_" + tag + ".csv";
  return path.substr(0, dot) + "_" + tag + path.substr(dot);
}

void add_checksum(ifa::RunManifest& manifest, const std::string& path) {
  manifest.checksums[path] = ifa::checksum_hex(ifa::fnv1a64_file(path));
}

struct FitOptions {
  std::string sigma_path;
  std::string trace_path;
  std::string engines_csv = "alt";
  int k = 1;
  int n2 = -1;
  std::uint64_t seed = 1;
  ifa::SolverConfig config;
};

void add_fit_options(CLI::App* cmd, FitOptions& opt, bool multi_engine) {
  cmd->add_option("--sigma", opt.sigma_path, "input covariance CSV")->required();
  cmd->add_option("--k", opt.k, "number of factors")->required();
  if (multi_engine) {
    cmd->add_option("--engines", opt.engines_csv, "comma-separated engines (alt|lpd|hh|em)");
  } else {
    cmd->add_option("--engine", opt.engines_csv, "engine (alt|lpd|hh|em|singular)");
  }
  cmd->add_option("--n2", opt.n2, "trailing zero-noise block size (singular engine)");
  cmd->add_option("--max-iters", opt.config.max_iters, "iteration budget");
  cmd->add_option("--div-tol", opt.config.div_tol, "stop when the divergence decrease drops below");
  cmd->add_option("--residual-tol", opt.config.residual_tol,
                  "stop when stationarity residuals drop below");
  cmd->add_option("--record-every", opt.config.record_every, "trace stride");
  cmd->add_option("--seed", opt.seed, "seed for the default initialization");
  cmd->add_option("--trace", opt.trace_path, "output trace CSV")->required();
}

ifa::SolverInit build_init(ifa::Engine engine, const ifa::CovMatrix& sigma, const FitOptions& opt) {
  if (engine == ifa::Engine::Singular) {
    if (opt.n2 < 1) throw ifa::DomainError("the singular engine requires --n2 >= 1");
    const ifa::SingularPattern pattern(sigma.dim() - opt.n2, opt.n2);
    return ifa::make_singular_init(sigma, pattern, opt.k, opt.seed);
  }
  return ifa::make_init(engine, ifa::default_init(sigma, opt.k, opt.seed));
}

ifa::RunManifest base_manifest(const std::string& command, const std::vector<std::string>& argv,
                               const FitOptions& opt) {
  ifa::RunManifest manifest;
  manifest.command = command;
  manifest.argv = argv;
  manifest.inputs["sigma"] = opt.sigma_path;
  manifest.k = opt.k;
  if (opt.n2 >= 1) manifest.n2 = opt.n2;
  manifest.config = opt.config;
  manifest.seed = opt.seed;
  return manifest;
}

int run_generate(ifa::Index n, ifa::Index m, double c, std::uint64_t seed, const std::string& out_prefix,
                 const std::vector<std::string>& argv) {
  const ifa::GeneratorSpec spec{n, m, c, seed};
  spec.validate();
  const ifa::GeneratedProblem problem = ifa::generate_sigma(spec);

  const std::string sigma_path = out_prefix + "_sigma.csv";
  const std::string a_path = out_prefix + "_A.csv";
  const std::string d_path = out_prefix + "_d.csv";
  const std::string manifest_path = out_prefix + "_manifest.json";
  ifa::write_matrix(problem.sigma.mat(), sigma_path);
  ifa::write_matrix(problem.a, a_path);
  ifa::write_vector(problem.d, d_path);

  ifa::RunManifest manifest;
  manifest.command = "generate";
  manifest.argv = argv;
  manifest.seed = seed;
  manifest.outputs["sigma"] = sigma_path;
  manifest.outputs["A"] = a_path;
  manifest.outputs["d"] = d_path;
  add_checksum(manifest, sigma_path);
  add_checksum(manifest, a_path);
  add_checksum(manifest, d_path);
  ifa::write_manifest(manifest, manifest_path);

  std::cout << "wrote " << sigma_path << " (" << n << "x" << n << ")\n";
  if (problem.positive_definite) {
    std::cout << "sigma is positive definite; eigenvalues in ["
              << problem.sigma.min_eigenvalue() << ", " << problem.sigma.max_eigenvalue()
              << "]\n";
  } else {
    std::cout << "warning: sigma is only positive semidefinite (smallest eigenvalue "
              << problem.sigma.min_eigenvalue() << "); usable for rank experiments only\n";
  }
  return kExitOk;
}

int run_fit(const FitOptions& opt, const std::vector<std::string>& argv) {
  const ifa::Engine engine = ifa::engine_from_string(opt.engines_csv);
  const ifa::CovMatrix sigma = ifa::read_cov_matrix(opt.sigma_path);
  if (!sigma.is_pd()) {
    std::cerr << "error: input covariance is not positive definite; eigenvalues in ["
              << sigma.min_eigenvalue() << ", " << sigma.max_eigenvalue() << "]\n";
    return kExitBadMatrix;
  }

  const ifa::SolverInit init = build_init(engine, sigma, opt);
  const ifa::SolverTrace trace = ifa::run(engine, sigma, init, opt.config);

  ifa::write_trace_csv(trace, opt.trace_path);
  const std::string h_path = sidecar_path(opt.trace_path, "H");
  const std::string d_path = sidecar_path(opt.trace_path, "D");
  ifa::write_matrix(trace.final_params->H, h_path);
  ifa::write_vector(trace.final_params->d, d_path);

  ifa::RunManifest manifest = base_manifest("fit", argv, opt);
  manifest.engines = {ifa::to_string(engine)};
  manifest.outputs["trace"] = opt.trace_path;
  manifest.outputs["H"] = h_path;
  manifest.outputs["D"] = d_path;
  add_checksum(manifest, opt.trace_path);
  add_checksum(manifest, h_path);
  add_checksum(manifest, d_path);
  ifa::write_manifest(manifest, opt.trace_path + ".manifest.json");

  const double final_div = trace.rows.empty() ? trace.initial_divergence
                                              : trace.rows.back().divergence;
  std::cout << "engine " << ifa::to_string(engine) << ": stopped after " << trace.iterations
            << " iterations (" << ifa::to_string(trace.reason) << "), divergence "
            << ifa::format_value(ifa::DivergenceValue(final_div).nats()) << "\n";
  if (trace.boundary_approach) {
    std::cout << "note: noise variances approached zero";
    if (!trace.near_zero_diag.empty()) {
      std::cout << " (indices";
      for (ifa::Index i : trace.near_zero_diag) std::cout << ' ' << i;
      std::cout << ")";
    }
    std::cout << "; consider the singular engine with that zero pattern\n";
  }
  return trace.reason == ifa::StopReason::MaxIters ? kExitMaxIters : kExitOk;
}

int run_compare(const FitOptions& opt, const std::vector<std::string>& argv) {
  std::vector<ifa::Engine> engines;
  std::string token;
  std::istringstream stream(opt.engines_csv);
  while (std::getline(stream, token, ',')) {
    if (!token.empty()) engines.push_back(ifa::engine_from_string(token));
  }
  if (engines.size() < 2) throw ifa::DomainError("compare needs at least two engines");

  const ifa::CovMatrix sigma = ifa::read_cov_matrix(opt.sigma_path);
  if (!sigma.is_pd()) {
    std::cerr << "error: input covariance is not positive definite; eigenvalues in ["
              << sigma.min_eigenvalue() << ", " << sigma.max_eigenvalue() << "]\n";
    return kExitBadMatrix;
  }

  // One shared starting point, mapped into each engine's coordinates.
  const ifa::FactorParams start = ifa::default_init(sigma, opt.k, opt.seed);
  std::vector<ifa::SolverTrace> traces;
  bool any_max_iters = false;
  for (ifa::Engine engine : engines) {
    const ifa::SolverInit init = engine == ifa::Engine::Singular
                                     ? build_init(engine, sigma, opt)
                                     : ifa::make_init(engine, start);
    traces.push_back(ifa::run(engine, sigma, init, opt.config));
    any_max_iters = any_max_iters || traces.back().reason == ifa::StopReason::MaxIters;
  }

  std::ofstream out(opt.trace_path);
  if (!out) throw ifa::Error("compare: cannot open '" + opt.trace_path + "' for writing");
  out << "iter";
  for (ifa::Engine engine : engines) {
    out << ",divergence_" << ifa::to_string(engine) << ",l2_" << ifa::to_string(engine);
  }
  out << '\n';
  std::size_t longest = 0;
  for (const auto& trace : traces) longest = std::max(longest, trace.rows.size());
  for (std::size_t r = 0; r < longest; ++r) {
    // Engines that stopped early repeat their final row; iterates are fixed
    // points from there on for plotting purposes.
    out << traces.front().rows[std::min(r, traces.front().rows.size() - 1)].iter;
    for (const auto& trace : traces) {
      const ifa::TraceRow& row = trace.rows[std::min(r, trace.rows.size() - 1)];
      out << ',' << ifa::format_value(ifa::DivergenceValue(row.divergence).nats()) << ','
          << ifa::format_value(row.l2);
    }
    out << '\n';
  }
  out.close();

  ifa::RunManifest manifest = base_manifest("compare", argv, opt);
  for (ifa::Engine engine : engines) manifest.engines.emplace_back(ifa::to_string(engine));
  manifest.outputs["trace"] = opt.trace_path;
  add_checksum(manifest, opt.trace_path);
  ifa::write_manifest(manifest, opt.trace_path + ".manifest.json");

  std::cout << "final values after matched runs:\n";
  for (std::size_t i = 0; i < engines.size(); ++i) {
    const ifa::TraceRow& last = traces[i].rows.back();
    std::cout << "  " << ifa::to_string(engines[i]) << ": divergence "
              << ifa::format_value(ifa::DivergenceValue(last.divergence).nats()) << ", l2 "
              << ifa::format_value(last.l2) << " (" << ifa::to_string(traces[i].reason) << ", "
              << traces[i].iterations << " iters)\n";
  }
  for (std::size_t i = 0; i + 1 < engines.size(); ++i) {
    for (std::size_t j = i + 1; j < engines.size(); ++j) {
      const double a = traces[i].rows.back().divergence;
      const double b = traces[j].rows.back().divergence;
      std::cout << "  divergence ratio " << ifa::to_string(engines[i]) << "/"
                << ifa::to_string(engines[j]) << " = "
                << ifa::format_value(a / std::max(b, 1e-300)) << '\n';
    }
  }
  return any_max_iters ? kExitMaxIters : kExitOk;
}

int run_check(const std::string& sigma_path, int n2, int k, const std::string& h_path,
              const std::string& d_path) {
  const ifa::CovMatrix sigma = ifa::read_cov_matrix(sigma_path);
  if (!sigma.is_pd()) {
    std::cerr << "error: input covariance is not positive definite; eigenvalues in ["
              << sigma.min_eigenvalue() << ", " << sigma.max_eigenvalue() << "]\n";
    return kExitBadMatrix;
  }
  if (n2 < 1 || n2 >= sigma.dim()) {
    throw ifa::DomainError("check requires 1 <= n2 < n");
  }

  if (!h_path.empty() || !d_path.empty()) {
    if (h_path.empty() || d_path.empty()) {
      throw ifa::DomainError("check needs both --H and --D for a stationarity report");
    }
    const ifa::FactorParams params(ifa::read_matrix(h_path), ifa::read_vector(d_path));
    const ifa::SingularPattern pattern(sigma.dim() - n2, n2);
    const ifa::StructureReport report = ifa::stationary_structure_check(sigma, params, pattern);
    std::cout << "stationarity structure residuals (n2 = " << n2 << "):\n"
              << "  trailing block  ||S22 - H2 H2^T||   = "
              << ifa::format_value(report.corner_residual) << '\n'
              << "  cross block     ||S12 - H1 H2^T||   = "
              << ifa::format_value(report.cross_residual) << '\n'
              << "  reduced loading residual            = "
              << ifa::format_value(report.reduced_h_residual) << '\n'
              << "  reduced noise residual              = "
              << ifa::format_value(report.reduced_d_residual) << '\n';
    return kExitOk;
  }

  const ifa::BlockSplit split(sigma.dim() - n2, n2);
  const ifa::ExactFaCheck chk = ifa::exact_fa_check(sigma, split);
  std::cout << "conditional covariance off-diagonal norm = " << ifa::format_value(chk.offdiag_norm)
            << '\n'
            << (chk.exact ? "exactly realizable with the trailing noise block zero\n"
                          : "not exactly realizable with this split\n");
  if (chk.exact && k >= 1) {
    const ifa::FactorParams params = ifa::exact_fa_realization(sigma, split, k);
    std::cout << "exact realization with k = " << k << ": reconstruction error "
              << ifa::format_value((params.model() - sigma.mat()).norm()) << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> raw_argv = collect_argv(argc, argv);

  CLI::App app{"optimal approximate factor models for a given covariance"};
  app.require_subcommand(1);

  // generate
  ifa::Index gen_n = 10;
  ifa::Index gen_m = 5;
  double gen_c = 2.0;
  std::uint64_t gen_seed = 1;
  std::string gen_out = "problem";
  CLI::App* generate = app.add_subcommand("generate", "write a synthetic covariance problem");
  generate->add_option("--n", gen_n, "dimension")->required();
  generate->add_option("--m", gen_m, "inner size of the low-rank part")->required();
  generate->add_option("--c", gen_c, "diagonal weight");
  generate->add_option("--seed", gen_seed, "generator seed");
  generate->add_option("--out", gen_out, "output path prefix")->required();

  // fit
  FitOptions fit_opt;
  CLI::App* fit = app.add_subcommand("fit", "fit a factor model with one engine");
  add_fit_options(fit, fit_opt, false);

  // compare
  FitOptions cmp_opt;
  cmp_opt.engines_csv = "alt,em";
  CLI::App* compare = app.add_subcommand("compare", "run engines from a matched start");
  add_fit_options(compare, cmp_opt, true);

  // check
  std::string chk_sigma;
  std::string chk_h;
  std::string chk_d;
  int chk_n2 = 1;
  int chk_k = 0;
  CLI::App* check = app.add_subcommand("check", "exactness / stationarity reports");
  check->add_option("--sigma", chk_sigma, "input covariance CSV")->required();
  check->add_option("--n2", chk_n2, "trailing block size")->required();
  check->add_option("--k", chk_k, "factors for an exact realization");
  check->add_option("--H", chk_h, "loading matrix CSV for a stationarity report");
  check->add_option("--D", chk_d, "noise diagonal CSV for a stationarity report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (generate->parsed()) return run_generate(gen_n, gen_m, gen_c, gen_seed, gen_out, raw_argv);
    if (fit->parsed()) return run_fit(fit_opt, raw_argv);
    if (compare->parsed()) return run_compare(cmp_opt, raw_argv);
    return run_check(chk_sigma, chk_n2, chk_k, chk_h, chk_d);
  } catch (const ifa::InfeasiblePatternError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const ifa::StructureError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const ifa::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBadMatrix;
  } catch (const ifa::AsymmetryError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBadMatrix;
  } catch (const ifa::NotPsdError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBadMatrix;
  } catch (const ifa::DimensionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ifa::DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ifa::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
