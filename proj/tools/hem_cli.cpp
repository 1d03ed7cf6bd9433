// Command line front end: solve, sweep, spectrum, check.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "hem/hem.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

struct Options {
  std::string config;
  std::string out;
  std::string format = "csv";
  std::size_t threads = 1;
  std::uint64_t seed = 42;
};

void add_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "experiment configuration (JSON)")->required();
  cmd->add_option("--out", o.out, "write the report here instead of stdout");
  cmd->add_option("--format", o.format, "report format")->check(CLI::IsMember({"csv", "markdown"}));
  cmd->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", o.seed, "seed for the randomized invariant checks");
}

void write_output(const Options& o, const std::string& text) {
  if (o.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(o.out);
  if (!f) throw hem::UsageError("cannot write '" + o.out + "'");
  f << text;
}

int report_rows(const Options& o, const std::vector<hem::ResultRow>& rows) {
  write_output(o, hem::emit_report(rows, hem::report_format_from_string(o.format)));
  int code = kExitOk;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].error.empty()) continue;
    std::cerr << "row " << i << " (" << rows[i].method << ", m=" << rows[i].m << ", delta=" << rows[i].delta
              << ", contrast=" << hem::format_compact(rows[i].contrast) << "): " << rows[i].error << '\n';
    code = std::max(code, rows[i].numerical_failure ? kExitNumerical : kExitUsage);
  }
  return code;
}

int cmd_solve(const Options& o) {
  const auto cfg = hem::load_config(o.config);
  const auto pt = cfg.base_point();
  const hem::Problem prob(cfg, pt.contrast, o.threads);
  const auto run = hem::run_point(cfg, prob, pt, o.threads);
  return report_rows(o, {run.row});
}

int cmd_sweep(const Options& o) {
  const auto cfg = hem::load_config(o.config);
  return report_rows(o, hem::run_sweep(cfg, o.threads).rows);
}

int cmd_spectrum(const Options& o) {
  const auto cfg = hem::load_config(o.config);
  const hem::Problem prob(cfg, cfg.contrast, o.threads);
  write_output(o, hem::emit_spectrum(prob.ctx));
  return kExitOk;
}

int cmd_check(const Options& o) {
  const auto cfg = hem::load_config(o.config);
  const auto results = hem::run_checks(cfg, o.seed, o.threads);
  std::string text;
  bool ok = true;
  for (const auto& r : results) {
    text += (r.passed ? "PASS " : "FAIL ") + r.name + ": " + r.detail + "\n";
    ok = ok && r.passed;
  }
  write_output(o, text);
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-level Schwarz solver laboratory for high-contrast diffusion"};
  app.require_subcommand(1);
  Options opts;
  auto* solve = app.add_subcommand("solve", "run the configured method once");
  auto* sweep = app.add_subcommand("sweep", "run the product of the sweep lists");
  auto* spectrum = app.add_subcommand("spectrum", "dump interface eigenvalues as CSV");
  auto* check = app.add_subcommand("check", "run the invariant checks on the configured problem");
  for (auto* cmd : {solve, sweep, spectrum, check}) add_options(cmd, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (solve->parsed()) return cmd_solve(opts);
    if (sweep->parsed()) return cmd_sweep(opts);
    if (spectrum->parsed()) return cmd_spectrum(opts);
    return cmd_check(opts);
  } catch (const hem::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  }
}
