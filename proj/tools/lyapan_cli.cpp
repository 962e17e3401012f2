// lyapan: run Lyapunov-exponent scenarios from JSON files.
//
//   lyapan run scenarios/dirac.json --out-dir out
//   lyapan batch scenarios --seed 3
//   lyapan demo noncompact --eps 0.1 --jump 1

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lyapan/scenario.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::optional<std::uint64_t> seed;
  std::optional<double> tol;
  std::optional<unsigned> threads;
  std::string out_dir;
  std::vector<std::string> formats;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--seed", f.seed, "Seed for Monte Carlo cross-checks (overrides the scenario)");
  app->add_option("--tol", f.tol, "Iteration tolerance (overrides the scenario)")->check(CLI::PositiveNumber);
  app->add_option("--threads", f.threads, "Worker threads for sampling (0 = all cores)");
  app->add_option("--out-dir", f.out_dir, "Output directory (default: $LYAPAN_OUT_DIR or ./lyapan_out)");
  app->add_option("--format", f.formats, "Outputs to write: report, csv, svg (default: all)")
      ->delimiter(',')
      ->check(CLI::IsMember({"report", "csv", "svg"}));
}

fs::path resolve_out_dir(const CommonFlags& f) {
  if (!f.out_dir.empty()) return f.out_dir;
  if (const char* env = std::getenv("LYAPAN_OUT_DIR"); env && *env) return env;
  return "lyapan_out";
}

std::set<lyapan::OutputFormat> resolve_formats(const CommonFlags& f) {
  if (f.formats.empty()) return {lyapan::OutputFormat::report, lyapan::OutputFormat::csv, lyapan::OutputFormat::svg};
  std::set<lyapan::OutputFormat> out;
  for (const auto& s : f.formats) {
    if (s == "report") out.insert(lyapan::OutputFormat::report);
    if (s == "csv") out.insert(lyapan::OutputFormat::csv);
    if (s == "svg") out.insert(lyapan::OutputFormat::svg);
  }
  return out;
}

lyapan::RunOverrides overrides(const CommonFlags& f) { return {f.seed, f.tol, f.threads}; }

void print_errors(const lyapan::RunReport& run) {
  const auto& results = run.report["results"];
  for (auto it = results.begin(); it != results.end(); ++it)
    if (it.value().contains("error"))
      std::cerr << "  " << it.key() << ": " << it.value()["error"]["message"].get<std::string>() << "\n";
}

// 0 on success, 1 if an analysis failed, 2 if the scenario did not parse.
int run_one(const fs::path& path, const CommonFlags& flags, const fs::path& out_root) {
  lyapan::Scenario sc;
  try {
    sc = lyapan::load_scenario(path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  const auto run = lyapan::run_scenario(sc, overrides(flags));
  const fs::path dir = out_root / sc.name;
  lyapan::write_outputs(run, dir, resolve_formats(flags));
  std::cout << sc.name << ": " << (run.any_error ? "error" : "ok") << " (" << dir.string() << ")\n";
  print_errors(run);
  return run.any_error ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Top Lyapunov exponents, contraction certificates and Taylor expansions for random matrix products"};
  app.set_version_flag("--version", std::string(LYAPAN_VERSION));
  app.require_subcommand(1);

  CommonFlags run_flags, batch_flags, demo_flags;
  std::string scenario_path, batch_dir;

  auto* run = app.add_subcommand("run", "Run one scenario file");
  run->add_option("scenario", scenario_path, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  add_common(run, run_flags);

  auto* batch = app.add_subcommand("batch", "Run every *.json scenario in a directory, in name order");
  batch->add_option("dir", batch_dir, "Scenario directory")->required()->check(CLI::ExistingDirectory);
  add_common(batch, batch_flags);

  auto* demo = app.add_subcommand("demo", "Demonstrations");
  demo->require_subcommand(1);
  auto* noncompact = demo->add_subcommand("noncompact", "Discontinuity of L1 without compact support");
  double eps = 0.1, jump = 1.0, margin = 1.0, angle = 0.7;
  std::string base_path;
  noncompact->add_option("--eps", eps, "Mixing weight of the scalar atom, in (0, 1)")->check(CLI::Range(0.0, 1.0));
  noncompact->add_option("--jump", jump, "Required increase of the lower bound over L1")->check(CLI::PositiveNumber);
  noncompact->add_option("--margin", margin, "Excess of log a over the threshold")->check(CLI::PositiveNumber);
  noncompact->add_option("--angle", angle, "Rotation angle of the default base measure");
  noncompact->add_option("--base", base_path, "Scenario file whose measure is the base (default: one rotation)")
      ->check(CLI::ExistingFile);
  add_common(noncompact, demo_flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return run_one(scenario_path, run_flags, resolve_out_dir(run_flags));

    if (*batch) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(batch_dir))
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      if (files.empty()) {
        std::cerr << "error: no *.json scenarios in " << batch_dir << "\n";
        return 2;
      }
      int worst = 0;
      const fs::path root = resolve_out_dir(batch_flags);
      for (const auto& f : files) worst = std::max(worst, run_one(f, batch_flags, root));
      return worst;
    }

    if (*noncompact) {
      lyapan::Scenario sc;
      if (!base_path.empty()) {
        sc = lyapan::load_scenario(base_path);
        if (sc.kind != lyapan::Scenario::Kind::bernoulli) throw lyapan::ScenarioError("--base needs a Bernoulli scenario");
      } else {
        sc.measure = lyapan::dirac(lyapan::rotation(angle));
        lyapan::Json m = lyapan::Json::array();
        m.push_back({{"matrix", lyapan::detail::matrix_json(lyapan::rotation(angle).eigen())}, {"weight", 1.0}});
        sc.source = {{"name", "demo_noncompact"}, {"kind", "bernoulli"}, {"measure", m}};
      }
      sc.name = "demo_noncompact";
      sc.analyses = {"demo_noncompact"};
      sc.config.eps = eps;
      sc.config.jump = jump;
      sc.config.margin = margin;
      sc.source["analyses"] = sc.analyses;
      sc.source["config"] = {{"eps", eps}, {"jump", jump}, {"margin", margin}};
      const auto result = lyapan::run_scenario(sc, overrides(demo_flags));
      std::cout << result.report["results"]["demo_noncompact"].dump(2) << "\n";
      if (!demo_flags.out_dir.empty() || std::getenv("LYAPAN_OUT_DIR"))
        lyapan::write_outputs(result, resolve_out_dir(demo_flags) / sc.name, resolve_formats(demo_flags));
      print_errors(result);
      return result.any_error ? 1 : 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
