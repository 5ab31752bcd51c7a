#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cfbench/harness.hpp"

namespace {

struct CommonOptions {
  std::string config;
  std::string out;
  std::size_t jobs = 0;
};

cfbench::RunConfig base_config(const CommonOptions& o) {
  cfbench::RunConfig cfg = o.config.empty() ? cfbench::RunConfig{} : cfbench::load_config(o.config);
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (o.jobs > 0) cfg.jobs = o.jobs;
  return cfg;
}

void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("--config", o.config, "JSON run configuration");
  sub->add_option("--out", o.out, "output directory (overrides the config)");
  sub->add_option("--jobs", o.jobs, "parallel workers")->check(CLI::PositiveNumber);
}

std::vector<std::filesystem::path> to_paths(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compile-feedback benchmark for C code generation"};
  app.require_subcommand(1);

  CommonOptions prepare_opts;
  std::string source;
  auto* prepare = app.add_subcommand("prepare", "load a corpus and keep tasks whose ground truth compiles");
  add_common(prepare, prepare_opts);
  prepare->add_option("--source", source, "corpus directory tree or JSONL file");

  CommonOptions run_opts;
  std::vector<std::string> models;
  std::string mode = "both";
  int max_iterations = 0;
  bool resume = false;
  auto* run = app.add_subcommand("run", "run baseline and/or agent over the prepared corpus");
  add_common(run, run_opts);
  run->add_option("--models", models, "model names to run (default: all configured)")->delimiter(',');
  run->add_option("--mode", mode, "baseline, agent or both")->check(CLI::IsMember({"baseline", "agent", "both"}));
  run->add_option("--max-iterations", max_iterations, "agent iteration cap")->check(CLI::PositiveNumber);
  run->add_flag("--resume", resume, "skip tasks already present in the run logs");

  CommonOptions report_opts;
  std::vector<std::string> report_logs;
  std::vector<std::string> classified;
  auto* report = app.add_subcommand("report", "aggregate run logs into tables");
  add_common(report, report_opts);
  report->add_option("--classified", classified, "classification CSVs whose taxonomy version must match");
  report->add_option("logs", report_logs, "run log files (default: all in the output directory)");

  CommonOptions classify_opts;
  std::vector<std::string> classify_logs;
  auto* classify = app.add_subcommand("classify", "classify failed runs into error categories");
  add_common(classify, classify_opts);
  classify->add_option("logs", classify_logs, "run log files (default: all in the output directory)");

  auto* fixtures = app.add_subcommand("fixtures", "maintain test fixtures");
  fixtures->require_subcommand(1);
  CommonOptions regen_opts;
  std::string fixture_dir = "fixtures/compiler";
  auto* regen = fixtures->add_subcommand("regen", "recompile golden compiler fixtures and record stderr");
  add_common(regen, regen_opts);
  regen->add_option("--dir", fixture_dir, "fixture directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*prepare) {
      auto cfg = base_config(prepare_opts);
      if (!source.empty()) cfg.source = source;
      const auto s = cfbench::cmd_prepare(cfg);
      std::cerr << "loaded " << s.loaded << ", kept " << s.kept << ", skipped " << s.skipped << ", rejected "
                << s.rejected << "\n";
      return 0;
    }
    if (*run) {
      auto cfg = base_config(run_opts);
      if (!models.empty()) {
        std::vector<cfbench::ModelEntry> selected;
        for (const auto& name : models) {
          auto it = std::find_if(cfg.models.begin(), cfg.models.end(),
                                 [&](const auto& m) { return m.spec.name == name; });
          if (it == cfg.models.end()) throw cfbench::usage_error("unknown model " + name);
          selected.push_back(*it);
        }
        cfg.models = std::move(selected);
      }
      if (mode == "baseline") cfg.modes = {cfbench::RunMode::baseline};
      if (mode == "agent") cfg.modes = {cfbench::RunMode::agent};
      if (mode == "both") cfg.modes = {cfbench::RunMode::baseline, cfbench::RunMode::agent};
      if (max_iterations > 0) cfg.loop.max_iterations = max_iterations;
      cfg.resume = resume;
      const auto s = cfbench::cmd_run(cfg, &std::cerr);
      for (const auto& g : s.groups) {
        std::cerr << g.model << " " << cfbench::to_string(g.mode) << ": " << g.written << " written, "
                  << g.already_done << " resumed, " << g.succeeded << " succeeded\n";
      }
      if (!s.aborted_models.empty()) {
        for (const auto& m : s.aborted_models) std::cerr << "error: model " << m << " aborted on transport failure\n";
        return cfbench::exit_code_for(cfbench::ErrorKind::environment);
      }
      return 0;
    }
    if (*report) {
      const auto files = cfbench::cmd_report(base_config(report_opts), to_paths(report_logs), to_paths(classified));
      std::cerr << "wrote " << files.size() << " report files\n";
      return 0;
    }
    if (*classify) {
      const auto n = cfbench::cmd_classify(base_config(classify_opts), to_paths(classify_logs));
      std::cerr << "classified " << n << " failures\n";
      return 0;
    }
    if (*regen) {
      const auto cfg = base_config(regen_opts);
      const auto n = cfbench::regenerate_compiler_fixtures(fixture_dir, cfg.compiler);
      std::cerr << "regenerated " << n << " fixtures\n";
      return 0;
    }
  } catch (const cfbench::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cfbench::exit_code_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cfbench::exit_code_for(cfbench::ErrorKind::environment);
  }
  return 1;
}
