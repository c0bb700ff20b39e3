#include "fhlr/annotation_service.hpp"
#include "fhlr/experiment.hpp"

// After Eigen: resolv.h (pulled in by httplib) defines a _res macro.
#include <CLI11.hpp>
#include <httplib.h>

#include <csignal>
#include <fstream>
#include <iostream>

namespace {

constexpr int exit_config = 2;
constexpr int exit_runtime = 3;

fhlr::ExperimentConfig read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fhlr::fail(fhlr::ErrorCode::config, "cannot read config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fhlr::fail(fhlr::ErrorCode::config, path + ": " + e.what());
  }
  auto cfg = j.get<fhlr::ExperimentConfig>();
  cfg.validate();
  return cfg;
}

void print_report(const fhlr::RunReport& r) {
  std::printf("method %s  trials %zu  mean %.2f%%  std %.2f  (%.1f s)\n", r.method.c_str(), r.trials.size(),
              100.0 * r.mean, 100.0 * r.std, r.wall_clock_seconds);
  for (const auto& t : r.trials) {
    std::printf("  trial %d: %.2f%%", t.trial, 100.0 * t.accuracy);
    for (const auto& [stage, acc] : t.stages) std::printf("  %s=%.2f", stage.c_str(), 100.0 * acc);
    std::printf("\n");
  }
  for (const auto& e : r.errors) std::fprintf(stderr, "  trial %d failed: %s: %s\n", e.trial, e.code.c_str(), e.detail.c_str());
}

httplib::Server* active_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot human-in-the-loop refinement for noisy time-series labels"};
  app.require_subcommand(1);

  std::string config_path, output_dir;
  auto* run = app.add_subcommand("run", "Run the pipeline for one config");
  run->add_option("--config", config_path, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--output", output_dir, "Override output_dir");

  std::string preset_name;
  std::vector<std::string> methods;
  std::vector<fhlr::Index> shots;
  auto* preset = app.add_subcommand("preset", "Run a sweep preset and write its comparison table");
  preset->add_option("name", preset_name, "noise_sweep | asymmetric | acquisition_ablation | merge_comparison | "
                                          "shot_scaling | component_ablation | annotator_panel")
      ->required();
  preset->add_option("--config", config_path, "Base config JSON")->required()->check(CLI::ExistingFile);
  preset->add_option("--output", output_dir, "Override output_dir");
  preset->add_option("--methods", methods, "Method rows for the noise presets")->delimiter(',');
  preset->add_option("--shots", shots, "Budget grid for shot_scaling")->delimiter(',');

  std::string report_dir, report_format = "text";
  auto* report = app.add_subcommand("report", "Render mean +- std tables from a results directory");
  report->add_option("--dir", report_dir, "Results directory")->required()->check(CLI::ExistingDirectory);
  report->add_option("--format", report_format, "text or csv")->check(CLI::IsMember({"text", "csv"}));

  std::string synth_spec, synth_out, synth_name = "synthetic";
  auto* synth = app.add_subcommand("synth", "Write a synthetic canonical dataset");
  synth->add_option("--spec", synth_spec, "SyntheticSpec JSON (defaults when omitted)")->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--name", synth_name, "Dataset name");

  std::string serve_root = "annotations", host = "127.0.0.1";
  int port = 8080;
  std::vector<std::string> dataset_args;
  auto* serve = app.add_subcommand("serve", "Run the annotation HTTP service");
  serve->add_option("--root", serve_root, "Session storage directory");
  serve->add_option("--dataset", dataset_args, "name=canonical_dir[:split], repeatable");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_config;
  }

  try {
    if (*run) {
      auto cfg = read_config(config_path);
      if (!output_dir.empty()) cfg.output_dir = output_dir;
      const auto r = fhlr::run_pipeline(cfg);
      print_report(r);
      return r.errors.empty() ? 0 : exit_runtime;
    }
    if (*preset) {
      const auto name = fhlr::preset_from_string(preset_name);
      auto cfg = read_config(config_path);
      if (!output_dir.empty()) cfg.output_dir = output_dir;
      fhlr::PresetOptions options;
      if (!methods.empty()) options.methods = methods;
      if (!shots.empty()) options.shot_grid = shots;
      const auto bundle = fhlr::run_preset(name, cfg, options);
      std::cout << bundle.table.to_text();
      for (const auto& r : bundle.reports)
        if (!r.errors.empty()) return exit_runtime;
      return 0;
    }
    if (*report) {
      const auto table = fhlr::collect_reports(report_dir);
      std::cout << (report_format == "csv" ? table.to_csv() : table.to_text());
      return 0;
    }
    if (*synth) {
      fhlr::SyntheticSpec spec;
      if (!synth_spec.empty()) {
        std::ifstream in(synth_spec);
        try {
          spec = nlohmann::json::parse(in).get<fhlr::SyntheticSpec>();
        } catch (const nlohmann::json::exception& e) {
          fhlr::fail(fhlr::ErrorCode::config, synth_spec + ": " + e.what());
        }
      }
      auto [train, test] = fhlr::make_synthetic(spec);
      fhlr::write_canonical(synth_out, synth_name, {{"train", train}, {"test", test}});
      std::printf("wrote %lld train / %lld test windows to %s\n", static_cast<long long>(train.size()),
                  static_cast<long long>(test.size()), synth_out.c_str());
      return 0;
    }
    if (*serve) {
      fhlr::AnnotationStore store(serve_root);
      for (const auto& arg : dataset_args) {
        const auto eq = arg.find('=');
        if (eq == std::string::npos) fhlr::fail(fhlr::ErrorCode::config, "--dataset expects name=dir[:split]");
        std::string dir = arg.substr(eq + 1), split = "train";
        if (const auto colon = dir.rfind(':'); colon != std::string::npos) {
          split = dir.substr(colon + 1);
          dir = dir.substr(0, colon);
        }
        auto ds = std::make_shared<fhlr::WindowedDataset>(fhlr::load_canonical(dir, split));
        store.register_dataset(arg.substr(0, eq), ds);
      }
      httplib::Server server;
      fhlr::install_routes(server, store);
      active_server = &server;
      std::signal(SIGINT, [](int) {
        if (active_server) active_server->stop();
      });
      std::printf("listening on %s:%d (%zu sessions restored)\n", host.c_str(), port, store.session_ids().size());
      std::fflush(stdout);
      if (!server.listen(host, port)) fhlr::fail(fhlr::ErrorCode::io, "cannot bind " + host + ":" + std::to_string(port));
      return 0;
    }
  } catch (const fhlr::Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", std::string(fhlr::to_string(e.code())).c_str(), e.detail().c_str());
    const bool config = e.code() == fhlr::ErrorCode::config || e.code() == fhlr::ErrorCode::invalid_spec;
    return config ? exit_config : exit_runtime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_runtime;
  }
  return 0;
}
