// l2rw: data generation, training, gradient checks and reports.
//
// Exit codes: 0 ok, 1 I/O or integrity error, 2 configuration error,
// 3 numeric divergence, 4 gradient-check tolerance failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "l2rw/config.hpp"
#include "l2rw/data.hpp"
#include "l2rw/gradcheck.hpp"
#include "l2rw/harness.hpp"
#include "l2rw/report.hpp"

#ifndef L2RW_VERSION
#define L2RW_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace l2rw;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::vector<std::uint64_t> seeds;
  std::string sweep;
  std::string weighter;
  std::string mode;
  bool resume = false;
  std::vector<std::string> dirs;
};

ExperimentConfig load(const Options& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (!o.seeds.empty()) c.run.seeds = o.seeds;
  if (!o.weighter.empty()) c.teacher.weighter = parse_weighter(o.weighter);
  if (!o.mode.empty()) c.teacher.mode = parse_mode(o.mode);
  validate(c);
  return c;
}

std::string hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

fs::path default_out_dir(const ExperimentConfig& c) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%S", std::gmtime(&now));
  return fs::path("runs") / (std::string(stamp) + "-" + hex(config_hash(c)).substr(0, 8));
}

Dataset merge(const DataSplits& s, std::vector<SplitTag>& tags) {
  Dataset d;
  d.classes = s.train.classes;
  const Index n = s.train.size() + s.valid.size() + s.test.size();
  d.inputs.resize(n, s.train.dim());
  Index at = 0;
  const std::pair<const Dataset*, SplitTag> parts[] = {
      {&s.train, SplitTag::train}, {&s.valid, SplitTag::valid}, {&s.test, SplitTag::test}};
  for (const auto& [part, tag] : parts) {
    d.inputs.middleRows(at, part->size()) = part->inputs;
    d.clean_labels.insert(d.clean_labels.end(), part->clean_labels.begin(),
                          part->clean_labels.end());
    d.observed_labels.insert(d.observed_labels.end(), part->observed_labels.begin(),
                             part->observed_labels.end());
    d.corrupted.insert(d.corrupted.end(), part->corrupted.begin(), part->corrupted.end());
    d.ids.insert(d.ids.end(), part->ids.begin(), part->ids.end());
    tags.insert(tags.end(), static_cast<std::size_t>(part->size()), tag);
    at += part->size();
  }
  return d;
}

int cmd_datagen(const Options& o) {
  const ExperimentConfig c = load(o);
  if (o.out.empty()) throw ConfigError("datagen requires --out");
  const std::uint64_t seed = c.run.seeds.front();
  const DataSplits s = prepare_data(c, seed);
  std::vector<SplitTag> tags;
  write_dataset(o.out, merge(s, tags), tags);
  const Index bad = static_cast<Index>(
      std::count(s.train.corrupted.begin(), s.train.corrupted.end(), true));
  std::printf("wrote %s: train %lld, valid %lld, test %lld, classes %lld, dim %lld\n",
              o.out.c_str(), static_cast<long long>(s.train.size()),
              static_cast<long long>(s.valid.size()), static_cast<long long>(s.test.size()),
              static_cast<long long>(s.train.classes), static_cast<long long>(s.train.dim()));
  std::printf("corrupted training labels: %lld / %lld (%.2f%%)\n", static_cast<long long>(bad),
              static_cast<long long>(s.train.size()), 100.0 * s.train.corrupted_fraction());
  return 0;
}

int cmd_train(const Options& o) {
  const ExperimentConfig c = load(o);
  const fs::path out = o.out.empty() ? default_out_dir(c) : fs::path(o.out);
  fs::create_directories(out);

  if (!o.sweep.empty()) {
    const SweepKind kind = parse_sweep(o.sweep);
    const auto rows = sweep(c, sweep_grid(kind), default_threads());
    const std::string table = sweep_table_csv(rows);
    std::ofstream(out / ("sweep_" + o.sweep + ".csv")) << table;
    for (const auto& r : rows)
      std::printf("%-16s %6.2f +- %.2f  (%zu seeds)\n", r.label.c_str(), 100 * r.mean,
                  100 * r.stddev, r.seeds.size());
    std::printf("sweep table: %s\n", (out / ("sweep_" + o.sweep + ".csv")).c_str());
    return 0;
  }

  RunManifest m;
  m.config_path = o.config;
  m.out_dir = out.string();
  m.version = L2RW_VERSION;
  m.weighter = to_string(c.teacher.weighter);
  m.config_hash = hex(config_hash(c));
  m.seeds = c.run.seeds;
  write_manifest(out / "manifest.json", m);

  for (std::uint64_t seed : c.run.seeds) {
    RunOptions ro;
    ro.out_dir = out / seed_dir_name(seed);
    ro.resume = o.resume && fs::exists(ro.out_dir / "checkpoint.bin");
    const RunResult r = run(c, seed, ro);
    const auto ws = summarize_weights(
        weight_report(c, Mlp<double>(r.student), r.theta, *r.teacher, r.surface, r.data.train,
                      r.steps));
    const auto& last = r.log.back();
    std::printf("seed %llu: test accuracy %.4f  valid metric %.4f  weight clean/corrupted "
                "%.3e/%.3e\n",
                static_cast<unsigned long long>(seed), last.test_accuracy, last.valid_metric,
                ws.mean_clean, ws.mean_corrupted);
  }
  std::printf("run directory: %s\n", out.c_str());
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const ExperimentConfig c = load(o);
  const GradcheckReport r = gradcheck(c, c.run.seeds.front());
  std::fputs(format_report(r).c_str(), stdout);
  return r.pass() ? 0 : 4;
}

int cmd_report(const Options& o) {
  std::vector<fs::path> dirs(o.dirs.begin(), o.dirs.end());
  const Report r = build_report(dirs, o.out);
  std::fputs(format_report_table(r).c_str(), stdout);
  std::printf("weight scatter rows: %zu\n", r.scatter_rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned sample reweighting: data, training, gradient checks, reports"};
  app.set_version_flag("--version", std::string(L2RW_VERSION));
  app.require_subcommand(1);
  Options o;

  auto* datagen = app.add_subcommand("datagen", "Generate and write a dataset directory");
  datagen->add_option("--config", o.config, "Config file")->required()->check(CLI::ExistingFile);
  datagen->add_option("--out", o.out, "Output dataset directory")->required();
  datagen->add_option("--seed", o.seeds, "Run seed (first one is used)");

  auto* train = app.add_subcommand("train", "Train with the configured weighter");
  train->add_option("--config", o.config, "Config file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", o.out, "Output directory (default runs/<time>-<hash>)");
  train->add_option("--seed", o.seeds, "Seeds (repeatable; overrides [run] seeds)");
  train->add_option("--sweep", o.sweep, "Sweep grid")
      ->check(CLI::IsMember({"kb", "gamma", "features"}));
  train->add_option("--weighter", o.weighter, "Weighter override")
      ->check(CLI::IsMember({"teacher", "uniform", "focal", "spl"}));
  train->add_option("--mode", o.mode, "Reverse-pass state reconstruction")
      ->check(CLI::IsMember({"checkpoint", "reversal"}));
  train->add_flag("--resume", o.resume, "Continue from checkpoint.bin where present");

  auto* gc = app.add_subcommand("gradcheck", "Check analytic derivatives against finite differences");
  gc->add_option("--config", o.config, "Config file")->check(CLI::ExistingFile);
  gc->add_option("--seed", o.seeds, "Seed");
  gc->add_option("--mode", o.mode, "Reverse-pass state reconstruction")
      ->check(CLI::IsMember({"checkpoint", "reversal"}));

  auto* rep = app.add_subcommand("report", "Summarize run directories");
  rep->add_option("dirs", o.dirs, "Run directories (the first is the paired reference)")
      ->required();
  rep->add_option("--out", o.out, "Directory for summary.csv and weight_scatter.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*datagen) return cmd_datagen(o);
    if (*train) return cmd_train(o);
    if (*gc) return cmd_gradcheck(o);
    if (*rep) return cmd_report(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << " (" << e.partial_log().size()
              << " rows logged)\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
