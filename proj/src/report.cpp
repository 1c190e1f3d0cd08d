#include "l2rw/report.hpp"

#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>

#include "l2rw/harness.hpp"
#include "l2rw/types.hpp"

namespace l2rw {

namespace fs = std::filesystem;

void write_manifest(const fs::path& file, const RunManifest& m) {
  nlohmann::ordered_json j;
  j["config"] = m.config_path;
  j["out_dir"] = m.out_dir;
  j["version"] = m.version;
  j["weighter"] = m.weighter;
  j["config_hash"] = m.config_hash;
  j["seeds"] = m.seeds;
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  out << j.dump(2) << "\n";
}

RunManifest read_manifest(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  try {
    const auto j = nlohmann::json::parse(in);
    RunManifest m;
    m.config_path = j.at("config").get<std::string>();
    m.out_dir = j.at("out_dir").get<std::string>();
    m.version = j.at("version").get<std::string>();
    m.weighter = j.at("weighter").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(file.string() + ": malformed manifest (" + e.what() + ")");
  }
}

std::string seed_dir_name(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

namespace {

struct RunDir {
  std::string label;
  std::string weighter;
  std::vector<std::pair<std::uint64_t, fs::path>> seeds;
};

RunDir open_run_dir(const fs::path& dir) {
  RunDir r;
  r.label = dir.filename().empty() ? dir.parent_path().filename().string()
                                   : dir.filename().string();
  if (fs::exists(dir / "manifest.json")) {
    const RunManifest m = read_manifest(dir / "manifest.json");
    r.weighter = m.weighter;
    for (auto s : m.seeds) r.seeds.push_back({s, dir / seed_dir_name(s)});
  } else if (fs::exists(dir / "metrics.csv")) {
    r.weighter = "?";
    r.seeds.push_back({0, dir});
  } else {
    throw IoError(dir.string() + ": no manifest.json or metrics.csv");
  }
  return r;
}

}  // namespace

Report build_report(const std::vector<fs::path>& dirs, const fs::path& out_dir) {
  if (dirs.empty()) throw IoError("report needs at least one run directory");
  Report rep;
  std::ofstream scatter;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    scatter.open(out_dir / "weight_scatter.csv", std::ios::binary);
    if (!scatter) throw IoError("cannot write weight_scatter.csv in " + out_dir.string());
    scatter << "run,seed,id,label,clean_label,loss,weight,corrupted\n";
  }
  std::map<std::uint64_t, double> reference;
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    const RunDir rd = open_run_dir(dirs[i]);
    RunSummary row;
    row.label = rd.label;
    row.weighter = rd.weighter;
    for (const auto& [seed, path] : rd.seeds) {
      const auto log = read_metrics_csv(path / "metrics.csv");
      if (log.empty()) throw IoError((path / "metrics.csv").string() + ": no rows");
      row.seeds.push_back(seed);
      row.final_accuracy.push_back(log.back().test_accuracy);
      const fs::path wr = path / "weight_report.csv";
      if (fs::exists(wr)) {
        std::ifstream in(wr);
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          ++rep.scatter_rows;
          if (scatter.is_open()) scatter << rd.label << "," << seed << "," << line << "\n";
        }
      }
    }
    std::tie(row.mean, row.stddev) = mean_std(row.final_accuracy);
    if (i == 0) {
      for (std::size_t k = 0; k < row.seeds.size(); ++k)
        reference[row.seeds[k]] = row.final_accuracy[k];
    } else {
      for (std::size_t k = 0; k < row.seeds.size(); ++k) {
        const auto it = reference.find(row.seeds[k]);
        if (it != reference.end()) row.paired_diff.push_back(row.final_accuracy[k] - it->second);
      }
      row.has_paired = !row.paired_diff.empty();
      std::tie(row.diff_mean, row.diff_std) = mean_std(row.paired_diff);
    }
    rep.rows.push_back(std::move(row));
  }
  if (!out_dir.empty()) {
    std::ofstream out(out_dir / "summary.csv", std::ios::binary);
    if (!out) throw IoError("cannot write summary.csv in " + out_dir.string());
    out << report_csv(rep);
  }
  return rep;
}

std::string report_csv(const Report& r) {
  std::string out =
      "run,weighter,seeds,mean_test_accuracy,std_test_accuracy,paired_diff_mean,paired_diff_std\n";
  char buf[512];
  for (const auto& row : r.rows) {
    if (row.has_paired)
      std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.17g,%.17g,%.17g,%.17g\n", row.label.c_str(),
                    row.weighter.c_str(), row.seeds.size(), row.mean, row.stddev, row.diff_mean,
                    row.diff_std);
    else
      std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.17g,%.17g,,\n", row.label.c_str(),
                    row.weighter.c_str(), row.seeds.size(), row.mean, row.stddev);
    out += buf;
  }
  return out;
}

std::string format_report_table(const Report& r) {
  std::string out;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-24s %-8s %5s  %-18s %s\n", "run", "weighter", "seeds",
                "test acc (%)", "paired diff vs first");
  out += buf;
  for (const auto& row : r.rows) {
    char diff[64] = "";
    if (row.has_paired)
      std::snprintf(diff, sizeof diff, "%+.2f +- %.2f", 100 * row.diff_mean, 100 * row.diff_std);
    std::snprintf(buf, sizeof buf, "%-24s %-8s %5zu  %6.2f +- %-8.2f %s\n", row.label.c_str(),
                  row.weighter.c_str(), row.seeds.size(), 100 * row.mean, 100 * row.stddev, diff);
    out += buf;
  }
  return out;
}

}  // namespace l2rw
