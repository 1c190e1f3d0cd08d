#ifndef L2RW_REPORT_HPP_
#define L2RW_REPORT_HPP_

// Run manifests and cross-run summaries.
//
// A training output directory holds manifest.json and one seed_<s>/
// subdirectory per seed with that run's metrics and weight report.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace l2rw {

struct RunManifest {
  std::string config_path;
  std::string out_dir;
  std::string version;
  std::string weighter;
  std::string config_hash;  // hex
  std::vector<std::uint64_t> seeds;
};

void write_manifest(const std::filesystem::path& file, const RunManifest& m);
/// Throws IoError when the file is missing or malformed.
RunManifest read_manifest(const std::filesystem::path& file);

std::string seed_dir_name(std::uint64_t seed);

struct RunSummary {
  std::string label;
  std::string weighter;
  std::vector<std::uint64_t> seeds;
  std::vector<double> final_accuracy;
  double mean = 0;
  double stddev = 0;
  // Paired differences against the first directory, over shared seeds.
  bool has_paired = false;
  std::vector<double> paired_diff;
  double diff_mean = 0;
  double diff_std = 0;
};

struct Report {
  std::vector<RunSummary> rows;
  std::size_t scatter_rows = 0;
};

/// Reads every run directory; with a non-empty `out_dir`, writes summary.csv
/// and weight_scatter.csv there.
Report build_report(const std::vector<std::filesystem::path>& dirs,
                    const std::filesystem::path& out_dir);

std::string format_report_table(const Report& r);
std::string report_csv(const Report& r);

}  // namespace l2rw

#endif  // L2RW_REPORT_HPP_
