#ifndef L2RW_CONFIG_HPP_
#define L2RW_CONFIG_HPP_

// Experiment configuration: a flat, typed key-value file with one section per
// module. Unknown sections or keys are errors.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "l2rw/baselines.hpp"
#include "l2rw/data.hpp"
#include "l2rw/hypergrad.hpp"
#include "l2rw/nn_core.hpp"
#include "l2rw/teacher.hpp"

namespace l2rw {

enum class TeacherOptimizer { momentum, adam };
enum class GradcheckProblem { quadratic, mlp };

struct DataConfig {
  std::string source = "blobs";  // blobs | file
  std::string path;
  Index classes = 10;
  Index per_class = 650;
  Index dim = 16;
  double spread = 2.0;
  double separation = 2.0;
  double confusable_offset = 0.5;
  std::uint64_t seed = 0;  // 0: derived from the run seed
  double valid_fraction = 500.0 / 6500.0;
  double test_fraction = 1000.0 / 6500.0;
};

struct NoiseConfig {
  NoiseKind kind = NoiseKind::none;
  double p = 0;
  std::uint64_t seed = 0;  // 0: derived from the run seed
  bool uniform_includes_true = true;
};

struct StudentConfig {
  std::vector<Index> hidden{64, 64};
  Activation activation = Activation::relu;
  int feature_level = 0;
  double lambda = 1e-4;
  double lr = 0.1;
  std::vector<Index> lr_drop_epochs;
  double lr_drop_factor = 0.1;
  double momentum = 0.9;
  Index batch_size = 128;
  Index epochs = 20;
};

struct TeacherConfig {
  WeighterKind weighter = WeighterKind::teacher;
  FeatureSet features;  // I0 + M0
  int hidden_layers = 0;
  TeacherOptimizer optimizer = TeacherOptimizer::momentum;
  double lr = 1e-3;
  double momentum = 0.9;
  Index K = 20;
  Index B = 2;
  ReconstructionMode mode = ReconstructionMode::checkpoint;
  MetricKind metric = MetricKind::log_likelihood;
  bool extra_batch_mean = false;
  Index warmup_epochs = 1;
  Index valid_batch = 0;  // 0: full validation split
};

struct BaselineConfig {
  double focal_gamma = 1.0;
  double spl_percentile = 30.0;
};

struct RunConfig {
  std::vector<std::uint64_t> seeds{1};
};

struct GradcheckConfig {
  GradcheckProblem problem = GradcheckProblem::mlp;
  Index samples = 32;
  Index steps = 5;
  std::vector<Index> hidden{16, 16};
  Index input_dim = 8;
  Index classes = 4;
  double epsilon = 1e-5;
  double teacher_epsilon = 1e-3;  // step for the teacher-side Jacobian
  bool corrupt_sign = false;
};

struct ExperimentConfig {
  DataConfig data;
  NoiseConfig noise;
  StudentConfig student;
  TeacherConfig teacher;
  BaselineConfig baselines;
  RunConfig run;
  GradcheckConfig gradcheck;
};

/// Parses config text. Throws ConfigError on syntax errors, unknown keys,
/// bad values, or invariant violations.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical text form: every key, schema order, shortest round-trip numbers.
std::string serialize_config(const ExperimentConfig& c);

/// FNV-1a of the canonical serialization.
std::uint64_t config_hash(const ExperimentConfig& c);

/// Checks cross-field invariants (1 <= B <= K, mu > 0 for the teacher, ...).
void validate(const ExperimentConfig& c);

/// Applies one "section.key=value" override (used by sweeps and the CLI).
void set_config_value(ExperimentConfig& c, const std::string& section,
                      const std::string& key, const std::string& value);

std::string to_string(WeighterKind k);
std::string to_string(NoiseKind k);
std::string to_string(ReconstructionMode m);
WeighterKind parse_weighter(const std::string& s);
ReconstructionMode parse_mode(const std::string& s);

}  // namespace l2rw

#endif  // L2RW_CONFIG_HPP_
