#ifndef L2RW_HARNESS_HPP_
#define L2RW_HARNESS_HPP_

// Alternating optimization: K student steps on weighted minibatches, then a
// teacher update from the hypergradient over the last B of them.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "l2rw/baselines.hpp"
#include "l2rw/config.hpp"
#include "l2rw/data.hpp"
#include "l2rw/hypergrad.hpp"
#include "l2rw/nn_core.hpp"
#include "l2rw/teacher.hpp"
#include "l2rw/types.hpp"

namespace l2rw {

/// One row per teacher update (plus a closing row at the end of training).
struct MetricsRecord {
  Index step = 0;
  Index epoch = 0;
  double train_loss = 0;
  double valid_metric = 0;
  double test_accuracy = 0;
  double mean_weight_clean = 0;      // mean normalized weight since the last row
  double mean_weight_corrupted = 0;  // 0 when no corrupted sample was seen
  double teacher_grad_norm = 0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

/// Ascent state for the teacher parameters (momentum buffer, or Adam moments).
struct TeacherOptState {
  VectorXd m;
  VectorXd s;
  Index t = 0;
};

struct TrainerSettings {
  WeighterKind weighter = WeighterKind::teacher;
  double lambda = 1e-4;
  double mu = 0.9;
  LrSchedule schedule;
  Index K = 20;
  Index B = 2;
  ReconstructionMode mode = ReconstructionMode::checkpoint;
  MetricKind metric = MetricKind::log_likelihood;
  bool extra_batch_mean = false;
  TeacherOptimizer optimizer = TeacherOptimizer::momentum;
  double teacher_lr = 1e-3;
  double teacher_momentum = 0.9;
  Index warmup_steps = 0;
  Index total_steps = 1;
  double focal_gamma = 1.0;
  SplSchedule spl;
};

/// Applies one ascent step to `omega` given the hypergradient `g`.
void teacher_ascent(VectorXd& omega, TeacherOptState& st, const VectorXd& g,
                    TeacherOptimizer kind, double lr, double momentum);

/// The training loop state for one run, independent of where minibatches come
/// from. Works with any DifferentiableModel so the loop can be checked on
/// analytic problems.
template <DifferentiableModel Model>
class Trainer {
 public:
  using Scalar = typename Model::scalar_type;
  using VecS = Vec<Scalar>;

  struct StepInfo {
    Scalar mean_loss = 0;
    VecS normalized;  // weights without the literal-eq2 scale
  };

  struct UpdateInfo {
    Scalar metric = 0;
    Scalar grad_norm = 0;
    bool applied = false;
    VecS d_omega;
  };

  Trainer(const Model& model, TeacherModel<Scalar> teacher, TrainerSettings s,
          VecS theta0)
      : model_(&model),
        teacher_(std::move(teacher)),
        s_(std::move(s)),
        tail_(s_.B, s_.mode) {
    if (s_.B < 1 || s_.B > s_.K) throw ConfigError("need 1 <= B <= K");
    state_.theta = std::move(theta0);
    state_.v = VecS::Zero(state_.theta.size());
    state_.mu = static_cast<Scalar>(s_.mu);
    state_.schedule = s_.schedule;
    surface_.total_steps = s_.total_steps;
    opt_.m = VectorXd::Zero(teacher_.param_count());
    opt_.s = VectorXd::Zero(teacher_.param_count());
  }

  bool uses_tail() const {
    return s_.weighter == WeighterKind::teacher || s_.weighter == WeighterKind::uniform;
  }
  bool in_window(Index t) const { return t % s_.K >= s_.K - s_.B; }
  bool update_due() const { return state_.t > 0 && state_.t % s_.K == 0; }

  StepInfo step(const Batch<Scalar>& batch) {
    const Index t = state_.t;
    const Index n = batch.size();
    const auto fwd = model_->forward(state_.theta, batch);
    StepInfo info;
    info.mean_loss = fwd.losses.mean();
    surface_.step = t;
    surface_.record_train_loss(static_cast<double>(info.mean_loss));

    const bool record = uses_tail() && in_window(t);
    Mat<Scalar> z;
    if (s_.weighter == WeighterKind::teacher || record) z = teacher_inputs(fwd, batch.labels);

    const Scalar scale = s_.extra_batch_mean ? Scalar(1) / static_cast<Scalar>(n) : Scalar(1);
    switch (s_.weighter) {
      case WeighterKind::teacher:
        info.normalized = normalize(raw_weights(teacher_, z));
        break;
      case WeighterKind::uniform:
        info.normalized = VecS::Constant(n, Scalar(1) / static_cast<Scalar>(n));
        break;
      case WeighterKind::focal: {
        const VecS p = (-fwd.losses.array()).exp().min(Scalar(1)).matrix();
        info.normalized = focal_weights<Scalar>(p, static_cast<Scalar>(s_.focal_gamma)) /
                          static_cast<Scalar>(n);
        break;
      }
      case WeighterKind::spl: {
        VecS sel = spl_weights<Scalar>(fwd.losses, static_cast<Scalar>(s_.spl.at(t)));
        const Scalar count = sel.sum();
        info.normalized = count > Scalar(0) ? VecS(sel / count) : sel;
        break;
      }
    }
    const VecS w = scale * info.normalized;
    const VecS g = model_->grad(state_.theta, batch, fwd, w, static_cast<Scalar>(s_.lambda));
    if (record) {
      StepRecord<Scalar> rec;
      rec.step = t;
      rec.lr = static_cast<Scalar>(s_.schedule.at(t));
      rec.weights = w;
      rec.weight_scale = scale;
      rec.teacher_inputs = std::move(z);
      if (s_.mode == ReconstructionMode::checkpoint) {
        rec.theta = state_.theta;
        rec.v = state_.v;
      }
      rec.batch = batch;
      tail_.push(std::move(rec));
    }
    state_ = sgd_step(std::move(state_), g);
    return info;
  }

  /// Validation metric and hypergradient at the current state; applies the
  /// ascent step when the weighter is the teacher, the whole window lies past
  /// warm-up, and `allow_apply`. Clears the tail.
  UpdateInfo teacher_update(const Batch<Scalar>& valid, bool allow_apply = true) {
    UpdateInfo u;
    const auto m = model_->valid_metric_and_grad(state_.theta, valid, s_.metric);
    u.metric = m.value;
    u.d_omega = VecS::Zero(teacher_.param_count());
    if (uses_tail() && !tail_.empty()) {
      const auto hg = hypergradient(*model_, teacher_, tail_, state_, m.grad,
                                    static_cast<Scalar>(s_.lambda));
      u.d_omega = hg.d_omega;
      u.grad_norm = hg.d_omega.norm();
      const bool eligible = state_.t - s_.B >= s_.warmup_steps && tail_.size() == s_.B;
      if (s_.weighter == WeighterKind::teacher && allow_apply && eligible) {
        VectorXd omega = teacher_.params().template cast<double>();
        teacher_ascent(omega, opt_, u.d_omega.template cast<double>(), s_.optimizer,
                       s_.teacher_lr, s_.teacher_momentum);
        teacher_.set_params(omega.template cast<Scalar>());
        u.applied = true;
      }
    }
    tail_.clear();
    return u;
  }

  Mat<Scalar> teacher_inputs(const typename Model::Forward& fwd,
                             const std::vector<int>& labels) const {
    const auto& fs = teacher_.spec().features;
    Mat<Scalar> surf;
    if (fs.surface) surf = normalize_surface(surface_features<Scalar>(fwd.logits, labels, surface_));
    return teacher_input<Scalar>(fs, fwd.features, labels, model_->classes(), surf);
  }

  const Model& model() const { return *model_; }
  const TrainerSettings& settings() const { return s_; }
  const OptimizerState<Scalar>& state() const { return state_; }
  OptimizerState<Scalar>& state() { return state_; }
  const TeacherModel<Scalar>& teacher() const { return teacher_; }
  TeacherModel<Scalar>& teacher() { return teacher_; }
  const SurfaceState& surface() const { return surface_; }
  SurfaceState& surface() { return surface_; }
  const TeacherOptState& teacher_opt() const { return opt_; }
  TeacherOptState& teacher_opt() { return opt_; }
  const TrajectoryTail<Scalar>& tail() const { return tail_; }

 private:
  const Model* model_;
  TeacherModel<Scalar> teacher_;
  TrainerSettings s_;
  OptimizerState<Scalar> state_;
  TrajectoryTail<Scalar> tail_;
  SurfaceState surface_;
  TeacherOptState opt_;
};

// ---------------------------------------------------------------------------
// Runs on datasets.

/// Per-purpose seeds derived from one run seed. Non-zero data/noise seeds in
/// the config take precedence.
struct SeedPlan {
  std::uint64_t data = 0;
  std::uint64_t noise = 0;
  std::uint64_t split = 0;
  std::uint64_t init = 0;
  std::uint64_t shuffle = 0;
  std::uint64_t teacher = 0;
};

SeedPlan derive_seeds(const ExperimentConfig& c, std::uint64_t seed);

/// Generates or loads the dataset, splits it, and corrupts the training split.
DataSplits prepare_data(const ExperimentConfig& c, std::uint64_t seed);

StudentSpec student_spec(const ExperimentConfig& c, Index input_dim, Index classes);
TeacherSpec teacher_spec(const ExperimentConfig& c, const Mlp<double>& student);

Index steps_per_epoch(const ExperimentConfig& c, Index train_size);

/// Row order for one epoch (a seeded permutation of the training rows).
std::vector<Index> epoch_order(Index train_size, std::uint64_t shuffle_seed, Index epoch);

double accuracy(const Mlp<double>& model, const VectorXd& theta, const Batch<double>& b);

struct RunOptions {
  std::filesystem::path out_dir;  // empty: no files
  bool resume = false;
  Index stop_after_step = -1;  // stop early (after checkpointing) for tests
};

struct RunResult {
  StudentSpec student;
  VectorXd theta;
  std::optional<TeacherModel<double>> teacher;
  std::vector<MetricsRecord> log;
  SurfaceState surface;
  DataSplits data;
  Index steps = 0;
};

/// Non-finite state during training. Carries the rows logged so far.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, std::vector<MetricsRecord> partial)
      : NumericError(what), partial_(std::move(partial)) {}
  const std::vector<MetricsRecord>& partial_log() const { return partial_; }

 private:
  std::vector<MetricsRecord> partial_;
};

/// Full training run for one seed. With an output directory, writes
/// metrics.csv, metrics.jsonl, weight_report.csv, config.cfg and
/// checkpoint.bin.
RunResult run(const ExperimentConfig& c, std::uint64_t seed, const RunOptions& opts = {});

// ---------------------------------------------------------------------------
// Metrics and weight exports.

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& r);
std::string metrics_json_line(const MetricsRecord& r);
void write_metrics(const std::filesystem::path& dir, const std::vector<MetricsRecord>& log);
std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& file);

struct WeightRow {
  Index id = 0;
  int label = 0;  // observed
  int clean_label = 0;
  double loss = 0;
  double weight = 0;  // normalized over the whole set
  bool corrupted = false;
};

/// Per-sample loss and weight at the final state, weights normalized over
/// the whole dataset.
std::vector<WeightRow> weight_report(const ExperimentConfig& c, const Mlp<double>& student,
                                     const VectorXd& theta, const TeacherModel<double>& teacher,
                                     const SurfaceState& surface, const Dataset& d,
                                     Index final_step);
void write_weight_report(const std::filesystem::path& file, const std::vector<WeightRow>& rows);

struct WeightSummary {
  double mean_clean = 0;
  double mean_corrupted = 0;
};
WeightSummary summarize_weights(const std::vector<WeightRow>& rows);

// ---------------------------------------------------------------------------
// Checkpoints.

struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  Index step = 0;
  VectorXd theta;
  VectorXd v;
  VectorXd omega;
  TeacherOptState teacher_opt;
  SurfaceState surface;
  SplSchedule spl;
  std::vector<MetricsRecord> log;
};

void write_checkpoint(const std::filesystem::path& file, const Checkpoint& ck);
/// Throws IoError on unreadable or damaged files.
Checkpoint read_checkpoint(const std::filesystem::path& file);

// ---------------------------------------------------------------------------
// Sweeps.

enum class SweepKind { kb, gamma, features };
SweepKind parse_sweep(const std::string& s);
std::string to_string(SweepKind k);

struct SweepCell {
  std::string label;
  std::vector<std::pair<std::string, std::string>> overrides;  // "section.key", value
};

std::vector<SweepCell> sweep_grid(SweepKind k);

struct SweepRow {
  std::string label;
  std::vector<std::uint64_t> seeds;
  std::vector<double> test_accuracy;  // final, per seed
  double mean = 0;
  double stddev = 0;
};

/// Runs every cell for every configured seed, `threads` runs at a time.
/// Results do not depend on the thread count.
std::vector<SweepRow> sweep(const ExperimentConfig& c, const std::vector<SweepCell>& cells,
                            int threads = 1);
std::string sweep_table_csv(const std::vector<SweepRow>& rows);

/// Thread count from L2RW_THREADS (default 1).
int default_threads();

/// Sample mean and standard deviation (n - 1; 0 for a single value).
std::pair<double, double> mean_std(const std::vector<double>& x);

}  // namespace l2rw

#endif  // L2RW_HARNESS_HPP_
