#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "l2rw/harness.hpp"
#include "l2rw/quadratic_model.hpp"
#include "test_util.hpp"

using namespace l2rw;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.data.classes = 4;
  c.data.per_class = 60;
  c.data.dim = 6;
  c.data.valid_fraction = 0.1;
  c.data.test_fraction = 0.2;
  c.noise.kind = NoiseKind::uniform;
  c.noise.p = 0.4;
  c.student.hidden = {16};
  c.student.batch_size = 16;
  c.student.epochs = 4;
  c.student.lr = 0.05;
  c.teacher.features = parse_feature_set("M0+M1");
  c.teacher.optimizer = TeacherOptimizer::adam;
  c.teacher.lr = 0.03;
  c.teacher.K = 5;
  c.teacher.B = 2;
  c.run.seeds = {3};
  return c;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string csv(const std::vector<MetricsRecord>& log) {
  std::string out = metrics_csv_header() + "\n";
  for (const auto& r : log) out += metrics_csv_row(r) + "\n";
  return out;
}

struct QuadraticSetup {
  QuadraticModel<double> model;
  std::vector<Batch<double>> batches;
  Batch<double> valid;
  TeacherModel<double> teacher;

  QuadraticSetup()
      : model([] {
          MatrixXd a = test::gaussian(3, 3, 1);
          return MatrixXd(a * a.transpose() / 3.0 + MatrixXd::Identity(3, 3));
        }(), 2),
        teacher([] {
          TeacherSpec ts;
          ts.features = {false, true, false};
          ts.classes = 2;
          return TeacherModel<double>(ts);
        }()) {
    for (int t = 0; t < 12; ++t) {
      auto b = test::random_batch(6, 3, 2, 50 + t);
      for (Index k = 0; k < 6; ++k) {
        b.ids[k] = t * 6 + k;
        // Label 1 marks shifted (outlier) targets.
        if (b.labels[k] == 1) b.inputs.row(k).array() += 3.0;
      }
      batches.push_back(b);
    }
    valid = test::random_batch(8, 3, 2, 99);
  }

  TrainerSettings settings(WeighterKind w, Index K, Index B) const {
    TrainerSettings s;
    s.weighter = w;
    s.lambda = 0.01;
    s.mu = 0.9;
    s.schedule.base = 0.1;
    s.K = K;
    s.B = B;
    s.total_steps = 12;
    s.teacher_lr = 1e-3;
    return s;
  }
};

}  // namespace

TEST_CASE("trainer matches a hand-written loop (K = B = 1)") {
  QuadraticSetup q;
  Trainer<QuadraticModel<double>> tr(q.model, q.teacher,
                                     q.settings(WeighterKind::uniform, 1, 1),
                                     VectorXd::Zero(3));
  VectorXd theta = VectorXd::Zero(3), v = VectorXd::Zero(3);
  for (const auto& b : q.batches) {
    const auto info = tr.step(b);
    CHECK(std::abs(info.normalized.sum() - 1.0) <= 1e-12);
    const VectorXd g = q.model.grad(theta, b, VectorXd::Constant(6, 1.0 / 6), 0.01);
    v = 0.9 * v + g;
    theta -= 0.1 * v;
    CHECK(tr.update_due());
    CHECK(tr.tail().size() == 1);
    const auto u = tr.teacher_update(q.valid);
    CHECK_FALSE(u.applied);
    CHECK(tr.tail().empty());
  }
  CHECK(tr.state().theta == theta);
  CHECK(tr.state().v == v);
  CHECK(tr.state().t == 12);
}

TEST_CASE("window and update schedule") {
  QuadraticSetup q;
  Trainer<QuadraticModel<double>> tr(q.model, q.teacher,
                                     q.settings(WeighterKind::teacher, 4, 2), VectorXd::Zero(3));
  CHECK_FALSE(tr.in_window(0));
  CHECK_FALSE(tr.in_window(1));
  CHECK(tr.in_window(2));
  CHECK(tr.in_window(3));
  CHECK(tr.in_window(6));
  for (int t = 0; t < 4; ++t) {
    CHECK_FALSE(tr.update_due());
    tr.step(q.batches[t]);
  }
  CHECK(tr.update_due());
  CHECK(tr.tail().size() == 2);
  CHECK(tr.tail()[0].step == 2);
  CHECK(tr.teacher_update(q.valid).applied);

  TrainerSettings bad = q.settings(WeighterKind::teacher, 2, 3);
  CHECK_THROWS_AS(Trainer<QuadraticModel<double>>(q.model, q.teacher, bad, VectorXd::Zero(3)),
                  ConfigError);
}

TEST_CASE("a small teacher step does not decrease the replayed validation metric") {
  QuadraticSetup q;
  TrainerSettings s = q.settings(WeighterKind::teacher, 4, 4);
  s.optimizer = TeacherOptimizer::momentum;
  s.teacher_lr = 1e-3;
  Trainer<QuadraticModel<double>> tr(q.model, q.teacher, s, VectorXd::Zero(3));
  for (int t = 0; t < 4; ++t) tr.step(q.batches[t]);
  const auto u = tr.teacher_update(q.valid);
  REQUIRE(u.applied);
  CHECK(u.grad_norm > 0.0);
  CHECK(tr.teacher().params() == VectorXd(1e-3 * u.d_omega));

  UnrolledProblem<QuadraticModel<double>> p;
  p.model = &q.model;
  p.batches = [&](Index t) { return q.batches[static_cast<std::size_t>(t)]; };
  p.theta0 = VectorXd::Zero(3);
  p.v0 = VectorXd::Zero(3);
  p.mu = 0.9;
  p.lambda = 0.01;
  p.schedule.base = 0.1;
  p.steps = 4;
  p.window = 4;
  p.valid = q.valid;
  const auto base = unroll(p, q.teacher);
  CHECK(base.metric == doctest::Approx(u.metric).epsilon(1e-14));
  const double after = replay_metric(p, base, tr.teacher());
  CHECK(after > base.metric);
}

TEST_CASE("uniform weighter equals a teacher with zero learning rate") {
  ExperimentConfig c = small_config();
  c.teacher.weighter = WeighterKind::uniform;
  const RunResult u = run(c, 3);
  c.teacher.weighter = WeighterKind::teacher;
  c.teacher.lr = 0.0;
  const RunResult t = run(c, 3);
  REQUIRE(u.log.size() == t.log.size());
  CHECK(csv(u.log) == csv(t.log));
  CHECK(u.theta == t.theta);
}

TEST_CASE("run logs rows on the update schedule") {
  ExperimentConfig c = small_config();
  const RunResult r = run(c, 3);
  // 168 training rows, batch 16: 10 steps per epoch, 40 steps total.
  CHECK(r.data.train.size() == 168);
  CHECK(steps_per_epoch(c, r.data.train.size()) == 10);
  CHECK(r.steps == 40);
  CHECK(r.log.size() == 8);
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    CHECK(r.log[i].step == static_cast<Index>(5 * (i + 1)));
    CHECK(std::isfinite(r.log[i].train_loss));
    CHECK(std::isfinite(r.log[i].valid_metric));
    CHECK(std::isfinite(r.log[i].teacher_grad_norm));
  }
  CHECK(r.log.back().mean_weight_corrupted > 0.0);
  // The warm-up epoch leaves the teacher at its starting point.
  c.student.epochs = 1;
  const RunResult one = run(c, 3);
  CHECK(one.teacher->params().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a final row closes runs that end between updates") {
  ExperimentConfig c = small_config();
  c.teacher.K = 7;
  const RunResult r = run(c, 3);
  CHECK(r.log.size() == 6);
  CHECK(r.log.back().step == 40);
}

TEST_CASE("runs are deterministic and write their files") {
  const ExperimentConfig c = small_config();
  const auto d1 = test::scratch_dir("harness_det1");
  const auto d2 = test::scratch_dir("harness_det2");
  const RunResult a = run(c, 3, {d1, false, -1});
  const RunResult b = run(c, 3, {d2, false, -1});
  CHECK(a.log == b.log);
  for (const char* f : {"metrics.csv", "metrics.jsonl", "weight_report.csv", "config.cfg"})
    CHECK(read_file(d1 / f) == read_file(d2 / f));
  CHECK(read_metrics_csv(d1 / "metrics.csv") == a.log);
  CHECK(fs::exists(d1 / "checkpoint.bin"));
  CHECK(parse_config(read_file(d1 / "config.cfg")).teacher.K == 5);

  const RunResult other = run(c, 4);
  CHECK_FALSE(other.log == a.log);
}

TEST_CASE("resume continues to the same result") {
  const ExperimentConfig c = small_config();
  const RunResult full = run(c, 3);
  const auto dir = test::scratch_dir("harness_resume");
  const RunResult part = run(c, 3, {dir, false, 22});
  CHECK(part.steps < full.steps);
  const Checkpoint ck = read_checkpoint(dir / "checkpoint.bin");
  CHECK(ck.step == 30);
  const RunResult rest = run(c, 3, {dir, true, -1});
  CHECK(rest.log == full.log);
  CHECK(rest.theta == full.theta);
  CHECK(read_metrics_csv(dir / "metrics.csv") == full.log);

  ExperimentConfig changed = c;
  changed.teacher.lr = 0.01;
  CHECK_THROWS_AS(run(changed, 3, {dir, true, -1}), ConfigError);
  CHECK_THROWS_AS(run(c, 4, {dir, true, -1}), ConfigError);
}

TEST_CASE("checkpoint round trip and damage detection") {
  Checkpoint ck;
  ck.config_hash = 0x1234;
  ck.seed = 5;
  ck.step = 77;
  ck.theta = test::gaussian_vec(9, 1);
  ck.v = test::gaussian_vec(9, 2);
  ck.omega = test::gaussian_vec(4, 3);
  ck.teacher_opt.m = test::gaussian_vec(4, 4);
  ck.teacher_opt.s = test::gaussian_vec(4, 5).cwiseAbs();
  ck.teacher_opt.t = 3;
  ck.surface.total_steps = 100;
  ck.surface.step = 76;
  ck.surface.loss_sum = 12.5;
  ck.surface.loss_count = 77;
  ck.surface.best_valid_accuracy = 0.8;
  ck.spl.start = 0.3;
  ck.spl.end = 4.0;
  ck.spl.total_steps = 100;
  MetricsRecord r;
  r.step = 20;
  r.test_accuracy = 0.5;
  ck.log = {r, r};
  const auto dir = test::scratch_dir("harness_ckpt");
  write_checkpoint(dir / "c.bin", ck);
  const Checkpoint back = read_checkpoint(dir / "c.bin");
  CHECK(back.config_hash == ck.config_hash);
  CHECK(back.step == 77);
  CHECK(back.theta == ck.theta);
  CHECK(back.v == ck.v);
  CHECK(back.omega == ck.omega);
  CHECK(back.teacher_opt.s == ck.teacher_opt.s);
  CHECK(back.teacher_opt.t == 3);
  CHECK(back.surface.loss_sum == 12.5);
  CHECK(back.spl.end == 4.0);
  CHECK(back.log == ck.log);

  std::string bytes = read_file(dir / "c.bin");
  bytes[bytes.size() / 2] ^= 0x10;
  std::ofstream(dir / "bad.bin", std::ios::binary) << bytes;
  CHECK_THROWS_AS(read_checkpoint(dir / "bad.bin"), IoError);
  CHECK_THROWS_AS(read_checkpoint(dir / "missing.bin"), IoError);
}

TEST_CASE("weight report") {
  const ExperimentConfig c = small_config();
  const RunResult r = run(c, 3);
  const Mlp<double> model(r.student);
  TeacherModel<double> zero = *r.teacher;
  zero.params().setZero();
  const auto rows = weight_report(c, model, r.theta, zero, r.surface, r.data.train, r.steps);
  CHECK(static_cast<Index>(rows.size()) == r.data.train.size());
  for (const auto& row : rows)
    CHECK(row.weight == doctest::Approx(1.0 / static_cast<double>(rows.size())).epsilon(1e-12));
  const auto trained = weight_report(c, model, r.theta, *r.teacher, r.surface, r.data.train,
                                     r.steps);
  double total = 0;
  for (const auto& row : trained) total += row.weight;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  const auto sum = summarize_weights(trained);
  CHECK(sum.mean_clean > 0.0);
  CHECK(sum.mean_corrupted > 0.0);
}

TEST_CASE("seeded epoch order") {
  const auto a = epoch_order(50, 7, 0);
  CHECK(a == epoch_order(50, 7, 0));
  CHECK(a != epoch_order(50, 7, 1));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (Index i = 0; i < 50; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("seed plan") {
  ExperimentConfig c;
  const SeedPlan a = derive_seeds(c, 1);
  const SeedPlan b = derive_seeds(c, 2);
  CHECK(a.data != b.data);
  CHECK(a.init != a.shuffle);
  c.data.seed = 42;
  CHECK(derive_seeds(c, 1).data == 42);
  CHECK(derive_seeds(c, 2).data == 42);
}

TEST_CASE("sweep grids and a single-cell sweep") {
  CHECK(sweep_grid(SweepKind::kb).size() == 5);
  CHECK(sweep_grid(SweepKind::gamma).size() == 3);
  CHECK(sweep_grid(SweepKind::features).size() == 6);
  CHECK(parse_sweep("kb") == SweepKind::kb);
  CHECK_THROWS_AS(parse_sweep("lr"), ConfigError);

  ExperimentConfig c = small_config();
  c.run.seeds = {3, 4};
  const auto rows = sweep(c, {SweepCell{"base", {}}}, 2);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].test_accuracy[0] == run(c, 3).log.back().test_accuracy);
  CHECK(rows[0].test_accuracy[1] == run(c, 4).log.back().test_accuracy);
  const auto one_thread = sweep(c, {SweepCell{"base", {}}}, 1);
  CHECK(sweep_table_csv(rows) == sweep_table_csv(one_thread));

  const auto [m, s] = mean_std({1.0, 2.0, 3.0});
  CHECK(m == 2.0);
  CHECK(s == 1.0);
  CHECK(mean_std({4.0}).second == 0.0);
}
