// Acceptance suite. One PASS/FAIL line per criterion; exit status 0 iff every
// selected criterion passes.
//
//   acceptance               run all criteria
//   acceptance --criterion N run one

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "l2rw/baselines.hpp"
#include "l2rw/config.hpp"
#include "l2rw/gradcheck.hpp"
#include "l2rw/harness.hpp"
#include "l2rw/hypergrad.hpp"

using namespace l2rw;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and thresholds.
constexpr double kGradTol = 1e-6;
constexpr double kHvpTol = 1e-5;
constexpr double kOmegaTol = 1e-6;
constexpr double kHyperTol = 1e-3;
constexpr double kOracleSeconds = 120;
constexpr double kReverseTol = 1e-8;
constexpr double kReverseSeconds = 60;
constexpr double kUniformMargin = 0.03;
constexpr int kUniformWeightSeeds = 4;
constexpr double kUniformSeconds = 600;
constexpr double kFlipMargin = 0.02;
constexpr double kFlipSeconds = 600;
constexpr double kSigmas = 3.0;
constexpr double kBaselineSeconds = 10;

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path config_dir() { return fs::path(L2RW_CONFIG_DIR); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("l2rw_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

bool record_finite(const MetricsRecord& r) {
  for (double x : {r.train_loss, r.valid_metric, r.test_accuracy, r.mean_weight_clean,
                   r.mean_weight_corrupted, r.teacher_grad_norm})
    if (!std::isfinite(x)) return false;
  return true;
}

// 1. Gradient oracle suite.
Outcome oracle_suite() {
  Outcome o{true, ""};
  for (const char* features : {"I0+M0", "M0+M1"}) {
    ExperimentConfig c;
    c.gradcheck.problem = GradcheckProblem::mlp;
    c.gradcheck.hidden = {16, 16};
    c.gradcheck.input_dim = 8;
    c.gradcheck.classes = 4;
    c.gradcheck.samples = 32;
    c.gradcheck.steps = 5;
    c.student.momentum = 0.9;
    c.teacher.features = parse_feature_set(features);
    const GradcheckReport r = gradcheck(c, 1);
    if (r.params > 2000) o.pass = false;
    const double tol[] = {kGradTol, kHvpTol, kHvpTol, kOmegaTol, kHyperTol};
    o.detail += std::string(features) + " (" + std::to_string(r.params) + " params):";
    for (std::size_t i = 0; i < r.lines.size(); ++i) {
      const bool ok = r.lines[i].max_rel_err <= tol[i];
      o.pass = o.pass && ok;
      o.detail += " " + r.lines[i].name + "=" + fmt("%.1e", r.lines[i].max_rel_err) +
                  (ok ? "" : "!") + "<=" + fmt("%.0e", tol[i]);
    }
    o.detail += "; ";
  }
  return o;
}

// 2. Reversibility on the blob task's student.
Outcome reversibility() {
  ExperimentConfig c = load_config(config_dir() / "blobs_uniform40.cfg");
  double worst = 0;
  bool bitwise = true;
  int cases = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const DataSplits d = prepare_data(c, seed);
    const Mlp<double> model(student_spec(c, d.train.dim(), d.train.classes));
    TeacherModel<double> teacher(teacher_spec(c, model));
    teacher.params() = Vec<double>::Constant(teacher.param_count(), 0.1);
    const auto order = epoch_order(d.train.size(), seed, 0);
    auto batches = [&](Index t) {
      std::vector<Index> rows(order.begin() + t * 128, order.begin() + (t + 1) * 128);
      return d.train.batch(rows);
    };
    for (Index B : {1, 2, 5}) {
      UnrolledProblem<Mlp<double>> p;
      p.model = &model;
      p.batches = batches;
      p.theta0 = model.init_params(seed);
      p.v0 = VectorXd::Zero(model.param_count());
      p.mu = c.student.momentum;
      p.lambda = c.student.lambda;
      p.schedule.base = c.student.lr;
      p.steps = 30;
      p.window = B;
      p.valid = d.valid.as_batch();
      p.mode = ReconstructionMode::checkpoint;
      const auto ck = unroll(p, teacher);
      p.mode = ReconstructionMode::reversal;
      const auto rv = unroll(p, teacher);
      const auto hc = hypergradient(model, teacher, ck.tail, ck.final_state, ck.dtheta_final,
                                    p.lambda);
      const auto hr = hypergradient(model, teacher, rv.tail, rv.final_state, rv.dtheta_final,
                                    p.lambda);
      for (Index i = 0; i < B; ++i) {
        bitwise = bitwise && hc.recovered_theta[i] == ck.tail[i].theta &&
                  hc.recovered_v[i] == ck.tail[i].v;
        worst = std::max(worst, (hr.recovered_theta[i] - ck.tail[i].theta).norm() /
                                    ck.tail[i].theta.norm());
        worst = std::max(worst,
                         (hr.recovered_v[i] - ck.tail[i].v).norm() / ck.tail[i].v.norm());
      }
      ++cases;
    }
  }
  return {bitwise && worst <= kReverseTol,
          std::to_string(cases) + " windows (B in {1,2,5}, 3 seeds): reversal drift " +
              fmt("%.1e", worst) + " <= " + fmt("%.0e", kReverseTol) + ", checkpoint " +
              (bitwise ? "bit-identical" : "MISMATCH")};
}

// 3. Neutral start.
Outcome neutral_start() {
  ExperimentConfig c = load_config(config_dir() / "blobs_uniform40.cfg");
  bool same = true;
  std::string detail;
  for (std::uint64_t seed : {1, 2}) {
    const fs::path a = scratch("neutral_uniform_" + std::to_string(seed));
    const fs::path b = scratch("neutral_teacher_" + std::to_string(seed));
    ExperimentConfig u = c;
    u.teacher.weighter = WeighterKind::uniform;
    ExperimentConfig t = c;
    t.teacher.weighter = WeighterKind::teacher;
    t.teacher.lr = 0.0;
    run(u, seed, {a, false, -1});
    run(t, seed, {b, false, -1});
    const std::string ca = slurp(a / "metrics.csv"), cb = slurp(b / "metrics.csv");
    const bool eq = !ca.empty() && ca == cb;
    same = same && eq;
    detail += "seed " + std::to_string(seed) + ": " + std::to_string(ca.size()) + " bytes " +
              (eq ? "identical" : "DIFFER") + "; ";
  }
  return {same, detail};
}

// 4 and 5. Teacher vs uniform on noisy blobs, paired over seeds.
Outcome noisy_efficacy(const std::string& cfg, double margin, bool check_weights,
                       double budget) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig c = load_config(config_dir() / cfg);
  std::vector<double> diffs;
  int weight_ok = 0;
  bool finite = true;
  bool sizes = true;
  std::string per_seed;
  for (std::uint64_t seed : c.run.seeds) {
    ExperimentConfig u = c;
    u.teacher.weighter = WeighterKind::uniform;
    const RunResult ru = run(u, seed);
    const RunResult rt = run(c, seed);
    sizes = sizes && rt.data.train.size() == 5000 && rt.data.valid.size() == 500 &&
            rt.data.test.size() == 1000;
    for (const auto* log : {&ru.log, &rt.log})
      for (const auto& r : *log) finite = finite && record_finite(r);
    const double diff = rt.log.back().test_accuracy - ru.log.back().test_accuracy;
    diffs.push_back(diff);
    const auto ws = summarize_weights(weight_report(c, Mlp<double>(rt.student), rt.theta,
                                                    *rt.teacher, rt.surface, rt.data.train,
                                                    rt.steps));
    const bool lower = ws.mean_corrupted < ws.mean_clean;
    weight_ok += lower;
    per_seed += " " + fmt("%+.2f", 100 * diff) + (lower ? "" : "*");
  }
  const auto [mean, sd] = mean_std(diffs);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const int n = static_cast<int>(diffs.size());
  bool pass = mean >= margin && finite && sizes && secs <= budget && n == 5;
  std::string detail = "mean paired diff " + fmt("%+.2f", 100 * mean) + " +- " +
                       fmt("%.2f", 100 * sd) + " pts (>= " + fmt("%.2f", 100 * margin) +
                       "); per seed" + per_seed;
  detail += "; corrupted<clean weight " + std::to_string(weight_ok) + "/" + std::to_string(n);
  if (check_weights) {
    pass = pass && weight_ok >= kUniformWeightSeeds;
    detail += " (>= " + std::to_string(kUniformWeightSeeds) + ")";
  }
  detail += std::string("; splits 5000/500/1000 ") + (sizes ? "ok" : "WRONG");
  detail += std::string("; metrics finite ") + (finite ? "yes" : "NO");
  detail += "; " + fmt("%.0f", secs) + " s (<= " + fmt("%.0f", budget) + " s)";
  return {pass, detail};
}

// 6. Noise statistics over 10 seeds on the 5000-sample training split.
Outcome noise_statistics() {
  struct Case {
    NoiseKind kind;
    double p;
  };
  const Case cases[] = {{NoiseKind::uniform, 0.4}, {NoiseKind::uniform, 0.6},
                        {NoiseKind::flip, 0.2}, {NoiseKind::flip, 0.4}};
  ExperimentConfig c = load_config(config_dir() / "blobs_uniform40.cfg");
  int checked = 0, inside = 0;
  double worst_z = 0;
  for (const auto& cs : cases) {
    c.noise.kind = cs.kind;
    c.noise.p = cs.p;
    const double C = static_cast<double>(c.data.classes);
    const double expect = cs.kind == NoiseKind::uniform ? cs.p * (C - 1) / C : cs.p;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const DataSplits d = prepare_data(c, seed);
      const double n = static_cast<double>(d.train.size());
      const double z = std::abs(d.train.corrupted_fraction() - expect) /
                       std::sqrt(expect * (1 - expect) / n);
      worst_z = std::max(worst_z, z);
      inside += z <= kSigmas;
      ++checked;
      if (d.valid.corrupted_fraction() != 0.0 || d.test.corrupted_fraction() != 0.0) return {false, "noise leaked into valid/test"};
    }
  }
  return {inside == checked, std::to_string(inside) + "/" + std::to_string(checked) +
                                 " (uniform 0.4/0.6, flip 0.2/0.4 x 10 seeds) within " +
                                 fmt("%.0f", kSigmas) + " sigma; worst " +
                                 fmt("%.2f", worst_z) + " sigma; valid/test clean"};
}

// 7. (K, B) sweep on the blob task.
Outcome kb_sweep() {
  const ExperimentConfig c = load_config(config_dir() / "blobs_uniform40.cfg");
  const auto cells = sweep_grid(SweepKind::kb);
  const auto rows = sweep(c, cells, default_threads());
  const char* expect[] = {"K=1 B=1", "K=20 B=2", "K=20 B=5", "K=100 B=2", "K=100 B=5"};
  bool complete = rows.size() == 5;
  std::string table;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    complete = complete && i < 5 && rows[i].label == expect[i] &&
               rows[i].test_accuracy.size() == c.run.seeds.size();
    for (double a : rows[i].test_accuracy) complete = complete && std::isfinite(a);
    table += " " + rows[i].label + " " + fmt("%.2f", 100 * rows[i].mean) + "+-" +
             fmt("%.2f", 100 * rows[i].stddev) + ";";
  }
  const fs::path out = scratch("kb_sweep");
  std::ofstream(out / "sweep_kb.csv") << sweep_table_csv(rows);
  return {complete, std::to_string(rows.size()) + " rows x " +
                        std::to_string(c.run.seeds.size()) + " seeds:" + table + " table " +
                        (out / "sweep_kb.csv").string()};
}

// 8. Baseline weighter properties.
Outcome baseline_properties() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;

  const VectorXd p = VectorXd::LinSpaced(201, 0.0, 1.0);
  ok = ok && (focal_weights(p, 0.0).array() == 1.0).all();
  for (double g : {0.5, 1.0, 2.0}) {
    const VectorXd w = focal_weights(p, g);
    for (Index i = 1; i < w.size(); ++i) ok = ok && w[i] <= w[i - 1];
  }

  // gamma = 0 trains exactly like the uniform weighter.
  ExperimentConfig c;
  c.data.classes = 5;
  c.data.per_class = 80;
  c.data.dim = 8;
  c.noise.kind = NoiseKind::uniform;
  c.noise.p = 0.4;
  c.student.hidden = {32};
  c.student.batch_size = 32;
  c.student.epochs = 3;
  c.baselines.focal_gamma = 0.0;
  c.teacher.weighter = WeighterKind::focal;
  const RunResult f = run(c, 1);
  c.teacher.weighter = WeighterKind::uniform;
  const RunResult u = run(c, 1);
  bool same = f.theta == u.theta && f.log.size() == u.log.size();
  for (std::size_t i = 0; same && i < f.log.size(); ++i)
    same = f.log[i].test_accuracy == u.log[i].test_accuracy &&
           f.log[i].train_loss == u.log[i].train_loss &&
           f.log[i].mean_weight_clean == u.log[i].mean_weight_clean;
  ok = ok && same;
  detail += std::string("focal gamma=0 ") + (same ? "==" : "!=") + " uniform run; ";

  std::mt19937_64 rng(7);
  std::exponential_distribution<double> expo(1.0);
  VectorXd losses(1000);
  for (Index i = 0; i < losses.size(); ++i) losses[i] = expo(rng);
  bool mono = true;
  VectorXd prev = spl_weights(losses, 0.0);
  for (int k = 1; k <= 200; ++k) {
    const VectorXd cur = spl_weights(losses, 0.05 * k);
    mono = mono && (cur.array() >= prev.array()).all();
    prev = cur;
  }
  std::vector<double> lv(losses.data(), losses.data() + losses.size());
  const auto sched = SplSchedule::from_losses(lv, 30.0, 500);
  for (Index t = 1; t <= 600; ++t) mono = mono && sched.at(t) >= sched.at(t - 1);
  mono = mono && spl_weights(losses, sched.at(500)).sum() == 1000.0;
  ok = ok && mono;
  detail += std::string("SPL selection/schedule monotone ") + (mono ? "yes" : "NO");

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  detail += "; " + fmt("%.2f", secs) + " s (< " + fmt("%.0f", kBaselineSeconds) + " s)";
  return {ok && secs < kBaselineSeconds, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  int only = 0;
  app.add_option("--criterion", only, "Run a single criterion (1-8)")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);

  struct Criterion {
    const char* name;
    double budget;  // seconds; 0: none
    std::function<Outcome()> fn;
  };
  const Criterion all[] = {
      {"gradient oracle suite", kOracleSeconds, oracle_suite},
      {"reversibility", kReverseSeconds, reversibility},
      {"neutral-start equivalence", 0, neutral_start},
      {"uniform-noise efficacy", 0,
       [] { return noisy_efficacy("blobs_uniform40.cfg", kUniformMargin, true, kUniformSeconds); }},
      {"flip-noise efficacy", 0,
       [] { return noisy_efficacy("blobs_flip20.cfg", kFlipMargin, false, kFlipSeconds); }},
      {"noise-injection statistics", 0, noise_statistics},
      {"(K, B) sweep table", 0, kb_sweep},
      {"baseline weighter properties", 0, baseline_properties},
  };

  int failed = 0;
  for (int i = 1; i <= 8; ++i) {
    if (only != 0 && i != only) continue;
    const Criterion& cr = all[i - 1];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cr.budget > 0 && secs > cr.budget) {
      o.pass = false;
      o.detail += " [over " + fmt("%.0f", cr.budget) + " s budget]";
    }
    std::printf("criterion %d %-30s %s  (%.1f s)  %s\n", i, cr.name, o.pass ? "PASS" : "FAIL",
                secs, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
