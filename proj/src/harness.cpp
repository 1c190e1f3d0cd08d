#include "l2rw/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace l2rw {

namespace fs = std::filesystem;

void teacher_ascent(VectorXd& omega, TeacherOptState& st, const VectorXd& g,
                    TeacherOptimizer kind, double lr, double momentum) {
  if (st.m.size() != omega.size()) st.m = VectorXd::Zero(omega.size());
  if (st.s.size() != omega.size()) st.s = VectorXd::Zero(omega.size());
  ++st.t;
  if (kind == TeacherOptimizer::momentum) {
    st.m = momentum * st.m + g;
    omega += lr * st.m;
    return;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  st.m = b1 * st.m + (1 - b1) * g;
  st.s = b2 * st.s + (1 - b2) * g.cwiseAbs2();
  const double c1 = 1 - std::pow(b1, static_cast<double>(st.t));
  const double c2 = 1 - std::pow(b2, static_cast<double>(st.t));
  omega.array() += lr * (st.m.array() / c1) / ((st.s.array() / c2).sqrt() + eps);
}

SeedPlan derive_seeds(const ExperimentConfig& c, std::uint64_t seed) {
  SeedPlan s;
  s.data = c.data.seed != 0 ? c.data.seed : mix_seed(seed, 1);
  s.noise = c.noise.seed != 0 ? c.noise.seed : mix_seed(seed, 2);
  s.split = mix_seed(seed, 3);
  s.init = mix_seed(seed, 4);
  s.shuffle = mix_seed(seed, 5);
  s.teacher = mix_seed(seed, 6);
  return s;
}

DataSplits prepare_data(const ExperimentConfig& c, std::uint64_t seed) {
  const SeedPlan seeds = derive_seeds(c, seed);
  DataSplits out;
  if (c.data.source == "file") {
    LoadedDataset loaded = read_dataset(c.data.path);
    if (!loaded.tags.empty()) {
      std::vector<Index> rows[3];
      for (std::size_t k = 0; k < loaded.tags.size(); ++k)
        rows[static_cast<int>(loaded.tags[k])].push_back(static_cast<Index>(k));
      if (rows[0].empty() || rows[1].empty())
        throw ConfigError("dataset split file leaves train or valid empty");
      out.train = loaded.data.subset(rows[0]);
      out.valid = loaded.data.subset(rows[1]);
      out.test = loaded.data.subset(rows[2]);
    } else {
      out = split(loaded.data, c.data.valid_fraction, c.data.test_fraction, seeds.split);
    }
  } else {
    BlobSpec b;
    b.classes = c.data.classes;
    b.per_class = c.data.per_class;
    b.dim = c.data.dim;
    b.spread = c.data.spread;
    b.separation = c.data.separation;
    b.confusable_offset = c.data.confusable_offset;
    b.seed = seeds.data;
    out = split(gen_blobs(b), c.data.valid_fraction, c.data.test_fraction, seeds.split);
  }
  NoiseSpec ns{c.noise.kind, c.noise.p, seeds.noise, c.noise.uniform_includes_true};
  out.train = inject_noise(std::move(out.train), ns);
  out.train.check_invariants();
  return out;
}

StudentSpec student_spec(const ExperimentConfig& c, Index input_dim, Index classes) {
  StudentSpec s;
  s.input_dim = input_dim;
  s.hidden = c.student.hidden;
  s.classes = classes;
  s.activation = c.student.activation;
  s.feature_level = c.student.feature_level;
  return s;
}

TeacherSpec teacher_spec(const ExperimentConfig& c, const Mlp<double>& student) {
  TeacherSpec t;
  t.features = c.teacher.features;
  t.internal_dim = student.feature_dim();
  t.classes = student.classes();
  t.hidden_layers = c.teacher.hidden_layers;
  return t;
}

Index steps_per_epoch(const ExperimentConfig& c, Index train_size) {
  const Index spe = train_size / c.student.batch_size;
  if (spe < 1) throw ConfigError("training split is smaller than one batch");
  return spe;
}

std::vector<Index> epoch_order(Index train_size, std::uint64_t shuffle_seed, Index epoch) {
  std::vector<Index> order(static_cast<std::size_t>(train_size));
  std::iota(order.begin(), order.end(), Index(0));
  std::mt19937_64 rng(mix_seed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

double accuracy(const Mlp<double>& model, const VectorXd& theta, const Batch<double>& b) {
  if (b.size() == 0) return 0.0;
  const auto f = model.forward(theta, b);
  Index hits = 0;
  for (Index k = 0; k < b.size(); ++k) {
    Index arg = 0;
    f.logits.row(k).maxCoeff(&arg);
    hits += arg == b.labels[k];
  }
  return static_cast<double>(hits) / static_cast<double>(b.size());
}

namespace {

LrSchedule lr_schedule(const ExperimentConfig& c, Index spe) {
  LrSchedule s;
  s.base = c.student.lr;
  s.factor = c.student.lr_drop_factor;
  for (Index e : c.student.lr_drop_epochs) s.drops.push_back(e * spe);
  std::sort(s.drops.begin(), s.drops.end());
  return s;
}

struct RowAccumulator {
  double loss_sum = 0;
  Index steps = 0;
  double w_clean = 0, w_corrupt = 0;
  Index n_clean = 0, n_corrupt = 0;

  void add(double mean_loss, const VectorXd& w, const std::vector<bool>& corrupted) {
    loss_sum += mean_loss;
    ++steps;
    for (Index k = 0; k < w.size(); ++k) {
      if (corrupted[k]) {
        w_corrupt += w[k];
        ++n_corrupt;
      } else {
        w_clean += w[k];
        ++n_clean;
      }
    }
  }
};

Batch<double> valid_batch(const Dataset& valid, Index size, std::uint64_t seed, Index update) {
  if (size <= 0 || size >= valid.size()) return valid.as_batch();
  std::vector<Index> rows = epoch_order(valid.size(), seed, update);
  rows.resize(static_cast<std::size_t>(size));
  std::sort(rows.begin(), rows.end());
  return valid.batch(rows);
}

}  // namespace

RunResult run(const ExperimentConfig& c, std::uint64_t seed, const RunOptions& opts) {
  validate(c);
  const SeedPlan seeds = derive_seeds(c, seed);
  RunResult res;
  res.data = prepare_data(c, seed);
  const Dataset& train = res.data.train;
  res.student = student_spec(c, train.dim(), train.classes);
  const Mlp<double> model(res.student);
  TeacherModel<double> teacher(teacher_spec(c, model));
  teacher.initialize(seeds.teacher);

  const Index spe = steps_per_epoch(c, train.size());
  const Index total = spe * c.student.epochs;

  TrainerSettings s;
  s.weighter = c.teacher.weighter;
  s.lambda = c.student.lambda;
  s.mu = c.student.momentum;
  s.schedule = lr_schedule(c, spe);
  s.K = c.teacher.K;
  s.B = c.teacher.B;
  s.mode = c.teacher.mode;
  s.metric = c.teacher.metric;
  s.extra_batch_mean = c.teacher.extra_batch_mean;
  s.optimizer = c.teacher.optimizer;
  s.teacher_lr = c.teacher.lr;
  s.teacher_momentum = c.teacher.momentum;
  s.warmup_steps = c.teacher.warmup_epochs * spe;
  s.total_steps = total;
  s.focal_gamma = c.baselines.focal_gamma;

  const VectorXd theta0 = model.init_params(seeds.init);
  if (s.weighter == WeighterKind::spl) {
    const auto f = model.forward(theta0, train.as_batch());
    std::vector<double> losses(f.losses.data(), f.losses.data() + f.losses.size());
    s.spl = SplSchedule::from_losses(std::move(losses), c.baselines.spl_percentile, total);
  }

  const std::uint64_t chash = config_hash(c);
  const fs::path ckpt_file = opts.out_dir.empty() ? fs::path() : opts.out_dir / "checkpoint.bin";
  std::vector<MetricsRecord> log;
  Trainer<Mlp<double>> trainer(model, std::move(teacher), s, theta0);

  if (opts.resume) {
    if (ckpt_file.empty()) throw ConfigError("resume requires an output directory");
    const Checkpoint ck = read_checkpoint(ckpt_file);
    if (ck.config_hash != chash)
      throw ConfigError("checkpoint was written by a different configuration");
    if (ck.seed != seed) throw ConfigError("checkpoint was written for a different seed");
    auto& st = trainer.state();
    if (ck.theta.size() != st.theta.size() || ck.v.size() != st.v.size())
      throw IntegrityError("checkpoint parameter length mismatch");
    st.theta = ck.theta;
    st.v = ck.v;
    st.t = ck.step;
    trainer.teacher().set_params(ck.omega);
    trainer.teacher_opt() = ck.teacher_opt;
    trainer.surface() = ck.surface;
    log = ck.log;
  }

  const Batch<double> test = res.data.test.as_batch();
  RowAccumulator acc;
  Index update_count = static_cast<Index>(log.size());
  Index saved_epoch = trainer.state().t / spe;

  auto emit_row = [&](bool allow_apply) {
    const Batch<double> vb = valid_batch(res.data.valid, c.teacher.valid_batch,
                                         mix_seed(seeds.shuffle, 0x76616c6964ULL), update_count);
    const double vacc = accuracy(model, trainer.state().theta, vb);
    const auto u = trainer.teacher_update(vb, allow_apply);
    trainer.surface().record_valid_accuracy(vacc);
    MetricsRecord r;
    r.step = trainer.state().t;
    r.epoch = (r.step - 1) / spe;
    r.train_loss = acc.steps ? acc.loss_sum / static_cast<double>(acc.steps) : 0.0;
    r.valid_metric = u.metric;
    r.test_accuracy = accuracy(model, trainer.state().theta, test);
    r.mean_weight_clean = acc.n_clean ? acc.w_clean / static_cast<double>(acc.n_clean) : 0.0;
    r.mean_weight_corrupted =
        acc.n_corrupt ? acc.w_corrupt / static_cast<double>(acc.n_corrupt) : 0.0;
    r.teacher_grad_norm = u.grad_norm;
    log.push_back(r);
    acc = RowAccumulator{};
    ++update_count;
  };

  auto save = [&]() {
    if (ckpt_file.empty()) return;
    Checkpoint ck;
    ck.config_hash = chash;
    ck.seed = seed;
    ck.step = trainer.state().t;
    ck.theta = trainer.state().theta;
    ck.v = trainer.state().v;
    ck.omega = trainer.teacher().params();
    ck.teacher_opt = trainer.teacher_opt();
    ck.surface = trainer.surface();
    ck.spl = s.spl;
    ck.log = log;
    write_checkpoint(ckpt_file, ck);
  };

  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    std::ofstream(opts.out_dir / "config.cfg") << serialize_config(c);
  }

  try {
    while (trainer.state().t < total) {
      const Index t = trainer.state().t;
      const Index epoch = t / spe;
      const std::vector<Index> order = epoch_order(train.size(), seeds.shuffle, epoch);
      const Index pos = t - epoch * spe;
      std::vector<Index> rows(order.begin() + pos * c.student.batch_size,
                              order.begin() + (pos + 1) * c.student.batch_size);
      const Batch<double> batch = train.batch(rows);
      const auto info = trainer.step(batch);
      acc.add(info.mean_loss, info.normalized, batch.corrupted);
      if (trainer.update_due()) {
        emit_row(true);
        const Index done_epochs = trainer.state().t / spe;
        if (done_epochs > saved_epoch) {
          saved_epoch = done_epochs;
          save();
          if (opts.stop_after_step >= 0 && trainer.state().t >= opts.stop_after_step) break;
        }
      }
    }
    if (trainer.state().t == total && !trainer.update_due()) emit_row(false);
  } catch (const NumericError& e) {
    if (!opts.out_dir.empty()) write_metrics(opts.out_dir, log);
    throw DivergenceError(std::string("training diverged: ") + e.what(), log);
  }

  res.theta = trainer.state().theta;
  res.teacher = trainer.teacher();
  res.surface = trainer.surface();
  res.steps = trainer.state().t;
  res.log = std::move(log);

  if (!opts.out_dir.empty()) {
    write_metrics(opts.out_dir, res.log);
    if (res.steps == total)
      write_weight_report(opts.out_dir / "weight_report.csv",
                          weight_report(c, model, res.theta, *res.teacher, res.surface, train,
                                        res.steps));
  }
  return res;
}

// ---------------------------------------------------------------------------

std::string metrics_csv_header() {
  return "step,epoch,train_loss,valid_metric,test_accuracy,mean_weight_clean,"
         "mean_weight_corrupted,teacher_grad_norm";
}

std::string metrics_csv_row(const MetricsRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%" PRId64 ",%" PRId64 ",%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                static_cast<std::int64_t>(r.step), static_cast<std::int64_t>(r.epoch),
                r.train_loss, r.valid_metric, r.test_accuracy, r.mean_weight_clean,
                r.mean_weight_corrupted, r.teacher_grad_norm);
  return buf;
}

std::string metrics_json_line(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["valid_metric"] = r.valid_metric;
  j["test_accuracy"] = r.test_accuracy;
  j["mean_weight_clean"] = r.mean_weight_clean;
  j["mean_weight_corrupted"] = r.mean_weight_corrupted;
  j["teacher_grad_norm"] = r.teacher_grad_norm;
  return j.dump();
}

void write_metrics(const fs::path& dir, const std::vector<MetricsRecord>& log) {
  fs::create_directories(dir);
  std::ofstream csv(dir / "metrics.csv", std::ios::binary);
  std::ofstream jsonl(dir / "metrics.jsonl", std::ios::binary);
  if (!csv || !jsonl) throw IoError("cannot write metrics in " + dir.string());
  csv << metrics_csv_header() << "\n";
  for (const auto& r : log) {
    csv << metrics_csv_row(r) << "\n";
    jsonl << metrics_json_line(r) << "\n";
  }
  if (!csv || !jsonl) throw IoError("failed writing metrics in " + dir.string());
}

std::vector<MetricsRecord> read_metrics_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  std::string line;
  if (!std::getline(in, line) || line != metrics_csv_header())
    throw IoError(file.string() + ": missing or unexpected header");
  std::vector<MetricsRecord> out;
  Index lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    MetricsRecord r;
    long long step = 0, epoch = 0;
    const int n = std::sscanf(line.c_str(), "%lld,%lld,%lf,%lf,%lf,%lf,%lf,%lf", &step, &epoch,
                              &r.train_loss, &r.valid_metric, &r.test_accuracy,
                              &r.mean_weight_clean, &r.mean_weight_corrupted,
                              &r.teacher_grad_norm);
    if (n != 8)
      throw IoError(file.string() + ":" + std::to_string(lineno) + ": malformed row");
    r.step = step;
    r.epoch = epoch;
    out.push_back(r);
  }
  return out;
}

std::vector<WeightRow> weight_report(const ExperimentConfig& c, const Mlp<double>& student,
                                     const VectorXd& theta, const TeacherModel<double>& teacher,
                                     const SurfaceState& surface, const Dataset& d,
                                     Index final_step) {
  const Batch<double> all = d.as_batch();
  const auto f = student.forward(theta, all);
  const Index n = d.size();
  VectorXd w;
  switch (c.teacher.weighter) {
    case WeighterKind::teacher: {
      SurfaceState st = surface;
      st.step = final_step;
      const auto& feats = teacher.spec().features;
      MatrixXd surf;
      if (feats.surface) surf = normalize_surface(surface_features<double>(f.logits, all.labels, st));
      w = raw_weights(teacher, teacher_input<double>(feats, f.features, all.labels,
                                                     student.classes(), surf));
      break;
    }
    case WeighterKind::uniform:
      w = VectorXd::Ones(n);
      break;
    case WeighterKind::focal:
      w = focal_weights<double>((-f.losses.array()).exp().min(1.0).matrix(),
                                c.baselines.focal_gamma);
      break;
    case WeighterKind::spl: {
      // Past the end of the schedule every sample is admitted.
      w = VectorXd::Ones(n);
      break;
    }
  }
  const double sum = w.sum();
  std::vector<WeightRow> rows(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) {
    auto& r = rows[static_cast<std::size_t>(k)];
    r.id = d.ids[k];
    r.label = d.observed_labels[k];
    r.clean_label = d.clean_labels[k];
    r.loss = f.losses[k];
    r.weight = sum > 0 ? w[k] / sum : 0.0;
    r.corrupted = d.corrupted[k];
  }
  return rows;
}

void write_weight_report(const fs::path& file, const std::vector<WeightRow>& rows) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out << "id,label,clean_label,loss,weight,corrupted\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%" PRId64 ",%d,%d,%.17g,%.17g,%d\n",
                  static_cast<std::int64_t>(r.id), r.label, r.clean_label, r.loss, r.weight,
                  r.corrupted ? 1 : 0);
    out << buf;
  }
  if (!out) throw IoError("failed writing " + file.string());
}

WeightSummary summarize_weights(const std::vector<WeightRow>& rows) {
  double wc = 0, wx = 0;
  Index nc = 0, nx = 0;
  for (const auto& r : rows) {
    if (r.corrupted) {
      wx += r.weight;
      ++nx;
    } else {
      wc += r.weight;
      ++nc;
    }
  }
  return {nc ? wc / static_cast<double>(nc) : 0.0, nx ? wx / static_cast<double>(nx) : 0.0};
}

// ---------------------------------------------------------------------------
// Checkpoint file: "L2RWCKPT", u32 version, then little-endian fields (see
// README), then a u64 FNV-1a of everything before it.

namespace {

constexpr char kMagic[8] = {'L', '2', 'R', 'W', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

class Writer {
 public:
  template <typename T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void put_vec(const VectorXd& v) {
    put<std::uint64_t>(static_cast<std::uint64_t>(v.size()));
    buf_.append(reinterpret_cast<const char*>(v.data()),
                static_cast<std::size_t>(v.size()) * sizeof(double));
  }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& b, std::string name) : buf_(b), name_(std::move(name)) {}
  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  VectorXd get_vec() {
    const auto n = get<std::uint64_t>();
    if (n > (buf_.size() - pos_) / sizeof(double)) fail("vector length out of range");
    VectorXd v(static_cast<Index>(n));
    std::memcpy(v.data(), buf_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  std::size_t pos() const { return pos_; }
  [[noreturn]] void fail(const std::string& why) const {
    throw IoError("checkpoint " + name_ + ": " + why);
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) fail("truncated");
  }
  const std::string& buf_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const fs::path& file, const Checkpoint& ck) {
  Writer w;
  w.bytes().append(kMagic, sizeof kMagic);
  w.put(kCheckpointVersion);
  w.put(ck.config_hash);
  w.put(ck.seed);
  w.put<std::int64_t>(ck.step);
  w.put_vec(ck.theta);
  w.put_vec(ck.v);
  w.put_vec(ck.omega);
  w.put_vec(ck.teacher_opt.m);
  w.put_vec(ck.teacher_opt.s);
  w.put<std::int64_t>(ck.teacher_opt.t);
  w.put<std::int64_t>(ck.surface.total_steps);
  w.put<std::int64_t>(ck.surface.step);
  w.put(ck.surface.loss_sum);
  w.put<std::int64_t>(ck.surface.loss_count);
  w.put(ck.surface.best_valid_accuracy);
  w.put(ck.spl.start);
  w.put(ck.spl.end);
  w.put<std::int64_t>(ck.spl.total_steps);
  w.put<std::uint64_t>(ck.log.size());
  for (const auto& r : ck.log) {
    w.put<std::int64_t>(r.step);
    w.put<std::int64_t>(r.epoch);
    for (double x : {r.train_loss, r.valid_metric, r.test_accuracy, r.mean_weight_clean,
                     r.mean_weight_corrupted, r.teacher_grad_norm})
      w.put(x);
  }
  w.put(fnv1a(w.bytes()));
  // Write then rename so an interrupted write never replaces a good file.
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  fs::rename(tmp, file);
}

Checkpoint read_checkpoint(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  Reader r(bytes, file.string());
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    r.fail("bad magic");
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (stored != fnv1a(bytes.substr(0, bytes.size() - 8))) r.fail("checksum mismatch");
  for (std::size_t i = 0; i < sizeof kMagic; ++i) r.get<char>();
  if (r.get<std::uint32_t>() != kCheckpointVersion) r.fail("unsupported version");
  Checkpoint ck;
  ck.config_hash = r.get<std::uint64_t>();
  ck.seed = r.get<std::uint64_t>();
  ck.step = r.get<std::int64_t>();
  ck.theta = r.get_vec();
  ck.v = r.get_vec();
  ck.omega = r.get_vec();
  ck.teacher_opt.m = r.get_vec();
  ck.teacher_opt.s = r.get_vec();
  ck.teacher_opt.t = r.get<std::int64_t>();
  ck.surface.total_steps = r.get<std::int64_t>();
  ck.surface.step = r.get<std::int64_t>();
  ck.surface.loss_sum = r.get<double>();
  ck.surface.loss_count = r.get<std::int64_t>();
  ck.surface.best_valid_accuracy = r.get<double>();
  ck.spl.start = r.get<double>();
  ck.spl.end = r.get<double>();
  ck.spl.total_steps = r.get<std::int64_t>();
  const auto n = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    MetricsRecord m;
    m.step = r.get<std::int64_t>();
    m.epoch = r.get<std::int64_t>();
    m.train_loss = r.get<double>();
    m.valid_metric = r.get<double>();
    m.test_accuracy = r.get<double>();
    m.mean_weight_clean = r.get<double>();
    m.mean_weight_corrupted = r.get<double>();
    m.teacher_grad_norm = r.get<double>();
    ck.log.push_back(m);
  }
  if (r.pos() + 8 != bytes.size()) r.fail("trailing bytes");
  return ck;
}

// ---------------------------------------------------------------------------

SweepKind parse_sweep(const std::string& s) {
  if (s == "kb") return SweepKind::kb;
  if (s == "gamma") return SweepKind::gamma;
  if (s == "features") return SweepKind::features;
  throw ConfigError("unknown sweep '" + s + "' (use kb, gamma or features)");
}

std::string to_string(SweepKind k) {
  switch (k) {
    case SweepKind::kb: return "kb";
    case SweepKind::gamma: return "gamma";
    case SweepKind::features: return "features";
  }
  return "?";
}

std::vector<SweepCell> sweep_grid(SweepKind k) {
  std::vector<SweepCell> cells;
  switch (k) {
    case SweepKind::kb:
      for (auto [K, B] : {std::pair{1, 1}, {20, 2}, {20, 5}, {100, 2}, {100, 5}})
        cells.push_back({"K=" + std::to_string(K) + " B=" + std::to_string(B),
                         {{"teacher.weighter", "teacher"},
                          {"teacher.K", std::to_string(K)},
                          {"teacher.B", std::to_string(B)}}});
      break;
    case SweepKind::gamma:
      for (const char* g : {"0.5", "1", "2"})
        cells.push_back({std::string("gamma=") + g,
                         {{"teacher.weighter", "focal"}, {"baselines.focal_gamma", g}}});
      break;
    case SweepKind::features:
      for (const char* f : {"I0+M0", "I0", "M0", "M1", "M0+M1", "I0+M0+M1"})
        cells.push_back({f, {{"teacher.weighter", "teacher"}, {"teacher.features", f}}});
      break;
  }
  return cells;
}

std::pair<double, double> mean_std(const std::vector<double>& x) {
  if (x.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(x.size());
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / n;
  if (x.size() < 2) return {m, 0.0};
  double ss = 0;
  for (double v : x) ss += (v - m) * (v - m);
  return {m, std::sqrt(ss / (n - 1))};
}

int default_threads() {
  const char* env = std::getenv("L2RW_THREADS");
  if (!env || !*env) return 1;
  const int n = std::atoi(env);
  return n > 0 ? n : 1;
}

std::vector<SweepRow> sweep(const ExperimentConfig& c, const std::vector<SweepCell>& cells,
                            int threads) {
  if (cells.empty()) throw ConfigError("sweep grid is empty");
  std::vector<ExperimentConfig> configs;
  for (const auto& cell : cells) {
    ExperimentConfig cc = c;
    for (const auto& [key, value] : cell.overrides) {
      const auto dot = key.find('.');
      set_config_value(cc, key.substr(0, dot), key.substr(dot + 1), value);
    }
    validate(cc);
    configs.push_back(std::move(cc));
  }
  const std::size_t nseeds = c.run.seeds.size();
  const std::size_t jobs = cells.size() * nseeds;
  std::vector<double> acc(jobs, 0.0);
  std::vector<std::exception_ptr> errors(jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t j = next++; j < jobs; j = next++) {
      try {
        const auto r = run(configs[j / nseeds], c.run.seeds[j % nseeds]);
        acc[j] = r.log.empty() ? 0.0 : r.log.back().test_accuracy;
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const int nthreads = std::max(1, std::min<int>(threads, static_cast<int>(jobs)));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    SweepRow row;
    row.label = cells[i].label;
    row.seeds = c.run.seeds;
    row.test_accuracy.assign(acc.begin() + static_cast<std::ptrdiff_t>(i * nseeds),
                             acc.begin() + static_cast<std::ptrdiff_t>((i + 1) * nseeds));
    std::tie(row.mean, row.stddev) = mean_std(row.test_accuracy);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_table_csv(const std::vector<SweepRow>& rows) {
  std::string out = "cell,seeds,mean_test_accuracy,std_test_accuracy\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%.17g\n", r.label.c_str(), r.seeds.size(),
                  r.mean, r.stddev);
    out += buf;
  }
  return out;
}

}  // namespace l2rw
