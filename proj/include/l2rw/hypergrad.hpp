#ifndef L2RW_HYPERGRAD_HPP_
#define L2RW_HYPERGRAD_HPP_

// Momentum-SGD student updates and the reverse pass that turns a validation
// gradient at theta_K into a gradient with respect to the teacher parameters.
//
//   v_{t+1}     = mu v_t + g_t(theta_t; w_t)
//   theta_{t+1} = theta_t - eta_t v_{t+1}
//
// Reverse recursion over the stored window (dv is the adjoint flowing into
// v_{t+1}, initialized to -eta_{K-1} dtheta_K):
//
//   domega += d/domega (g_t' dv)
//   dtheta += H_t dv
//   dv      = mu dv - eta_{t-1} dtheta
//
// Sample weights are treated as constants with respect to theta.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "l2rw/nn_core.hpp"
#include "l2rw/teacher.hpp"
#include "l2rw/types.hpp"

namespace l2rw {

/// Piecewise-constant learning rate: base, multiplied by `factor` at each
/// drop step (drops are sorted, step indices are 0-based).
struct LrSchedule {
  double base = 0.1;
  std::vector<Index> drops;
  double factor = 0.1;

  double at(Index step) const {
    double lr = base;
    for (Index d : drops)
      if (step >= d) lr *= factor;
    return lr;
  }
};

template <typename Scalar>
struct OptimizerState {
  Vec<Scalar> theta;
  Vec<Scalar> v;
  Index t = 0;
  Scalar mu = Scalar(0.9);
  LrSchedule schedule;
};

/// One momentum-SGD step; `grad` already includes weighting and weight decay.
template <typename Scalar>
OptimizerState<Scalar> sgd_step(OptimizerState<Scalar> s, const Vec<Scalar>& grad) {
  if (grad.size() != s.theta.size() || s.v.size() != s.theta.size())
    throw ConfigError("sgd_step: gradient/state length mismatch");
  if (!grad.allFinite())
    throw NumericError("non-finite gradient at step " + std::to_string(s.t));
  const Scalar lr = static_cast<Scalar>(s.schedule.at(s.t));
  s.v = s.mu * s.v + grad;
  s.theta -= lr * s.v;
  if (!s.theta.allFinite() || !s.v.allFinite())
    throw NumericError("non-finite parameters after step " + std::to_string(s.t));
  ++s.t;
  return s;
}

/// theta_t from the state after step t, given eta_t.
template <typename Scalar>
Vec<Scalar> recover_theta(const OptimizerState<Scalar>& after, Scalar lr) {
  return after.theta + lr * after.v;
}

/// Algebraic inverse of sgd_step. `grad` must be recomputed at the recovered
/// theta_t with the same minibatch and weights as the forward step.
template <typename Scalar>
OptimizerState<Scalar> reverse_step(OptimizerState<Scalar> after,
                                    const Vec<Scalar>& grad, Scalar lr) {
  if (!(after.mu > Scalar(0)))
    throw ConfigError("reversal requires momentum mu > 0");
  if (after.t < 1) throw ConfigError("reverse_step: already at step 0");
  after.theta += lr * after.v;
  after.v = (after.v - grad) / after.mu;
  --after.t;
  return after;
}

template <typename Scalar>
OptimizerState<Scalar> reverse_step(const OptimizerState<Scalar>& after,
                                    const Vec<Scalar>& grad) {
  if (after.t < 1) throw ConfigError("reverse_step: already at step 0");
  return reverse_step(after, grad,
                      static_cast<Scalar>(after.schedule.at(after.t - 1)));
}

enum class ReconstructionMode { checkpoint, reversal };

inline std::uint64_t batch_fingerprint(const std::vector<Index>& ids) {
  return fnv1a(ids.data(), ids.size() * sizeof(Index));
}

/// What the reverse pass needs to replay one forward step.
template <typename Scalar>
struct StepRecord {
  Index step = 0;
  Batch<Scalar> batch;
  Scalar lr = 0;
  Vec<Scalar> weights;             // multipliers used in the student gradient
  Scalar weight_scale = Scalar(1);  // weights = weight_scale * normalized
  Mat<Scalar> teacher_inputs;
  Vec<Scalar> theta;  // state before the step; checkpoint mode only
  Vec<Scalar> v;
};

/// Ring buffer over the last B optimizer steps.
template <typename Scalar>
class TrajectoryTail {
 public:
  TrajectoryTail(Index capacity, ReconstructionMode mode)
      : capacity_(capacity), mode_(mode) {
    if (capacity_ < 1) throw ConfigError("backprop interval B must be >= 1");
  }

  void push(StepRecord<Scalar> r) {
    if (mode_ == ReconstructionMode::checkpoint && (r.theta.size() == 0 || r.v.size() == 0))
      throw IntegrityError("checkpoint-mode tail entry without stored state");
    if (!entries_.empty() && r.step != entries_.back().step + 1)
      throw IntegrityError("tail steps are not contiguous");
    if (mode_ == ReconstructionMode::reversal) {
      r.theta.resize(0);
      r.v.resize(0);
    }
    entries_.push_back(std::move(r));
    while (static_cast<Index>(entries_.size()) > capacity_) entries_.pop_front();
  }

  void clear() { entries_.clear(); }
  bool empty() const { return entries_.empty(); }
  Index size() const { return static_cast<Index>(entries_.size()); }
  Index capacity() const { return capacity_; }
  ReconstructionMode mode() const { return mode_; }
  const StepRecord<Scalar>& operator[](Index i) const { return entries_[i]; }
  const StepRecord<Scalar>& back() const { return entries_.back(); }

 private:
  Index capacity_;
  ReconstructionMode mode_;
  std::deque<StepRecord<Scalar>> entries_;
};

template <typename Scalar>
struct HyperGradient {
  Vec<Scalar> d_omega;
  // States recovered during the reverse pass, oldest first (theta_t, v_t for
  // every step t in the window).
  std::vector<Vec<Scalar>> recovered_theta;
  std::vector<Vec<Scalar>> recovered_v;
};

/// Reverse pass over `tail`, starting from the state after its last step.
template <DifferentiableModel Model, typename Scalar = typename Model::scalar_type>
HyperGradient<Scalar> hypergradient(const Model& model,
                                    const TeacherModel<Scalar>& teacher,
                                    const TrajectoryTail<Scalar>& tail,
                                    const OptimizerState<Scalar>& final_state,
                                    const Vec<Scalar>& dtheta_final,
                                    Scalar lambda) {
  using VecS = Vec<Scalar>;
  if (tail.empty()) throw ConfigError("hypergradient: empty trajectory tail");
  if (tail.back().step + 1 != final_state.t)
    throw IntegrityError("hypergradient: tail does not end at the final state");
  if (dtheta_final.size() != final_state.theta.size())
    throw ConfigError("hypergradient: dtheta length mismatch");
  const bool reversal = tail.mode() == ReconstructionMode::reversal;
  if (reversal && !(final_state.mu > Scalar(0)))
    throw ConfigError("reversal-mode hypergradient requires mu > 0");

  const Index n = tail.size();
  HyperGradient<Scalar> out;
  out.d_omega = VecS::Zero(teacher.param_count());
  out.recovered_theta.resize(n);
  out.recovered_v.resize(n);

  VecS dtheta = dtheta_final;
  VecS dv = -tail.back().lr * dtheta;
  VecS theta = final_state.theta;
  VecS v = final_state.v;
  const Scalar mu = final_state.mu;

  for (Index i = n - 1; i >= 0; --i) {
    const auto& rec = tail[i];
    VecS theta_t, v_t;
    if (reversal) {
      theta_t = theta + rec.lr * v;
      const VecS g = model.grad(theta_t, rec.batch, rec.weights, lambda);
      v_t = (v - g) / mu;
    } else {
      theta_t = rec.theta;
      v_t = rec.v;
      // The stored state must replay forward onto the state we came from.
      const VecS g = model.grad(theta_t, rec.batch, rec.weights, lambda);
      const VecS v_next = mu * v_t + g;
      const VecS theta_next = theta_t - rec.lr * v_next;
      if (v_next != v || theta_next != theta)
        throw IntegrityError("checkpoint at step " + std::to_string(rec.step) +
                             " does not replay onto the following state");
    }
    const auto hv = model.hvp_and_loss_jvp(theta_t, rec.batch, rec.weights, lambda, dv);
    out.d_omega += rec.weight_scale * backprop_omega(teacher, rec.teacher_inputs, hv.loss_jvp);
    dtheta += hv.hv;
    if (i > 0) dv = mu * dv - tail[i - 1].lr * dtheta;
    theta = std::move(theta_t);
    v = std::move(v_t);
    out.recovered_theta[i] = theta;
    out.recovered_v[i] = v;
  }
  if (!out.d_omega.allFinite()) throw NumericError("non-finite hypergradient");
  return out;
}

// ---------------------------------------------------------------------------
// Unrolled K-step problems: the forward run that feeds `hypergradient`, and
// the central-difference oracle that checks it.

template <typename Model>
struct UnrolledProblem {
  using Scalar = typename Model::scalar_type;

  const Model* model = nullptr;
  std::function<Batch<Scalar>(Index step)> batches;
  Vec<Scalar> theta0;
  Vec<Scalar> v0;
  Scalar mu = Scalar(0.9);
  Scalar lambda = Scalar(0);
  LrSchedule schedule;
  Index steps = 1;   // K
  Index window = 1;  // B
  Batch<Scalar> valid;
  MetricKind metric = MetricKind::log_likelihood;
  ReconstructionMode mode = ReconstructionMode::checkpoint;
  bool extra_batch_mean = false;  // scale normalized weights by 1/|D_t|
  bool bypass_teacher = false;    // hard-fix uniform weights, ignoring omega
};

template <typename Scalar>
struct UnrolledRun {
  OptimizerState<Scalar> final_state;
  TrajectoryTail<Scalar> tail{1, ReconstructionMode::checkpoint};
  std::vector<Mat<Scalar>> teacher_inputs;
  std::vector<Vec<Scalar>> weights;
  std::vector<std::uint64_t> fingerprints;
  Scalar metric = 0;
  Vec<Scalar> dtheta_final;
};

namespace detail {

template <typename Scalar>
Vec<Scalar> step_weights(const TeacherModel<Scalar>& teacher, const Mat<Scalar>& z,
                         Index n, bool bypass, Scalar scale) {
  if (bypass) return Vec<Scalar>::Constant(n, scale / static_cast<Scalar>(n));
  return scale * normalize(raw_weights(teacher, z));
}

template <typename Model>
typename Model::scalar_type weight_scale(const UnrolledProblem<Model>& p, Index n) {
  using Scalar = typename Model::scalar_type;
  return p.extra_batch_mean ? Scalar(1) / static_cast<Scalar>(n) : Scalar(1);
}

}  // namespace detail

/// Forward K-step run with teacher weights. Teacher inputs use the student's
/// internal states at theta_t and the running surface statistics.
template <DifferentiableModel Model>
UnrolledRun<typename Model::scalar_type> unroll(
    const UnrolledProblem<Model>& p,
    const TeacherModel<typename Model::scalar_type>& teacher) {
  using Scalar = typename Model::scalar_type;
  if (p.window < 1 || p.window > p.steps) throw ConfigError("need 1 <= B <= K");
  UnrolledRun<Scalar> run;
  run.tail = TrajectoryTail<Scalar>(p.window, p.mode);
  OptimizerState<Scalar> st{p.theta0, p.v0, 0, p.mu, p.schedule};
  SurfaceState surface;
  surface.total_steps = p.steps;
  const auto& fs = teacher.spec().features;
  for (Index t = 0; t < p.steps; ++t) {
    Batch<Scalar> batch = p.batches(t);
    const auto fwd = p.model->forward(st.theta, batch);
    surface.step = t;
    surface.record_train_loss(static_cast<double>(fwd.losses.mean()));
    const Mat<Scalar> surf =
        normalize_surface(surface_features<Scalar>(fwd.logits, batch.labels, surface));
    Mat<Scalar> z = teacher_input<Scalar>(fs, fwd.features, batch.labels,
                                          p.model->classes(), surf);
    const Scalar scale = detail::weight_scale(p, batch.size());
    Vec<Scalar> w = detail::step_weights(teacher, z, batch.size(), p.bypass_teacher, scale);
    const Vec<Scalar> g = p.model->grad(st.theta, batch, fwd, w, p.lambda);
    run.fingerprints.push_back(batch_fingerprint(batch.ids));
    if (t >= p.steps - p.window) {
      StepRecord<Scalar> rec;
      rec.step = t;
      rec.lr = static_cast<Scalar>(p.schedule.at(t));
      rec.weights = w;
      rec.weight_scale = scale;
      rec.teacher_inputs = z;
      if (p.mode == ReconstructionMode::checkpoint) {
        rec.theta = st.theta;
        rec.v = st.v;
      }
      rec.batch = std::move(batch);
      run.tail.push(std::move(rec));
    }
    run.teacher_inputs.push_back(std::move(z));
    run.weights.push_back(std::move(w));
    st = sgd_step(std::move(st), g);
  }
  const auto m = p.model->valid_metric_and_grad(st.theta, p.valid, p.metric);
  run.metric = m.value;
  run.dtheta_final = m.grad;
  run.final_state = std::move(st);
  return run;
}

/// Replays a recorded run with a different teacher: teacher inputs are frozen
/// at their recorded values (the stop-gradient through the weights), and
/// steps before the window keep their recorded weights. Returns M(theta_K).
template <DifferentiableModel Model>
typename Model::scalar_type replay_metric(
    const UnrolledProblem<Model>& p, const UnrolledRun<typename Model::scalar_type>& base,
    const TeacherModel<typename Model::scalar_type>& teacher) {
  using Scalar = typename Model::scalar_type;
  OptimizerState<Scalar> st{p.theta0, p.v0, 0, p.mu, p.schedule};
  for (Index t = 0; t < p.steps; ++t) {
    const Batch<Scalar> batch = p.batches(t);
    if (batch_fingerprint(batch.ids) != base.fingerprints[t])
      throw IntegrityError("non-deterministic replay: minibatch at step " +
                           std::to_string(t) + " differs from the recorded run");
    const Vec<Scalar> w =
        t >= p.steps - p.window
            ? detail::step_weights(teacher, base.teacher_inputs[t], batch.size(),
                                   p.bypass_teacher, detail::weight_scale(p, batch.size()))
            : base.weights[t];
    const Vec<Scalar> g = p.model->grad(st.theta, batch, w, p.lambda);
    st = sgd_step(std::move(st), g);
  }
  return p.model->valid_metric_and_grad(st.theta, p.valid, p.metric).value;
}

/// Central-difference estimate of dM(theta_K(omega))/domega, one coordinate
/// at a time.
template <DifferentiableModel Model>
Vec<typename Model::scalar_type> fd_hypergradient_oracle(
    const UnrolledProblem<Model>& p,
    const TeacherModel<typename Model::scalar_type>& teacher,
    typename Model::scalar_type eps) {
  using Scalar = typename Model::scalar_type;
  const auto base = unroll(p, teacher);
  Vec<Scalar> out(teacher.param_count());
  TeacherModel<Scalar> probe = teacher;
  for (Index i = 0; i < teacher.param_count(); ++i) {
    probe.params() = teacher.params();
    probe.params()[i] += eps;
    const Scalar up = replay_metric(p, base, probe);
    probe.params()[i] = teacher.params()[i] - eps;
    const Scalar down = replay_metric(p, base, probe);
    out[i] = (up - down) / (Scalar(2) * eps);
  }
  return out;
}

}  // namespace l2rw

#endif  // L2RW_HYPERGRAD_HPP_
