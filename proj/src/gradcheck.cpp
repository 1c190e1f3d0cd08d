#include "l2rw/gradcheck.hpp"

#include <cstdio>
#include <random>

#include "l2rw/quadratic_model.hpp"

namespace l2rw {

namespace {

struct Tolerances {
  double grad, hvp, jvp, omega, hyper;
};

MatrixXd gaussian(Index rows, Index cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  MatrixXd m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

Batch<double> random_batch(Index n, Index dim, Index classes, std::mt19937_64& rng,
                           Index id_base) {
  Batch<double> b;
  b.inputs = gaussian(n, dim, rng);
  std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);
  for (Index k = 0; k < n; ++k) {
    b.labels.push_back(label(rng));
    b.ids.push_back(id_base + k);
  }
  return b;
}

template <DifferentiableModel Model>
GradcheckReport check_model(const ExperimentConfig& c, const Model& model, VectorXd theta,
                            std::mt19937_64& rng, const Tolerances& tol,
                            const std::string& name) {
  const auto& g = c.gradcheck;
  GradcheckReport rep;
  rep.problem = name;
  rep.params = model.param_count();
  const Index dim = name == "quadratic" ? model.param_count() : g.input_dim;
  const double lambda = c.student.lambda;
  auto line = [&](const std::string& n, double err, double t) {
    rep.lines.push_back({n, err, t, err <= t});
  };

  std::vector<Batch<double>> batches;
  for (Index t = 0; t < g.steps; ++t)
    batches.push_back(random_batch(g.samples, dim, g.classes, rng, t * g.samples));
  const Batch<double> valid = random_batch(g.samples, dim, g.classes, rng, 1 << 20);

  std::uniform_real_distribution<double> unit(0.1, 1.0);
  VectorXd w(g.samples);
  for (Index k = 0; k < g.samples; ++k) w[k] = unit(rng);
  w /= w.sum();
  const Batch<double>& b0 = batches[0];

  line("grad", max_rel_error(model.grad(theta, b0, w, lambda),
                             fd_grad(model, theta, b0, w, lambda, g.epsilon)),
       tol.grad);

  const VectorXd v = gaussian(model.param_count(), 1, rng).col(0).normalized();
  const auto hv = model.hvp_and_loss_jvp(theta, b0, w, lambda, v);
  line("hvp", max_rel_error(hv.hv, fd_hvp(model, theta, b0, w, lambda, v, 1e-4)), tol.hvp);
  line("loss_jvp", max_rel_error(hv.loss_jvp, fd_loss_jvp(model, theta, b0, v, 1e-4)),
       tol.jvp);

  TeacherSpec ts;
  ts.features = c.teacher.features;
  ts.internal_dim = model.feature_dim();
  ts.classes = g.classes;
  ts.hidden_layers = c.teacher.hidden_layers;
  TeacherModel<double> teacher(ts);
  teacher.initialize(rng());
  // Off the neutral point so every teacher coordinate carries signal.
  std::normal_distribution<double> small(0.0, 0.3);
  for (Index i = teacher.output_offset(); i < teacher.param_count(); ++i)
    teacher.params()[i] = small(rng);

  const auto fwd = model.forward(theta, b0);
  SurfaceState surf;
  surf.total_steps = g.steps;
  surf.record_train_loss(fwd.losses.mean());
  const MatrixXd z = teacher_input<double>(
      ts.features, fwd.features, b0.labels, g.classes,
      normalize_surface(surface_features<double>(fwd.logits, b0.labels, surf)));
  const VectorXd u = gaussian(g.samples, 1, rng).col(0);
  line("backprop_omega", max_rel_error(backprop_omega(teacher, z, u),
                                       fd_backprop_omega(teacher, z, u, g.teacher_epsilon)),
       tol.omega);

  UnrolledProblem<Model> p;
  p.model = &model;
  p.batches = [&batches](Index t) { return batches[static_cast<std::size_t>(t)]; };
  p.theta0 = theta;
  p.v0 = VectorXd::Zero(theta.size());
  p.mu = c.student.momentum;
  p.lambda = lambda;
  p.schedule.base = c.student.lr;
  p.steps = g.steps;
  p.window = g.steps;
  p.valid = valid;
  p.metric = c.teacher.metric;
  p.mode = c.teacher.mode;
  const auto base = unroll(p, teacher);
  VectorXd analytic =
      hypergradient(model, teacher, base.tail, base.final_state, base.dtheta_final, lambda)
          .d_omega;
  if (g.corrupt_sign) analytic = -analytic;
  line("hypergradient", max_rel_error(analytic, fd_hypergradient_oracle(p, teacher, g.epsilon)),
       tol.hyper);
  return rep;
}

}  // namespace

GradcheckReport gradcheck(const ExperimentConfig& c, std::uint64_t seed) {
  const auto& g = c.gradcheck;
  std::mt19937_64 rng(mix_seed(seed, 0x6772616463686bULL));
  if (g.problem == GradcheckProblem::quadratic) {
    const Index d = g.input_dim;
    const MatrixXd m = gaussian(d, d, rng);
    const MatrixXd a = m * m.transpose() / static_cast<double>(d) + MatrixXd::Identity(d, d);
    const QuadraticModel<double> model(a, g.classes);
    const VectorXd theta = gaussian(d, 1, rng).col(0);
    return check_model(c, model, theta, rng, {1e-6, 1e-5, 1e-5, 1e-6, 1e-5}, "quadratic");
  }
  StudentSpec s;
  s.input_dim = g.input_dim;
  s.hidden = g.hidden;
  s.classes = g.classes;
  // A smooth activation keeps finite differences away from ReLU kinks.
  s.activation = Activation::tanh;
  const Mlp<double> model(s);
  const VectorXd theta = model.init_params(rng());
  return check_model(c, model, theta, rng, {1e-6, 1e-5, 1e-5, 1e-6, 1e-3}, "mlp");
}

std::string format_report(const GradcheckReport& r) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "gradcheck problem=%s params=%lld\n", r.problem.c_str(),
                static_cast<long long>(r.params));
  out += buf;
  for (const auto& l : r.lines) {
    std::snprintf(buf, sizeof buf, "  %-15s max_rel_err=%.3e tol=%.0e  %s\n", l.name.c_str(),
                  l.max_rel_err, l.tolerance, l.pass ? "PASS" : "FAIL");
    out += buf;
  }
  out += r.pass() ? "gradcheck: PASS\n" : "gradcheck: FAIL\n";
  return out;
}

}  // namespace l2rw
