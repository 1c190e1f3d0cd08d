#ifndef L2RW_GRADCHECK_HPP_
#define L2RW_GRADCHECK_HPP_

// Central-difference checks of every analytic derivative in the pipeline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "l2rw/config.hpp"
#include "l2rw/hypergrad.hpp"
#include "l2rw/nn_core.hpp"
#include "l2rw/teacher.hpp"

namespace l2rw {

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor), floor = 1e-6 * max|b|
/// (and at least 1e-300). `b` is the reference.
template <typename Scalar>
double max_rel_error(const Vec<Scalar>& a, const Vec<Scalar>& b) {
  if (a.size() != b.size()) throw ConfigError("max_rel_error: length mismatch");
  if (a.size() == 0) return 0.0;
  const double floor =
      std::max(1e-6 * static_cast<double>(b.cwiseAbs().maxCoeff()), 1e-300);
  double worst = 0;
  for (Index i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a[i]), y = static_cast<double>(b[i]);
    if (!std::isfinite(x) || !std::isfinite(y)) return INFINITY;
    const double den = std::max({std::abs(x), std::abs(y), floor});
    worst = std::max(worst, std::abs(x - y) / den);
  }
  return worst;
}

/// Weighted training objective w'l + lambda/2 |theta|^2.
template <DifferentiableModel Model, typename Scalar = typename Model::scalar_type>
Scalar objective(const Model& m, const Vec<Scalar>& theta, const Batch<Scalar>& b,
                 const Vec<Scalar>& w, Scalar lambda) {
  return w.dot(m.forward(theta, b).losses) + Scalar(0.5) * lambda * theta.squaredNorm();
}

/// Five-point central difference: (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h.
template <typename Scalar, class F>
Scalar central_diff(F&& f, Scalar h) {
  return (-f(Scalar(2) * h) + Scalar(8) * f(h) - Scalar(8) * f(-h) + f(Scalar(-2) * h)) /
         (Scalar(12) * h);
}

template <DifferentiableModel Model, typename Scalar = typename Model::scalar_type>
Vec<Scalar> fd_grad(const Model& m, const Vec<Scalar>& theta, const Batch<Scalar>& b,
                    const Vec<Scalar>& w, Scalar lambda, Scalar eps) {
  Vec<Scalar> out(theta.size());
  Vec<Scalar> p = theta;
  for (Index i = 0; i < theta.size(); ++i) {
    out[i] = central_diff(
        [&](Scalar d) {
          p[i] = theta[i] + d;
          return objective(m, p, b, w, lambda);
        },
        eps);
    p[i] = theta[i];
  }
  return out;
}

/// (grad(theta + eps v) - grad(theta - eps v)) / 2 eps.
template <DifferentiableModel Model, typename Scalar = typename Model::scalar_type>
Vec<Scalar> fd_hvp(const Model& m, const Vec<Scalar>& theta, const Batch<Scalar>& b,
                   const Vec<Scalar>& w, Scalar lambda, const Vec<Scalar>& v, Scalar eps) {
  const Vec<Scalar> up = m.grad(Vec<Scalar>(theta + eps * v), b, w, lambda);
  const Vec<Scalar> down = m.grad(Vec<Scalar>(theta - eps * v), b, w, lambda);
  return (up - down) / (Scalar(2) * eps);
}

/// Per-sample directional derivatives of the losses along v.
template <DifferentiableModel Model, typename Scalar = typename Model::scalar_type>
Vec<Scalar> fd_loss_jvp(const Model& m, const Vec<Scalar>& theta, const Batch<Scalar>& b,
                        const Vec<Scalar>& v, Scalar eps) {
  const Vec<Scalar> up = m.forward(Vec<Scalar>(theta + eps * v), b).losses;
  const Vec<Scalar> down = m.forward(Vec<Scalar>(theta - eps * v), b).losses;
  return (up - down) / (Scalar(2) * eps);
}

/// d/domega of u' normalize(raw(omega, z)).
template <typename Scalar>
Vec<Scalar> fd_backprop_omega(const TeacherModel<Scalar>& teacher, const Mat<Scalar>& z,
                              const Vec<Scalar>& u, Scalar eps) {
  TeacherModel<Scalar> probe = teacher;
  Vec<Scalar> out(teacher.param_count());
  for (Index i = 0; i < teacher.param_count(); ++i) {
    out[i] = central_diff(
        [&](Scalar d) {
          probe.params()[i] = teacher.params()[i] + d;
          return u.dot(normalize(raw_weights(probe, z)));
        },
        eps);
    probe.params()[i] = teacher.params()[i];
  }
  return out;
}

struct CheckLine {
  std::string name;
  double max_rel_err = 0;
  double tolerance = 0;
  bool pass = false;
};

struct GradcheckReport {
  std::string problem;
  Index params = 0;
  std::vector<CheckLine> lines;
  bool pass() const {
    return std::all_of(lines.begin(), lines.end(), [](const CheckLine& l) { return l.pass; });
  }
};

/// Runs the derivative checks on the problem described by `c.gradcheck`
/// (teacher features and hidden layers come from `c.teacher`).
GradcheckReport gradcheck(const ExperimentConfig& c, std::uint64_t seed);

std::string format_report(const GradcheckReport& r);

}  // namespace l2rw

#endif  // L2RW_GRADCHECK_HPP_
