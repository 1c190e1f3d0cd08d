#ifndef L2RW_QUADRATIC_MODEL_HPP_
#define L2RW_QUADRATIC_MODEL_HPP_

#include <string>
#include <utility>

#include "l2rw/nn_core.hpp"

namespace l2rw {

template <typename Scalar>
struct QuadraticForward {
  Mat<Scalar> features;
  Mat<Scalar> logits;
  Vec<Scalar> losses;
};

/// Analytic surrogate with per-sample loss l_k = 1/2 (theta - c_k)' A (theta - c_k),
/// where c_k is row k of the batch input. The Hessian is constant, which makes
/// closed-form checks of the hypergradient possible. Features are the raw
/// inputs; logits are identically zero (margin 0, no predicted class).
template <typename Scalar = double>
class QuadraticModel {
 public:
  using scalar_type = Scalar;
  using Forward = QuadraticForward<Scalar>;
  using VecS = Vec<Scalar>;
  using MatS = Mat<Scalar>;

  QuadraticModel(MatS a, Index classes) : a_(std::move(a)), classes_(classes) {
    if (a_.rows() != a_.cols() || a_.rows() < 1)
      throw ConfigError("QuadraticModel: A must be square and non-empty");
    if (!a_.isApprox(a_.transpose()))
      throw ConfigError("QuadraticModel: A must be symmetric");
  }

  const MatS& curvature() const { return a_; }
  Index param_count() const { return a_.rows(); }
  Index feature_dim() const { return a_.rows(); }
  Index classes() const { return classes_; }

  Forward forward(const VecS& theta, const Batch<Scalar>& batch) const {
    check(theta, batch);
    Forward f;
    f.features = batch.inputs;
    f.logits = MatS::Zero(batch.size(), classes_);
    const MatS diff = residuals(theta, batch);
    f.losses = Scalar(0.5) * (diff * a_).cwiseProduct(diff).rowwise().sum();
    return f;
  }

  VecS grad(const VecS& theta, const Batch<Scalar>& batch, const VecS& weights,
            Scalar lambda) const {
    check(theta, batch);
    detail::check_weights(weights, batch.size());
    const VecS wd = residuals(theta, batch).transpose() * weights;
    return a_ * wd + lambda * theta;
  }

  VecS grad(const VecS& theta, const Batch<Scalar>& batch, const Forward&,
            const VecS& weights, Scalar lambda) const {
    return grad(theta, batch, weights, lambda);
  }

  HvpResult<Scalar> hvp_and_loss_jvp(const VecS& theta,
                                     const Batch<Scalar>& batch,
                                     const VecS& weights, Scalar lambda,
                                     const VecS& v) const {
    check(theta, batch);
    detail::check_weights(weights, batch.size());
    if (v.size() != theta.size())
      throw ConfigError("hvp direction length does not match parameters");
    HvpResult<Scalar> r;
    const VecS av = a_ * v;
    r.hv = weights.sum() * av + lambda * v;
    r.loss_jvp = residuals(theta, batch) * av;
    return r;
  }

  VecS hvp(const VecS& theta, const Batch<Scalar>& batch, const VecS& weights,
           Scalar lambda, const VecS& v) const {
    return hvp_and_loss_jvp(theta, batch, weights, lambda, v).hv;
  }

  /// Metric is the mean of -l_k over the validation rows (a log-likelihood
  /// under a Gaussian model); expected accuracy is not defined here.
  MetricResult<Scalar> valid_metric_and_grad(const VecS& theta,
                                             const Batch<Scalar>& valid,
                                             MetricKind kind) const {
    if (valid.size() < 1) throw ConfigError("validation set is empty");
    if (kind != MetricKind::log_likelihood)
      throw ConfigError("QuadraticModel supports only the log-likelihood metric");
    const Forward f = forward(theta, valid);
    MetricResult<Scalar> r;
    r.value = -f.losses.mean();
    r.grad = -(a_ * residuals(theta, valid).colwise().mean().transpose());
    return r;
  }

 private:
  void check(const VecS& theta, const Batch<Scalar>& batch) const {
    if (theta.size() != param_count())
      throw ConfigError("parameter length does not match quadratic problem");
    batch.validate(param_count(), classes_);
  }

  MatS residuals(const VecS& theta, const Batch<Scalar>& batch) const {
    return (-batch.inputs).rowwise() + theta.transpose();
  }

  MatS a_;
  Index classes_;
};

}  // namespace l2rw

#endif  // L2RW_QUADRATIC_MODEL_HPP_
