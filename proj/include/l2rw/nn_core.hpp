#ifndef L2RW_NN_CORE_HPP_
#define L2RW_NN_CORE_HPP_

// Minimal dense feed-forward engine: per-sample losses, internal-state
// features, weighted parameter gradients and Hessian-vector products, all in
// flat parameter space.

#include <cmath>
#include <concepts>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "l2rw/param_vector.hpp"
#include "l2rw/types.hpp"

namespace l2rw {

enum class Activation { relu, tanh };
enum class MetricKind { log_likelihood, expected_accuracy };

/// A minibatch: one sample per row of `inputs`.
template <typename Scalar>
struct Batch {
  Mat<Scalar> inputs;
  std::vector<int> labels;
  std::vector<Index> ids;
  std::vector<bool> corrupted;  // optional; diagnostics only

  Index size() const { return inputs.rows(); }

  void validate(Index dim, Index classes) const {
    const Index n = inputs.rows();
    if (n < 1) throw ConfigError("batch is empty");
    if (inputs.cols() != dim)
      throw ConfigError("batch input dim " + std::to_string(inputs.cols()) +
                        " != model input dim " + std::to_string(dim));
    if (static_cast<Index>(labels.size()) != n)
      throw ConfigError("batch label count does not match row count");
    if (!ids.empty() && static_cast<Index>(ids.size()) != n)
      throw ConfigError("batch id count does not match row count");
    if (!corrupted.empty() && static_cast<Index>(corrupted.size()) != n)
      throw ConfigError("batch corrupted-flag count does not match row count");
    for (int y : labels)
      if (y < 0 || y >= classes)
        throw ConfigError("label " + std::to_string(y) + " out of range");
    if (!inputs.allFinite()) throw ConfigError("batch has non-finite inputs");
  }
};

template <typename Scalar>
struct HvpResult {
  Vec<Scalar> hv;        // H v, H the Hessian of the weighted objective
  Vec<Scalar> loss_jvp;  // per-sample directional derivative (dl_k/dtheta) v
};

template <typename Scalar>
struct MetricResult {
  Scalar value = 0;
  Vec<Scalar> grad;
};

/// Interface shared by the student network and analytic test problems. The
/// hypergradient machinery is written against this concept only.
template <class M>
concept DifferentiableModel =
    requires(const M& m, const Vec<typename M::scalar_type>& theta,
             const Batch<typename M::scalar_type>& batch,
             const typename M::Forward& fwd, typename M::scalar_type lambda,
             MetricKind kind) {
      { m.param_count() } -> std::convertible_to<Index>;
      { m.feature_dim() } -> std::convertible_to<Index>;
      { m.classes() } -> std::convertible_to<Index>;
      { m.forward(theta, batch) } -> std::same_as<typename M::Forward>;
      { fwd.features } -> std::convertible_to<Mat<typename M::scalar_type>>;
      { fwd.logits } -> std::convertible_to<Mat<typename M::scalar_type>>;
      { fwd.losses } -> std::convertible_to<Vec<typename M::scalar_type>>;
      { m.grad(theta, batch, theta, lambda) } -> std::same_as<Vec<typename M::scalar_type>>;
      { m.grad(theta, batch, fwd, theta, lambda) } -> std::same_as<Vec<typename M::scalar_type>>;
      { m.hvp_and_loss_jvp(theta, batch, theta, lambda, theta) }
          -> std::same_as<HvpResult<typename M::scalar_type>>;
      { m.valid_metric_and_grad(theta, batch, kind) }
          -> std::same_as<MetricResult<typename M::scalar_type>>;
    };

/// Student architecture. Layers 0..hidden.size()-1 form the feature extractor;
/// the final affine layer is the linear classifier.
struct StudentSpec {
  Index input_dim = 0;
  std::vector<Index> hidden;
  Index classes = 2;
  Activation activation = Activation::relu;
  // Which post-activation output is exposed as internal state: 0 is the
  // second-to-last layer, each increment moves one layer toward the input,
  // hidden.size() exposes the raw input.
  int feature_level = 0;
};

template <typename Scalar>
struct MlpForward {
  Mat<Scalar> features;
  Mat<Scalar> logits;
  Mat<Scalar> probs;
  Vec<Scalar> losses;
  std::vector<Mat<Scalar>> pre;  // affine outputs, one per layer
  std::vector<Mat<Scalar>> act;  // layer inputs; act[0] is the batch input
};

namespace detail {

template <typename Scalar>
Mat<Scalar> one_hot(const std::vector<int>& labels, Index classes) {
  Mat<Scalar> y = Mat<Scalar>::Zero(static_cast<Index>(labels.size()), classes);
  for (std::size_t k = 0; k < labels.size(); ++k)
    y(static_cast<Index>(k), labels[k]) = Scalar(1);
  return y;
}

template <typename Scalar>
void check_weights(const Vec<Scalar>& w, Index n) {
  if (w.size() != n)
    throw ConfigError("weight vector length " + std::to_string(w.size()) +
                      " != batch size " + std::to_string(n));
  if (!w.allFinite()) throw NumericError("non-finite sample weight");
  if ((w.array() < Scalar(0)).any()) throw ConfigError("negative sample weight");
}

// Row-wise log-softmax, computed with the max shift.
template <typename Scalar>
void log_softmax(const Mat<Scalar>& z, Mat<Scalar>& probs, Vec<Scalar>& lse) {
  const Vec<Scalar> m = z.rowwise().maxCoeff();
  Mat<Scalar> shifted = z.colwise() - m;
  const Vec<Scalar> s = shifted.array().exp().rowwise().sum();
  lse = m.array() + s.array().log();
  probs = (z.colwise() - lse).array().exp();
}

}  // namespace detail

template <typename Scalar = double>
class Mlp {
 public:
  using scalar_type = Scalar;
  using Forward = MlpForward<Scalar>;
  using VecS = Vec<Scalar>;
  using MatS = Mat<Scalar>;

  explicit Mlp(StudentSpec spec) : spec_(std::move(spec)) {
    if (spec_.input_dim < 1) throw ConfigError("student input_dim must be >= 1");
    if (spec_.classes < 2) throw ConfigError("student needs at least 2 classes");
    for (Index h : spec_.hidden)
      if (h < 1) throw ConfigError("student hidden width must be >= 1");
    if (spec_.feature_level < 0 ||
        spec_.feature_level > static_cast<int>(spec_.hidden.size()))
      throw ConfigError("feature_level out of range for this student");
    auto layout = std::make_shared<ParamLayout>();
    Index in = spec_.input_dim;
    for (int i = 0; i < num_layers(); ++i) {
      const Index out = i + 1 < num_layers() ? spec_.hidden[i] : spec_.classes;
      layout->add(i, "W", out, in);
      layout->add(i, "b", out, 1);
      in = out;
    }
    layout_ = std::move(layout);
  }

  const StudentSpec& spec() const { return spec_; }
  const ParamLayout& layout() const { return *layout_; }
  std::shared_ptr<const ParamLayout> layout_ptr() const { return layout_; }
  Index param_count() const { return layout_->size(); }
  Index classes() const { return spec_.classes; }
  int num_layers() const { return static_cast<int>(spec_.hidden.size()) + 1; }
  /// Index of the first layer of the classifier head; layers before it are
  /// the feature extractor.
  int split_index() const { return num_layers() - 1; }

  Index feature_dim() const {
    const int layer = split_index() - spec_.feature_level;
    return layer == 0 ? spec_.input_dim : spec_.hidden[layer - 1];
  }

  /// He-style fan-in initialization, zero biases.
  VecS init_params(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    VecS theta = VecS::Zero(param_count());
    for (int i = 0; i < num_layers(); ++i) {
      const auto& e = layout_->entries()[2 * i];
      const double gain = spec_.activation == Activation::relu ? 2.0 : 1.0;
      const double sd = std::sqrt(gain / static_cast<double>(e.cols));
      for (Index j = 0; j < e.size(); ++j)
        theta[e.offset + j] = static_cast<Scalar>(sd * normal(rng));
    }
    return theta;
  }

  Forward forward(const VecS& theta, const Batch<Scalar>& batch) const {
    check_params(theta);
    batch.validate(spec_.input_dim, spec_.classes);
    const int L = num_layers();
    Forward f;
    f.act.reserve(L);
    f.pre.reserve(L);
    f.act.push_back(batch.inputs);
    for (int i = 0; i < L; ++i) {
      MatS z = f.act.back() * weight(theta, i).transpose();
      z.rowwise() += bias(theta, i).transpose();
      if (!z.allFinite())
        throw NumericError("non-finite activation in student layer " +
                           std::to_string(i));
      if (i + 1 < L) f.act.push_back(activate(z));
      f.pre.push_back(std::move(z));
    }
    f.logits = f.pre.back();
    VecS lse;
    detail::log_softmax(f.logits, f.probs, lse);
    f.losses.resize(batch.size());
    for (Index k = 0; k < batch.size(); ++k)
      f.losses[k] = lse[k] - f.logits(k, batch.labels[k]);
    f.features = f.act[split_index() - spec_.feature_level];
    return f;
  }

  /// d/dtheta [ sum_k w_k l_k(theta) + lambda/2 |theta|^2 ].
  VecS grad(const VecS& theta, const Batch<Scalar>& batch, const VecS& weights,
            Scalar lambda) const {
    return grad(theta, batch, forward(theta, batch), weights, lambda);
  }

  /// Same, reusing an existing forward pass at `theta`.
  VecS grad(const VecS& theta, const Batch<Scalar>& batch, const Forward& f,
            const VecS& weights, Scalar lambda) const {
    detail::check_weights(weights, batch.size());
    MatS dz = f.probs - detail::one_hot<Scalar>(batch.labels, spec_.classes);
    dz.array().colwise() *= weights.array();
    VecS g = backward(theta, f, std::move(dz));
    g += lambda * theta;
    if (!g.allFinite()) throw NumericError("non-finite gradient");
    return g;
  }

  VecS hvp(const VecS& theta, const Batch<Scalar>& batch, const VecS& weights,
           Scalar lambda, const VecS& v) const {
    return hvp_and_loss_jvp(theta, batch, weights, lambda, v).hv;
  }

  /// Pearlmutter R-operator pass: H v without forming H, plus the per-sample
  /// loss directional derivatives that fall out of the forward R pass.
  HvpResult<Scalar> hvp_and_loss_jvp(const VecS& theta,
                                     const Batch<Scalar>& batch,
                                     const VecS& weights, Scalar lambda,
                                     const VecS& v) const {
    if (v.size() != theta.size())
      throw ConfigError("hvp direction length does not match parameters");
    const Forward f = forward(theta, batch);
    detail::check_weights(weights, batch.size());
    const int L = num_layers();

    // Forward R pass. rz[i] = R{pre[i]}, rh[i] = R{act[i]} (rh[0] = 0).
    std::vector<MatS> rz(L), rh(L);
    for (int i = 0; i < L; ++i) {
      const auto W = weight(theta, i);
      const auto VW = weight(v, i);
      MatS z = f.act[i] * VW.transpose();
      z.rowwise() += bias(v, i).transpose();
      if (i > 0) z.noalias() += rh[i] * W.transpose();
      if (i + 1 < L) rh[i + 1] = activation_grad(f.pre[i], f.act[i + 1]).cwiseProduct(z);
      rz[i] = std::move(z);
    }

    HvpResult<Scalar> out;
    const MatS resid = f.probs - detail::one_hot<Scalar>(batch.labels, spec_.classes);
    out.loss_jvp = resid.cwiseProduct(rz[L - 1]).rowwise().sum();

    MatS dz = resid;
    dz.array().colwise() *= weights.array();
    const VecS pr = f.probs.cwiseProduct(rz[L - 1]).rowwise().sum();
    MatS rdz = f.probs.cwiseProduct(rz[L - 1].colwise() - pr);
    rdz.array().colwise() *= weights.array();

    out.hv = VecS::Zero(param_count());
    for (int i = L - 1; i >= 0; --i) {
      const auto W = weight(theta, i);
      auto gW = block(out.hv, 2 * i);
      gW.noalias() = rdz.transpose() * f.act[i];
      if (i > 0) gW.noalias() += dz.transpose() * rh[i];
      block(out.hv, 2 * i + 1) = rdz.colwise().sum().transpose();
      if (i == 0) break;
      const MatS dh = dz * W;
      MatS rdh = rdz * W;
      rdh.noalias() += dz * weight(v, i);
      const MatS d1 = activation_grad(f.pre[i - 1], f.act[i]);
      MatS next_rdz = rdh.cwiseProduct(d1);
      if (spec_.activation == Activation::tanh) {
        // tanh'' = -2 h (1 - h^2)
        const MatS d2 = Scalar(-2) * f.act[i].cwiseProduct(d1);
        next_rdz += dh.cwiseProduct(d2).cwiseProduct(rz[i - 1]);
      }
      dz = dh.cwiseProduct(d1);
      rdz = std::move(next_rdz);
    }
    out.hv += lambda * v;
    if (!out.hv.allFinite()) throw NumericError("non-finite Hessian-vector product");
    return out;
  }

  /// Mean validation metric and its parameter gradient. The regularizer does
  /// not enter the metric.
  MetricResult<Scalar> valid_metric_and_grad(const VecS& theta,
                                             const Batch<Scalar>& valid,
                                             MetricKind kind) const {
    if (valid.size() < 1) throw ConfigError("validation set is empty");
    const Forward f = forward(theta, valid);
    const Scalar inv_n = Scalar(1) / static_cast<Scalar>(valid.size());
    MatS dz = detail::one_hot<Scalar>(valid.labels, spec_.classes) - f.probs;
    MetricResult<Scalar> r;
    if (kind == MetricKind::log_likelihood) {
      r.value = -f.losses.mean();
    } else {
      VecS py(valid.size());
      for (Index k = 0; k < valid.size(); ++k) py[k] = f.probs(k, valid.labels[k]);
      r.value = py.mean();
      dz.array().colwise() *= py.array();
    }
    dz *= inv_n;
    r.grad = backward(theta, f, std::move(dz));
    if (!std::isfinite(static_cast<double>(r.value)) || !r.grad.allFinite())
      throw NumericError("non-finite validation metric");
    return r;
  }

 private:
  void check_params(const VecS& theta) const {
    if (theta.size() != param_count())
      throw ConfigError("parameter length " + std::to_string(theta.size()) +
                        " != student layout size " +
                        std::to_string(param_count()));
  }

  Eigen::Map<const MatS> weight(const VecS& p, int layer) const {
    return layout_->block(p, layout_->entries()[2 * layer]);
  }
  auto bias(const VecS& p, int layer) const {
    return layout_->block(p, layout_->entries()[2 * layer + 1]).col(0);
  }
  Eigen::Map<MatS> block(VecS& p, int entry) const {
    return layout_->block(p, layout_->entries()[entry]);
  }

  MatS activate(const MatS& z) const {
    if (spec_.activation == Activation::relu) return z.cwiseMax(Scalar(0));
    return z.array().tanh().matrix();
  }

  // Derivative of the activation given its input z and output h.
  MatS activation_grad(const MatS& z, const MatS& h) const {
    if (spec_.activation == Activation::relu)
      return (z.array() > Scalar(0)).template cast<Scalar>().matrix();
    return (Scalar(1) - h.array().square()).matrix();
  }

  // Backpropagate dL/d(logits) to a flat parameter gradient.
  VecS backward(const VecS& theta, const Forward& f, MatS dz) const {
    VecS g = VecS::Zero(param_count());
    for (int i = num_layers() - 1; i >= 0; --i) {
      block(g, 2 * i).noalias() = dz.transpose() * f.act[i];
      block(g, 2 * i + 1) = dz.colwise().sum().transpose();
      if (i == 0) break;
      const MatS dh = dz * weight(theta, i);
      dz = dh.cwiseProduct(activation_grad(f.pre[i - 1], f.act[i]));
    }
    return g;
  }

  StudentSpec spec_;
  std::shared_ptr<const ParamLayout> layout_;
};

}  // namespace l2rw

#endif  // L2RW_NN_CORE_HPP_
