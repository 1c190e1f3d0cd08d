#ifndef L2RW_TEACHER_HPP_
#define L2RW_TEACHER_HPP_

// The weighting network: maps student internal states and label/surface
// features to per-sample weights sigma(score), normalized within a batch.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "l2rw/nn_core.hpp"
#include "l2rw/param_vector.hpp"
#include "l2rw/types.hpp"

namespace l2rw {

/// Which inputs the teacher sees: internal states (I), one-hot label (M0),
/// and the five scalar surface statistics (M1).
struct FeatureSet {
  bool internal = true;
  bool label = true;
  bool surface = false;

  bool any() const { return internal || label || surface; }

  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;
};

/// Parses "I0+M0", "M1", "I0+M0+M1", ... ("I" is accepted for "I0").
FeatureSet parse_feature_set(const std::string& text);
std::string to_string(const FeatureSet& fs);

inline constexpr Index kSurfaceFeatureCount = 5;

/// Running statistics behind the surface features.
struct SurfaceState {
  Index total_steps = 1;
  Index step = 0;
  double loss_sum = 0;
  Index loss_count = 0;
  double best_valid_accuracy = 0;

  double mean_train_loss() const {
    return loss_count == 0 ? 0.0 : loss_sum / static_cast<double>(loss_count);
  }
  void record_train_loss(double mean_batch_loss) {
    loss_sum += mean_batch_loss;
    ++loss_count;
  }
  void record_valid_accuracy(double acc) {
    best_valid_accuracy = std::max(best_valid_accuracy, acc);
  }
};

/// Raw surface features, one row per sample: normalized iteration t/T, mean
/// training loss so far, best validation accuracy so far, correctness of the
/// predicted label (1 if argmax logit == label), and the margin
/// logit_y - max_{c != y} logit_c.
template <typename Scalar>
Mat<Scalar> surface_features(const Mat<Scalar>& logits,
                             const std::vector<int>& labels,
                             const SurfaceState& st) {
  const Index n = logits.rows();
  const Index c = logits.cols();
  Mat<Scalar> out(n, kSurfaceFeatureCount);
  const double frac =
      st.total_steps > 0
          ? std::clamp(static_cast<double>(st.step) / static_cast<double>(st.total_steps), 0.0, 1.0)
          : 0.0;
  for (Index k = 0; k < n; ++k) {
    const int y = labels[k];
    Index arg = 0;
    logits.row(k).maxCoeff(&arg);
    Scalar other = -std::numeric_limits<Scalar>::infinity();
    for (Index j = 0; j < c; ++j)
      if (j != y) other = std::max(other, logits(k, j));
    out(k, 0) = static_cast<Scalar>(frac);
    out(k, 1) = static_cast<Scalar>(st.mean_train_loss());
    out(k, 2) = static_cast<Scalar>(st.best_valid_accuracy);
    out(k, 3) = arg == y && logits(k, y) > other ? Scalar(1) : Scalar(0);
    out(k, 4) = logits(k, y) - other;
  }
  return out;
}

/// Maps raw surface features into [0, 1]: losses through x / (1 + x), the
/// margin through a logistic; the other columns are already in range.
template <typename Scalar>
Mat<Scalar> normalize_surface(const Mat<Scalar>& raw) {
  Mat<Scalar> out = raw;
  for (Index k = 0; k < raw.rows(); ++k) {
    const Scalar loss = std::max(raw(k, 1), Scalar(0));
    out(k, 1) = loss / (Scalar(1) + loss);
    out(k, 2) = std::clamp(raw(k, 2), Scalar(0), Scalar(1));
    out(k, 4) = Scalar(1) / (Scalar(1) + std::exp(-raw(k, 4)));
  }
  return out;
}

/// Concatenates the enabled feature groups into the teacher input matrix.
/// Column order is [I | one-hot(y) | M1].
template <typename Scalar>
Mat<Scalar> teacher_input(const FeatureSet& fs, const Mat<Scalar>& internal,
                          const std::vector<int>& labels, Index classes,
                          const Mat<Scalar>& surface_normalized) {
  if (!fs.any()) throw ConfigError("teacher feature set is empty");
  const Index n = static_cast<Index>(labels.size());
  Index cols = 0;
  if (fs.internal) {
    if (internal.rows() != n) throw ConfigError("internal-state rows != batch size");
    cols += internal.cols();
  }
  if (fs.label) cols += classes;
  if (fs.surface) {
    if (surface_normalized.rows() != n || surface_normalized.cols() != kSurfaceFeatureCount)
      throw ConfigError("surface feature matrix has the wrong shape");
    cols += kSurfaceFeatureCount;
  }
  Mat<Scalar> z = Mat<Scalar>::Zero(n, cols);
  Index at = 0;
  if (fs.internal) {
    z.middleCols(at, internal.cols()) = internal;
    at += internal.cols();
  }
  if (fs.label) {
    for (Index k = 0; k < n; ++k) z(k, at + labels[k]) = Scalar(1);
    at += classes;
  }
  if (fs.surface) z.middleCols(at, kSurfaceFeatureCount) = surface_normalized;
  return z;
}

struct TeacherSpec {
  FeatureSet features;
  Index internal_dim = 0;
  Index classes = 2;
  int hidden_layers = 0;  // MLP-0, MLP-1 or MLP-2

  Index input_dim() const {
    return (features.internal ? internal_dim : 0) + (features.label ? classes : 0) +
           (features.surface ? kSurfaceFeatureCount : 0);
  }
};

/// Teacher parameters omega. Hidden layers (width = input dim, ReLU) come
/// first; the output row is laid out as [W_I | E | W_M1] followed by b, so
/// that with no hidden layers the score is W_I I + E M + W_M1 M1 + b.
template <typename Scalar = double>
class TeacherModel {
 public:
  using VecS = Vec<Scalar>;
  using MatS = Mat<Scalar>;

  explicit TeacherModel(TeacherSpec spec) : spec_(spec) {
    if (!spec_.features.any()) throw ConfigError("teacher feature set is empty");
    if (spec_.hidden_layers < 0 || spec_.hidden_layers > 2)
      throw ConfigError("teacher supports 0, 1 or 2 hidden layers");
    if (spec_.features.internal && spec_.internal_dim < 1)
      throw ConfigError("teacher internal_dim must be >= 1");
    const Index f = spec_.input_dim();
    auto layout = std::make_shared<ParamLayout>();
    for (int h = 0; h < spec_.hidden_layers; ++h) {
      layout->add(h, "W", f, f);
      layout->add(h, "b", f, 1);
    }
    const int out = spec_.hidden_layers;
    if (spec_.hidden_layers == 0) {
      if (spec_.features.internal) layout->add(out, "W_I", 1, spec_.internal_dim);
      if (spec_.features.label) layout->add(out, "E", 1, spec_.classes);
      if (spec_.features.surface) layout->add(out, "W_M1", 1, kSurfaceFeatureCount);
    } else {
      layout->add(out, "w", 1, f);
    }
    layout->add(out, "b", 1, 1);
    layout_ = std::move(layout);
    params_ = VecS::Zero(layout_->size());
  }

  const TeacherSpec& spec() const { return spec_; }
  const ParamLayout& layout() const { return *layout_; }
  std::shared_ptr<const ParamLayout> layout_ptr() const { return layout_; }
  Index param_count() const { return layout_->size(); }
  Index input_dim() const { return spec_.input_dim(); }

  const VecS& params() const { return params_; }
  VecS& params() { return params_; }
  void set_params(VecS p) {
    if (p.size() != param_count())
      throw ConfigError("teacher parameter length mismatch");
    params_ = std::move(p);
  }

  /// Zero output layer (uniform initial weights); hidden layers get seeded
  /// He-style weights so that MLP-k teachers are not stuck at a symmetric
  /// saddle.
  void initialize(std::uint64_t seed) {
    params_.setZero();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double sd = std::sqrt(2.0 / static_cast<double>(std::max<Index>(1, input_dim())));
    for (int h = 0; h < spec_.hidden_layers; ++h) {
      const auto& e = layout_->entries()[2 * h];
      for (Index j = 0; j < e.size(); ++j)
        params_[e.offset + j] = static_cast<Scalar>(sd * normal(rng));
    }
  }

  // Offset of the output row (contiguous over all input columns).
  Index output_offset() const {
    return layout_->entries()[2 * spec_.hidden_layers].offset;
  }
  Index bias_offset() const { return layout_->size() - 1; }

  struct Activations {
    std::vector<MatS> hidden;  // inputs to each layer; hidden[0] = z
    VecS score;
    VecS raw;
  };

  Activations evaluate(const MatS& z) const {
    if (z.cols() != input_dim())
      throw ConfigError("teacher input has " + std::to_string(z.cols()) +
                        " columns, expected " + std::to_string(input_dim()));
    Activations a;
    a.hidden.push_back(z);
    for (int h = 0; h < spec_.hidden_layers; ++h) {
      MatS next = a.hidden.back() * hidden_weight(h).transpose();
      next.rowwise() += hidden_bias(h).transpose();
      a.hidden.push_back(next.cwiseMax(Scalar(0)));
    }
    a.score = a.hidden.back() * output_row().transpose();
    a.score.array() += params_[bias_offset()];
    a.raw = a.score.unaryExpr([](Scalar s) { return sigmoid(s); });
    if (!a.raw.allFinite()) throw NumericError("non-finite teacher output");
    return a;
  }

  static Scalar sigmoid(Scalar s) {
    if (s >= 0) return Scalar(1) / (Scalar(1) + std::exp(-s));
    const Scalar e = std::exp(s);
    return e / (Scalar(1) + e);
  }

  Eigen::Map<const MatS> hidden_weight(int h) const {
    return layout_->block(params_, layout_->entries()[2 * h]);
  }
  auto hidden_bias(int h) const {
    return layout_->block(params_, layout_->entries()[2 * h + 1]).col(0);
  }
  Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> output_row() const {
    return {params_.data() + output_offset(), 1, input_dim()};
  }

 private:
  TeacherSpec spec_;
  std::shared_ptr<const ParamLayout> layout_;
  VecS params_;
};

/// Raw per-sample weights sigma(score) in (0, 1).
template <typename Scalar>
Vec<Scalar> raw_weights(const TeacherModel<Scalar>& teacher, const Mat<Scalar>& z) {
  return teacher.evaluate(z).raw;
}

/// In-batch sum normalization, w_k / sum_j w_j.
template <typename Scalar>
Vec<Scalar> normalize(const Vec<Scalar>& raw) {
  if (raw.size() == 0) throw ConfigError("cannot normalize an empty weight vector");
  if ((raw.array() <= Scalar(0)).any())
    throw NumericError("raw weights must be strictly positive");
  const Scalar s = raw.sum();
  if (!(static_cast<double>(s) >= 1e-300))
    throw NumericError("raw weight sum underflow");
  return raw / s;
}

/// sum_k upstream_k * d(normalized_k)/d(omega), through the sum
/// normalization, the sigmoid and the teacher network.
template <typename Scalar>
Vec<Scalar> backprop_omega(const TeacherModel<Scalar>& teacher,
                           const Mat<Scalar>& z, const Vec<Scalar>& upstream) {
  using VecS = Vec<Scalar>;
  using MatS = Mat<Scalar>;
  if (upstream.size() != z.rows())
    throw ConfigError("upstream length does not match teacher input rows");
  const auto a = teacher.evaluate(z);
  const Scalar s = a.raw.sum();
  if (!(static_cast<double>(s) >= 1e-300)) throw NumericError("raw weight sum underflow");
  // d/dw_j sum_k u_k w_k / S = (u_j - sum_k u_k w_k / S) / S
  const Scalar ubar = upstream.dot(a.raw) / s;
  VecS ds = (upstream.array() - ubar) / s;
  ds.array() *= a.raw.array() * (Scalar(1) - a.raw.array());

  VecS g = VecS::Zero(teacher.param_count());
  const int hl = teacher.spec().hidden_layers;
  g.segment(teacher.output_offset(), teacher.input_dim()) =
      a.hidden.back().transpose() * ds;
  g[teacher.bias_offset()] = ds.sum();
  if (hl == 0) return g;

  const auto& layout = teacher.layout();
  MatS dh = ds * teacher.output_row();
  for (int h = hl - 1; h >= 0; --h) {
    dh = dh.cwiseProduct((a.hidden[h + 1].array() > Scalar(0)).template cast<Scalar>().matrix());
    layout.block(g, layout.entries()[2 * h]) = dh.transpose() * a.hidden[h];
    layout.block(g, layout.entries()[2 * h + 1]) = dh.colwise().sum().transpose();
    if (h > 0) dh = dh * teacher.hidden_weight(h);
  }
  return g;
}

}  // namespace l2rw

#endif  // L2RW_TEACHER_HPP_
