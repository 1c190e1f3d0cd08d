#ifndef L2RW_DATA_HPP_
#define L2RW_DATA_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "l2rw/nn_core.hpp"
#include "l2rw/types.hpp"

namespace l2rw {

/// Which split a sample belongs to; stored on disk as one byte per sample.
enum class SplitTag : std::uint8_t { train = 0, valid = 1, test = 2 };

/// Samples with clean and observed labels. `ids` are stable sample ids (row
/// indices of the originating dataset).
struct Dataset {
  MatrixXd inputs;
  std::vector<int> clean_labels;
  std::vector<int> observed_labels;
  std::vector<bool> corrupted;
  std::vector<Index> ids;
  Index classes = 0;

  Index size() const { return inputs.rows(); }
  Index dim() const { return inputs.cols(); }

  /// Throws IntegrityError when corrupted flags disagree with the labels.
  void check_invariants() const;

  /// Subset by row positions (not ids).
  Dataset subset(const std::vector<Index>& rows) const;

  /// Minibatch over the given row positions, using observed labels.
  Batch<double> batch(const std::vector<Index>& rows) const;
  /// All rows as one batch.
  Batch<double> as_batch() const;

  double corrupted_fraction() const;
};

enum class NoiseKind { none, uniform, flip };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::none;
  double p = 0;
  std::uint64_t seed = 0;
  bool uniform_includes_true = true;
};

struct BlobSpec {
  Index classes = 10;
  Index per_class = 650;
  Index dim = 16;
  double spread = 1.0;
  double separation = 2.0;  // scale of the class means
  // Classes 3 and 5 are placed close together; the offset between their
  // means, relative to `separation`.
  double confusable_offset = 0.5;
  std::uint64_t seed = 1;
};

/// Gaussian class clusters around seeded means. Deterministic in the seed.
Dataset gen_blobs(const BlobSpec& spec);

/// The pair of confusable classes used by gen_blobs (when C allows it).
std::pair<int, int> confusable_classes(Index classes);

/// Replaces each label with probability p by a class drawn uniformly over
/// all C classes (or over the other C - 1 when uniform_includes_true is
/// false). Updates corrupted flags.
Dataset inject_uniform_noise(Dataset d, double p, std::uint64_t seed,
                             bool includes_true = true);

/// Per-class pair of distinct flip targets, drawn once from the seed.
std::vector<std::pair<int, int>> flip_targets(Index classes, std::uint64_t seed);

/// Flips each label with probability p to one of its class's two targets,
/// chosen with equal probability. Requires C >= 3.
Dataset inject_flip_noise(Dataset d, double p, std::uint64_t seed);

Dataset inject_noise(Dataset d, const NoiseSpec& spec);

struct SplitIndices {
  std::vector<Index> train;
  std::vector<Index> valid;
  std::vector<Index> test;
};

/// Stratified, seed-deterministic split. Totals are round(fraction * N),
/// distributed across classes by largest remainder.
SplitIndices split_indices(const Dataset& d, double valid_fraction,
                           double test_fraction, std::uint64_t seed);

struct DataSplits {
  Dataset train;
  Dataset valid;
  Dataset test;
};

DataSplits split(const Dataset& d, double valid_fraction, double test_fraction,
                 std::uint64_t seed);

/// On-disk dataset directory (see README, "Dataset format"):
///   meta          text header
///   inputs        float32 little-endian, row-major N x dim
///   labels        uint8 observed labels
///   clean_labels  uint8 clean labels (optional)
///   split         uint8 SplitTag per sample (optional)
void write_dataset(const std::filesystem::path& dir, const Dataset& d,
                   const std::vector<SplitTag>& tags = {});

struct LoadedDataset {
  Dataset data;
  std::vector<SplitTag> tags;  // empty when the directory has no split file
};

LoadedDataset read_dataset(const std::filesystem::path& dir);

}  // namespace l2rw

#endif  // L2RW_DATA_HPP_
