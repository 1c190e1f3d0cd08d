#include "l2rw/data.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace l2rw {

static_assert(std::endian::native == std::endian::little,
              "dataset and checkpoint I/O assume a little-endian host");

void Dataset::check_invariants() const {
  const auto n = static_cast<std::size_t>(size());
  if (clean_labels.size() != n || observed_labels.size() != n || corrupted.size() != n ||
      ids.size() != n)
    throw IntegrityError("dataset columns have inconsistent lengths");
  for (std::size_t k = 0; k < n; ++k) {
    if (corrupted[k] != (clean_labels[k] != observed_labels[k]))
      throw IntegrityError("corrupted flag disagrees with labels at row " + std::to_string(k));
    if (observed_labels[k] < 0 || observed_labels[k] >= classes || clean_labels[k] < 0 ||
        clean_labels[k] >= classes)
      throw IntegrityError("label out of range at row " + std::to_string(k));
  }
}

Dataset Dataset::subset(const std::vector<Index>& rows) const {
  Dataset out;
  out.classes = classes;
  out.inputs.resize(static_cast<Index>(rows.size()), dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Index r = rows[i];
    out.inputs.row(static_cast<Index>(i)) = inputs.row(r);
    out.clean_labels.push_back(clean_labels[r]);
    out.observed_labels.push_back(observed_labels[r]);
    out.corrupted.push_back(corrupted[r]);
    out.ids.push_back(ids[r]);
  }
  return out;
}

Batch<double> Dataset::batch(const std::vector<Index>& rows) const {
  Batch<double> b;
  b.inputs.resize(static_cast<Index>(rows.size()), dim());
  b.labels.reserve(rows.size());
  b.ids.reserve(rows.size());
  b.corrupted.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Index r = rows[i];
    b.inputs.row(static_cast<Index>(i)) = inputs.row(r);
    b.labels.push_back(observed_labels[r]);
    b.ids.push_back(ids[r]);
    b.corrupted.push_back(corrupted[r]);
  }
  return b;
}

Batch<double> Dataset::as_batch() const {
  std::vector<Index> rows(static_cast<std::size_t>(size()));
  std::iota(rows.begin(), rows.end(), Index{0});
  return batch(rows);
}

double Dataset::corrupted_fraction() const {
  if (corrupted.empty()) return 0.0;
  const auto c = std::count(corrupted.begin(), corrupted.end(), true);
  return static_cast<double>(c) / static_cast<double>(corrupted.size());
}

std::pair<int, int> confusable_classes(Index classes) {
  if (classes > 5) return {3, 5};
  return {0, 1};
}

Dataset gen_blobs(const BlobSpec& spec) {
  if (spec.classes < 2) throw ConfigError("gen_blobs needs at least 2 classes");
  if (spec.per_class < 1 || spec.dim < 1) throw ConfigError("gen_blobs: empty dataset");
  if (spec.spread < 0) throw ConfigError("gen_blobs: negative spread");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  MatrixXd means(spec.classes, spec.dim);
  for (Index c = 0; c < spec.classes; ++c)
    for (Index j = 0; j < spec.dim; ++j) means(c, j) = spec.separation * normal(rng);
  const auto [a, b] = confusable_classes(spec.classes);
  for (Index j = 0; j < spec.dim; ++j)
    means(b, j) = means(a, j) + spec.confusable_offset * spec.separation * normal(rng);

  Dataset d;
  d.classes = spec.classes;
  const Index n = spec.classes * spec.per_class;
  d.inputs.resize(n, spec.dim);
  Index row = 0;
  for (Index c = 0; c < spec.classes; ++c) {
    for (Index i = 0; i < spec.per_class; ++i, ++row) {
      for (Index j = 0; j < spec.dim; ++j) {
        // Stored at float precision so the on-disk format round-trips exactly.
        d.inputs(row, j) = static_cast<float>(means(c, j) + spec.spread * normal(rng));
      }
      d.clean_labels.push_back(static_cast<int>(c));
    }
  }
  // Shuffle rows so that ids are not grouped by class.
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  MatrixXd shuffled(n, spec.dim);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    shuffled.row(i) = d.inputs.row(perm[i]);
    labels[i] = d.clean_labels[perm[i]];
  }
  d.inputs = std::move(shuffled);
  d.clean_labels = std::move(labels);
  d.observed_labels = d.clean_labels;
  d.corrupted.assign(static_cast<std::size_t>(n), false);
  d.ids.resize(static_cast<std::size_t>(n));
  std::iota(d.ids.begin(), d.ids.end(), Index{0});
  return d;
}

static void refresh_corrupted(Dataset& d) {
  for (std::size_t k = 0; k < d.corrupted.size(); ++k)
    d.corrupted[k] = d.clean_labels[k] != d.observed_labels[k];
}

static void check_probability(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("noise probability must be in [0, 1]");
}

Dataset inject_uniform_noise(Dataset d, double p, std::uint64_t seed, bool includes_true) {
  check_probability(p);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const int c = static_cast<int>(d.classes);
  std::uniform_int_distribution<int> any_class(0, c - 1);
  std::uniform_int_distribution<int> other_class(0, c - 2);
  for (std::size_t k = 0; k < d.observed_labels.size(); ++k) {
    if (coin(rng) >= p) continue;
    if (includes_true) {
      d.observed_labels[k] = any_class(rng);
    } else {
      const int y = d.clean_labels[k];
      const int r = other_class(rng);
      d.observed_labels[k] = r >= y ? r + 1 : r;
    }
  }
  refresh_corrupted(d);
  return d;
}

std::vector<std::pair<int, int>> flip_targets(Index classes, std::uint64_t seed) {
  if (classes < 3) throw ConfigError("flip noise requires at least 3 classes");
  std::mt19937_64 rng(mix_seed(seed, 0xf11b));
  std::vector<std::pair<int, int>> out;
  for (int c = 0; c < classes; ++c) {
    std::vector<int> others;
    for (int j = 0; j < classes; ++j)
      if (j != c) others.push_back(j);
    std::shuffle(others.begin(), others.end(), rng);
    out.emplace_back(others[0], others[1]);
  }
  return out;
}

Dataset inject_flip_noise(Dataset d, double p, std::uint64_t seed) {
  check_probability(p);
  const auto targets = flip_targets(d.classes, seed);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (std::size_t k = 0; k < d.observed_labels.size(); ++k) {
    if (coin(rng) >= p) continue;
    const auto [a, b] = targets[d.clean_labels[k]];
    d.observed_labels[k] = coin(rng) < 0.5 ? a : b;
  }
  refresh_corrupted(d);
  return d;
}

Dataset inject_noise(Dataset d, const NoiseSpec& spec) {
  switch (spec.kind) {
    case NoiseKind::none:
      return d;
    case NoiseKind::uniform:
      return inject_uniform_noise(std::move(d), spec.p, spec.seed, spec.uniform_includes_true);
    case NoiseKind::flip:
      return inject_flip_noise(std::move(d), spec.p, spec.seed);
  }
  return d;
}

// Splits `total` across groups proportionally to `sizes`, largest remainder.
static std::vector<Index> apportion(const std::vector<Index>& sizes, Index total) {
  Index n = 0;
  for (Index s : sizes) n += s;
  std::vector<Index> out(sizes.size(), 0);
  if (n == 0) return out;
  std::vector<std::pair<double, std::size_t>> rem;
  Index used = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const double exact = static_cast<double>(total) * static_cast<double>(sizes[i]) /
                         static_cast<double>(n);
    out[i] = static_cast<Index>(std::floor(exact));
    used += out[i];
    rem.emplace_back(exact - static_cast<double>(out[i]), i);
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const auto& x, const auto& y) { return x.first > y.first; });
  for (std::size_t i = 0; used < total && i < rem.size(); ++i, ++used) ++out[rem[i].second];
  return out;
}

SplitIndices split_indices(const Dataset& d, double valid_fraction, double test_fraction,
                           std::uint64_t seed) {
  if (valid_fraction < 0 || test_fraction < 0 || valid_fraction + test_fraction > 1.0)
    throw ConfigError("split fractions must be non-negative and sum to <= 1");
  const Index n = d.size();
  std::map<int, std::vector<Index>> by_class;
  for (Index r = 0; r < n; ++r) by_class[d.clean_labels[r]].push_back(r);
  std::vector<Index> sizes;
  for (const auto& [c, rows] : by_class) sizes.push_back(static_cast<Index>(rows.size()));
  const auto n_valid =
      apportion(sizes, static_cast<Index>(std::llround(valid_fraction * static_cast<double>(n))));
  const auto n_test =
      apportion(sizes, static_cast<Index>(std::llround(test_fraction * static_cast<double>(n))));

  std::mt19937_64 rng(seed);
  SplitIndices out;
  std::size_t gi = 0;
  for (auto& [c, rows] : by_class) {
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto nv = static_cast<std::size_t>(n_valid[gi]);
    const auto nt = static_cast<std::size_t>(n_test[gi]);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (i < nv)
        out.valid.push_back(rows[i]);
      else if (i < nv + nt)
        out.test.push_back(rows[i]);
      else
        out.train.push_back(rows[i]);
    }
    ++gi;
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.valid.begin(), out.valid.end());
  std::sort(out.test.begin(), out.test.end());
  if (out.train.empty() || (valid_fraction > 0 && out.valid.empty()) ||
      (test_fraction > 0 && out.test.empty()))
    throw ConfigError("split produced an empty partition");
  return out;
}

DataSplits split(const Dataset& d, double valid_fraction, double test_fraction,
                 std::uint64_t seed) {
  const auto idx = split_indices(d, valid_fraction, test_fraction, seed);
  DataSplits s{d.subset(idx.train), d.subset(idx.valid), d.subset(idx.test)};
  // Validation and test labels are always clean.
  for (Dataset* part : {&s.valid, &s.test}) {
    part->observed_labels = part->clean_labels;
    part->corrupted.assign(part->corrupted.size(), false);
  }
  return s;
}

// ---------------------------------------------------------------------------
// On-disk format

static void write_bytes(const std::filesystem::path& p, const void* data, std::size_t n) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + p.string() + " for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw IoError("write failed: " + p.string());
}

static std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

static std::vector<std::uint8_t> label_bytes(const std::vector<int>& labels) {
  std::vector<std::uint8_t> out;
  out.reserve(labels.size());
  for (int y : labels) out.push_back(static_cast<std::uint8_t>(y));
  return out;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& d,
                   const std::vector<SplitTag>& tags) {
  if (d.classes > 256) throw ConfigError("dataset format stores labels as uint8 (C <= 256)");
  if (!tags.empty() && static_cast<Index>(tags.size()) != d.size())
    throw ConfigError("split tag count does not match dataset size");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::vector<Index> counts(static_cast<std::size_t>(d.classes), 0);
  for (int y : d.clean_labels) ++counts[static_cast<std::size_t>(y)];
  std::ostringstream meta;
  meta << "format l2rw-dataset 1\n"
       << "classes " << d.classes << "\n"
       << "dim " << d.dim() << "\n"
       << "count " << d.size() << "\n"
       << "class_counts";
  for (Index c : counts) meta << ' ' << c;
  meta << "\n";
  const std::string m = meta.str();
  write_bytes(dir / "meta", m.data(), m.size());

  std::vector<float> values(static_cast<std::size_t>(d.size() * d.dim()));
  for (Index r = 0; r < d.size(); ++r)
    for (Index j = 0; j < d.dim(); ++j)
      values[static_cast<std::size_t>(r * d.dim() + j)] = static_cast<float>(d.inputs(r, j));
  write_bytes(dir / "inputs", values.data(), values.size() * sizeof(float));

  const auto observed = label_bytes(d.observed_labels);
  write_bytes(dir / "labels", observed.data(), observed.size());
  const auto clean = label_bytes(d.clean_labels);
  write_bytes(dir / "clean_labels", clean.data(), clean.size());
  if (!tags.empty()) write_bytes(dir / "split", tags.data(), tags.size());
}

LoadedDataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "meta");
  if (!meta) throw IoError("missing dataset meta file in " + dir.string());
  Index classes = -1, dim = -1, count = -1;
  std::string line;
  while (std::getline(meta, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "classes") ls >> classes;
    else if (key == "dim") ls >> dim;
    else if (key == "count") ls >> count;
  }
  if (classes < 2 || dim < 1 || count < 1)
    throw IoError("dataset meta is incomplete or invalid in " + dir.string());

  const auto raw = read_bytes(dir / "inputs");
  if (raw.size() != static_cast<std::size_t>(count * dim) * sizeof(float))
    throw IoError("inputs file size does not match meta");
  const auto labels = read_bytes(dir / "labels");
  if (labels.size() != static_cast<std::size_t>(count))
    throw IoError("labels file size does not match meta");

  LoadedDataset out;
  Dataset& d = out.data;
  d.classes = classes;
  d.inputs.resize(count, dim);
  for (Index r = 0; r < count; ++r)
    for (Index j = 0; j < dim; ++j) {
      float f;
      std::memcpy(&f, raw.data() + static_cast<std::size_t>(r * dim + j) * sizeof(float),
                  sizeof(float));
      d.inputs(r, j) = f;
    }
  for (auto y : labels) {
    if (y >= classes) throw IoError("label out of range in labels file");
    d.observed_labels.push_back(y);
  }
  if (std::filesystem::exists(dir / "clean_labels")) {
    const auto clean = read_bytes(dir / "clean_labels");
    if (clean.size() != labels.size()) throw IoError("clean_labels size mismatch");
    for (auto y : clean) {
      if (y >= classes) throw IoError("label out of range in clean_labels file");
      d.clean_labels.push_back(y);
    }
  } else {
    d.clean_labels = d.observed_labels;
  }
  d.corrupted.resize(d.observed_labels.size());
  refresh_corrupted(d);
  d.ids.resize(static_cast<std::size_t>(count));
  std::iota(d.ids.begin(), d.ids.end(), Index{0});
  if (std::filesystem::exists(dir / "split")) {
    const auto tags = read_bytes(dir / "split");
    if (tags.size() != labels.size()) throw IoError("split file size mismatch");
    for (auto t : tags) {
      if (t > 2) throw IoError("invalid split tag");
      out.tags.push_back(static_cast<SplitTag>(t));
    }
  }
  return out;
}

}  // namespace l2rw
