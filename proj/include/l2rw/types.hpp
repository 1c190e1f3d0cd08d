#ifndef L2RW_TYPES_HPP_
#define L2RW_TYPES_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace l2rw {

using Index = Eigen::Index;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using VectorXd = Vec<double>;
using MatrixXd = Mat<double>;

// Error taxonomy. Everything derives from std::runtime_error so callers that
// do not care about the category can catch a single type.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

// 64-bit FNV-1a. Used for config hashes and replay fingerprints, where a
// stable (platform independent) digest is required.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(s.data(), s.size(), h);
}

// splitmix64 finalizer; derives independent stream seeds from one run seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace l2rw

#endif  // L2RW_TYPES_HPP_
