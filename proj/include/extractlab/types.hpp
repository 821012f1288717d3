#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace extractlab {

// Samples are stored one per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

using Seed = std::uint64_t;

// Thrown for malformed inputs: shape mismatches, invalid specs, bad configs.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// splitmix64 finalizer; used to derive independent seeds from a master seed.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr Seed derive_seed(Seed master, std::uint64_t stream) {
  return mix64(mix64(master) ^ mix64(stream * 0x2545f4914f6cdd1dULL + 1));
}

}  // namespace extractlab
