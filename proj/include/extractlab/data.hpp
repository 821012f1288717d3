#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "extractlab/types.hpp"

namespace extractlab {

enum class Fold { Train, Valid, Test };

// Samples with one label row each. Label rows are one-hot for hard labels or
// probability vectors for soft labels; the class count is targets.cols().
struct LabeledDataset {
  Matrix samples;
  Matrix targets;
  Fold fold = Fold::Train;

  std::size_t size() const { return static_cast<std::size_t>(samples.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(samples.cols()); }
  std::size_t num_classes() const { return static_cast<std::size_t>(targets.cols()); }
  bool empty() const { return samples.rows() == 0; }

  // Throws InvalidArgument on row-count mismatch or non-finite samples.
  void validate() const;
  // Hard labels, argmax of each target row.
  std::vector<int> labels() const;
  LabeledDataset subset(std::span<const std::size_t> rows) const;
};

enum class PoolProvenance { SyntheticNatural, UniformNoise, IdxFile };

// Unlabeled thief data with disjoint train/valid partitions.
struct UnlabeledPool {
  Matrix train;
  Matrix valid;
  PoolProvenance provenance = PoolProvenance::SyntheticNatural;

  std::size_t dim() const { return static_cast<std::size_t>(train.cols()); }
};

enum class TaskKind { Blobs, Rings, Checkerboard };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

struct SyntheticTaskSpec {
  TaskKind kind = TaskKind::Rings;
  std::size_t num_classes = 2;
  std::size_t n_train = 1000;
  std::size_t n_valid = 250;
  std::size_t n_test = 1000;
  double noise = 0.05;
  Seed seed = 0;

  void validate() const;
};

struct SyntheticFolds {
  LabeledDataset train;
  LabeledDataset valid;
  LabeledDataset test;
};

// Geometry of the synthetic tasks. Rings: class 0 has radius in [0, 1),
// class 1 has radius in [1.5, 2.5). Blobs: centers evenly spaced on a circle
// of radius kBlobRadius. Checkerboard: unit cells on [-2, 2]^2, label
// (floor(x) + floor(y)) mod 2.
inline constexpr double kRingInner = 1.0;
inline constexpr double kRingOuterLo = 1.5;
inline constexpr double kRingOuterHi = 2.5;
inline constexpr double kBlobRadius = 3.0;
inline constexpr double kCheckerHalfWidth = 2.0;

Vector blob_center(std::size_t cls, std::size_t num_classes);

SyntheticFolds gen_synthetic(const SyntheticTaskSpec& spec);

// Axis-aligned box; lo and hi have equal length.
struct Bounds {
  Vector lo;
  Vector hi;

  static Bounds cube(std::size_t dim, double lo, double hi);
  void validate() const;
};

// Input-space bounding box enclosing a synthetic task with some margin.
Bounds task_bounds(TaskKind kind);

enum class ThiefMode { Natural, Noise };

std::string_view to_string(ThiefMode mode);

// Noise: i.i.d. uniform over the box. Natural: a broad Gaussian mixture with
// centers spread over the box, the low-dimensional stand-in for a large
// public dataset of the same media type.
UnlabeledPool gen_thief_pool(const Bounds& bounds, std::size_t n_train, std::size_t n_valid, ThiefMode mode,
                             Seed seed);

// Reads an IDX image/label pair (optionally gzip-compressed). Pixels are
// scaled to [0, 1] and images flattened row-major; labels become one-hot.
LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);
// Images only, for thief pools built from image files.
Matrix load_idx_images(const std::filesystem::path& images_path);

// Writes an uncompressed IDX pair. Sample values are multiplied by 255 and
// rounded; dim must equal rows * cols.
void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               const Matrix& samples, std::span<const int> labels, std::size_t rows, std::size_t cols);

// Shuffles row indices with `seed` and cuts consecutive folds of
// floor(fraction * n) rows. Within each fold the original row order is kept.
std::vector<std::vector<std::size_t>> split_indices(std::size_t n, std::span<const double> fractions, Seed seed);
std::vector<LabeledDataset> split(const LabeledDataset& dataset, std::span<const double> fractions, Seed seed);
// Same cut applied to an unlabeled matrix.
std::vector<Matrix> split_rows(const Matrix& samples, std::span<const double> fractions, Seed seed);

Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows);

// CSV with header x0,...,x{d-1},label.
void write_csv(const std::filesystem::path& path, const LabeledDataset& dataset);

// Shannon entropy (nats) of the empirical label histogram.
double label_histogram_entropy(std::span<const int> labels, std::size_t num_classes);

}  // namespace extractlab
