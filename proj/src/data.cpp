#include "extractlab/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>

#include "extractlab/random.hpp"

namespace extractlab {

void LabeledDataset::validate() const {
  if (samples.rows() != targets.rows()) {
    throw InvalidArgument("dataset has " + std::to_string(samples.rows()) + " samples but " +
                          std::to_string(targets.rows()) + " labels");
  }
  if (!samples.allFinite()) throw InvalidArgument("dataset contains non-finite sample values");
}

std::vector<int> LabeledDataset::labels() const {
  std::vector<int> out(size());
  for (Eigen::Index i = 0; i < targets.rows(); ++i) {
    int best = 0;
    for (Eigen::Index j = 1; j < targets.cols(); ++j) {
      if (targets(i, j) > targets(i, best)) best = static_cast<int>(j);
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> rows) const {
  return {select_rows(samples, rows), select_rows(targets, rows), fold};
}

Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= static_cast<std::size_t>(m.rows())) throw InvalidArgument("row index out of range");
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Blobs: return "blobs";
    case TaskKind::Rings: return "rings";
    case TaskKind::Checkerboard: return "checkerboard";
  }
  return "rings";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "blobs") return TaskKind::Blobs;
  if (name == "rings") return TaskKind::Rings;
  if (name == "checkerboard") return TaskKind::Checkerboard;
  throw InvalidArgument("unknown synthetic task '" + std::string(name) + "'");
}

void SyntheticTaskSpec::validate() const {
  if (kind == TaskKind::Blobs) {
    if (num_classes < 2) throw InvalidArgument("blobs needs at least 2 classes");
  } else if (num_classes != 2) {
    throw InvalidArgument(std::string(to_string(kind)) + " is a 2-class task");
  }
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw InvalidArgument("noise scale must be finite and nonnegative");
  if (n_train == 0 || n_valid == 0 || n_test == 0) throw InvalidArgument("fold sizes must be positive");
}

Vector blob_center(std::size_t cls, std::size_t num_classes) {
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(cls) / static_cast<double>(num_classes);
  Vector c(2);
  c << kBlobRadius * std::cos(angle), kBlobRadius * std::sin(angle);
  return c;
}

namespace {

LabeledDataset gen_fold(const SyntheticTaskSpec& spec, std::size_t n, Fold fold, Rng& rng) {
  Matrix x(static_cast<Eigen::Index>(n), 2);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    int cls = 0;
    switch (spec.kind) {
      case TaskKind::Blobs: {
        cls = static_cast<int>(rng.below(spec.num_classes));
        x.row(row) = blob_center(static_cast<std::size_t>(cls), spec.num_classes).transpose();
        break;
      }
      case TaskKind::Rings: {
        cls = static_cast<int>(rng.below(2));
        // Area-uniform radius inside each annulus.
        const double lo = cls == 0 ? 0.0 : kRingOuterLo;
        const double hi = cls == 0 ? kRingInner : kRingOuterHi;
        const double r = std::sqrt(rng.uniform(lo * lo, hi * hi));
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        x(row, 0) = r * std::cos(angle);
        x(row, 1) = r * std::sin(angle);
        break;
      }
      case TaskKind::Checkerboard: {
        const double a = rng.uniform(-kCheckerHalfWidth, kCheckerHalfWidth);
        const double b = rng.uniform(-kCheckerHalfWidth, kCheckerHalfWidth);
        x(row, 0) = a;
        x(row, 1) = b;
        const auto cell = static_cast<long>(std::floor(a)) + static_cast<long>(std::floor(b));
        cls = static_cast<int>(((cell % 2) + 2) % 2);
        break;
      }
    }
    labels[i] = cls;
    if (spec.noise > 0.0) {
      x(row, 0) += spec.noise * rng.normal();
      x(row, 1) += spec.noise * rng.normal();
    }
  }
  Matrix targets = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.num_classes));
  for (std::size_t i = 0; i < n; ++i) targets(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return {std::move(x), std::move(targets), fold};
}

}  // namespace

SyntheticFolds gen_synthetic(const SyntheticTaskSpec& spec) {
  spec.validate();
  Rng train_rng(derive_seed(spec.seed, 11));
  Rng valid_rng(derive_seed(spec.seed, 12));
  Rng test_rng(derive_seed(spec.seed, 13));
  return {gen_fold(spec, spec.n_train, Fold::Train, train_rng), gen_fold(spec, spec.n_valid, Fold::Valid, valid_rng),
          gen_fold(spec, spec.n_test, Fold::Test, test_rng)};
}

Bounds Bounds::cube(std::size_t dim, double lo, double hi) {
  return {Vector::Constant(static_cast<Eigen::Index>(dim), lo), Vector::Constant(static_cast<Eigen::Index>(dim), hi)};
}

void Bounds::validate() const {
  if (lo.size() == 0 || lo.size() != hi.size()) throw InvalidArgument("bounds must be nonempty and of equal length");
  for (Eigen::Index i = 0; i < lo.size(); ++i) {
    if (!std::isfinite(lo(i)) || !std::isfinite(hi(i)) || !(hi(i) > lo(i))) {
      throw InvalidArgument("degenerate bounds in dimension " + std::to_string(i));
    }
  }
}

Bounds task_bounds(TaskKind kind) {
  switch (kind) {
    case TaskKind::Blobs: return Bounds::cube(2, -kBlobRadius - 2.0, kBlobRadius + 2.0);
    case TaskKind::Rings: return Bounds::cube(2, -kRingOuterHi - 0.5, kRingOuterHi + 0.5);
    case TaskKind::Checkerboard: return Bounds::cube(2, -kCheckerHalfWidth - 0.5, kCheckerHalfWidth + 0.5);
  }
  return Bounds::cube(2, -3.0, 3.0);
}

std::string_view to_string(ThiefMode mode) { return mode == ThiefMode::Natural ? "natural" : "noise"; }

namespace {

constexpr std::size_t kMixtureComponents = 24;
constexpr double kMixtureSpread = 0.12;

Matrix draw_pool(const Bounds& bounds, std::size_t n, ThiefMode mode, const Matrix& centers, Rng& rng) {
  const auto d = bounds.lo.size();
  Matrix x(static_cast<Eigen::Index>(n), d);
  const Vector width = bounds.hi - bounds.lo;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    if (mode == ThiefMode::Noise) {
      for (Eigen::Index j = 0; j < d; ++j) x(row, j) = rng.uniform(bounds.lo(j), bounds.hi(j));
    } else {
      const auto c = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(centers.rows())));
      for (Eigen::Index j = 0; j < d; ++j) x(row, j) = centers(c, j) + kMixtureSpread * width(j) * rng.normal();
    }
  }
  return x;
}

}  // namespace

UnlabeledPool gen_thief_pool(const Bounds& bounds, std::size_t n_train, std::size_t n_valid, ThiefMode mode,
                             Seed seed) {
  bounds.validate();
  if (n_train == 0 || n_valid == 0) throw InvalidArgument("thief partitions must be nonempty");
  Rng center_rng(derive_seed(seed, 21));
  Matrix centers(static_cast<Eigen::Index>(kMixtureComponents), bounds.lo.size());
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    for (Eigen::Index j = 0; j < centers.cols(); ++j) centers(c, j) = center_rng.uniform(bounds.lo(j), bounds.hi(j));
  }
  Rng train_rng(derive_seed(seed, 22));
  Rng valid_rng(derive_seed(seed, 23));
  UnlabeledPool pool;
  pool.train = draw_pool(bounds, n_train, mode, centers, train_rng);
  pool.valid = draw_pool(bounds, n_valid, mode, centers, valid_rng);
  pool.provenance = mode == ThiefMode::Natural ? PoolProvenance::SyntheticNatural : PoolProvenance::UniformNoise;
  return pool;
}

namespace {

constexpr std::uint32_t kImageMagic = 2051;
constexpr std::uint32_t kLabelMagic = 2049;

// gzread passes uncompressed files through unchanged.
class GzReader {
 public:
  explicit GzReader(const std::filesystem::path& path) : path_(path.string()) {
    file_ = gzopen(path_.c_str(), "rb");
    if (file_ == nullptr) throw std::runtime_error("cannot open " + path_);
  }
  ~GzReader() {
    if (file_ != nullptr) gzclose(file_);
  }
  GzReader(const GzReader&) = delete;
  GzReader& operator=(const GzReader&) = delete;

  std::uint32_t read_u32_be() {
    std::array<unsigned char, 4> b{};
    read_exact(b.data(), b.size(), "header");
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
  }

  void read_exact(unsigned char* dst, std::size_t n, const char* what) {
    std::size_t done = 0;
    while (done < n) {
      const auto chunk = static_cast<unsigned>(std::min<std::size_t>(n - done, 1u << 30));
      const int got = gzread(file_, dst + done, chunk);
      if (got <= 0) throw std::runtime_error(path_ + ": truncated " + what);
      done += static_cast<std::size_t>(got);
    }
  }

 private:
  std::string path_;
  gzFile file_ = nullptr;
};

struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<unsigned char> pixels;
};

IdxImages read_images(const std::filesystem::path& path) {
  GzReader in(path);
  const std::uint32_t magic = in.read_u32_be();
  if (magic != kImageMagic) {
    throw std::runtime_error(path.string() + ": bad magic number " + std::to_string(magic) + " for IDX images");
  }
  IdxImages img;
  img.count = in.read_u32_be();
  img.rows = in.read_u32_be();
  img.cols = in.read_u32_be();
  img.pixels.resize(img.count * img.rows * img.cols);
  in.read_exact(img.pixels.data(), img.pixels.size(), "image payload");
  return img;
}

std::vector<unsigned char> read_labels(const std::filesystem::path& path) {
  GzReader in(path);
  const std::uint32_t magic = in.read_u32_be();
  if (magic != kLabelMagic) {
    throw std::runtime_error(path.string() + ": bad magic number " + std::to_string(magic) + " for IDX labels");
  }
  std::vector<unsigned char> labels(in.read_u32_be());
  in.read_exact(labels.data(), labels.size(), "label payload");
  return labels;
}

Matrix scale_pixels(const IdxImages& img) {
  const std::size_t d = img.rows * img.cols;
  Matrix x(static_cast<Eigen::Index>(img.count), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < img.pixels.size(); ++i) x.data()[i] = static_cast<double>(img.pixels[i]) / 255.0;
  return x;
}

void put_u32_be(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                              static_cast<char>(v)};
  out.write(b.data(), b.size());
}

}  // namespace

Matrix load_idx_images(const std::filesystem::path& images_path) { return scale_pixels(read_images(images_path)); }

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const IdxImages img = read_images(images_path);
  const std::vector<unsigned char> raw = read_labels(labels_path);
  if (raw.size() != img.count) {
    throw std::runtime_error("IDX count mismatch: " + std::to_string(img.count) + " images vs " +
                             std::to_string(raw.size()) + " labels");
  }
  const int top = raw.empty() ? 0 : *std::max_element(raw.begin(), raw.end());
  const std::size_t num_classes = std::max<std::size_t>(10, static_cast<std::size_t>(top) + 1);
  Matrix targets = Matrix::Zero(static_cast<Eigen::Index>(raw.size()), static_cast<Eigen::Index>(num_classes));
  for (std::size_t i = 0; i < raw.size(); ++i) targets(static_cast<Eigen::Index>(i), raw[i]) = 1.0;
  return {scale_pixels(img), std::move(targets), Fold::Train};
}

void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               const Matrix& samples, std::span<const int> labels, std::size_t rows, std::size_t cols) {
  if (static_cast<std::size_t>(samples.cols()) != rows * cols) throw InvalidArgument("write_idx: dim != rows*cols");
  if (labels.size() != static_cast<std::size_t>(samples.rows())) throw InvalidArgument("write_idx: label count");
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw std::runtime_error("write_idx: cannot open output files");
  put_u32_be(img, kImageMagic);
  put_u32_be(img, static_cast<std::uint32_t>(samples.rows()));
  put_u32_be(img, static_cast<std::uint32_t>(rows));
  put_u32_be(img, static_cast<std::uint32_t>(cols));
  for (Eigen::Index i = 0; i < samples.size(); ++i) {
    const double v = std::clamp(std::round(samples.data()[i] * 255.0), 0.0, 255.0);
    img.put(static_cast<char>(static_cast<unsigned char>(v)));
  }
  put_u32_be(lab, kLabelMagic);
  put_u32_be(lab, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) {
    if (l < 0 || l > 255) throw InvalidArgument("write_idx: label out of byte range");
    lab.put(static_cast<char>(static_cast<unsigned char>(l)));
  }
}

std::vector<std::vector<std::size_t>> split_indices(std::size_t n, std::span<const double> fractions, Seed seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw InvalidArgument("split fractions must be positive");
    total += f;
  }
  if (total > 1.0 + 1e-12) throw InvalidArgument("split fractions sum to more than 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<std::size_t>> folds;
  std::size_t cursor = 0;
  for (double f : fractions) {
    // Tolerate representation error, e.g. 0.8 * 60000.
    const auto take = static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
    std::vector<std::size_t> fold(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                  order.begin() + static_cast<std::ptrdiff_t>(std::min(n, cursor + take)));
    std::sort(fold.begin(), fold.end());
    cursor += fold.size();
    folds.push_back(std::move(fold));
  }
  return folds;
}

std::vector<LabeledDataset> split(const LabeledDataset& dataset, std::span<const double> fractions, Seed seed) {
  std::vector<LabeledDataset> out;
  for (const auto& idx : split_indices(dataset.size(), fractions, seed)) out.push_back(dataset.subset(idx));
  return out;
}

std::vector<Matrix> split_rows(const Matrix& samples, std::span<const double> fractions, Seed seed) {
  std::vector<Matrix> out;
  for (const auto& idx : split_indices(static_cast<std::size_t>(samples.rows()), fractions, seed)) {
    out.push_back(select_rows(samples, idx));
  }
  return out;
}

void write_csv(const std::filesystem::path& path, const LabeledDataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  for (std::size_t j = 0; j < dataset.dim(); ++j) out << 'x' << j << ',';
  out << "label\n";
  out.precision(17);
  const auto labels = dataset.labels();
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (std::size_t j = 0; j < dataset.dim(); ++j) {
      out << dataset.samples(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) << ',';
    }
    out << labels[i] << '\n';
  }
}

double label_histogram_entropy(std::span<const int> labels, std::size_t num_classes) {
  if (labels.empty()) return 0.0;
  std::vector<double> counts(num_classes, 0.0);
  for (int l : labels) counts.at(static_cast<std::size_t>(l)) += 1.0;
  double h = 0.0;
  for (double c : counts) {
    if (c > 0.0) {
      const double p = c / static_cast<double>(labels.size());
      h -= p * std::log(p);
    }
  }
  return h;
}

}  // namespace extractlab
