#include "ferrobnn/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <fmt/format.h>
#include <memory>
#include <numeric>
#include <random>

#include "ferrobnn/common.hpp"

namespace ferrobnn::data {

namespace fs = std::filesystem;

namespace {

// gzread passes uncompressed files through unchanged.
class IdxReader {
 public:
  explicit IdxReader(const fs::path& path) : path_(path), file_(gzopen(path.c_str(), "rb"), gzclose) {
    if (!file_) throw DataError(fmt::format("cannot open '{}'", path.string()));
  }

  std::uint32_t read_u32() {
    std::array<unsigned char, 4> b{};
    read_exact(b.data(), b.size());
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
           std::uint32_t{b[3]};
  }

  void read_exact(unsigned char* dst, std::size_t n) {
    while (n > 0) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
      const int got = gzread(file_.get(), dst, chunk);
      if (got <= 0)
        throw DataError(fmt::format("'{}': truncated at byte offset {}", path_.string(), offset_));
      dst += got;
      n -= static_cast<std::size_t>(got);
      offset_ += static_cast<std::size_t>(got);
    }
  }

  std::size_t offset() const { return offset_; }

 private:
  fs::path path_;
  std::unique_ptr<gzFile_s, int (*)(gzFile)> file_;
  std::size_t offset_ = 0;
};

fs::path find_file(const fs::path& dir, const std::string& stem) {
  for (const auto& candidate : {dir / stem, dir / (stem + ".gz")})
    if (fs::exists(candidate)) return candidate;
  return {};
}

}  // namespace

void Dataset::validate() const {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw DataError("dataset: feature rows and label count differ");
  if (classes < 1) throw DataError("dataset: class count must be positive");
  for (int l : labels)
    if (l < 0 || l >= classes) throw DataError(fmt::format("dataset: label {} out of range", l));
}

Eigen::MatrixXd read_idx_images(const fs::path& path) {
  IdxReader in(path);
  const std::uint32_t magic = in.read_u32();
  if (magic != 2051)
    throw DataError(fmt::format("'{}': bad image magic {} at byte offset 0 (expected 2051)",
                                path.string(), magic));
  const std::uint32_t count = in.read_u32();
  const std::uint32_t rows = in.read_u32();
  const std::uint32_t cols = in.read_u32();
  if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096)
    throw DataError(fmt::format("'{}': implausible image dimensions {}x{} at byte offset 8",
                                path.string(), rows, cols));
  const std::size_t dim = std::size_t{rows} * cols;
  std::vector<unsigned char> pixels(std::size_t{count} * dim);
  in.read_exact(pixels.data(), pixels.size());
  Eigen::MatrixXd out(count, static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t j = 0; j < dim; ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = pixels[i * dim + j] / 255.0;
  return out;
}

std::vector<int> read_idx_labels(const fs::path& path) {
  IdxReader in(path);
  const std::uint32_t magic = in.read_u32();
  if (magic != 2049)
    throw DataError(fmt::format("'{}': bad label magic {} at byte offset 0 (expected 2049)",
                                path.string(), magic));
  const std::uint32_t count = in.read_u32();
  std::vector<unsigned char> raw(count);
  in.read_exact(raw.data(), raw.size());
  return {raw.begin(), raw.end()};
}

Dataset select(const Dataset& source, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.classes = source.classes;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), source.features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) =
        source.features.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(source.labels[rows[i]]);
  }
  return out;
}

namespace {

std::vector<std::vector<std::size_t>> shuffled_by_class(const Dataset& source, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(source.classes));
  for (std::size_t i = 0; i < source.labels.size(); ++i)
    by_class[static_cast<std::size_t>(source.labels[i])].push_back(i);
  std::mt19937_64 rng(seed);
  for (auto& idx : by_class) std::shuffle(idx.begin(), idx.end(), rng);
  return by_class;
}

}  // namespace

Dataset stratified_subset(const Dataset& source, int n, std::uint64_t seed) {
  if (n <= 0 || static_cast<std::size_t>(n) >= source.size()) return source;
  auto by_class = shuffled_by_class(source, seed);
  const int k = source.classes;
  std::vector<std::size_t> rows;
  for (int c = 0; c < k; ++c) {
    const std::size_t want = static_cast<std::size_t>(n / k + (c < n % k ? 1 : 0));
    auto& idx = by_class[static_cast<std::size_t>(c)];
    if (idx.size() < want)
      throw DataError(fmt::format("stratified subset: class {} has {} samples, need {}", c,
                                  idx.size(), want));
    rows.insert(rows.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(want));
  }
  std::sort(rows.begin(), rows.end());
  return select(source, rows);
}

DatasetHandle stratified_split(std::string name, const Dataset& pool, double test_fraction,
                               std::uint64_t seed) {
  auto by_class = shuffled_by_class(pool, seed);
  std::vector<std::size_t> train_rows, test_rows;
  for (auto& idx : by_class) {
    const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * idx.size()));
    test_rows.insert(test_rows.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    train_rows.insert(train_rows.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(test_rows.begin(), test_rows.end());
  return {std::move(name), select(pool, train_rows), select(pool, test_rows)};
}

Dataset make_linear_toy(int n, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Dataset d;
  d.classes = 2;
  d.features.resize(n, dim);
  d.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    // Class decided by the mean of the features, with the band
    // [0.45, 0.55] left empty.
    double mean = 0.0;
    do {
      for (int j = 0; j < dim; ++j) d.features(i, j) = u(rng);
      mean = d.features.row(i).mean();
    } while (label == 1 ? mean < 0.55 : mean > 0.45);
    d.labels[static_cast<std::size_t>(i)] = label;
  }
  return d;
}

Dataset make_blobs(int n, int dim, int classes, double spread, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.2, 0.8);
  std::normal_distribution<double> noise(0.0, spread);
  Eigen::MatrixXd centers(classes, dim);
  for (int c = 0; c < classes; ++c)
    for (int j = 0; j < dim; ++j) centers(c, j) = u(rng);
  Dataset d;
  d.classes = classes;
  d.features.resize(n, dim);
  d.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int label = i % classes;
    for (int j = 0; j < dim; ++j)
      d.features(i, j) = std::clamp(centers(label, j) + noise(rng), 0.0, 1.0);
    d.labels[static_cast<std::size_t>(i)] = label;
  }
  return d;
}

DatasetHandle load_dataset(const std::string& name_or_path, const LoadOptions& options) {
  DatasetHandle handle;
  if (name_or_path == "toy-linear") {
    const auto pool = make_linear_toy(1200, 8, mix_seed(options.seed, 101));
    handle = stratified_split(name_or_path, pool, 1.0 / 6.0, options.seed);
  } else if (name_or_path == "toy-blobs") {
    const auto pool = make_blobs(3000, 16, 4, 0.15, mix_seed(options.seed, 102));
    handle = stratified_split(name_or_path, pool, 1.0 / 6.0, options.seed);
  } else {
    const fs::path dir(name_or_path);
    if (!fs::is_directory(dir))
      throw DataError(fmt::format("dataset '{}' is neither a built-in name nor a directory",
                                  name_or_path));
    if (auto train_img = find_file(dir, "train-images-idx3-ubyte"); !train_img.empty()) {
      auto load = [&](const std::string& img, const std::string& lbl) {
        Dataset d;
        d.features = read_idx_images(find_file(dir, img));
        const auto lbl_path = find_file(dir, lbl);
        if (lbl_path.empty()) throw DataError(fmt::format("missing '{}' in '{}'", lbl, dir.string()));
        d.labels = read_idx_labels(lbl_path);
        d.classes = 10;
        return d;
      };
      handle.name = dir.filename().string();
      handle.train = load("train-images-idx3-ubyte", "train-labels-idx1-ubyte");
      if (find_file(dir, "t10k-images-idx3-ubyte").empty())
        throw DataError(fmt::format("missing t10k images in '{}'", dir.string()));
      handle.test = load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte");
    } else if (auto pool_img = find_file(dir, "images-idx3-ubyte"); !pool_img.empty()) {
      Dataset pool;
      pool.features = read_idx_images(pool_img);
      const auto lbl_path = find_file(dir, "labels-idx1-ubyte");
      if (lbl_path.empty()) throw DataError(fmt::format("missing labels in '{}'", dir.string()));
      pool.labels = read_idx_labels(lbl_path);
      pool.classes = 10;
      pool.validate();
      handle = stratified_split(dir.filename().string(), pool, 0.2, options.seed);
    } else {
      throw DataError(fmt::format("no IDX files found in '{}'", dir.string()));
    }
  }
  handle.train.validate();
  handle.test.validate();
  if (handle.train.features.cols() != handle.test.features.cols())
    throw DataError("train and test feature dimensions differ");
  handle.train = stratified_subset(handle.train, options.subset, mix_seed(options.seed, 1));
  handle.test = stratified_subset(handle.test, options.test_subset, mix_seed(options.seed, 2));
  return handle;
}

}  // namespace ferrobnn::data
