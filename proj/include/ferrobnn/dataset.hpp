#pragma once

// Labelled feature matrices, IDX (MNIST) ingestion and small synthetic sets.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ferrobnn::data {

struct Dataset {
  Eigen::MatrixXd features;  // samples x features, scaled to [0, 1]
  std::vector<int> labels;
  int classes = 0;

  std::size_t size() const { return labels.size(); }
  int feature_dim() const { return static_cast<int>(features.cols()); }
  void validate() const;
};

struct DatasetHandle {
  std::string name;
  Dataset train;
  Dataset test;

  int feature_dim() const { return train.feature_dim(); }
  int classes() const { return train.classes; }
};

struct LoadOptions {
  int subset = 0;       // stratified train subset size, 0 = all
  int test_subset = 0;  // stratified test subset size, 0 = all
  std::uint64_t seed = 0;
};

/// IDX image file (magic 2051), optionally gzip-compressed. Pixels / 255.
Eigen::MatrixXd read_idx_images(const std::filesystem::path& path);
/// IDX label file (magic 2049), optionally gzip-compressed.
std::vector<int> read_idx_labels(const std::filesystem::path& path);

/// Rows of `source` with the given indices, in order.
Dataset select(const Dataset& source, const std::vector<std::size_t>& rows);

/// n / classes samples per class (the first n % classes classes get one
/// extra), drawn without replacement by a seeded shuffle.
Dataset stratified_subset(const Dataset& source, int n, std::uint64_t seed);

/// Per-class split of a pool into disjoint train/test sets.
DatasetHandle stratified_split(std::string name, const Dataset& pool, double test_fraction,
                               std::uint64_t seed);

/// Two linearly separable classes in `dim` dimensions with a clear margin.
Dataset make_linear_toy(int n, int dim, std::uint64_t seed);

/// `classes` isotropic Gaussian clusters in `dim` dimensions, features in [0, 1].
Dataset make_blobs(int n, int dim, int classes, double spread, std::uint64_t seed);

/// Resolves a dataset by name or directory:
///   toy-linear, toy-blobs                built-in synthetic sets
///   <dir> with train-/t10k- IDX files    standard MNIST (60000/10000)
///   <dir> with images-/labels- IDX files a single pool split 80/20 per class
DatasetHandle load_dataset(const std::string& name_or_path, const LoadOptions& options = {});

}  // namespace ferrobnn::data
