#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lutnet/common.hpp"
#include "lutnet/quantizer.hpp"
#include "lutnet/topology.hpp"

namespace lutnet {

enum class NormalizationKind { None, Scale, Standardize };

/// How raw features were mapped: x' = (x - center) / spread per feature.
/// Scale has center 0 (IDX pixels, spread 255).
struct Normalization {
  NormalizationKind kind = NormalizationKind::None;
  VectorXd center;
  VectorXd spread;
};

struct Dataset {
  MatrixXd features;  // samples x features
  std::vector<int> labels;
  MatrixXd targets;  // samples x outputs; regression only, usually empty
  int classes = 0;
  Normalization normalization;
  std::optional<SpatialShape> image_shape;  // set for image data (C = 1 for MNIST)
  std::vector<std::string> class_names;     // CSV string labels, sorted

  int size() const noexcept { return static_cast<int>(features.rows()); }
  int feature_count() const noexcept { return static_cast<int>(features.cols()); }
  /// Throws InvariantViolation if labels, targets, rows or classes disagree.
  /// A regression set may leave `labels` empty.
  void validate() const;
};

/// IDX image + label pair. Pixels are divided by 255; images are flattened
/// row-major (which is also the C=1 channel-major layout).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// CSV with a header row. `label_column` holds integer labels or class names
/// (names are sorted and numbered). All other columns must be numeric and are
/// standardized to mean 0, standard deviation 1 (constant columns keep
/// spread 1).
Dataset load_csv(const std::filesystem::path& path, const std::string& label_column = "label");

/// Applies a stored standardization to another split (e.g. test with the
/// training statistics).
Dataset apply_normalization(Dataset data, const Normalization& norm);

/// Seeded shuffle then split: the first `train_fraction` of the permutation
/// becomes the training set.
std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction, std::uint64_t seed);

/// Dataset restricted to the given sample indices (in that order).
Dataset subset(const Dataset& data, const std::vector<int>& indices);

/// Maps features into the first layer's input quantizer range: [0, 1] data
/// goes to [0, max_val] for multi-bit and to [-max_val, max_val] for 1 bit.
/// Standardized data is first squashed into [0, 1] by clamp((z + 3) / 6).
Dataset fit_to_quantizer(Dataset data, const QuantizerParams& q);

/// Train and test splits from a directory holding either the four MNIST IDX
/// files or train.csv / test.csv.
struct DataSplits {
  Dataset train;
  Dataset test;
};
DataSplits load_data_dir(const std::filesystem::path& dir, const std::string& label_column = "label");

}  // namespace lutnet
