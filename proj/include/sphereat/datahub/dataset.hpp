#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sphereat/spherehead/checkpoint.hpp"

namespace sphereat {

using Labels = std::vector<int>;

/// Inputs are (N, ...) with every value in [0, 1]; labels lie in [0, num_classes).
struct Dataset {
  diff::Tensor inputs;
  Labels labels;
  std::string name;
  std::string split;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  diff::Shape example_shape() const { return {inputs.shape().begin() + 1, inputs.shape().end()}; }
  void validate() const;
  Dataset subset(const std::vector<std::size_t>& rows) const;
  /// First n examples (or all of them when n >= size()).
  Dataset head(std::size_t n) const;
};

/// Affine map from arc coordinates to the unit square: u = (a - kMoonsOrigin) * kMoonsScale.
inline constexpr double kMoonsScale = 0.25;
inline constexpr double kMoonsOriginX = -1.5;
inline constexpr double kMoonsOriginY = -1.0;

/// Two interleaved half circles of radius 1 (class 0 centred at (0,0), upper
/// half; class 1 centred at (1,0.5), lower half). `noise` is the Gaussian
/// standard deviation in arc units. The arcs are 0.5 arc units apart, which
/// is 0.125 after rescaling.
Dataset make_two_moons(std::size_t n, double noise, std::uint64_t seed);

/// Parses IDX byte streams (images magic 0x00000803, labels 0x00000801).
Dataset parse_idx(std::span<const unsigned char> images, std::span<const unsigned char> labels,
                  std::size_t num_classes = 10);
Dataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels,
                        std::size_t num_classes = 10);
/// train-images-idx3-ubyte etc. under `dir`; split is "train" or "test".
Dataset load_mnist_dir(const std::filesystem::path& dir, std::string_view split);

enum class CorruptionKind { gaussian_noise, brightness, contrast, pixelate };

std::string_view to_string(CorruptionKind kind);
CorruptionKind parse_corruption(std::string_view text);

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  int severity = 1;
};

/// Distortion parameter for a severity in 1..5:
///   gaussian-noise  sigma           .02 .04 .08 .12 .18
///   brightness      additive shift  .05 .10 .15 .20 .30
///   contrast        1 - factor      .20 .35 .50 .65 .80
///   pixelate        block edge      2   3   4   5   7
double corruption_parameter(CorruptionKind kind, int severity);

Dataset corrupt(const Dataset& data, const CorruptionSpec& spec, std::uint64_t seed);

struct Batch {
  diff::Tensor x;
  Labels y;
  std::vector<std::size_t> rows;
};

/// One pass over a seeded permutation; the final partial batch is kept.
class BatchIterator {
 public:
  BatchIterator(const Dataset& data, std::size_t batch_size, std::uint64_t shuffle_seed);
  bool next(Batch& out);
  std::size_t batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

 private:
  const Dataset* data_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

std::vector<Batch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t shuffle_seed);

TensorArchive export_dataset(const Dataset& data);
Dataset import_dataset(const TensorArchive& archive);

}  // namespace sphereat
