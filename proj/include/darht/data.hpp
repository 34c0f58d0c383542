#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "darht/tensor.hpp"

namespace darht {

enum class Split { Full, Train, Test };

std::string to_string(Split split);

// Labelled examples. inputs is [N x example shape] with values in [0,1].
struct Dataset {
  Tensor inputs;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;
  Split split = Split::Full;

  std::size_t size() const { return labels.size(); }
  Shape example_shape() const;
  // Throws ValidationError when the invariants do not hold.
  void validate() const;
  Dataset subset(std::span<const std::size_t> index) const;
  std::vector<std::size_t> labels_at(std::span<const std::size_t> index) const;
  std::vector<std::size_t> class_counts() const;
  // Same examples viewed with another per-example shape of equal size.
  Dataset with_example_shape(const Shape& shape) const;
};

enum class SyntheticKind { Blobs, Rings, Textures };

std::string to_string(SyntheticKind kind);
SyntheticKind parse_synthetic_kind(const std::string& name);

struct SyntheticConfig {
  SyntheticKind kind = SyntheticKind::Blobs;
  std::size_t classes = 3;
  std::size_t count = 600;
  std::size_t dims = 2;  // blobs / rings only; textures are 1 x 8 x 8
  float noise = 0.1f;
  // Blobs: distance from each centroid to the nearest pairwise boundary, in
  // units of noise.
  float separation = 3.0f;
  // Blobs with dims > 2: class mean offset of each extra dimension. Extra
  // dimension d shifts class (d mod K) up by this amount and the others down,
  // giving many weakly predictive features. 0 leaves them pure noise.
  float weak_shift = 0.0f;
  std::uint64_t seed = 0;
};

// Class-balanced and deterministic given the seed. Values are clipped to
// [0,1].
Dataset generate_synthetic(const SyntheticConfig& cfg);

// Blob class centres, exposed for the nearest-centroid oracle.
std::vector<std::vector<double>> blob_centroids(const SyntheticConfig& cfg);

struct SplitResult {
  Dataset train;
  Dataset test;
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> test_index;
};

// Stratified shuffle split; every example lands in exactly one part.
SplitResult train_test_split(const Dataset& data, double test_fraction, std::uint64_t seed);

// Global min-max rescale to [0,1]. Constant inputs map to 0.5.
Dataset normalize(const Dataset& data);

// Big-endian IDX files as used by MNIST: images 0x00000803 (N, rows, cols,
// ubyte pixels), labels 0x00000801 (N, ubyte labels). Images load as
// [N x 1 x rows x cols] scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
void write_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace darht
