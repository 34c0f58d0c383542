#include "darht/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>

#include "darht/errors.hpp"
#include "darht/rng.hpp"

namespace darht {

std::string to_string(Split split) {
  switch (split) {
    case Split::Full: return "full";
    case Split::Train: return "train";
    case Split::Test: return "test";
  }
  return "?";
}

Shape Dataset::example_shape() const {
  if (inputs.rank() < 2) return {};
  return Shape(inputs.shape().begin() + 1, inputs.shape().end());
}

void Dataset::validate() const {
  if (inputs.rank() < 2) throw ValidationError("dataset inputs must have a leading example axis");
  if (inputs.dim(0) != labels.size())
    throw ValidationError("dataset has " + std::to_string(inputs.dim(0)) + " inputs but " +
                          std::to_string(labels.size()) + " labels");
  for (std::size_t y : labels)
    if (y >= classes) throw ValidationError("label " + std::to_string(y) + " >= K=" + std::to_string(classes));
  for (float v : inputs.data())
    if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("dataset value outside [0,1]");
}

Dataset Dataset::subset(std::span<const std::size_t> index) const {
  Dataset out;
  out.inputs = inputs.gather_rows(index);
  out.labels = labels_at(index);
  out.classes = classes;
  out.split = split;
  return out;
}

std::vector<std::size_t> Dataset::labels_at(std::span<const std::size_t> index) const {
  std::vector<std::size_t> out;
  out.reserve(index.size());
  for (std::size_t i : index) out.push_back(labels.at(i));
  return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t y : labels) ++counts.at(y);
  return counts;
}

Dataset Dataset::with_example_shape(const Shape& shape) const {
  if (shape_size(shape) != shape_size(example_shape()))
    throw DimensionError("cannot view " + shape_str(example_shape()) + " examples as " + shape_str(shape));
  Shape full{size()};
  full.insert(full.end(), shape.begin(), shape.end());
  Dataset out = *this;
  out.inputs = inputs.reshaped(full);
  return out;
}

std::string to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::Blobs: return "blobs";
    case SyntheticKind::Rings: return "rings";
    case SyntheticKind::Textures: return "textures";
  }
  return "?";
}

SyntheticKind parse_synthetic_kind(const std::string& name) {
  for (auto k : {SyntheticKind::Blobs, SyntheticKind::Rings, SyntheticKind::Textures})
    if (to_string(k) == name) return k;
  throw UsageError("unknown dataset kind '" + name + "'");
}

namespace {

constexpr std::size_t kTextureSide = 8;

float clip01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

// Binary 8x8 base pattern of class k.
bool texture_bit(std::size_t k, std::size_t r, std::size_t c) {
  switch (k) {
    case 0: return r % 2 == 0;            // horizontal stripes
    case 1: return c % 2 == 0;            // vertical stripes
    case 2: return (r + c) % 2 == 0;      // checkerboard
    case 3: return (r + c) % 4 < 2;       // diagonal bands
    default: {
      Rng rng(derive_seed(0x7e87u, k));
      std::uint64_t bits = rng.next_u64();
      return (bits >> (r * kTextureSide + c)) & 1u;
    }
  }
}

}  // namespace

std::vector<std::vector<double>> blob_centroids(const SyntheticConfig& cfg) {
  const double half_gap = static_cast<double>(cfg.separation) * cfg.noise;
  std::vector<std::vector<double>> centres(cfg.classes, std::vector<double>(cfg.dims, 0.5));
  for (std::size_t k = 0; k < cfg.classes; ++k) {
    if (cfg.dims == 1) {
      centres[k][0] = 0.5 + 2.0 * half_gap * (static_cast<double>(k) - (cfg.classes - 1) / 2.0);
      continue;
    }
    // Regular polygon in the first two dims; adjacent centres are 2*half_gap apart.
    const double radius = cfg.classes == 1 ? 0.0 : half_gap / std::sin(std::numbers::pi / cfg.classes);
    const double angle = 2.0 * std::numbers::pi * k / cfg.classes + std::numbers::pi / 2.0;
    centres[k][0] += radius * std::cos(angle);
    centres[k][1] += radius * std::sin(angle);
    for (std::size_t d = 2; d < cfg.dims; ++d) centres[k][d] += (d % cfg.classes == k ? 1.0 : -1.0) * cfg.weak_shift;
  }
  return centres;
}

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.classes == 0) throw UsageError("synthetic data needs K >= 1");
  if (cfg.count < cfg.classes) throw UsageError("synthetic data needs N >= K");
  if (!(cfg.noise >= 0.0f)) throw UsageError("noise must be >= 0");
  if (cfg.kind != SyntheticKind::Textures && cfg.dims == 0) throw UsageError("dims must be >= 1");
  if (cfg.kind == SyntheticKind::Rings && cfg.dims < 2) throw UsageError("rings need dims >= 2");

  Rng rng(cfg.seed);
  Dataset out;
  out.classes = cfg.classes;
  out.labels.resize(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) out.labels[i] = i % cfg.classes;
  rng.shuffle(out.labels.begin(), out.labels.end());

  const Shape example = cfg.kind == SyntheticKind::Textures ? Shape{1, kTextureSide, kTextureSide} : Shape{cfg.dims};
  Shape full{cfg.count};
  full.insert(full.end(), example.begin(), example.end());
  out.inputs = Tensor(full);
  const std::size_t n = shape_size(example);
  auto data = out.inputs.data();
  const auto centres = cfg.kind == SyntheticKind::Blobs ? blob_centroids(cfg) : std::vector<std::vector<double>>{};

  for (std::size_t i = 0; i < cfg.count; ++i) {
    const std::size_t k = out.labels[i];
    float* row = data.data() + i * n;
    switch (cfg.kind) {
      case SyntheticKind::Blobs:
        for (std::size_t d = 0; d < n; ++d) row[d] = clip01(centres[k][d] + cfg.noise * rng.normal());
        break;
      case SyntheticKind::Rings: {
        const double base = cfg.classes == 1 ? 0.25 : 0.1 + 0.35 * static_cast<double>(k) / (cfg.classes - 1);
        const double radius = base + cfg.noise * rng.normal();
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        row[0] = clip01(0.5 + radius * std::cos(angle));
        row[1] = clip01(0.5 + radius * std::sin(angle));
        for (std::size_t d = 2; d < n; ++d) row[d] = clip01(0.5 + cfg.noise * rng.normal());
        break;
      }
      case SyntheticKind::Textures:
        for (std::size_t r = 0; r < kTextureSide; ++r)
          for (std::size_t c = 0; c < kTextureSide; ++c)
            row[r * kTextureSide + c] =
                clip01(0.3 + 0.4 * texture_bit(k, r, c) + rng.uniform(-cfg.noise, cfg.noise));
        break;
    }
  }
  return out;
}

SplitResult train_test_split(const Dataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("test fraction must lie in (0,1)");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());

  SplitResult out;
  // Stratified: each class contributes round(fraction * count) test examples.
  const auto counts = data.class_counts();
  std::vector<std::size_t> quota(counts.size()), taken(counts.size(), 0);
  for (std::size_t k = 0; k < counts.size(); ++k)
    quota[k] = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(counts[k])));
  for (std::size_t i : order) {
    const std::size_t k = data.labels[i];
    if (taken[k] < quota[k]) {
      ++taken[k];
      out.test_index.push_back(i);
    } else {
      out.train_index.push_back(i);
    }
  }
  if (out.train_index.empty() || out.test_index.empty()) throw UsageError("split leaves one part empty");
  std::sort(out.train_index.begin(), out.train_index.end());
  std::sort(out.test_index.begin(), out.test_index.end());
  out.train = data.subset(out.train_index);
  out.train.split = Split::Train;
  out.test = data.subset(out.test_index);
  out.test.split = Split::Test;
  return out;
}

Dataset normalize(const Dataset& data) {
  Dataset out = data;
  auto v = out.inputs.data();
  if (v.empty()) return out;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const float min = *lo, max = *hi;
  if (min == 0.0f && max == 1.0f) return out;
  if (max == min) {
    std::fill(v.begin(), v.end(), 0.5f);
    return out;
  }
  const double range = static_cast<double>(max) - min;
  for (auto& x : v) x = clip01((static_cast<double>(x) - min) / range);
  return out;
}

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::string& what) {
  if (bytes.size() < offset + 4) throw FormatError(what + ": truncated header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                              static_cast<char>(v)};
  out.write(b.data(), 4);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  const std::string img_name = images.string(), lab_name = labels.string();
  if (read_be32(img, 0, img_name) != kImageMagic) throw FormatError(img_name + ": bad magic for IDX images");
  if (read_be32(lab, 0, lab_name) != kLabelMagic) throw FormatError(lab_name + ": bad magic for IDX labels");
  const std::size_t n = read_be32(img, 4, img_name), rows = read_be32(img, 8, img_name),
                    cols = read_be32(img, 12, img_name);
  const std::size_t n_labels = read_be32(lab, 4, lab_name);
  if (n == 0 || rows == 0 || cols == 0) throw FormatError(img_name + ": empty image set");
  if (n_labels != n) throw FormatError("IDX image and label counts differ");
  if (img.size() != 16 + n * rows * cols) throw FormatError(img_name + ": truncated or oversized pixel data");
  if (lab.size() != 8 + n) throw FormatError(lab_name + ": truncated or oversized label data");

  Dataset out;
  out.inputs = Tensor({n, 1, rows, cols});
  auto v = out.inputs.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(img[16 + i]) / 255.0f;
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.labels[i] = lab[8 + i];
    out.classes = std::max(out.classes, out.labels[i] + 1);
  }
  return out;
}

void write_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels) {
  data.validate();
  const Shape s = data.example_shape();
  std::size_t rows = 0, cols = 0;
  if (s.size() == 3 && s[0] == 1) {
    rows = s[1];
    cols = s[2];
  } else if (s.size() == 2) {
    rows = s[0];
    cols = s[1];
  } else {
    throw UsageError("IDX export needs single-channel images, got " + shape_str(s));
  }
  if (data.classes > 256) throw UsageError("IDX labels are single bytes");

  std::ofstream img(images, std::ios::binary), lab(labels, std::ios::binary);
  if (!img || !lab) throw UsageError("cannot write IDX files");
  put_be32(img, kImageMagic);
  put_be32(img, static_cast<std::uint32_t>(data.size()));
  put_be32(img, static_cast<std::uint32_t>(rows));
  put_be32(img, static_cast<std::uint32_t>(cols));
  for (float v : data.inputs.data()) img.put(static_cast<char>(std::lround(v * 255.0f)));
  put_be32(lab, kLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (std::size_t y : data.labels) lab.put(static_cast<char>(y));
}

}  // namespace darht
