#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "darht/tape.hpp"
#include "darht/tensor.hpp"

namespace darht {

enum class LayerKind { Dense, Conv, Relu, Flatten, Dropout };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::size_t units = 0;   // dense width or conv output channels
  std::size_t kernel = 0;  // square conv kernel side
  std::size_t stride = 1;
  float rate = 0.0f;  // dropout probability

  static LayerSpec dense(std::size_t units) { return {LayerKind::Dense, units, 0, 1, 0.0f}; }
  static LayerSpec conv(std::size_t channels, std::size_t kernel, std::size_t stride = 1) {
    return {LayerKind::Conv, channels, kernel, stride, 0.0f};
  }
  static LayerSpec relu() { return {LayerKind::Relu, 0, 0, 1, 0.0f}; }
  static LayerSpec flatten() { return {LayerKind::Flatten, 0, 0, 1, 0.0f}; }
  static LayerSpec dropout(float rate) { return {LayerKind::Dropout, 0, 0, 1, rate}; }

  bool operator==(const LayerSpec&) const = default;
};

// Student output head: dropout -> dense(K*J) -> dense(K). The K*J layer is
// the student-teacher feature map; block j holds the student's copy of
// teacher j's logits.
struct StudentHeadSpec {
  std::size_t classes = 0;
  std::size_t teachers = 0;
  float dropout_rate = 0.25f;

  bool operator==(const StudentHeadSpec&) const = default;
};

struct ModelSpec {
  std::string name;  // architecture tag, e.g. "mlp-deep"
  Shape input_shape;
  std::vector<LayerSpec> layers;
  std::optional<StudentHeadSpec> head;

  bool operator==(const ModelSpec&) const = default;
};

// Backbone layers with the student head expanded.
std::vector<LayerSpec> resolved_layers(const ModelSpec& spec);

// Per-example output shape of every resolved layer. Throws ConstructionError
// when layers do not compose.
std::vector<Shape> infer_shapes(const ModelSpec& spec);

std::size_t param_count(const ModelSpec& spec);
std::vector<std::size_t> layer_param_counts(const ModelSpec& spec);

// Desk-scale architecture families. With `head`, the backbone ends at its
// last hidden activation and the student head is attached; otherwise a
// dense(classes) layer produces the logits.
ModelSpec mlp_deep(const Shape& input, std::size_t classes, std::optional<StudentHeadSpec> head = {});
ModelSpec mlp_wide(const Shape& input, std::size_t classes, std::optional<StudentHeadSpec> head = {});
ModelSpec cnn_small(const Shape& input, std::size_t classes, std::optional<StudentHeadSpec> head = {});
ModelSpec architecture(const std::string& name, const Shape& input, std::size_t classes,
                       std::optional<StudentHeadSpec> head = {});

struct ForwardOutput {
  Tensor logits;       // [B x K]
  Tensor feature_map;  // [B x K*J]; empty for models without a student head
  std::size_t teachers = 0;

  std::size_t classes() const { return logits.dim(1); }
  // Block j of example `row`, length K.
  Tensor block(std::size_t row, std::size_t j) const;
};

struct ForwardVars {
  Var logits;
  std::optional<Var> features;
};

class Model {
 public:
  // Deterministic scaled-uniform fan-in initialization; biases start at 0.
  static Model build(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t classes() const;
  std::size_t teacher_blocks() const { return spec_.head ? spec_.head->teachers : 0; }
  bool has_head() const { return spec_.head.has_value(); }

  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  std::size_t param_count() const;
  std::uint64_t checksum() const;

  // Places the parameters on a tape, as variables when `trainable`.
  std::vector<Var> bind(Tape& tape, bool trainable) const;

  // One forward pass. `x` is a batch [B x input_shape] or a single example.
  // With `dropout_seed`, dropout layers draw inverted-dropout masks from it;
  // otherwise dropout is the identity.
  ForwardVars forward(Tape& tape, std::span<const Var> params, Var x,
                      std::optional<std::uint64_t> dropout_seed) const;

  // Mean of `passes` dropout-active passes with seeds derive_seed(seed, c),
  // averaged in logit / feature space.
  ForwardVars mc_forward(Tape& tape, std::span<const Var> params, Var x, std::size_t passes,
                         std::uint64_t seed) const;

  // Adds a leading batch axis when `x` is a single example.
  Tensor as_batch(const Tensor& x) const;

 private:
  Model(ModelSpec spec, std::vector<LayerSpec> layers, std::vector<Shape> shapes);

  ModelSpec spec_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;  // per-example output shape per layer
  std::vector<std::size_t> param_offset_;
  std::vector<Tensor> params_;
};

// Value-level conveniences over Model::forward / Model::mc_forward.
ForwardOutput forward(const Model& model, const Tensor& x, bool dropout_active, std::uint64_t seed);
ForwardOutput mc_forward(const Model& model, const Tensor& x, std::size_t passes, std::uint64_t seed);

// How a model is queried at evaluation / attack time.
struct InferenceMode {
  std::size_t mc_passes = 0;  // 0: deterministic forward without dropout
  std::uint64_t seed = 0;
};

// Differentiable logits of a batch, built on the caller's tape.
using LogitFn = std::function<Var(Tape&, Var)>;

// Parameters enter the tape as constants. The model must outlive the closure.
LogitFn logit_fn(const Model& model, InferenceMode mode = {});

Tensor predict_logits(const Model& model, const Tensor& x, InferenceMode mode = {});
std::vector<std::size_t> predict(const Model& model, const Tensor& x, InferenceMode mode = {});

}  // namespace darht
