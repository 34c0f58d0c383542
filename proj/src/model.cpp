#include "darht/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "darht/errors.hpp"
#include "darht/ops.hpp"
#include "darht/rng.hpp"

namespace darht {

std::vector<LayerSpec> resolved_layers(const ModelSpec& spec) {
  std::vector<LayerSpec> layers = spec.layers;
  if (spec.head) {
    const auto& h = *spec.head;
    if (h.classes < 2) throw ConstructionError("student head needs at least 2 classes");
    if (h.teachers < 1) throw ConstructionError("student head needs at least 1 teacher");
    layers.push_back(LayerSpec::dropout(h.dropout_rate));
    layers.push_back(LayerSpec::dense(h.classes * h.teachers));
    layers.push_back(LayerSpec::dense(h.classes));
  }
  return layers;
}

std::vector<Shape> infer_shapes(const ModelSpec& spec) {
  const auto layers = resolved_layers(spec);
  std::vector<Shape> shapes;
  if (layers.empty()) return shapes;
  if (spec.input_shape.empty()) throw ConstructionError("model spec has layers but no input shape");
  for (auto d : spec.input_shape)
    if (d == 0) throw ConstructionError("input shape " + shape_str(spec.input_shape) + " has a zero extent");
  Shape cur = spec.input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string where = "layer " + std::to_string(i) + ": ";
    switch (l.kind) {
      case LayerKind::Dense:
        if (cur.size() != 1) throw ConstructionError(where + "dense needs a flat input, got " + shape_str(cur));
        if (l.units == 0) throw ConstructionError(where + "dense width must be positive");
        cur = {l.units};
        break;
      case LayerKind::Conv: {
        if (cur.size() != 3) throw ConstructionError(where + "conv needs [C x H x W] input, got " + shape_str(cur));
        if (l.units == 0 || l.kernel == 0 || l.stride == 0)
          throw ConstructionError(where + "conv channels, kernel and stride must be positive");
        if (l.kernel > cur[1] || l.kernel > cur[2])
          throw ConstructionError(where + "conv kernel larger than input " + shape_str(cur));
        cur = {l.units, (cur[1] - l.kernel) / l.stride + 1, (cur[2] - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::Flatten:
        cur = {shape_size(cur)};
        break;
      case LayerKind::Dropout:
        if (!(l.rate >= 0.0f && l.rate < 1.0f))
          throw ConstructionError(where + "dropout rate must lie in [0, 1), got " + std::to_string(l.rate));
        break;
      case LayerKind::Relu:
        break;
    }
    shapes.push_back(cur);
  }
  if (spec.head && shapes.back() != Shape{spec.head->classes}) {
    throw ConstructionError("student head output does not match class count");
  }
  return shapes;
}

std::vector<std::size_t> layer_param_counts(const ModelSpec& spec) {
  const auto layers = resolved_layers(spec);
  const auto shapes = infer_shapes(spec);
  std::vector<std::size_t> counts;
  Shape in = spec.input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    std::size_t n = 0;
    if (l.kind == LayerKind::Dense) n = in[0] * l.units + l.units;
    if (l.kind == LayerKind::Conv) n = l.units * in[0] * l.kernel * l.kernel + l.units;
    counts.push_back(n);
    in = shapes[i];
  }
  return counts;
}

std::size_t param_count(const ModelSpec& spec) {
  std::size_t total = 0;
  for (auto n : layer_param_counts(spec)) total += n;
  return total;
}

namespace {

std::vector<LayerSpec> hidden_stack(const Shape& input, std::initializer_list<std::size_t> widths) {
  std::vector<LayerSpec> layers;
  if (input.size() != 1) layers.push_back(LayerSpec::flatten());
  for (auto w : widths) {
    layers.push_back(LayerSpec::dense(w));
    layers.push_back(LayerSpec::relu());
  }
  return layers;
}

ModelSpec finish(std::string name, const Shape& input, std::vector<LayerSpec> layers, std::size_t classes,
                 std::optional<StudentHeadSpec> head) {
  if (head) {
    if (head->classes != classes) throw ConstructionError("student head class count differs from model classes");
  } else {
    layers.push_back(LayerSpec::dense(classes));
  }
  ModelSpec spec{std::move(name), input, std::move(layers), head};
  infer_shapes(spec);
  return spec;
}

}  // namespace

ModelSpec mlp_deep(const Shape& input, std::size_t classes, std::optional<StudentHeadSpec> head) {
  return finish("mlp-deep", input, hidden_stack(input, {64, 64, 64}), classes, head);
}

ModelSpec mlp_wide(const Shape& input, std::size_t classes, std::optional<StudentHeadSpec> head) {
  return finish("mlp-wide", input, hidden_stack(input, {256}), classes, head);
}

ModelSpec cnn_small(const Shape& input, std::size_t classes, std::optional<StudentHeadSpec> head) {
  if (input.size() != 3) throw ConstructionError("cnn-small needs image input [C x H x W], got " + shape_str(input));
  std::vector<LayerSpec> layers{LayerSpec::conv(8, 3), LayerSpec::relu(), LayerSpec::conv(16, 3), LayerSpec::relu(),
                                LayerSpec::flatten()};
  return finish("cnn-small", input, std::move(layers), classes, head);
}

ModelSpec architecture(const std::string& name, const Shape& input, std::size_t classes,
                       std::optional<StudentHeadSpec> head) {
  if (name == "mlp-deep") return mlp_deep(input, classes, head);
  if (name == "mlp-wide") return mlp_wide(input, classes, head);
  if (name == "cnn-small") return cnn_small(input, classes, head);
  throw ConstructionError("unknown architecture '" + name + "'");
}

Tensor ForwardOutput::block(std::size_t row, std::size_t j) const {
  if (feature_map.empty()) throw UsageError("model has no student-teacher feature map");
  const std::size_t k = classes();
  if (j >= teachers || row >= feature_map.dim(0)) throw DimensionError("feature block index out of range");
  std::vector<float> out(k);
  for (std::size_t c = 0; c < k; ++c) out[c] = feature_map.at(row, j * k + c);
  return Tensor({k}, std::move(out));
}

Model::Model(ModelSpec spec, std::vector<LayerSpec> layers, std::vector<Shape> shapes)
    : spec_(std::move(spec)), layers_(std::move(layers)), shapes_(std::move(shapes)) {}

Model Model::build(ModelSpec spec, std::uint64_t seed) {
  auto layers = resolved_layers(spec);
  auto shapes = infer_shapes(spec);
  if (layers.empty()) throw ConstructionError("model spec has no layers");
  Model m(std::move(spec), std::move(layers), std::move(shapes));
  Rng rng(seed);
  Shape in = m.spec_.input_shape;
  for (std::size_t i = 0; i < m.layers_.size(); ++i) {
    const LayerSpec& l = m.layers_[i];
    m.param_offset_.push_back(m.params_.size());
    if (l.kind == LayerKind::Dense || l.kind == LayerKind::Conv) {
      Shape wshape = l.kind == LayerKind::Dense ? Shape{in[0], l.units} : Shape{l.units, in[0], l.kernel, l.kernel};
      const std::size_t fan_in = shape_size(wshape) / l.units;
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      Tensor w(wshape);
      for (auto& v : w.data()) v = static_cast<float>(rng.uniform(-bound, bound));
      m.params_.push_back(std::move(w));
      m.params_.emplace_back(Shape{l.units});
    }
    in = m.shapes_[i];
  }
  return m;
}

std::size_t Model::classes() const {
  const Shape& out = shapes_.back();
  return out.size() == 1 ? out[0] : shape_size(out);
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

std::uint64_t Model::checksum() const {
  std::uint64_t h = 0x84222325cbf29ce4ULL;
  for (const auto& p : params_) h = mix_seed(h ^ content_hash(p));
  return h;
}

std::vector<Var> Model::bind(Tape& tape, bool trainable) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(trainable ? tape.variable(p) : tape.constant(p));
  return vars;
}

Tensor Model::as_batch(const Tensor& x) const {
  if (x.shape() == spec_.input_shape) {
    Shape s{1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    return x.reshaped(std::move(s));
  }
  if (x.rank() == spec_.input_shape.size() + 1 &&
      std::equal(spec_.input_shape.begin(), spec_.input_shape.end(), x.shape().begin() + 1)) {
    return x;
  }
  throw DimensionError("input " + shape_str(x.shape()) + " does not match model input " +
                       shape_str(spec_.input_shape));
}

ForwardVars Model::forward(Tape& tape, std::span<const Var> params, Var x,
                           std::optional<std::uint64_t> dropout_seed) const {
  if (params.size() != params_.size()) throw UsageError("forward: parameter binding does not match model");
  Var h = x;
  if (x.shape() == spec_.input_shape) {
    Shape s{1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    h = reshape(x, std::move(s));
  } else {
    as_batch(x.value());  // validates
  }
  const std::size_t batch = h.shape()[0];
  const std::size_t feature_layer = spec_.head ? layers_.size() - 2 : layers_.size();
  ForwardVars out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    const std::size_t p = param_offset_[i];
    switch (l.kind) {
      case LayerKind::Dense:
        h = add_bias(matmul(h, params[p]), params[p + 1]);
        break;
      case LayerKind::Conv:
        h = add_channel_bias(conv2d(h, params[p], l.stride), params[p + 1]);
        break;
      case LayerKind::Relu:
        h = relu(h);
        break;
      case LayerKind::Flatten:
        h = reshape(h, {batch, shape_size(shapes_[i])});
        break;
      case LayerKind::Dropout:
        if (dropout_seed && l.rate > 0.0f) {
          Rng rng(derive_seed(*dropout_seed, i));
          const float keep_scale = 1.0f / (1.0f - l.rate);
          Tensor mask(h.shape());
          for (auto& v : mask.data()) v = rng.bernoulli(1.0 - l.rate) ? keep_scale : 0.0f;
          h = mul(h, tape.constant(std::move(mask)));
        }
        break;
    }
    if (i == feature_layer) out.features = h;
  }
  out.logits = h;
  return out;
}

ForwardVars Model::mc_forward(Tape& tape, std::span<const Var> params, Var x, std::size_t passes,
                              std::uint64_t seed) const {
  if (passes == 0) throw UsageError("mc_forward: number of passes must be positive");
  std::vector<Var> logits, features;
  for (std::size_t c = 0; c < passes; ++c) {
    ForwardVars f = forward(tape, params, x, derive_seed(seed, c));
    logits.push_back(f.logits);
    if (f.features) features.push_back(*f.features);
  }
  ForwardVars out;
  out.logits = average(logits);
  if (!features.empty()) out.features = average(features);
  return out;
}

namespace {

ForwardOutput to_output(const Model& model, const ForwardVars& f) {
  ForwardOutput out;
  out.logits = f.logits.value();
  if (f.features) out.feature_map = f.features->value();
  out.teachers = model.teacher_blocks();
  return out;
}

}  // namespace

ForwardOutput forward(const Model& model, const Tensor& x, bool dropout_active, std::uint64_t seed) {
  Tape tape;
  const auto params = model.bind(tape, false);
  const Var xv = tape.constant(model.as_batch(x));
  return to_output(model, model.forward(tape, params, xv, dropout_active ? std::optional(seed) : std::nullopt));
}

ForwardOutput mc_forward(const Model& model, const Tensor& x, std::size_t passes, std::uint64_t seed) {
  Tape tape;
  const auto params = model.bind(tape, false);
  const Var xv = tape.constant(model.as_batch(x));
  return to_output(model, model.mc_forward(tape, params, xv, passes, seed));
}

LogitFn logit_fn(const Model& model, InferenceMode mode) {
  return [&model, mode](Tape& tape, Var x) {
    const auto params = model.bind(tape, false);
    if (mode.mc_passes == 0) return model.forward(tape, params, x, std::nullopt).logits;
    return model.mc_forward(tape, params, x, mode.mc_passes, mode.seed).logits;
  };
}

Tensor predict_logits(const Model& model, const Tensor& x, InferenceMode mode) {
  Tape tape;
  const Var xv = tape.constant(model.as_batch(x));
  return logit_fn(model, mode)(tape, xv).value();
}

std::vector<std::size_t> predict(const Model& model, const Tensor& x, InferenceMode mode) {
  return argmax_rows(predict_logits(model, x, mode));
}

}  // namespace darht
