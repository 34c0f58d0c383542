#include "darht/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "darht/errors.hpp"

namespace darht {

namespace {

struct RowView {
  std::size_t rows;
  std::size_t cols;
};

RowView row_view(const Tensor& t, const char* op) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  throw DimensionError(std::string(op) + " expects rank 1 or 2, got " + shape_str(t.shape()));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + " expects rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

void accumulate(Tensor& dst, std::span<const float> src) {
  auto d = dst.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += src[i];
}

void softmax_rows(std::span<const float> in, std::span<float> out, RowView v) {
  for (std::size_t r = 0; r < v.rows; ++r) {
    const float* x = in.data() + r * v.cols;
    float* y = out.data() + r * v.cols;
    const float m = *std::max_element(x, x + v.cols);
    double z = 0.0;
    for (std::size_t c = 0; c < v.cols; ++c) z += std::exp(static_cast<double>(x[c]) - m);
    for (std::size_t c = 0; c < v.cols; ++c) y[c] = static_cast<float>(std::exp(static_cast<double>(x[c]) - m) / z);
  }
}

void log_softmax_rows(std::span<const float> in, std::span<float> out, RowView v) {
  for (std::size_t r = 0; r < v.rows; ++r) {
    const float* x = in.data() + r * v.cols;
    float* y = out.data() + r * v.cols;
    const float m = *std::max_element(x, x + v.cols);
    double z = 0.0;
    for (std::size_t c = 0; c < v.cols; ++c) z += std::exp(static_cast<double>(x[c]) - m);
    const double lse = m + std::log(z);
    for (std::size_t c = 0; c < v.cols; ++c) y[c] = static_cast<float>(x[c] - lse);
  }
}

struct ConvGeom {
  std::size_t batch, channels, height, width;
  std::size_t out_channels, kh, kw, stride, out_h, out_w;
  bool batched;
};

ConvGeom conv_geometry(const Tensor& input, const Tensor& kernels, std::size_t stride) {
  if (stride == 0) throw UsageError("conv2d: stride must be positive");
  require_rank(kernels, 4, "conv2d kernels");
  ConvGeom g{};
  if (input.rank() == 3) {
    g.batched = false;
    g.batch = 1;
    g.channels = input.dim(0);
    g.height = input.dim(1);
    g.width = input.dim(2);
  } else if (input.rank() == 4) {
    g.batched = true;
    g.batch = input.dim(0);
    g.channels = input.dim(1);
    g.height = input.dim(2);
    g.width = input.dim(3);
  } else {
    throw DimensionError("conv2d expects input [C x H x W] or [B x C x H x W], got " + shape_str(input.shape()));
  }
  g.out_channels = kernels.dim(0);
  g.kh = kernels.dim(2);
  g.kw = kernels.dim(3);
  if (kernels.dim(1) != g.channels) {
    throw DimensionError("conv2d: kernel channels " + std::to_string(kernels.dim(1)) + " != input channels " +
                         std::to_string(g.channels));
  }
  if (g.kh > g.height || g.kw > g.width) {
    throw DimensionError("conv2d: kernel " + shape_str(kernels.shape()) + " larger than input " +
                         shape_str(input.shape()));
  }
  g.stride = stride;
  g.out_h = (g.height - g.kh) / stride + 1;
  g.out_w = (g.width - g.kw) / stride + 1;
  return g;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
  }
  Tensor out({m, n});
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const float* brow = b.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<float>(acc[j]);
  }
  return out;
}

Var matmul(Var a, Var b) {
  Tensor out = matmul(a.value(), b.value());
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& A = t.value(ia);
        const Tensor& B = t.value(ib);
        const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
        if (t.requires_grad(ia)) {
          Tensor& ga = t.grad_buffer(ia);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += static_cast<double>(g[i * n + j]) * B[p * n + j];
              ga[i * k + p] += static_cast<float>(acc);
            }
          }
        }
        if (t.requires_grad(ib)) {
          std::vector<double> acc(k * n, 0.0);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const double av = A[i * k + p];
              if (av == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j) acc[p * n + j] += av * g[i * n + j];
            }
          }
          Tensor& gb = t.grad_buffer(ib);
          for (std::size_t i = 0; i < acc.size(); ++i) gb[i] += static_cast<float>(acc[i]);
        }
      },
      "matmul");
}

Var add_bias(Var x, Var bias) {
  const Tensor& X = x.value();
  require_rank(X, 2, "add_bias");
  const std::size_t rows = X.dim(0), cols = X.dim(1);
  if (bias.value().rank() != 1 || bias.value().dim(0) != cols) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(X.shape()));
  }
  Tensor out = X;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bias.value()[c];
  const auto ix = x.id(), ib = bias.id();
  return x.tape().record(
      std::move(out), {x, bias},
      [ix, ib, rows, cols](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(ix)) accumulate(t.grad_buffer(ix), g.data());
        if (t.requires_grad(ib)) {
          Tensor& gb = t.grad_buffer(ib);
          for (std::size_t c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (std::size_t r = 0; r < rows; ++r) acc += g[r * cols + c];
            gb[c] += static_cast<float>(acc);
          }
        }
      },
      "add_bias");
}

Var add_channel_bias(Var x, Var bias) {
  const Tensor& X = x.value();
  std::size_t batch = 1, channels = 0;
  if (X.rank() == 3) {
    channels = X.dim(0);
  } else if (X.rank() == 4) {
    batch = X.dim(0);
    channels = X.dim(1);
  } else {
    throw DimensionError("add_channel_bias expects rank 3 or 4, got " + shape_str(X.shape()));
  }
  if (bias.value().rank() != 1 || bias.value().dim(0) != channels) {
    throw DimensionError("add_channel_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(X.shape()));
  }
  const std::size_t plane = X.size() / (batch * channels);
  Tensor out = X;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < plane; ++i) out[(b * channels + c) * plane + i] += bias.value()[c];
  const auto ix = x.id(), ib = bias.id();
  return x.tape().record(
      std::move(out), {x, bias},
      [ix, ib, batch, channels, plane](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(ix)) accumulate(t.grad_buffer(ix), g.data());
        if (t.requires_grad(ib)) {
          Tensor& gb = t.grad_buffer(ib);
          for (std::size_t c = 0; c < channels; ++c) {
            double acc = 0.0;
            for (std::size_t b = 0; b < batch; ++b)
              for (std::size_t i = 0; i < plane; ++i) acc += g[(b * channels + c) * plane + i];
            gb[c] += static_cast<float>(acc);
          }
        }
      },
      "add_channel_bias");
}

Var conv2d(Var input, Var kernels, std::size_t stride) {
  const Tensor& X = input.value();
  const Tensor& K = kernels.value();
  const ConvGeom g = conv_geometry(X, K, stride);
  Shape out_shape = g.batched ? Shape{g.batch, g.out_channels, g.out_h, g.out_w}
                              : Shape{g.out_channels, g.out_h, g.out_w};
  Tensor out(out_shape);
  const std::size_t in_plane = g.height * g.width;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t k_plane = g.kh * g.kw;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          double acc = 0.0;
          for (std::size_t c = 0; c < g.channels; ++c) {
            const float* xin = X.data().data() + (b * g.channels + c) * in_plane;
            const float* kk = K.data().data() + (o * g.channels + c) * k_plane;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              const float* row = xin + (oy * stride + ky) * g.width + ox * stride;
              for (std::size_t kx = 0; kx < g.kw; ++kx) acc += static_cast<double>(row[kx]) * kk[ky * g.kw + kx];
            }
          }
          out[(b * g.out_channels + o) * out_plane + oy * g.out_w + ox] = static_cast<float>(acc);
        }
      }
    }
  }
  const auto ix = input.id(), ik = kernels.id();
  return input.tape().record(
      std::move(out), {input, kernels},
      [ix, ik, g](Tape& t, std::uint32_t self) {
        const Tensor& grad = t.grad(self);
        const Tensor& X = t.value(ix);
        const Tensor& K = t.value(ik);
        const std::size_t in_plane = g.height * g.width;
        const std::size_t out_plane = g.out_h * g.out_w;
        const std::size_t k_plane = g.kh * g.kw;
        const bool want_x = t.requires_grad(ix);
        const bool want_k = t.requires_grad(ik);
        std::vector<double> gx(want_x ? X.size() : 0, 0.0);
        std::vector<double> gk(want_k ? K.size() : 0, 0.0);
        for (std::size_t b = 0; b < g.batch; ++b) {
          for (std::size_t o = 0; o < g.out_channels; ++o) {
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
              for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                const double go = grad[(b * g.out_channels + o) * out_plane + oy * g.out_w + ox];
                if (go == 0.0) continue;
                for (std::size_t c = 0; c < g.channels; ++c) {
                  const std::size_t xbase = (b * g.channels + c) * in_plane;
                  const std::size_t kbase = (o * g.channels + c) * k_plane;
                  for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    const std::size_t xrow = xbase + (oy * g.stride + ky) * g.width + ox * g.stride;
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                      if (want_x) gx[xrow + kx] += go * K[kbase + ky * g.kw + kx];
                      if (want_k) gk[kbase + ky * g.kw + kx] += go * X[xrow + kx];
                    }
                  }
                }
              }
            }
          }
        }
        if (want_x) {
          Tensor& dst = t.grad_buffer(ix);
          for (std::size_t i = 0; i < gx.size(); ++i) dst[i] += static_cast<float>(gx[i]);
        }
        if (want_k) {
          Tensor& dst = t.grad_buffer(ik);
          for (std::size_t i = 0; i < gk.size(); ++i) dst[i] += static_cast<float>(gk[i]);
        }
      },
      "conv2d");
}

Var relu(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0f ? v : 0.0f;
  const auto ix = x.id();
  return x.tape().record(
      std::move(out), {x},
      [ix](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& X = t.value(ix);
        Tensor& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < X.size(); ++i)
          if (X[i] > 0.0f) gx[i] += g[i];
      },
      "relu");
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const auto ix = x.id();
  return x.tape().record(
      std::move(out), {x},
      [ix](Tape& t, std::uint32_t self) { accumulate(t.grad_buffer(ix), t.grad(self).data()); }, "reshape");
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(ia)) accumulate(t.grad_buffer(ia), g.data());
        if (t.requires_grad(ib)) accumulate(t.grad_buffer(ib), g.data());
      },
      "add");
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(ia)) accumulate(t.grad_buffer(ia), g.data());
        if (t.requires_grad(ib)) {
          Tensor& gb = t.grad_buffer(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      },
      "sub");
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(ia)) {
          Tensor& ga = t.grad_buffer(ia);
          const Tensor& B = t.value(ib);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
        }
        if (t.requires_grad(ib)) {
          Tensor& gb = t.grad_buffer(ib);
          const Tensor& A = t.value(ia);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
        }
      },
      "mul");
}

Var scale(Var x, float factor) {
  Tensor out = x.value();
  for (auto& v : out.data()) v *= factor;
  const auto ix = x.id();
  return x.tape().record(
      std::move(out), {x},
      [ix, factor](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
      },
      "scale");
}

Var maximum(Var x, float floor) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::max(v, floor);
  const auto ix = x.id();
  return x.tape().record(
      std::move(out), {x},
      [ix, floor](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& X = t.value(ix);
        Tensor& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (X[i] > floor) gx[i] += g[i];
      },
      "maximum");
}

Var square(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v *= v;
  const auto ix = x.id();
  return x.tape().record(
      std::move(out), {x},
      [ix](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& X = t.value(ix);
        Tensor& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2.0f * X[i] * g[i];
      },
      "square");
}

Tensor softmax(const Tensor& logits) {
  const RowView v = row_view(logits, "softmax");
  Tensor out(logits.shape());
  softmax_rows(logits.data(), out.data(), v);
  return out;
}

Tensor log_softmax(const Tensor& logits) {
  const RowView v = row_view(logits, "log_softmax");
  Tensor out(logits.shape());
  log_softmax_rows(logits.data(), out.data(), v);
  return out;
}

Var softmax(Var logits) {
  const RowView v = row_view(logits.value(), "softmax");
  Tensor out = softmax(logits.value());
  const auto ix = logits.id();
  return logits.tape().record(
      std::move(out), {logits},
      [ix, v](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& p = t.value(self);
        Tensor& gx = t.grad_buffer(ix);
        for (std::size_t r = 0; r < v.rows; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < v.cols; ++c) dot += static_cast<double>(g[r * v.cols + c]) * p[r * v.cols + c];
          for (std::size_t c = 0; c < v.cols; ++c) {
            const std::size_t i = r * v.cols + c;
            gx[i] += static_cast<float>(p[i] * (g[i] - dot));
          }
        }
      },
      "softmax");
}

Var log_softmax(Var logits) {
  const RowView v = row_view(logits.value(), "log_softmax");
  Tensor out = log_softmax(logits.value());
  const auto ix = logits.id();
  return logits.tape().record(
      std::move(out), {logits},
      [ix, v](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        const Tensor p = softmax(t.value(ix));
        Tensor& gx = t.grad_buffer(ix);
        for (std::size_t r = 0; r < v.rows; ++r) {
          double gsum = 0.0;
          for (std::size_t c = 0; c < v.cols; ++c) gsum += g[r * v.cols + c];
          for (std::size_t c = 0; c < v.cols; ++c) {
            const std::size_t i = r * v.cols + c;
            gx[i] += static_cast<float>(g[i] - p[i] * gsum);
          }
        }
      },
      "log_softmax");
}

Var log_clamped(Var x, float floor) {
  if (!(floor > 0.0f)) throw UsageError("log_clamped: floor must be positive");
  Tensor out = x.value();
  for (auto& v : out.data()) v = static_cast<float>(std::log(static_cast<double>(std::max(v, floor))));
  const auto ix = x.id();
  return x.tape().record(
      std::move(out), {x},
      [ix, floor](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& X = t.value(ix);
        Tensor& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (X[i] > floor) gx[i] += static_cast<float>(g[i] / static_cast<double>(X[i]));
      },
      "log_clamped");
}

Var sum(Var x) {
  double acc = 0.0;
  for (float v : x.value().data()) acc += v;
  const auto ix = x.id();
  return x.tape().record(
      Tensor::scalar(static_cast<float>(acc)), {x},
      [ix](Tape& t, std::uint32_t self) {
        const float g = t.grad(self)[0];
        for (auto& v : t.grad_buffer(ix).data()) v += g;
      },
      "sum");
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  double acc = 0.0;
  for (float v : x.value().data()) acc += v;
  const auto ix = x.id();
  return x.tape().record(
      Tensor::scalar(static_cast<float>(acc / static_cast<double>(n))), {x},
      [ix, n](Tape& t, std::uint32_t self) {
        const float g = static_cast<float>(t.grad(self)[0] / static_cast<double>(n));
        for (auto& v : t.grad_buffer(ix).data()) v += g;
      },
      "mean");
}

Var row_sum(Var x) {
  const Tensor& X = x.value();
  require_rank(X, 2, "row_sum");
  const std::size_t rows = X.dim(0), cols = X.dim(1);
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += X[r * cols + c];
    out[r] = static_cast<float>(acc);
  }
  const auto ix = x.id();
  return x.tape().record(
      std::move(out), {x},
      [ix, rows, cols](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_buffer(ix);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r];
      },
      "row_sum");
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  const Tensor& X = x.value();
  require_rank(X, 2, "slice_cols");
  const std::size_t rows = X.dim(0), cols = X.dim(1);
  if (begin >= end || end > cols) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + shape_str(X.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out({rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = X[r * cols + begin + c];
  const auto ix = x.id();
  return x.tape().record(
      std::move(out), {x},
      [ix, rows, cols, begin, w](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_buffer(ix);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < w; ++c) gx[r * cols + begin + c] += g[r * w + c];
      },
      "slice_cols");
}

Var pick(Var x, std::span<const std::size_t> index) {
  const Tensor& X = x.value();
  require_rank(X, 2, "pick");
  const std::size_t rows = X.dim(0), cols = X.dim(1);
  if (index.size() != rows) throw DimensionError("pick: one index per row required");
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if (idx[r] >= cols) throw DimensionError("pick: index out of range");
    out[r] = X[r * cols + idx[r]];
  }
  const auto ix = x.id();
  return x.tape().record(
      std::move(out), {x},
      [ix, cols, idx = std::move(idx)](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_buffer(ix);
        for (std::size_t r = 0; r < idx.size(); ++r) gx[r * cols + idx[r]] += g[r];
      },
      "pick");
}

Var average(std::span<const Var> xs) {
  if (xs.empty()) throw UsageError("average of zero values");
  const Var& first = xs.front();
  for (const Var& v : xs) require_same_shape(first, v, "average");
  if (xs.size() == 1) return first;
  const std::size_t n = first.value().size();
  std::vector<double> acc(n, 0.0);
  for (const Var& v : xs)
    for (std::size_t i = 0; i < n; ++i) acc[i] += v.value()[i];
  Tensor out(first.shape());
  const double inv = 1.0 / static_cast<double>(xs.size());
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(acc[i] * inv);
  std::vector<std::uint32_t> ids;
  bool needs_grad = false;
  for (const Var& v : xs) {
    ids.push_back(v.id());
    needs_grad = needs_grad || v.requires_grad();
  }
  // record() takes a fixed input list; chain through the first input and
  // route gradients to the rest via captured ids.
  Tape& tape = first.tape();
  for (const Var& v : xs)
    if (&v.tape() != &tape) throw UsageError("average: inputs on different tapes");
  const float w = static_cast<float>(inv);
  Var seed = first;
  for (const Var& v : xs) {
    if (v.requires_grad()) {
      seed = v;
      break;
    }
  }
  return tape.record(
      std::move(out), {seed},
      needs_grad ? Tape::BackwardFn([ids = std::move(ids), w](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad(self);
        for (auto id : ids) {
          if (!t.requires_grad(id)) continue;
          Tensor& gx = t.grad_buffer(id);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * w;
        }
      })
                 : Tape::BackwardFn{},
      "average");
}

Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  return scale(pick(log_softmax(logits), labels), -1.0f);
}

std::vector<std::size_t> argmax_rows(const Tensor& x) {
  const RowView v = row_view(x, "argmax_rows");
  std::vector<std::size_t> out(v.rows);
  for (std::size_t r = 0; r < v.rows; ++r) {
    const float* row = x.data().data() + r * v.cols;
    out[r] = static_cast<std::size_t>(std::max_element(row, row + v.cols) - row);
  }
  return out;
}

}  // namespace darht
