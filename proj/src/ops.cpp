#include "pruneforge/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

namespace pruneforge::ops {
namespace {

using Index = std::ptrdiff_t;

void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw Error(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                shape_to_string(shape));
  }
}

struct ConvGeometry {
  Index batch, in_channels, out_channels, height, width, extent, pad;
};

template <typename T>
ConvGeometry conv_geometry(const BasicTensor<T>& input, const BasicTensor<T>& kernels) {
  require_rank(input.shape(), 4, "conv2d input");
  require_rank(kernels.shape(), 4, "conv2d kernels");
  if (kernels.dim(1) != input.dim(1)) {
    throw Error("conv2d: kernels " + shape_to_string(kernels.shape()) + " expect " +
                std::to_string(kernels.dim(1)) + " input channels, input " +
                shape_to_string(input.shape()) + " has " + std::to_string(input.dim(1)));
  }
  if (kernels.dim(2) != kernels.dim(3) || kernels.dim(2) % 2 == 0) {
    throw Error("conv2d: kernels must be square with odd extent, got " +
                shape_to_string(kernels.shape()));
  }
  const auto extent = static_cast<Index>(kernels.dim(2));
  return {static_cast<Index>(input.dim(0)), static_cast<Index>(input.dim(1)),
          static_cast<Index>(kernels.dim(0)), static_cast<Index>(input.dim(2)),
          static_cast<Index>(input.dim(3)), extent, extent / 2};
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                      const BasicTensor<T>& bias) {
  const auto g = conv_geometry(input, kernels);
  require_rank(bias.shape(), 1, "conv2d bias");
  if (static_cast<Index>(bias.dim(0)) != g.out_channels) throw Error("conv2d: bias length mismatch");

  BasicTensor<T> out({input.dim(0), kernels.dim(0), input.dim(2), input.dim(3)});
  const Index plane = g.height * g.width;
  const T* in = input.data();
  const T* kw = kernels.data();
  T* op = out.data();
  for (Index n = 0; n < g.batch; ++n) {
    for (Index o = 0; o < g.out_channels; ++o) {
      T* dst = op + (n * g.out_channels + o) * plane;
      std::fill(dst, dst + plane, bias[static_cast<std::size_t>(o)]);
      for (Index c = 0; c < g.in_channels; ++c) {
        const T* src = in + (n * g.in_channels + c) * plane;
        const T* k = kw + (o * g.in_channels + c) * g.extent * g.extent;
        for (Index ky = 0; ky < g.extent; ++ky) {
          const Index dy = ky - g.pad;
          const Index y0 = std::max<Index>(0, -dy);
          const Index y1 = std::min(g.height, g.height - dy);
          for (Index kx = 0; kx < g.extent; ++kx) {
            const Index dx = kx - g.pad;
            const Index x0 = std::max<Index>(0, -dx);
            const Index x1 = std::min(g.width, g.width - dx);
            const T weight = k[ky * g.extent + kx];
            for (Index y = y0; y < y1; ++y) {
              T* orow = dst + y * g.width;
              const T* irow = src + (y + dy) * g.width + dx;
              for (Index x = x0; x < x1; ++x) orow[x] += weight * irow[x];
            }
          }
        }
      }
    }
  }
  out.require_finite("conv2d");
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                               const BasicTensor<T>& grad_output, bool want_input_grad) {
  const auto g = conv_geometry(input, kernels);
  if (grad_output.shape() != Shape{input.dim(0), kernels.dim(0), input.dim(2), input.dim(3)}) {
    throw Error("conv2d_backward: gradient shape " + shape_to_string(grad_output.shape()) +
                " does not match output");
  }
  Conv2dGrads<T> grads;
  grads.kernels = BasicTensor<T>(kernels.shape());
  grads.bias = BasicTensor<T>({kernels.dim(0)});
  if (want_input_grad) grads.input = BasicTensor<T>(input.shape());

  const Index plane = g.height * g.width;
  const T* in = input.data();
  const T* kw = kernels.data();
  const T* go = grad_output.data();
  T* gk = grads.kernels.data();
  T* gi = want_input_grad ? grads.input.data() : nullptr;

  for (Index n = 0; n < g.batch; ++n) {
    for (Index o = 0; o < g.out_channels; ++o) {
      const T* gplane = go + (n * g.out_channels + o) * plane;
      T bias_sum = T{0};
      for (Index i = 0; i < plane; ++i) bias_sum += gplane[i];
      grads.bias[static_cast<std::size_t>(o)] += bias_sum;
      for (Index c = 0; c < g.in_channels; ++c) {
        const T* src = in + (n * g.in_channels + c) * plane;
        T* gsrc = gi ? gi + (n * g.in_channels + c) * plane : nullptr;
        const Index kbase = (o * g.in_channels + c) * g.extent * g.extent;
        for (Index ky = 0; ky < g.extent; ++ky) {
          const Index dy = ky - g.pad;
          const Index y0 = std::max<Index>(0, -dy);
          const Index y1 = std::min(g.height, g.height - dy);
          for (Index kx = 0; kx < g.extent; ++kx) {
            const Index dx = kx - g.pad;
            const Index x0 = std::max<Index>(0, -dx);
            const Index x1 = std::min(g.width, g.width - dx);
            const T weight = kw[kbase + ky * g.extent + kx];
            T acc = T{0};
            for (Index y = y0; y < y1; ++y) {
              const T* grow = gplane + y * g.width;
              const T* irow = src + (y + dy) * g.width + dx;
              for (Index x = x0; x < x1; ++x) acc += grow[x] * irow[x];
              if (gsrc) {
                T* girow = gsrc + (y + dy) * g.width + dx;
                for (Index x = x0; x < x1; ++x) girow[x] += weight * grow[x];
              }
            }
            gk[kbase + ky * g.extent + kx] += acc;
          }
        }
      }
    }
  }
  return grads;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_output) {
  if (input.shape() != grad_output.shape()) throw Error("relu_backward: shape mismatch");
  BasicTensor<T> grad(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    grad[i] = input[i] > T{0} ? grad_output[i] : T{0};
  }
  return grad;
}

template <typename T>
MaxPoolResult<T> maxpool2d(const BasicTensor<T>& input) {
  require_rank(input.shape(), 4, "maxpool2d input");
  const std::size_t b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h < 2 || w < 2) {
    throw Error("maxpool2d: spatial extent must be at least 2x2, got " + shape_to_string(input.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  MaxPoolResult<T> result{BasicTensor<T>({b, c, oh, ow}), std::vector<std::uint32_t>(b * c * oh * ow)};
  const T* in = input.data();
  std::size_t out_index = 0;
  for (std::size_t p = 0; p < b * c; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x, ++out_index) {
        std::size_t best = base + (2 * y) * w + 2 * x;
        const std::size_t candidates[3] = {best + 1, best + w, best + w + 1};
        for (auto idx : candidates) {
          if (in[idx] > in[best]) best = idx;
        }
        result.output[out_index] = in[best];
        result.argmax[out_index] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return result;
}

template <typename T>
BasicTensor<T> maxpool2d_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                                  const BasicTensor<T>& grad_output) {
  if (argmax.size() != grad_output.size()) throw Error("maxpool2d_backward: argmax size mismatch");
  BasicTensor<T> grad(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad[argmax[i]] += grad_output[i];
  return grad;
}

template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                     const BasicTensor<T>& bias) {
  require_rank(input.shape(), 2, "dense input");
  require_rank(weights.shape(), 2, "dense weights");
  require_rank(bias.shape(), 1, "dense bias");
  const std::size_t b = input.dim(0), n = input.dim(1), m = weights.dim(0);
  if (weights.dim(1) != n) {
    throw Error("dense: weights " + shape_to_string(weights.shape()) + " incompatible with input " +
                shape_to_string(input.shape()));
  }
  if (bias.dim(0) != m) throw Error("dense: bias length mismatch");
  BasicTensor<T> out({b, m});
  for (std::size_t r = 0; r < b; ++r) {
    const T* x = input.data() + r * n;
    for (std::size_t j = 0; j < m; ++j) {
      const T* wrow = weights.data() + j * n;
      T acc = T{0};
      for (std::size_t k = 0; k < n; ++k) acc += x[k] * wrow[k];
      out[r * m + j] = acc + bias[j];
    }
  }
  out.require_finite("dense");
  return out;
}

template <typename T>
DenseGrads<T> dense_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                             const BasicTensor<T>& grad_output, bool want_input_grad) {
  const std::size_t b = input.dim(0), n = input.dim(1), m = weights.dim(0);
  if (grad_output.shape() != Shape{b, m}) throw Error("dense_backward: gradient shape mismatch");
  DenseGrads<T> grads;
  grads.weights = BasicTensor<T>(weights.shape());
  grads.bias = BasicTensor<T>({m});
  if (want_input_grad) grads.input = BasicTensor<T>(input.shape());
  for (std::size_t r = 0; r < b; ++r) {
    const T* x = input.data() + r * n;
    const T* g = grad_output.data() + r * m;
    T* gx = want_input_grad ? grads.input.data() + r * n : nullptr;
    for (std::size_t j = 0; j < m; ++j) {
      const T gj = g[j];
      grads.bias[j] += gj;
      T* gw = grads.weights.data() + j * n;
      for (std::size_t k = 0; k < n; ++k) gw[k] += gj * x[k];
      if (gx) {
        const T* wrow = weights.data() + j * n;
        for (std::size_t k = 0; k < n; ++k) gx[k] += gj * wrow[k];
      }
    }
  }
  return grads;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  require_rank(logits.shape(), 2, "softmax_cross_entropy logits");
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (c < 2) throw Error("softmax_cross_entropy: at least two classes required");
  if (labels.size() != b) throw Error("softmax_cross_entropy: label count does not match batch");
  LossResult<T> result{0.0, BasicTensor<T>(logits.shape())};
  std::vector<double> probs(c);
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= c) {
      throw Error("softmax_cross_entropy: label " + std::to_string(label) + " outside [0," +
                  std::to_string(c) + ")");
    }
    const T* row = logits.data() + r * c;
    const double top = static_cast<double>(*std::max_element(row, row + c));
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[j] = std::exp(static_cast<double>(row[j]) - top);
      sum += probs[j];
    }
    total += std::log(sum) + top - static_cast<double>(row[label]);
    for (std::size_t j = 0; j < c; ++j) {
      const double p = probs[j] / sum - (j == static_cast<std::size_t>(label) ? 1.0 : 0.0);
      result.grad[r * c + j] = static_cast<T>(p / static_cast<double>(b));
    }
  }
  result.loss = total / static_cast<double>(b);
  if (!std::isfinite(result.loss)) throw Error("softmax_cross_entropy: non-finite loss");
  return result;
}

template <typename T>
LossResult<T> mean_l2_distance(const BasicTensor<T>& output, const BasicTensor<T>& target) {
  if (output.shape() != target.shape() || output.rank() < 1) {
    throw Error("mean_l2_distance: shape mismatch " + shape_to_string(output.shape()) + " vs " +
                shape_to_string(target.shape()));
  }
  const std::size_t b = output.dim(0);
  const std::size_t row = output.size() / b;
  LossResult<T> result{0.0, BasicTensor<T>(output.shape())};
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    double sq = 0.0;
    for (std::size_t i = r * row; i < (r + 1) * row; ++i) {
      const double d = static_cast<double>(output[i]) - static_cast<double>(target[i]);
      sq += d * d;
    }
    const double norm = std::sqrt(sq);
    total += norm;
    if (norm > 0.0) {
      const double scale = 1.0 / (norm * static_cast<double>(b));
      for (std::size_t i = r * row; i < (r + 1) * row; ++i) {
        result.grad[i] =
            static_cast<T>((static_cast<double>(output[i]) - static_cast<double>(target[i])) * scale);
      }
    }
  }
  result.loss = total / static_cast<double>(b);
  if (!std::isfinite(result.loss)) throw Error("mean_l2_distance: non-finite loss");
  return result;
}

template <typename T>
void sgd_update(BasicTensor<T>& param, const BasicTensor<T>& grad, double learning_rate) {
  if (param.shape() != grad.shape()) {
    throw Error("sgd: parameter " + shape_to_string(param.shape()) + " and gradient " +
                shape_to_string(grad.shape()) + " differ");
  }
  grad.require_finite("sgd gradient");
  const T lr = static_cast<T>(learning_rate);
  for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

template <typename T>
BasicTensor<T> sgd_step(const BasicTensor<T>& param, const BasicTensor<T>& grad,
                        double learning_rate) {
  BasicTensor<T> out = param;
  sgd_update(out, grad, learning_rate);
  return out;
}

#define PRUNEFORGE_INSTANTIATE(T)                                                                 \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                 const BasicTensor<T>&);                                         \
  template Conv2dGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                          const BasicTensor<T>&, bool);                          \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                           \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);           \
  template MaxPoolResult<T> maxpool2d(const BasicTensor<T>&);                                    \
  template BasicTensor<T> maxpool2d_backward(const Shape&, std::span<const std::uint32_t>,       \
                                             const BasicTensor<T>&);                             \
  template BasicTensor<T> dense(const BasicTensor<T>&, const BasicTensor<T>&,                    \
                                const BasicTensor<T>&);                                          \
  template DenseGrads<T> dense_backward(const BasicTensor<T>&, const BasicTensor<T>&,            \
                                        const BasicTensor<T>&, bool);                            \
  template LossResult<T> softmax_cross_entropy(const BasicTensor<T>&, std::span<const int>);     \
  template LossResult<T> mean_l2_distance(const BasicTensor<T>&, const BasicTensor<T>&);         \
  template BasicTensor<T> sgd_step(const BasicTensor<T>&, const BasicTensor<T>&, double);        \
  template void sgd_update(BasicTensor<T>&, const BasicTensor<T>&, double);

PRUNEFORGE_INSTANTIATE(float)
PRUNEFORGE_INSTANTIATE(double)

#undef PRUNEFORGE_INSTANTIATE

}  // namespace pruneforge::ops
