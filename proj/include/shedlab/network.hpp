#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "shedlab/errors.hpp"
#include "shedlab/params.hpp"
#include "shedlab/rng.hpp"
#include "shedlab/tensor.hpp"

namespace shedlab {

enum class LayerKind { dense, conv2d, relu, flatten, batchnorm };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;       // dense input features / conv input channels
  std::size_t out = 0;      // dense output features / conv output channels
  std::size_t kh = 0, kw = 0;
  std::size_t stride = 1, padding = 0;

  static LayerSpec dense(std::size_t in, std::size_t out) {
    return LayerSpec{LayerKind::dense, in, out};
  }
  static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kh, std::size_t kw,
                          std::size_t stride = 1, std::size_t padding = 0) {
    return LayerSpec{LayerKind::conv2d, in_ch, out_ch, kh, kw, stride, padding};
  }
  static LayerSpec relu() { return LayerSpec{LayerKind::relu}; }
  static LayerSpec flatten() { return LayerSpec{LayerKind::flatten}; }
  static LayerSpec batchnorm(std::size_t channels) {
    return LayerSpec{LayerKind::batchnorm, channels, channels};
  }
};

/// Layer stack plus the per-sample input shape (batch axis excluded).
struct NetworkSpec {
  std::vector<std::size_t> input_shape;
  std::vector<LayerSpec> layers;
};

using EigenRowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<EigenRowMat>;
using ConstMapMat = Eigen::Map<const EigenRowMat>;

namespace detail {

inline std::vector<std::size_t> layer_output_shape(const LayerSpec& layer,
                                                   const std::vector<std::size_t>& in_shape,
                                                   std::size_t layer_index) {
  const std::string where = "layer " + std::to_string(layer_index);
  switch (layer.kind) {
    case LayerKind::dense:
      if (in_shape.size() != 1 || in_shape[0] != layer.in)
        throw StructuralError(where + ": dense expects input " + std::to_string(layer.in) +
                              ", got " + shape_string(in_shape));
      return {layer.out};
    case LayerKind::conv2d: {
      if (in_shape.size() != 3 || in_shape[0] != layer.in)
        throw StructuralError(where + ": conv2d expects (channels,h,w) with channels " +
                              std::to_string(layer.in) + ", got " + shape_string(in_shape));
      const std::size_t h = in_shape[1], w = in_shape[2];
      if (h + 2 * layer.padding < layer.kh || w + 2 * layer.padding < layer.kw)
        throw StructuralError(where + ": kernel larger than padded input");
      const std::size_t oh = (h + 2 * layer.padding - layer.kh) / layer.stride + 1;
      const std::size_t ow = (w + 2 * layer.padding - layer.kw) / layer.stride + 1;
      return {layer.out, oh, ow};
    }
    case LayerKind::relu:
      return in_shape;
    case LayerKind::flatten:
      return {Tensor::element_count(in_shape)};
    case LayerKind::batchnorm:
      if (in_shape.empty() || in_shape[0] != layer.in)
        throw StructuralError(where + ": batchnorm expects leading channel axis of " +
                              std::to_string(layer.in) + ", got " + shape_string(in_shape));
      return in_shape;
  }
  throw StructuralError(where + ": unknown layer kind");
}

}  // namespace detail

/// Per-sample shapes entering each layer, plus the final output shape at
/// the back. Throws when adjacent layers do not compose.
inline std::vector<std::vector<std::size_t>> shape_chain(const NetworkSpec& net) {
  std::vector<std::vector<std::size_t>> shapes;
  shapes.push_back(net.input_shape);
  for (std::size_t i = 0; i < net.layers.size(); ++i)
    shapes.push_back(detail::layer_output_shape(net.layers[i], shapes.back(), i));
  return shapes;
}

/// Registers parameters in layer order with deterministic names. Weights of
/// dense and conv layers are prunable; biases and batchnorm scale/shift are
/// not. Weights use Xavier-uniform init, biases zero, gamma one, beta zero.
inline ParamStore init_params(const NetworkSpec& net, std::uint64_t seed) {
  shape_chain(net);  // validate composition first
  ParamStore store;
  Rng rng(Rng::derive(seed, 0x70617261));
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& layer = net.layers[i];
    const std::string prefix = "l" + std::to_string(i);
    switch (layer.kind) {
      case LayerKind::dense: {
        Tensor w = Tensor::zeros({layer.out, layer.in});
        const double a = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
        for (double& v : w.data) v = rng.uniform(-a, a);
        store.tensors.push_back({prefix + ".dense.weight", std::move(w), true});
        store.tensors.push_back({prefix + ".dense.bias", Tensor::zeros({layer.out}), false});
        break;
      }
      case LayerKind::conv2d: {
        Tensor w = Tensor::zeros({layer.out, layer.in, layer.kh, layer.kw});
        const std::size_t fan_in = layer.in * layer.kh * layer.kw;
        const std::size_t fan_out = layer.out * layer.kh * layer.kw;
        const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& v : w.data) v = rng.uniform(-a, a);
        store.tensors.push_back({prefix + ".conv.weight", std::move(w), true});
        store.tensors.push_back({prefix + ".conv.bias", Tensor::zeros({layer.out}), false});
        break;
      }
      case LayerKind::batchnorm: {
        Tensor gamma = Tensor::zeros({layer.in});
        for (double& v : gamma.data) v = 1.0;
        store.tensors.push_back({prefix + ".bn.gamma", std::move(gamma), false});
        store.tensors.push_back({prefix + ".bn.beta", Tensor::zeros({layer.in}), false});
        break;
      }
      case LayerKind::relu:
      case LayerKind::flatten:
        break;
    }
  }
  return store;
}

/// Everything backward needs: the input of each layer and the batchnorm
/// batch statistics. Tied to one ParamStore revision.
struct ForwardCache {
  std::uint64_t params_revision = 0;
  std::size_t batch = 0;
  std::vector<Tensor> inputs;                    // input tensor of each layer
  std::vector<std::vector<double>> bn_mean;      // per batchnorm layer index
  std::vector<std::vector<double>> bn_inv_std;
  std::vector<Tensor> bn_xhat;
};

namespace detail {

constexpr double kBnEpsilon = 1e-5;

inline std::size_t param_base_index(const NetworkSpec& net, std::size_t layer_index) {
  std::size_t base = 0;
  for (std::size_t i = 0; i < layer_index; ++i) {
    switch (net.layers[i].kind) {
      case LayerKind::dense:
      case LayerKind::conv2d:
      case LayerKind::batchnorm:
        base += 2;
        break;
      default:
        break;
    }
  }
  return base;
}

inline void dense_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y) {
  const std::size_t batch = x.shape[0], in = w.shape[1], out = w.shape[0];
  ConstMapMat xm(x.data.data(), batch, in);
  ConstMapMat wm(w.data.data(), out, in);
  MapMat ym(y.data.data(), batch, out);
  ym.noalias() = xm * wm.transpose();
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t c = 0; c < out; ++c) y.data[r * out + c] += b.data[c];
}

inline void conv_forward(const LayerSpec& l, const Tensor& x, const Tensor& w, const Tensor& b,
                         Tensor& y) {
  const std::size_t batch = x.shape[0], h = x.shape[2], wd = x.shape[3];
  const std::size_t oh = y.shape[2], ow = y.shape[3];
  const long pad = static_cast<long>(l.padding);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t oc = 0; oc < l.out; ++oc)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = b.data[oc];
          for (std::size_t ic = 0; ic < l.in; ++ic)
            for (std::size_t ky = 0; ky < l.kh; ++ky) {
              const long iy = static_cast<long>(oy * l.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<long>(h)) continue;
              for (std::size_t kx = 0; kx < l.kw; ++kx) {
                const long ix = static_cast<long>(ox * l.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                acc += x.data[((n * l.in + ic) * h + iy) * wd + ix] *
                       w.data[((oc * l.in + ic) * l.kh + ky) * l.kw + kx];
              }
            }
          y.data[((n * l.out + oc) * oh + oy) * ow + ox] = acc;
        }
}

}  // namespace detail

/// Runs the network on a batch (leading axis = batch). Deterministic given
/// params and batch; the cache suffices for one matching backward call.
inline Tensor forward(const NetworkSpec& net, const ParamStore& params, const Tensor& batch,
                      ForwardCache& cache) {
  const auto shapes = shape_chain(net);
  if (batch.shape.empty() || std::vector<std::size_t>(batch.shape.begin() + 1, batch.shape.end()) !=
                                 net.input_shape)
    throw StructuralError("batch shape " + shape_string(batch.shape) + " does not match input " +
                          shape_string(net.input_shape));
  const std::size_t bsz = batch.shape[0];

  cache = ForwardCache{};
  cache.params_revision = params.revision;
  cache.batch = bsz;
  cache.bn_mean.resize(net.layers.size());
  cache.bn_inv_std.resize(net.layers.size());
  cache.bn_xhat.resize(net.layers.size());

  Tensor current = batch;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& layer = net.layers[i];
    cache.inputs.push_back(current);
    std::vector<std::size_t> out_shape = shapes[i + 1];
    out_shape.insert(out_shape.begin(), bsz);
    const std::size_t pbase = detail::param_base_index(net, i);
    switch (layer.kind) {
      case LayerKind::dense: {
        Tensor y = Tensor::zeros(out_shape);
        detail::dense_forward(current, params.at(pbase).value, params.at(pbase + 1).value, y);
        current = std::move(y);
        break;
      }
      case LayerKind::conv2d: {
        Tensor y = Tensor::zeros(out_shape);
        detail::conv_forward(layer, current, params.at(pbase).value, params.at(pbase + 1).value, y);
        current = std::move(y);
        break;
      }
      case LayerKind::relu: {
        Tensor y = current;
        for (double& v : y.data) v = v > 0.0 ? v : 0.0;
        current = std::move(y);
        break;
      }
      case LayerKind::flatten: {
        Tensor y = current;
        y.shape = out_shape;
        current = std::move(y);
        break;
      }
      case LayerKind::batchnorm: {
        // Batch statistics in both training and evaluation; biased variance.
        const std::size_t ch = layer.in;
        const std::size_t spatial = current.size() / (bsz * ch);
        const std::size_t m = bsz * spatial;
        std::vector<double> mean(ch, 0.0), inv_std(ch, 0.0);
        for (std::size_t n = 0; n < bsz; ++n)
          for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t s = 0; s < spatial; ++s)
              mean[c] += current.data[(n * ch + c) * spatial + s];
        for (std::size_t c = 0; c < ch; ++c) mean[c] /= static_cast<double>(m);
        for (std::size_t n = 0; n < bsz; ++n)
          for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t s = 0; s < spatial; ++s) {
              const double d = current.data[(n * ch + c) * spatial + s] - mean[c];
              inv_std[c] += d * d;
            }
        for (std::size_t c = 0; c < ch; ++c)
          inv_std[c] = 1.0 / std::sqrt(inv_std[c] / static_cast<double>(m) + detail::kBnEpsilon);

        const Tensor& gamma = params.at(pbase).value;
        const Tensor& beta = params.at(pbase + 1).value;
        Tensor xhat = Tensor::zeros(current.shape);
        Tensor y = Tensor::zeros(current.shape);
        for (std::size_t n = 0; n < bsz; ++n)
          for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t s = 0; s < spatial; ++s) {
              const std::size_t idx = (n * ch + c) * spatial + s;
              xhat.data[idx] = (current.data[idx] - mean[c]) * inv_std[c];
              y.data[idx] = gamma.data[c] * xhat.data[idx] + beta.data[c];
            }
        cache.bn_mean[i] = std::move(mean);
        cache.bn_inv_std[i] = std::move(inv_std);
        cache.bn_xhat[i] = std::move(xhat);
        current = std::move(y);
        break;
      }
    }
  }
  return current;
}

/// Gradients for every parameter, masked ones included; masking is applied
/// later at the optimizer update. loss_grad is dLoss/dLogits.
inline std::vector<Tensor> backward(const NetworkSpec& net, const ParamStore& params,
                                    const ForwardCache& cache, const Tensor& loss_grad) {
  if (cache.params_revision != params.revision)
    throw StructuralError("stale forward cache: parameters changed since forward");
  if (cache.inputs.size() != net.layers.size())
    throw StructuralError("forward cache does not match network depth");

  std::vector<Tensor> grads = zeros_like(params);
  Tensor delta = loss_grad;
  for (std::size_t ri = net.layers.size(); ri-- > 0;) {
    const LayerSpec& layer = net.layers[ri];
    const Tensor& x = cache.inputs[ri];
    const std::size_t pbase = detail::param_base_index(net, ri);
    switch (layer.kind) {
      case LayerKind::dense: {
        const Tensor& w = params.at(pbase).value;
        const std::size_t bsz = x.shape[0], in = layer.in, out = layer.out;
        ConstMapMat xm(x.data.data(), bsz, in);
        ConstMapMat wm(w.data.data(), out, in);
        ConstMapMat dm(delta.data.data(), bsz, out);
        MapMat dwm(grads[pbase].data.data(), out, in);
        dwm.noalias() = dm.transpose() * xm;
        for (std::size_t r = 0; r < bsz; ++r)
          for (std::size_t c = 0; c < out; ++c) grads[pbase + 1].data[c] += delta.data[r * out + c];
        Tensor dx = Tensor::zeros(x.shape);
        MapMat dxm(dx.data.data(), bsz, in);
        dxm.noalias() = dm * wm;
        delta = std::move(dx);
        break;
      }
      case LayerKind::conv2d: {
        const Tensor& w = params.at(pbase).value;
        Tensor& dw = grads[pbase];
        Tensor& db = grads[pbase + 1];
        Tensor dx = Tensor::zeros(x.shape);
        const std::size_t bsz = x.shape[0], h = x.shape[2], wd = x.shape[3];
        const std::size_t oh = delta.shape[2], ow = delta.shape[3];
        const long pad = static_cast<long>(layer.padding);
        for (std::size_t n = 0; n < bsz; ++n)
          for (std::size_t oc = 0; oc < layer.out; ++oc)
            for (std::size_t oy = 0; oy < oh; ++oy)
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const double g = delta.data[((n * layer.out + oc) * oh + oy) * ow + ox];
                db.data[oc] += g;
                for (std::size_t ic = 0; ic < layer.in; ++ic)
                  for (std::size_t ky = 0; ky < layer.kh; ++ky) {
                    const long iy = static_cast<long>(oy * layer.stride + ky) - pad;
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    for (std::size_t kx = 0; kx < layer.kw; ++kx) {
                      const long ix = static_cast<long>(ox * layer.stride + kx) - pad;
                      if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                      const std::size_t xi = ((n * layer.in + ic) * h + iy) * wd + ix;
                      const std::size_t wi = ((oc * layer.in + ic) * layer.kh + ky) * layer.kw + kx;
                      dw.data[wi] += g * x.data[xi];
                      dx.data[xi] += g * w.data[wi];
                    }
                  }
              }
        delta = std::move(dx);
        break;
      }
      case LayerKind::relu: {
        Tensor dx = delta;
        for (std::size_t k = 0; k < dx.size(); ++k)
          if (!(x.data[k] > 0.0)) dx.data[k] = 0.0;
        delta = std::move(dx);
        break;
      }
      case LayerKind::flatten: {
        Tensor dx = delta;
        dx.shape = x.shape;
        delta = std::move(dx);
        break;
      }
      case LayerKind::batchnorm: {
        const std::size_t ch = layer.in;
        const std::size_t bsz = x.shape[0];
        const std::size_t spatial = x.size() / (bsz * ch);
        const double m = static_cast<double>(bsz * spatial);
        const Tensor& gamma = params.at(pbase).value;
        const Tensor& xhat = cache.bn_xhat[ri];
        Tensor& dgamma = grads[pbase];
        Tensor& dbeta = grads[pbase + 1];
        std::vector<double> sum_dxhat(ch, 0.0), sum_dxhat_xhat(ch, 0.0);
        for (std::size_t n = 0; n < bsz; ++n)
          for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t s = 0; s < spatial; ++s) {
              const std::size_t idx = (n * ch + c) * spatial + s;
              const double dy = delta.data[idx];
              dgamma.data[c] += dy * xhat.data[idx];
              dbeta.data[c] += dy;
              const double dxhat = dy * gamma.data[c];
              sum_dxhat[c] += dxhat;
              sum_dxhat_xhat[c] += dxhat * xhat.data[idx];
            }
        Tensor dx = Tensor::zeros(x.shape);
        for (std::size_t n = 0; n < bsz; ++n)
          for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t s = 0; s < spatial; ++s) {
              const std::size_t idx = (n * ch + c) * spatial + s;
              const double dxhat = delta.data[idx] * gamma.data[c];
              dx.data[idx] = cache.bn_inv_std[ri][c] *
                             (dxhat - (sum_dxhat[c] + xhat.data[idx] * sum_dxhat_xhat[c]) / m);
            }
        delta = std::move(dx);
        break;
      }
    }
  }
  return grads;
}

/// Softmax cross-entropy, mean-reduced over the batch.
/// Returns (loss, dLoss/dLogits).
inline std::pair<double, Tensor> softmax_cross_entropy(const Tensor& logits,
                                                       const std::vector<int>& labels) {
  const std::size_t bsz = logits.shape[0];
  const std::size_t classes = logits.shape[1];
  if (labels.size() != bsz) throw StructuralError("label count does not match batch size");
  Tensor grad = Tensor::zeros(logits.shape);
  double loss = 0.0;
  for (std::size_t n = 0; n < bsz; ++n) {
    const double* row = logits.data.data() + n * classes;
    double hi = row[0];
    for (std::size_t c = 1; c < classes; ++c) hi = std::max(hi, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(row[c] - hi);
    const double lse = hi + std::log(sum);
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw StructuralError("label out of range");
    loss += lse - row[label];
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = std::exp(row[c] - lse);
      grad.data[n * classes + c] = (p - (static_cast<std::size_t>(label) == c ? 1.0 : 0.0)) /
                                   static_cast<double>(bsz);
    }
  }
  return {loss / static_cast<double>(bsz), std::move(grad)};
}

/// Fraction of rows whose first-maximum logit index equals the label.
inline double top1_accuracy(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t bsz = logits.shape[0];
  const std::size_t classes = logits.shape[1];
  std::size_t hits = 0;
  for (std::size_t n = 0; n < bsz; ++n) {
    const double* row = logits.data.data() + n * classes;
    std::size_t arg = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (row[c] > row[arg]) arg = c;
    if (static_cast<int>(arg) == labels[n]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(bsz);
}

}  // namespace shedlab
