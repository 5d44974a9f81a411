#pragma once

// Dense feed-forward kernels, templated on the scalar so the same code runs
// in f32 for training and f64 for gradient checking. Reductions are
// sequential loops.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "repronlp/config.hpp"

namespace repronlp {

template <class Real>
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<Real> weight;  // [out][in]
  std::vector<Real> bias;    // [out]

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

template <class Real>
struct Network {
  std::vector<DenseLayer<Real>> layers;
  Activation activation = Activation::relu;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in; }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out; }

  template <class Other>
  Network<Other> cast() const {
    Network<Other> n;
    n.activation = activation;
    for (const auto& l : layers) {
      DenseLayer<Other> c{l.in, l.out, {}, {}};
      c.weight.assign(l.weight.begin(), l.weight.end());
      c.bias.assign(l.bias.begin(), l.bias.end());
      n.layers.push_back(std::move(c));
    }
    return n;
  }

  friend bool operator==(const Network&, const Network&) = default;
};

template <class Real>
struct NetworkGradients {
  std::vector<std::vector<Real>> weight;
  std::vector<std::vector<Real>> bias;
  std::vector<Real> input;  // d loss / d input, [B][in]
};

namespace detail {

template <class Real>
Real activate(Activation a, Real z) {
  if (a == Activation::relu) return z > Real(0) ? z : Real(0);
  return std::tanh(z);
}

// Derivative expressed through the activation output.
template <class Real>
Real activate_grad(Activation a, Real z, Real y) {
  if (a == Activation::relu) return z > Real(0) ? Real(1) : Real(0);
  return Real(1) - y * y;
}

template <class Real>
void affine(const DenseLayer<Real>& l, std::span<const Real> x, std::size_t batch, std::vector<Real>& z) {
  z.assign(batch * l.out, Real(0));
  for (std::size_t b = 0; b < batch; ++b) {
    const Real* xb = x.data() + b * l.in;
    for (std::size_t o = 0; o < l.out; ++o) {
      const Real* w = l.weight.data() + o * l.in;
      Real acc = l.bias[o];
      for (std::size_t i = 0; i < l.in; ++i) acc += w[i] * xb[i];
      z[b * l.out + o] = acc;
    }
  }
}

}  // namespace detail

/// Pre-activations and activations per layer; acts[0] is the input.
template <class Real>
struct ForwardTrace {
  std::vector<std::vector<Real>> pre;
  std::vector<std::vector<Real>> acts;
};

template <class Real>
ForwardTrace<Real> forward_trace(const Network<Real>& net, std::span<const Real> x, std::size_t batch) {
  if (x.size() != batch * net.input_dim()) throw std::invalid_argument("network: input size mismatch");
  ForwardTrace<Real> tr;
  tr.acts.emplace_back(x.begin(), x.end());
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    std::vector<Real> z;
    detail::affine(net.layers[li], std::span<const Real>(tr.acts.back()), batch, z);
    std::vector<Real> a = z;
    if (li + 1 < net.layers.size()) {
      for (auto& v : a) v = detail::activate(net.activation, v);
    }
    tr.pre.push_back(std::move(z));
    tr.acts.push_back(std::move(a));
  }
  return tr;
}

/// Logits [B][K]; the last layer is linear.
template <class Real>
std::vector<Real> forward(const Network<Real>& net, std::span<const Real> x, std::size_t batch) {
  return forward_trace(net, x, batch).acts.back();
}

/// Per-row softmax cross-entropy terms, each computed with the max shift.
template <class Real>
std::vector<Real> cross_entropy_rows(std::span<const Real> logits, std::size_t batch, std::size_t classes,
                                     std::span<const std::int64_t> labels) {
  std::vector<Real> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const Real* l = logits.data() + b * classes;
    const auto y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw std::out_of_range("label index out of range");
    Real m = l[0];
    for (std::size_t k = 1; k < classes; ++k) m = std::max(m, l[k]);
    Real s = Real(0);
    for (std::size_t k = 0; k < classes; ++k) s += std::exp(l[k] - m);
    out[b] = m + std::log(s) - l[y];
  }
  return out;
}

template <class Real>
Real mean_cross_entropy(std::span<const Real> logits, std::size_t batch, std::size_t classes,
                        std::span<const std::int64_t> labels) {
  const auto rows = cross_entropy_rows(logits, batch, classes, labels);
  Real total = Real(0);
  for (auto r : rows) total += r;
  return total / static_cast<Real>(batch);
}

/// Mean softmax cross-entropy and its gradients by backpropagation.
template <class Real>
Real loss_and_gradients(const Network<Real>& net, std::span<const Real> x, std::size_t batch,
                        std::span<const std::int64_t> labels, NetworkGradients<Real>& grads) {
  if (batch == 0) throw std::invalid_argument("network: empty batch");
  if (labels.size() != batch) throw std::invalid_argument("network: label count mismatch");
  const auto tr = forward_trace(net, x, batch);
  const std::size_t k = net.output_dim();
  const auto& logits = tr.acts.back();
  const Real loss = mean_cross_entropy(std::span<const Real>(logits), batch, k, labels);

  // d loss / d logits = (softmax - onehot) / B
  std::vector<Real> delta(batch * k);
  for (std::size_t b = 0; b < batch; ++b) {
    const Real* l = logits.data() + b * k;
    Real m = l[0];
    for (std::size_t c = 1; c < k; ++c) m = std::max(m, l[c]);
    Real s = Real(0);
    for (std::size_t c = 0; c < k; ++c) s += std::exp(l[c] - m);
    for (std::size_t c = 0; c < k; ++c) {
      Real p = std::exp(l[c] - m) / s;
      if (static_cast<std::int64_t>(c) == labels[b]) p -= Real(1);
      delta[b * k + c] = p / static_cast<Real>(batch);
    }
  }

  const std::size_t n_layers = net.layers.size();
  grads.weight.assign(n_layers, {});
  grads.bias.assign(n_layers, {});
  for (std::size_t li = n_layers; li-- > 0;) {
    const auto& layer = net.layers[li];
    const auto& a_prev = tr.acts[li];
    auto& gw = grads.weight[li];
    auto& gb = grads.bias[li];
    gw.assign(layer.out * layer.in, Real(0));
    gb.assign(layer.out, Real(0));
    for (std::size_t o = 0; o < layer.out; ++o) {
      for (std::size_t i = 0; i < layer.in; ++i) {
        Real acc = Real(0);
        for (std::size_t b = 0; b < batch; ++b) acc += delta[b * layer.out + o] * a_prev[b * layer.in + i];
        gw[o * layer.in + i] = acc;
      }
      Real acc = Real(0);
      for (std::size_t b = 0; b < batch; ++b) acc += delta[b * layer.out + o];
      gb[o] = acc;
    }
    std::vector<Real> prev(batch * layer.in, Real(0));
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < layer.in; ++i) {
        Real acc = Real(0);
        for (std::size_t o = 0; o < layer.out; ++o) acc += layer.weight[o * layer.in + i] * delta[b * layer.out + o];
        prev[b * layer.in + i] = acc;
      }
    }
    if (li > 0) {
      const auto& z = tr.pre[li - 1];
      const auto& y = tr.acts[li];
      for (std::size_t j = 0; j < prev.size(); ++j) prev[j] *= detail::activate_grad(net.activation, z[j], y[j]);
    }
    delta = std::move(prev);
  }
  grads.input = std::move(delta);
  return loss;
}

/// Plain SGD: w <- w - lr * g.
template <class Real>
void sgd_step(Network<Real>& net, const NetworkGradients<Real>& grads, Real learning_rate) {
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    auto& l = net.layers[li];
    for (std::size_t j = 0; j < l.weight.size(); ++j) l.weight[j] -= learning_rate * grads.weight[li][j];
    for (std::size_t j = 0; j < l.bias.size(); ++j) l.bias[j] -= learning_rate * grads.bias[li][j];
  }
}

}  // namespace repronlp
