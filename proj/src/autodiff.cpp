/*
 * Copyright 2026 The gandissect Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "gandissect/autodiff.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>
#include <string>

namespace gandissect {

namespace {

constexpr std::array<std::pair<OpKind, std::string_view>, 13> kOpNames{{
    {OpKind::kInput, "input"},
    {OpKind::kDense, "dense"},
    {OpKind::kScaleShift, "scale_shift"},
    {OpKind::kConv2d, "conv2d"},
    {OpKind::kRelu, "relu"},
    {OpKind::kChannelScale, "channel_scale"},
    {OpKind::kAdd, "add"},
    {OpKind::kMul, "mul"},
    {OpKind::kMean, "mean"},
    {OpKind::kMaskedMean, "masked_mean"},
    {OpKind::kUpsample, "upsample"},
    {OpKind::kSelect, "select"},
    {OpKind::kConcat, "concat"},
}};

struct Chw {
  std::size_t c, h, w;
};

Chw chw_of(const Tensor& t) {
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
  if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
  return {1, 1, t.size()};
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

}  // namespace

std::string_view op_name(OpKind kind) {
  for (const auto& [k, name] : kOpNames)
    if (k == kind) return name;
  throw std::invalid_argument("unknown op kind");
}

OpKind parse_op_kind(std::string_view name) {
  for (const auto& [k, n] : kOpNames)
    if (n == name) return k;
  throw std::invalid_argument("unknown op kind '" + std::string(name) + "'");
}

ConvKernel::ConvKernel(std::size_t out_channels, std::size_t in_channels, std::size_t kernel_size)
    : out_(out_channels),
      in_(in_channels),
      k_(kernel_size),
      weights_(out_channels * in_channels * kernel_size * kernel_size, 0.0),
      bias_(out_channels, 0.0) {
  if (kernel_size % 2 == 0) throw std::invalid_argument("convolution kernels must have odd size");
}

void ConvKernel::finalize() {
  taps_.clear();
  for (std::size_t o = 0; o < out_; ++o) {
    for (std::size_t i = 0; i < in_; ++i) {
      const auto* w = &weights_[(o * in_ + i) * k_ * k_];
      if (std::any_of(w, w + k_ * k_, [](double v) { return v != 0.0; })) taps_.emplace_back(o, i);
    }
  }
}

const Tensor& Gradients::of(NodeId id) const {
  for (const auto& [node, grad] : by_input)
    if (node == id) return grad;
  throw std::out_of_range("no gradient recorded for node " + std::to_string(id.index));
}

NodeId Graph::push(Node node) {
  for (auto p : node.parents) node.requires_grad = node.requires_grad || nodes_[p].requires_grad;
  if (!node.value.all_finite()) {
    throw std::runtime_error(std::string("non-finite value produced by ") + std::string(op_name(node.kind)));
  }
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Graph::input(Tensor value, bool requires_grad) {
  Node n{OpKind::kInput, {}, std::move(value)};
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

NodeId Graph::dense(NodeId x, std::shared_ptr<const DenseWeights> weights) {
  const Tensor& in = value(x);
  const auto& w = weights->weight;
  if (w.rank() != 2 || w.dim(1) != in.size() || weights->bias.size() != w.dim(0) ||
      shape_size(weights->out_shape) != w.dim(0)) {
    throw std::invalid_argument("dense: weight shape " + shape_string(w.shape()) + " incompatible with input " +
                                shape_string(in.shape()));
  }
  Tensor out(weights->out_shape);
  const std::size_t m = w.dim(0), n = w.dim(1);
  for (std::size_t r = 0; r < m; ++r) {
    double acc = weights->bias[r];
    const double* row = w.data().data() + r * n;
    for (std::size_t k = 0; k < n; ++k) acc += row[k] * in[k];
    out[r] = acc;
  }
  Node node{OpKind::kDense, {x.index}, std::move(out)};
  node.dense = std::move(weights);
  return push(std::move(node));
}

NodeId Graph::scale_shift(NodeId x, std::vector<double> scale, std::vector<double> shift) {
  const Tensor& in = value(x);
  const auto [c, h, w] = chw_of(in);
  auto check = [&](const std::vector<double>& v) {
    if (v.size() != 1 && v.size() != c) throw std::invalid_argument("scale_shift: per-channel vector size mismatch");
  };
  check(scale);
  check(shift);
  Tensor out(in.shape());
  const std::size_t plane = h * w;
  for (std::size_t k = 0; k < c; ++k) {
    const double a = scale.size() == 1 ? scale[0] : scale[k];
    const double b = shift.size() == 1 ? shift[0] : shift[k];
    for (std::size_t p = 0; p < plane; ++p) out[k * plane + p] = a * in[k * plane + p] + b;
  }
  Node node{OpKind::kScaleShift, {x.index}, std::move(out)};
  node.scale = std::move(scale);
  node.shift = std::move(shift);
  return push(std::move(node));
}

NodeId Graph::conv2d(NodeId x, std::shared_ptr<const ConvKernel> kernel) {
  const Tensor& in = value(x);
  if (in.rank() != 3 || in.dim(0) != kernel->in_channels()) {
    throw std::invalid_argument("conv2d: input " + shape_string(in.shape()) + " does not have " +
                                std::to_string(kernel->in_channels()) + " channels");
  }
  const std::size_t h = in.dim(1), w = in.dim(2), k = kernel->kernel_size();
  const long pad = static_cast<long>(k / 2);
  Tensor out({kernel->out_channels(), h, w});
  for (std::size_t o = 0; o < kernel->out_channels(); ++o)
    std::fill_n(out.data().begin() + o * h * w, h * w, kernel->bias()[o]);
  for (const auto& [o, ci] : kernel->taps()) {
    const double* src = in.data().data() + ci * h * w;
    double* dst = out.data().data() + o * h * w;
    for (std::size_t di = 0; di < k; ++di) {
      for (std::size_t dj = 0; dj < k; ++dj) {
        const double wt = kernel->weight(o, ci, di, dj);
        if (wt == 0.0) continue;
        const long oi = static_cast<long>(di) - pad, oj = static_cast<long>(dj) - pad;
        const std::size_t i0 = static_cast<std::size_t>(std::max(0L, -oi));
        const std::size_t i1 = static_cast<std::size_t>(std::min(static_cast<long>(h), static_cast<long>(h) - oi));
        const std::size_t j0 = static_cast<std::size_t>(std::max(0L, -oj));
        const std::size_t j1 = static_cast<std::size_t>(std::min(static_cast<long>(w), static_cast<long>(w) - oj));
        for (std::size_t i = i0; i < i1; ++i) {
          const double* s = src + (i + oi) * w + oj;
          double* d = dst + i * w;
          for (std::size_t j = j0; j < j1; ++j) d[j] += wt * s[j];
        }
      }
    }
  }
  Node node{OpKind::kConv2d, {x.index}, std::move(out)};
  node.conv = std::move(kernel);
  return push(std::move(node));
}

NodeId Graph::relu(NodeId x) {
  Tensor out = value(x);
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return push(Node{OpKind::kRelu, {x.index}, std::move(out)});
}

NodeId Graph::channel_scale(NodeId alpha, NodeId x) {
  const Tensor& a = value(alpha);
  const Tensor& in = value(x);
  const auto [c, h, w] = chw_of(in);
  if (a.size() != c) throw std::invalid_argument("channel_scale: alpha has " + std::to_string(a.size()) +
                                                 " entries for " + std::to_string(c) + " channels");
  Tensor out(in.shape());
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t p = 0; p < h * w; ++p) out[k * h * w + p] = a[k] * in[k * h * w + p];
  return push(Node{OpKind::kChannelScale, {alpha.index, x.index}, std::move(out)});
}

NodeId Graph::add(NodeId a, NodeId b) {
  require_same_shape(value(a), value(b), "add");
  Tensor out = value(a);
  const Tensor& rhs = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += rhs[i];
  return push(Node{OpKind::kAdd, {a.index, b.index}, std::move(out)});
}

NodeId Graph::mul(NodeId a, NodeId b) {
  require_same_shape(value(a), value(b), "mul");
  Tensor out = value(a);
  const Tensor& rhs = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= rhs[i];
  return push(Node{OpKind::kMul, {a.index, b.index}, std::move(out)});
}

NodeId Graph::mean(NodeId x) {
  const Tensor& in = value(x);
  if (in.empty()) throw std::invalid_argument("mean of an empty tensor");
  double s = 0.0;
  for (double v : in.data()) s += v;
  return push(Node{OpKind::kMean, {x.index}, Tensor({1}, {s / static_cast<double>(in.size())})});
}

NodeId Graph::masked_mean(NodeId x, std::shared_ptr<const Tensor> mask) {
  const Tensor& in = value(x);
  require_same_shape(in, *mask, "masked_mean");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    num += (*mask)[i] * in[i];
    den += (*mask)[i];
  }
  Node node{OpKind::kMaskedMean, {x.index}, Tensor({1}, {den > 0.0 ? num / den : 0.0})};
  node.mask = std::move(mask);
  return push(std::move(node));
}

NodeId Graph::upsample(NodeId x, std::size_t height, std::size_t width) {
  Node node{OpKind::kUpsample, {x.index}, upsample_nearest(value(x), height, width)};
  return push(std::move(node));
}

NodeId Graph::select(NodeId x, std::vector<std::size_t> channels) {
  const Tensor& in = value(x);
  const auto [c, h, w] = chw_of(in);
  Tensor out({channels.size(), h, w});
  for (std::size_t k = 0; k < channels.size(); ++k) {
    if (channels[k] >= c) throw std::invalid_argument("select: channel out of range");
    std::copy_n(in.data().begin() + channels[k] * h * w, h * w, out.data().begin() + k * h * w);
  }
  Node node{OpKind::kSelect, {x.index}, std::move(out)};
  node.channels = std::move(channels);
  return push(std::move(node));
}

NodeId Graph::concat(std::span<const NodeId> parts) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  const auto [c0, h, w] = chw_of(value(parts[0]));
  std::size_t total = 0;
  std::vector<std::uint32_t> parents;
  for (auto p : parts) {
    const auto [c, ph, pw] = chw_of(value(p));
    if (ph != h || pw != w) throw std::invalid_argument("concat: spatial size mismatch");
    total += c;
    parents.push_back(p.index);
  }
  Tensor out({total, h, w});
  std::size_t offset = 0;
  for (auto p : parts) {
    const Tensor& v = value(p);
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + offset);
    offset += v.size();
  }
  return push(Node{OpKind::kConcat, std::move(parents), std::move(out)});
}

NodeId Graph::apply(OpKind kind, std::span<const NodeId> parents) {
  auto need = [&](std::size_t n) {
    if (parents.size() != n) throw std::invalid_argument("wrong number of parents for " + std::string(op_name(kind)));
  };
  switch (kind) {
    case OpKind::kRelu:
      need(1);
      return relu(parents[0]);
    case OpKind::kMean:
      need(1);
      return mean(parents[0]);
    case OpKind::kAdd:
      need(2);
      return add(parents[0], parents[1]);
    case OpKind::kMul:
      need(2);
      return mul(parents[0], parents[1]);
    case OpKind::kChannelScale:
      need(2);
      return channel_scale(parents[0], parents[1]);
    case OpKind::kConcat:
      return concat(parents);
    default:
      throw std::invalid_argument("op " + std::string(op_name(kind)) + " needs parameters");
  }
}

NodeId Graph::clamp01(NodeId x) {
  const NodeId lo = relu(x);
  const NodeId hi = relu(scale_shift(x, {1.0}, {-1.0}));
  return add(lo, scale_shift(hi, {-1.0}, {0.0}));
}

NodeId Graph::soft_step(NodeId x, double lo, double hi) {
  if (!(hi > lo)) throw std::invalid_argument("soft_step needs hi > lo");
  const double a = 1.0 / (hi - lo);
  return clamp01(scale_shift(x, {a}, {-lo * a}));
}

NodeId Graph::complement(NodeId x) { return scale_shift(x, {-1.0}, {1.0}); }

void Graph::accumulate(const Node& n, const Tensor& g, std::vector<Tensor>& grads) const {
  auto slot = [&](std::uint32_t p) -> Tensor* {
    if (!nodes_[p].requires_grad) return nullptr;
    if (grads[p].empty()) grads[p] = Tensor(nodes_[p].value.shape());
    return &grads[p];
  };
  switch (n.kind) {
    case OpKind::kInput:
      return;
    case OpKind::kDense: {
      Tensor* gx = slot(n.parents[0]);
      if (!gx) return;
      const auto& w = n.dense->weight;
      const std::size_t m = w.dim(0), k = w.dim(1);
      for (std::size_t r = 0; r < m; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        const double* row = w.data().data() + r * k;
        for (std::size_t c = 0; c < k; ++c) (*gx)[c] += row[c] * gr;
      }
      return;
    }
    case OpKind::kScaleShift: {
      Tensor* gx = slot(n.parents[0]);
      if (!gx) return;
      const auto [c, h, w] = chw_of(n.value);
      for (std::size_t k = 0; k < c; ++k) {
        const double a = n.scale.size() == 1 ? n.scale[0] : n.scale[k];
        for (std::size_t p = 0; p < h * w; ++p) (*gx)[k * h * w + p] += a * g[k * h * w + p];
      }
      return;
    }
    case OpKind::kConv2d: {
      Tensor* gx = slot(n.parents[0]);
      if (!gx) return;
      const auto& kernel = *n.conv;
      const std::size_t h = n.value.dim(1), w = n.value.dim(2), k = kernel.kernel_size();
      const long pad = static_cast<long>(k / 2);
      for (const auto& [o, ci] : kernel.taps()) {
        const double* go = g.data().data() + o * h * w;
        double* dst = gx->data().data() + ci * h * w;
        for (std::size_t di = 0; di < k; ++di) {
          for (std::size_t dj = 0; dj < k; ++dj) {
            const double wt = kernel.weight(o, ci, di, dj);
            if (wt == 0.0) continue;
            const long oi = static_cast<long>(di) - pad, oj = static_cast<long>(dj) - pad;
            const std::size_t i0 = static_cast<std::size_t>(std::max(0L, -oi));
            const std::size_t i1 =
                static_cast<std::size_t>(std::min(static_cast<long>(h), static_cast<long>(h) - oi));
            const std::size_t j0 = static_cast<std::size_t>(std::max(0L, -oj));
            const std::size_t j1 =
                static_cast<std::size_t>(std::min(static_cast<long>(w), static_cast<long>(w) - oj));
            for (std::size_t i = i0; i < i1; ++i) {
              double* d = dst + (i + oi) * w + oj;
              const double* s = go + i * w;
              for (std::size_t j = j0; j < j1; ++j) d[j] += wt * s[j];
            }
          }
        }
      }
      return;
    }
    case OpKind::kRelu: {
      Tensor* gx = slot(n.parents[0]);
      if (!gx) return;
      const Tensor& x = nodes_[n.parents[0]].value;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > 0.0) (*gx)[i] += g[i];
      return;
    }
    case OpKind::kChannelScale: {
      const Tensor& a = nodes_[n.parents[0]].value;
      const Tensor& x = nodes_[n.parents[1]].value;
      const auto [c, h, w] = chw_of(x);
      if (Tensor* ga = slot(n.parents[0])) {
        for (std::size_t k = 0; k < c; ++k) {
          double s = 0.0;
          for (std::size_t p = 0; p < h * w; ++p) s += g[k * h * w + p] * x[k * h * w + p];
          (*ga)[k] += s;
        }
      }
      if (Tensor* gx = slot(n.parents[1])) {
        for (std::size_t k = 0; k < c; ++k)
          for (std::size_t p = 0; p < h * w; ++p) (*gx)[k * h * w + p] += a[k] * g[k * h * w + p];
      }
      return;
    }
    case OpKind::kAdd: {
      for (auto p : n.parents) {
        if (Tensor* gp = slot(p))
          for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i] += g[i];
      }
      return;
    }
    case OpKind::kMul: {
      const Tensor& a = nodes_[n.parents[0]].value;
      const Tensor& b = nodes_[n.parents[1]].value;
      if (Tensor* ga = slot(n.parents[0]))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b[i];
      if (Tensor* gb = slot(n.parents[1]))
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a[i];
      return;
    }
    case OpKind::kMean: {
      Tensor* gx = slot(n.parents[0]);
      if (!gx) return;
      const double s = g[0] / static_cast<double>(gx->size());
      for (auto& v : gx->data()) v += s;
      return;
    }
    case OpKind::kMaskedMean: {
      Tensor* gx = slot(n.parents[0]);
      if (!gx) return;
      double den = 0.0;
      for (double m : n.mask->data()) den += m;
      if (den <= 0.0) return;
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += g[0] * (*n.mask)[i] / den;
      return;
    }
    case OpKind::kUpsample: {
      Tensor* gx = slot(n.parents[0]);
      if (!gx) return;
      const auto [c, h, w] = chw_of(*gx);
      const auto [oc, H, W] = chw_of(n.value);
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j < W; ++j)
            (*gx)[(k * h + i * h / H) * w + j * w / W] += g[(k * H + i) * W + j];
      return;
    }
    case OpKind::kSelect: {
      Tensor* gx = slot(n.parents[0]);
      if (!gx) return;
      const auto [c, h, w] = chw_of(n.value);
      for (std::size_t k = 0; k < n.channels.size(); ++k)
        for (std::size_t p = 0; p < h * w; ++p) (*gx)[n.channels[k] * h * w + p] += g[k * h * w + p];
      return;
    }
    case OpKind::kConcat: {
      std::size_t offset = 0;
      for (auto p : n.parents) {
        const std::size_t len = nodes_[p].value.size();
        if (Tensor* gp = slot(p))
          for (std::size_t i = 0; i < len; ++i) (*gp)[i] += g[offset + i];
        offset += len;
      }
      return;
    }
  }
  throw std::invalid_argument("unknown op kind in backward pass");
}

Gradients Graph::backward(NodeId seed) const {
  const Node& s = node(seed);
  if (s.value.size() != 1) {
    throw std::invalid_argument("backward seed must be scalar, got shape " + shape_string(s.value.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  grads[seed.index] = Tensor(s.value.shape(), 1.0);
  for (std::size_t i = seed.index + 1; i-- > 0;) {
    if (grads[i].empty() || !nodes_[i].requires_grad) continue;
    accumulate(nodes_[i], grads[i], grads);
    if (nodes_[i].kind != OpKind::kInput) grads[i] = Tensor();
  }
  Gradients out;
  for (std::size_t i = 0; i <= seed.index; ++i) {
    const Node& n = nodes_[i];
    if (n.kind != OpKind::kInput || !n.requires_grad) continue;
    out.by_input.emplace_back(NodeId{static_cast<std::uint32_t>(i)},
                              grads[i].empty() ? Tensor(n.value.shape()) : std::move(grads[i]));
  }
  return out;
}

ForwardBackwardResult forward_backward(const Graph& graph, NodeId seed) {
  ForwardBackwardResult result;
  result.gradients = graph.backward(seed);
  result.value = graph.value(seed)[0];
  return result;
}

}  // namespace gandissect
