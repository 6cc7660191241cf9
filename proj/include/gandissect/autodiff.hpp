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

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "gandissect/tensor.hpp"

namespace gandissect {

// Reverse-mode differentiation over the small operation set the generator and
// the intervention objective need. Values are computed eagerly when a node is
// added, so parents always precede children and index order is a valid
// topological order.

enum class OpKind : std::uint8_t {
  kInput,
  kDense,         // W * flatten(x) + b, reshaped
  kScaleShift,    // per-channel a*x + b
  kConv2d,        // zero padding, stride 1, odd kernel
  kRelu,
  kChannelScale,  // alpha[c] * x[c,:,:]
  kAdd,
  kMul,
  kMean,
  kMaskedMean,    // sum(m*x) / sum(m)
  kUpsample,      // nearest
  kSelect,        // channel subset
  kConcat,        // channel concatenation
};

std::string_view op_name(OpKind kind);
// Throws std::invalid_argument for names outside the supported set.
OpKind parse_op_kind(std::string_view name);

struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

struct DenseWeights {
  Tensor weight;  // m x n
  std::vector<double> bias;  // m
  Shape out_shape;
};

// Cout x Cin x k x k. Only (out, in) pairs with a nonzero kernel are visited,
// so channel-diagonal kernels cost the same as a depthwise convolution.
class ConvKernel {
 public:
  ConvKernel(std::size_t out_channels, std::size_t in_channels, std::size_t kernel_size);

  std::size_t out_channels() const { return out_; }
  std::size_t in_channels() const { return in_; }
  std::size_t kernel_size() const { return k_; }

  double& weight(std::size_t o, std::size_t i, std::size_t di, std::size_t dj) {
    return weights_[((o * in_ + i) * k_ + di) * k_ + dj];
  }
  double weight(std::size_t o, std::size_t i, std::size_t di, std::size_t dj) const {
    return weights_[((o * in_ + i) * k_ + di) * k_ + dj];
  }
  std::vector<double>& bias() { return bias_; }
  const std::vector<double>& bias() const { return bias_; }

  // Must be called after the weights are final.
  void finalize();
  const std::vector<std::pair<std::size_t, std::size_t>>& taps() const { return taps_; }

 private:
  std::size_t out_, in_, k_;
  std::vector<double> weights_;
  std::vector<double> bias_;
  std::vector<std::pair<std::size_t, std::size_t>> taps_;
};

struct Gradients {
  std::vector<std::pair<NodeId, Tensor>> by_input;
  const Tensor& of(NodeId id) const;
};

struct ForwardBackwardResult {
  double value = 0.0;
  Gradients gradients;
};

class Graph {
 public:
  NodeId input(Tensor value, bool requires_grad = false);
  NodeId dense(NodeId x, std::shared_ptr<const DenseWeights> weights);
  // scale/shift hold one entry per channel, or a single broadcast entry.
  NodeId scale_shift(NodeId x, std::vector<double> scale, std::vector<double> shift);
  NodeId conv2d(NodeId x, std::shared_ptr<const ConvKernel> kernel);
  NodeId relu(NodeId x);
  NodeId channel_scale(NodeId alpha, NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId mean(NodeId x);
  NodeId masked_mean(NodeId x, std::shared_ptr<const Tensor> mask);
  NodeId upsample(NodeId x, std::size_t height, std::size_t width);
  NodeId select(NodeId x, std::vector<std::size_t> channels);
  NodeId concat(std::span<const NodeId> parts);

  // Parameter-free ops by kind (relu, add, mul, mean); used by graph fuzzers.
  NodeId apply(OpKind kind, std::span<const NodeId> parents);

  // relu(x) - relu(x - 1)
  NodeId clamp01(NodeId x);
  // clamp01((x - lo) / (hi - lo))
  NodeId soft_step(NodeId x, double lo, double hi);
  // 1 - x
  NodeId complement(NodeId x);

  const Tensor& value(NodeId id) const { return nodes_.at(id.index).value; }
  OpKind kind(NodeId id) const { return nodes_.at(id.index).kind; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar node. Gradients are reported for every input
  // created with requires_grad. Throws for a non-scalar seed.
  Gradients backward(NodeId seed) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<std::uint32_t> parents;
    Tensor value;
    bool requires_grad = false;
    std::shared_ptr<const DenseWeights> dense;
    std::shared_ptr<const ConvKernel> conv;
    std::shared_ptr<const Tensor> mask;
    std::vector<double> scale, shift;
    std::vector<std::size_t> channels;
  };

  NodeId push(Node node);
  const Node& node(NodeId id) const { return nodes_.at(id.index); }
  void accumulate(const Node& n, const Tensor& grad, std::vector<Tensor>& grads) const;

  std::vector<Node> nodes_;
};

ForwardBackwardResult forward_backward(const Graph& graph, NodeId seed);

}  // namespace gandissect
