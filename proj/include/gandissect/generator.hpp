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

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gandissect/autodiff.hpp"
#include "gandissect/rng.hpp"
#include "gandissect/tensor.hpp"
#include "gandissect/world_spec.hpp"

namespace gandissect {

inline constexpr std::size_t kNumLayers = 8;

struct LayerInfo {
  std::size_t index;  // 1-based
  std::string name;
  std::size_t channels, height, width;
};

// Whole-featuremap replacements keyed by 1-based layer index.
using Edits = std::map<std::size_t, Tensor>;
// Called with each freshly computed layer; may modify it in place.
using LayerHook = std::function<void(std::size_t layer, Tensor& value)>;

struct ForwardTrace {
  Tensor z;
  std::vector<Tensor> layers;  // layers[l-1] is layer l, C x h x w
  Tensor image;                // H x W x 3, values in [0,1]
  // Per-concept visible intensity (H x W): the winning concept's intensity at
  // each pixel, zero elsewhere. Same order as WorldSpec::concepts.
  std::vector<Tensor> intensity;

  const Tensor& layer(std::size_t l) const { return layers.at(l - 1); }
};

// The layered generator G(z) = f(h(z)) built from a WorldSpec.
//
//   1  8x8    soft box edges and scattered fields (dense map from z, relu)
//   2  8x8    box fields (1x1 conv, relu)
//   3  8x8    light smoothing (3x3 conv, relu)
//   4  8x8    causal layer: one channel per unit (1x1 conv, relu)
//   5  16x16  per-concept drive + artifact drive (1x1 conv, relu, upsample)
//   6  16x16  blur, sharpen, clamp
//   7  32x32  upsample, blur, sharpen, clamp
//   8  32x32  veto rules and soft occlusion in depth order
//
// Layer sizes scale with image_size; the 8x8 grid is image_size / 4.
class Generator {
 public:
  explicit Generator(WorldSpec spec);

  const WorldSpec& spec() const { return spec_; }
  const LayerInfo& layer(std::size_t l) const;
  std::size_t image_size() const { return spec_.image_size; }
  std::size_t num_concepts() const { return spec_.concepts.size(); }

  Tensor sample_z(RngStream& stream) const;
  // z for sample `index` of the named stream; the canonical seed->z mapping.
  Tensor z_for(std::string_view stream, std::uint64_t index) const;

  ForwardTrace forward(const Tensor& z, const Edits& edits = {}) const;
  ForwardTrace forward(const Tensor& z, const LayerHook& hook) const;
  // Image from a full featuremap of layer `from`, running only later layers.
  Tensor image_from(std::size_t from, const Tensor& value) const;

  // Appends layers (from+1 .. to) to `graph`, starting from the node holding
  // layer `from` (or z when from == 0). Returns the node of layer `to`.
  // Layers after the causal layer are pointwise or local, so a spatial crop of
  // the causal featuremap may be passed in; layer sizes then follow the crop.
  NodeId build(Graph& graph, NodeId start, std::size_t from, std::size_t to = kNumLayers) const;

  // Like build(graph, start, from) but returns only the final-layer visible
  // intensity of one concept (1 x H x W), skipping concepts behind it.
  NodeId build_visible(Graph& graph, NodeId start, std::size_t from, std::size_t concept_index) const;

  // Winner-take-all rendering of the final featuremap.
  Tensor render(const Tensor& final_layer, std::vector<Tensor>* intensity = nullptr) const;

  // Pixel rows/cols [begin, end) covered by featuremap cell (i, j) at layer l.
  struct Footprint {
    std::size_t row0, row1, col0, col1;
  };
  Footprint footprint(std::size_t layer, std::size_t i, std::size_t j) const;
  // Pixels that an edit of cell (i, j) at layer l can change.
  Footprint receptive_field(std::size_t layer, std::size_t i, std::size_t j) const;

 private:
  NodeId build_layer(Graph& graph, NodeId prev, std::size_t l) const;
  NodeId apply_vetoes(Graph& graph, NodeId x, std::size_t l) const;
  NodeId compose(Graph& graph, NodeId x, std::optional<std::size_t> only = std::nullopt) const;

  WorldSpec spec_;
  std::vector<LayerInfo> layers_;
  std::shared_ptr<const DenseWeights> latent_map_;
  std::shared_ptr<const ConvKernel> box_kernel_, smooth_kernel_, unit_kernel_, drive_kernel_, blur_kernel_;
  std::vector<std::size_t> depth_rank_;  // concept index by depth, front first
};

struct UnitQuantiles {
  std::vector<double> q50, q90, q99;
};

// Empirical per-unit activation quantiles over n_samples * h * w values.
UnitQuantiles unit_percentiles(const Generator& gen, std::size_t layer, std::size_t n_samples,
                               std::string_view stream = "percentiles");

// Linear-interpolation quantile of a sorted range, p in [0,1].
double sorted_quantile(const std::vector<double>& sorted, double p);

}  // namespace gandissect
