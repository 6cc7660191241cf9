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

#include "gandissect/generator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gandissect {

namespace {

constexpr double kArtifactDrive = 3.0;

double unit_gain(const WorldSpec& spec, std::size_t unit) {
  RngStream rng = RngStream(spec.seed, "unit-gain").split(unit);
  return rng.uniform(1.0 - spec.unit_gain_spread, 1.0 + spec.unit_gain_spread);
}

void set_blur(ConvKernel& k, std::size_t o, std::size_t i, double center) {
  const double side = (1.0 - center) / 2.0;
  const double taps[3] = {side, center, side};
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) k.weight(o, i, a, b) = taps[a] * taps[b];
}

struct SideRef {
  const std::optional<LatentAffine>* edge;
  double sign;  // +1: inside lies at larger coordinates
  bool vertical;
};

}  // namespace

Generator::Generator(WorldSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const std::size_t grid = spec_.grid_size();
  const std::size_t half = spec_.image_size / 2;
  const std::size_t full = spec_.image_size;
  const std::size_t n_concepts = spec_.concepts.size();

  // Layer-1 channel plan: two ramp channels per bounded box side, then one
  // channel per scattered (noise or artifact) unit.
  struct GroupPlan {
    std::size_t concept_id, group;
    std::vector<std::size_t> ramp_channels;  // first channel of each (relu(v), relu(v-1)) pair
  };
  std::vector<GroupPlan> plans;
  std::vector<const ScatterUnitSpec*> scatter;
  std::size_t c1 = 0;
  for (std::size_t k = 0; k < n_concepts; ++k) {
    for (std::size_t g = 0; g < spec_.concepts[k].groups.size(); ++g) {
      GroupPlan plan{k, g, {}};
      const BoxRule& box = spec_.concepts[k].groups[g].box;
      for (const auto* side : {&box.top, &box.bottom, &box.left, &box.right}) {
        if (side->has_value()) {
          plan.ramp_channels.push_back(c1);
          c1 += 2;
        }
      }
      plans.push_back(std::move(plan));
    }
  }
  for (const auto& s : spec_.noise_units) scatter.push_back(&s);
  for (const auto& s : spec_.artifact_units) scatter.push_back(&s);
  const std::size_t scatter_base1 = c1;
  c1 += scatter.size();
  const std::size_t c2 = plans.size() + scatter.size();

  // Layer 1: dense map from z.
  auto dense = std::make_shared<DenseWeights>();
  dense->weight = Tensor({c1 * grid * grid, spec_.latent_dim});
  dense->bias.assign(c1 * grid * grid, 0.0);
  dense->out_shape = {c1, grid, grid};
  auto row_of = [&](std::size_t ch, std::size_t i, std::size_t j) { return (ch * grid + i) * grid + j; };
  const double s = spec_.ramp_steepness;
  for (const auto& plan : plans) {
    const BoxRule& box = spec_.concepts[plan.concept_id].groups[plan.group].box;
    const SideRef sides[4] = {{&box.top, +1.0, true}, {&box.bottom, -1.0, true}, {&box.left, +1.0, false},
                              {&box.right, -1.0, false}};
    std::size_t next = 0;
    for (const auto& side : sides) {
      if (!side.edge->has_value()) continue;
      const LatentAffine& edge = **side.edge;
      const std::size_t ch = plan.ramp_channels[next++];
      for (std::size_t i = 0; i < grid; ++i) {
        for (std::size_t j = 0; j < grid; ++j) {
          const double coord = (side.vertical ? static_cast<double>(i) : static_cast<double>(j)) + 0.5;
          // v = 0.5 + s * sign * (coord - edge(z))
          const double b = 0.5 + s * side.sign * (coord - edge.base);
          for (std::size_t pair = 0; pair < 2; ++pair) {
            const std::size_t r = row_of(ch + pair, i, j);
            dense->bias[r] = b - static_cast<double>(pair);
            for (const auto& [latent, coef] : edge.terms) dense->weight.at(r, latent) += -s * side.sign * coef;
          }
        }
      }
    }
  }
  for (std::size_t n = 0; n < scatter.size(); ++n) {
    const ScatterUnitSpec& su = *scatter[n];
    RngStream rng = RngStream(spec_.seed, "scatter").split(su.unit);
    for (std::size_t k = 0; k < su.latents.size(); ++k) {
      RngStream pattern = rng.split(k);
      for (std::size_t i = 0; i < grid; ++i) {
        for (std::size_t j = 0; j < grid; ++j) {
          const std::size_t r = row_of(scatter_base1 + n, i, j);
          dense->weight.at(r, su.latents[k]) += pattern.normal();
          dense->bias[r] = -su.bias;
        }
      }
    }
  }
  latent_map_ = std::move(dense);

  // Layer 2: box = relu(sum of clamped ramps - (sides - 1)).
  auto box = std::make_shared<ConvKernel>(c2, c1, 1);
  for (std::size_t p = 0; p < plans.size(); ++p) {
    const auto& ramps = plans[p].ramp_channels;
    for (auto ch : ramps) {
      box->weight(p, ch, 0, 0) = 1.0;
      box->weight(p, ch + 1, 0, 0) = -1.0;
    }
    box->bias()[p] = ramps.empty() ? 1.0 : -(static_cast<double>(ramps.size()) - 1.0);
  }
  for (std::size_t n = 0; n < scatter.size(); ++n) box->weight(plans.size() + n, scatter_base1 + n, 0, 0) = 1.0;
  box->finalize();
  box_kernel_ = std::move(box);

  // Layer 3: light smoothing of box fields; scattered fields pass through.
  auto smooth = std::make_shared<ConvKernel>(c2, c2, 3);
  for (std::size_t p = 0; p < plans.size(); ++p) set_blur(*smooth, p, p, spec_.render.blur_center);
  for (std::size_t n = 0; n < scatter.size(); ++n) smooth->weight(plans.size() + n, plans.size() + n, 1, 1) = 1.0;
  smooth->finalize();
  smooth_kernel_ = std::move(smooth);

  // Layer 4: units.
  auto units = std::make_shared<ConvKernel>(spec_.units, c2, 1);
  auto group_channel = [&](std::size_t concept_id, std::size_t group) {
    for (std::size_t p = 0; p < plans.size(); ++p)
      if (plans[p].concept_id == concept_id && plans[p].group == group) return p;
    throw std::logic_error("missing group plan");
  };
  for (std::size_t p = 0; p < plans.size(); ++p) {
    for (auto u : spec_.concepts[plans[p].concept_id].groups[plans[p].group].units)
      units->weight(u, p, 0, 0) = unit_gain(spec_, u);
  }
  for (const auto& d : spec_.distractors)
    units->weight(d.unit, group_channel(spec_.concept_index(d.concept_name), d.group), 0, 0) = unit_gain(spec_, d.unit);
  for (std::size_t n = 0; n < scatter.size(); ++n)
    units->weight(scatter[n]->unit, plans.size() + n, 0, 0) = unit_gain(spec_, scatter[n]->unit);
  units->finalize();
  unit_kernel_ = std::move(units);

  // Layer 5: drive channels, one per concept plus the artifact channel.
  auto drive = std::make_shared<ConvKernel>(n_concepts + 1, spec_.units, 1);
  for (std::size_t k = 0; k < n_concepts; ++k) {
    for (const auto& g : spec_.concepts[k].groups) {
      for (auto u : g.units)
        drive->weight(k, u, 0, 0) = g.render_gain / (static_cast<double>(g.units.size()) * unit_gain(spec_, u));
    }
  }
  for (const auto& a : spec_.artifact_units)
    drive->weight(n_concepts, a.unit, 0, 0) = kArtifactDrive / unit_gain(spec_, a.unit);
  drive->finalize();
  drive_kernel_ = std::move(drive);

  auto blur = std::make_shared<ConvKernel>(n_concepts + 1, n_concepts + 1, 3);
  for (std::size_t k = 0; k <= n_concepts; ++k) set_blur(*blur, k, k, spec_.render.blur_center);
  blur->finalize();
  blur_kernel_ = std::move(blur);

  for (const auto& name : spec_.depth_order) depth_rank_.push_back(spec_.concept_index(name));

  layers_ = {
      {1, "edges", c1, grid, grid},
      {2, "boxes", c2, grid, grid},
      {3, "smooth", c2, grid, grid},
      {4, "units", spec_.units, grid, grid},
      {5, "drive", n_concepts + 1, half, half},
      {6, "shape", n_concepts + 1, half, half},
      {7, "detail", n_concepts + 1, full, full},
      {8, "compose", n_concepts + 1, full, full},
  };
}

const LayerInfo& Generator::layer(std::size_t l) const {
  if (l < 1 || l > kNumLayers) throw std::out_of_range("layer index " + std::to_string(l) + " outside 1..8");
  return layers_[l - 1];
}

Tensor Generator::sample_z(RngStream& stream) const {
  Tensor z({spec_.latent_dim});
  for (auto& v : z.data()) v = stream.normal();
  return z;
}

Tensor Generator::z_for(std::string_view stream, std::uint64_t index) const {
  RngStream rng = RngStream(spec_.seed, stream).split(index);
  return sample_z(rng);
}

NodeId Generator::apply_vetoes(Graph& graph, NodeId x, std::size_t l) const {
  for (const auto& rule : spec_.vetoes) {
    if (rule.layer != l) continue;
    const std::size_t channels = graph.value(x).dim(0);
    const std::size_t target = spec_.concept_index(rule.concept_name);
    const std::size_t context = spec_.concept_index(rule.context);
    std::vector<NodeId> parts;
    for (std::size_t k = 0; k < channels; ++k) {
      NodeId ch = graph.select(x, {k});
      if (k == target) {
        const NodeId allowed = graph.complement(graph.soft_step(graph.select(x, {context}), rule.lo, rule.hi));
        ch = graph.mul(ch, allowed);
      }
      parts.push_back(ch);
    }
    x = graph.concat(parts);
  }
  return x;
}

NodeId Generator::compose(Graph& graph, NodeId x, std::optional<std::size_t> only) const {
  const std::size_t n = spec_.concepts.size();
  std::vector<NodeId> visible(n);
  std::optional<NodeId> open;  // product of (1 - cover) over concepts in front
  for (std::size_t k : depth_rank_) {
    const NodeId intensity = graph.select(x, {k});
    visible[k] = open ? graph.mul(intensity, *open) : intensity;
    if (only && *only == k) return visible[k];
    const double tau = spec_.concepts[k].tau, band = spec_.render.occlusion_band;
    const NodeId uncovered = graph.complement(graph.soft_step(intensity, tau - band, tau + band));
    open = open ? graph.mul(*open, uncovered) : uncovered;
  }
  visible.push_back(graph.select(x, {n}));
  return graph.concat(visible);
}

NodeId Generator::build_layer(Graph& graph, NodeId prev, std::size_t l) const {
  const RenderSpec& r = spec_.render;
  NodeId out;
  switch (l) {
    case 1:
      out = graph.relu(graph.dense(prev, latent_map_));
      break;
    case 2:
      out = graph.relu(graph.conv2d(prev, box_kernel_));
      break;
    case 3:
      out = graph.relu(graph.conv2d(prev, smooth_kernel_));
      break;
    case 4:
      out = graph.relu(graph.conv2d(prev, unit_kernel_));
      break;
    case 5:
      out = graph.relu(graph.conv2d(prev, drive_kernel_));
      out = graph.upsample(out, 2 * graph.value(out).dim(1), 2 * graph.value(out).dim(2));
      break;
    case 6:
      out = graph.clamp01(graph.scale_shift(graph.conv2d(prev, blur_kernel_), {r.sharpen_gain}, {r.sharpen_offset}));
      break;
    case 7: {
      const NodeId up = graph.upsample(prev, 2 * graph.value(prev).dim(1), 2 * graph.value(prev).dim(2));
      out = graph.clamp01(graph.scale_shift(graph.conv2d(up, blur_kernel_), {r.sharpen_gain}, {r.sharpen_offset}));
      break;
    }
    case 8:
      out = prev;
      break;
    default:
      throw std::out_of_range("layer index outside 1..8");
  }
  out = apply_vetoes(graph, out, l);
  if (l == 8) out = compose(graph, out);
  return out;
}

NodeId Generator::build_visible(Graph& graph, NodeId start, std::size_t from, std::size_t concept_index) const {
  if (concept_index >= spec_.concepts.size()) throw std::out_of_range("concept index out of range");
  if (from >= kNumLayers) throw std::out_of_range("invalid layer range");
  const NodeId before = build(graph, start, from, kNumLayers - 1);
  return compose(graph, apply_vetoes(graph, before, kNumLayers), concept_index);
}

NodeId Generator::build(Graph& graph, NodeId start, std::size_t from, std::size_t to) const {
  if (from > to || to > kNumLayers) throw std::out_of_range("invalid layer range");
  NodeId node = start;
  for (std::size_t l = from + 1; l <= to; ++l) node = build_layer(graph, node, l);
  return node;
}

ForwardTrace Generator::forward(const Tensor& z, const Edits& edits) const {
  for (const auto& [l, t] : edits) {
    const LayerInfo& info = layer(l);
    if (t.shape() != Shape{info.channels, info.height, info.width}) {
      throw std::invalid_argument("override for layer " + std::to_string(l) + " has shape " + shape_string(t.shape()) +
                                  ", expected " + shape_string({info.channels, info.height, info.width}));
    }
  }
  if (edits.empty()) return forward(z, LayerHook{});
  return forward(z, [&edits](std::size_t l, Tensor& value) {
    if (auto it = edits.find(l); it != edits.end()) value = it->second;
  });
}

ForwardTrace Generator::forward(const Tensor& z, const LayerHook& hook) const {
  if (z.size() != spec_.latent_dim) throw std::invalid_argument("latent vector has the wrong length");
  Graph graph;
  NodeId node = graph.input(z.reshaped({spec_.latent_dim}));
  ForwardTrace trace;
  trace.z = z;
  for (std::size_t l = 1; l <= kNumLayers; ++l) {
    node = build_layer(graph, node, l);
    if (hook) {
      Tensor value = graph.value(node);
      hook(l, value);
      const LayerInfo& info = layers_[l - 1];
      if (value.shape() != Shape{info.channels, info.height, info.width})
        throw std::invalid_argument("layer hook changed the shape of layer " + std::to_string(l));
      if (!(value == graph.value(node))) node = graph.input(std::move(value));
    }
    trace.layers.push_back(graph.value(node));
  }
  trace.image = render(trace.layers.back(), &trace.intensity);
  return trace;
}

Tensor Generator::image_from(std::size_t from, const Tensor& value) const {
  const LayerInfo& info = layer(from);
  if (value.shape() != Shape{info.channels, info.height, info.width}) {
    throw std::invalid_argument("layer " + std::to_string(from) + " value has shape " + shape_string(value.shape()));
  }
  Graph graph;
  const NodeId node = build(graph, graph.input(value), from);
  return render(graph.value(node));
}

Tensor Generator::render(const Tensor& final_layer, std::vector<Tensor>* intensity) const {
  const std::size_t n = spec_.concepts.size();
  const std::size_t size = spec_.image_size;
  if (final_layer.shape() != Shape{n + 1, size, size}) throw std::invalid_argument("render: unexpected layer shape");
  Tensor image({size, size, 3});
  if (intensity) intensity->assign(n, Tensor({size, size}));
  const auto& bg = spec_.render.background;
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      std::size_t best = n;
      double best_v = 0.0;
      for (std::size_t k : depth_rank_) {
        const double v = final_layer.at(k, i, j);
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      double rgb[3];
      if (best < n) {
        const auto& pal = spec_.concepts[best].palette;
        for (int c = 0; c < 3; ++c) rgb[c] = pal[c] * (0.5 + 0.5 * best_v);
        if (intensity) (*intensity)[best].at(i, j) = best_v;
      } else {
        for (int c = 0; c < 3; ++c) rgb[c] = bg[c];
      }
      // Artifacts desaturate toward the pixel mean on a checkerboard, which
      // leaves the mean (and the hue direction) of every pixel unchanged.
      const double a = spec_.render.artifact_strength * final_layer.at(n, i, j) * static_cast<double>((i + j) % 2);
      const double m = (rgb[0] + rgb[1] + rgb[2]) / 3.0;
      for (int c = 0; c < 3; ++c) image[(i * size + j) * 3 + c] = rgb[c] + a * (m - rgb[c]);
    }
  }
  return image;
}

Generator::Footprint Generator::footprint(std::size_t l, std::size_t i, std::size_t j) const {
  const LayerInfo& info = layer(l);
  if (i >= info.height || j >= info.width) throw std::out_of_range("featuremap location out of range");
  const std::size_t size = spec_.image_size;
  auto lo = [&](std::size_t c, std::size_t n) { return (c * size + n - 1) / n; };
  return {lo(i, info.height), lo(i + 1, info.height), lo(j, info.width), lo(j + 1, info.width)};
}

Generator::Footprint Generator::receptive_field(std::size_t l, std::size_t i, std::size_t j) const {
  const LayerInfo& info = layer(l);
  if (i >= info.height || j >= info.width) throw std::out_of_range("featuremap location out of range");
  long r0 = static_cast<long>(i), r1 = r0 + 1, c0 = static_cast<long>(j), c1 = c0 + 1;
  for (std::size_t next = l + 1; next <= kNumLayers; ++next) {
    long grow = 0, scale = 1;
    if (next == 3 || next == 6) grow = 1;
    if (next == 5) scale = 2;
    if (next == 7) scale = 2, grow = 1;
    const long h = static_cast<long>(layers_[next - 1].height), w = static_cast<long>(layers_[next - 1].width);
    r0 = std::max(0L, r0 * scale - grow);
    r1 = std::min(h, r1 * scale + grow);
    c0 = std::max(0L, c0 * scale - grow);
    c1 = std::min(w, c1 * scale + grow);
  }
  return {static_cast<std::size_t>(r0), static_cast<std::size_t>(r1), static_cast<std::size_t>(c0),
          static_cast<std::size_t>(c1)};
}

double sorted_quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of an empty sample");
  const double pos = std::clamp(p, 0.0, 1.0) * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

UnitQuantiles unit_percentiles(const Generator& gen, std::size_t layer, std::size_t n_samples, std::string_view stream) {
  if (n_samples < 100) throw std::invalid_argument("unit_percentiles needs at least 100 samples");
  const LayerInfo& info = gen.layer(layer);
  const std::size_t plane = info.height * info.width;
  std::vector<std::vector<double>> values(info.channels);
  for (auto& v : values) v.reserve(n_samples * plane);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const ForwardTrace trace = gen.forward(gen.z_for(stream, s));
    const Tensor& r = trace.layer(layer);
    for (std::size_t u = 0; u < info.channels; ++u)
      values[u].insert(values[u].end(), r.data().begin() + u * plane, r.data().begin() + (u + 1) * plane);
  }
  UnitQuantiles q;
  for (auto& v : values) {
    std::sort(v.begin(), v.end());
    q.q50.push_back(sorted_quantile(v, 0.50));
    q.q90.push_back(sorted_quantile(v, 0.90));
    q.q99.push_back(sorted_quantile(v, 0.99));
  }
  return q;
}

}  // namespace gandissect
