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

#include "gandissect/ace_optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "gandissect/segmenter.hpp"

namespace gandissect {

namespace {

double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Causal-layer window holding every cell that can reach the footprint of p.
// Later layers are local, so evaluating the crop reproduces the footprint
// pixels exactly.
struct Window {
  std::size_t i0, i1, j0, j1;
};

Window window_for(const Generator& gen, std::size_t layer, Location p) {
  const LayerInfo& info = gen.layer(layer);
  const auto f = gen.footprint(layer, p.first, p.second);
  Window w{p.first, p.first + 1, p.second, p.second + 1};
  for (std::size_t i = 0; i < info.height; ++i) {
    for (std::size_t j = 0; j < info.width; ++j) {
      const auto rf = gen.receptive_field(layer, i, j);
      if (rf.row0 < f.row1 && f.row0 < rf.row1 && rf.col0 < f.col1 && f.col0 < rf.col1) {
        w.i0 = std::min(w.i0, i);
        w.i1 = std::max(w.i1, i + 1);
        w.j0 = std::min(w.j0, j);
        w.j1 = std::max(w.j1, j + 1);
      }
    }
  }
  return w;
}

Tensor crop(const Tensor& r, const Window& w) {
  const std::size_t c = r.dim(0), h = w.i1 - w.i0, wd = w.j1 - w.j0;
  Tensor out({c, h, wd});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < wd; ++j) out.at(k, i, j) = r.at(k, w.i0 + i, w.j0 + j);
  return out;
}

std::shared_ptr<const Tensor> footprint_weights(const Generator& gen, std::size_t layer, Location p, const Window& w) {
  const LayerInfo& info = gen.layer(layer);
  const std::size_t scale = gen.image_size() / info.height;
  const std::size_t h = (w.i1 - w.i0) * scale, wd = (w.j1 - w.j0) * scale;
  auto mask = std::make_shared<Tensor>(Shape{1, h, wd});
  const auto f = gen.footprint(layer, p.first, p.second);
  for (std::size_t r = f.row0; r < f.row1; ++r)
    for (std::size_t c = f.col0; c < f.col1; ++c) mask->at(0, r - w.i0 * scale, c - w.j0 * scale) = 1.0;
  return mask;
}

}  // namespace

std::vector<AlphaSample> alpha_batch(const Generator& gen, const AlphaHyper& hyper, std::uint64_t index) {
  const LayerInfo& info = gen.layer(hyper.layer);
  const RngStream stream = RngStream(hyper.seed, "alpha").split(index);
  std::vector<AlphaSample> batch;
  for (std::size_t b = 0; b < hyper.batch; ++b) {
    RngStream rng = stream.split(b);
    const Tensor z = gen.sample_z(rng);
    const std::size_t i = rng.below(info.height);
    const std::size_t j = rng.below(info.width);
    Graph graph;
    const NodeId r = gen.build(graph, graph.input(z), 0, hyper.layer);
    batch.push_back({graph.value(r), {i, j}});
  }
  return batch;
}

AlphaObjective alpha_objective(const Generator& gen, std::size_t concept_index, const std::vector<double>& alpha,
                               const std::vector<AlphaSample>& batch, const std::vector<double>& levels,
                               double coverage, std::size_t layer) {
  const LayerInfo& info = gen.layer(layer);
  if (alpha.size() != info.channels) throw std::invalid_argument("alpha must have one entry per unit");
  if (!levels.empty() && levels.size() != info.channels) throw std::invalid_argument("levels must have one entry per unit");
  if (!(coverage > 0.0)) throw std::invalid_argument("alpha objective needs nonzero coverage");
  if (batch.empty()) throw std::invalid_argument("alpha objective needs a nonempty batch");
  AlphaObjective out;
  out.gradient.assign(info.channels, 0.0);
  for (const auto& sample : batch) {
    const auto [pi, pj] = sample.location;
    const Window win = window_for(gen, layer, sample.location);
    const Tensor r_crop = crop(sample.r, win);
    const std::size_t ch = win.i1 - win.i0, cw = win.j1 - win.j0;
    const std::size_t at = (pi - win.i0) * cw + (pj - win.j0);
    Tensor to_insert(r_crop.shape()), to_ablate(r_crop.shape());
    for (std::size_t u = 0; u < info.channels; ++u) {
      const std::size_t p = u * ch * cw + at;
      const double r = r_crop[p];
      to_insert[p] = (levels.empty() ? r : levels[u]) - r;
      to_ablate[p] = -r;
    }
    Graph graph;
    const NodeId a = graph.input(Tensor({info.channels}, alpha), true);
    const NodeId r = graph.input(r_crop);
    const NodeId inserted = graph.add(r, graph.channel_scale(a, graph.input(std::move(to_insert))));
    const NodeId ablated = graph.add(r, graph.channel_scale(a, graph.input(std::move(to_ablate))));
    const auto mask = footprint_weights(gen, layer, sample.location, win);
    const NodeId vi = graph.masked_mean(gen.build_visible(graph, inserted, layer, concept_index), mask);
    const NodeId va = graph.masked_mean(gen.build_visible(graph, ablated, layer, concept_index), mask);
    const NodeId diff = graph.add(vi, graph.scale_shift(va, {-1.0}, {0.0}));
    const Gradients grads = graph.backward(diff);
    out.effect += graph.value(diff)[0];
    const Tensor& g = grads.of(a);
    for (std::size_t u = 0; u < info.channels; ++u) out.gradient[u] += g[u];
  }
  const double scale = 1.0 / (static_cast<double>(batch.size()) * coverage);
  out.effect *= scale;
  for (auto& g : out.gradient) g *= scale;
  return out;
}

std::vector<std::size_t> rank_units(const std::vector<double>& alpha) {
  std::vector<std::size_t> order(alpha.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return alpha[a] > alpha[b]; });
  return order;
}

namespace {

std::vector<double> levels_for(const Generator& gen, const AlphaHyper& hyper) {
  if (hyper.levels) return *hyper.levels;
  return insertion_levels(gen, hyper.layer, InsertLevel::kQuantile99);
}

double coverage_for(const Generator& gen, const std::string& concept_name, const AlphaHyper& hyper) {
  const double coverage = concept_coverage(gen, concept_name, hyper.coverage_samples);
  if (!(coverage > 0.0)) throw std::invalid_argument("concept '" + concept_name + "' has zero coverage");
  return coverage;
}

}  // namespace

AlphaSolution optimize_alpha(const Generator& gen, const std::string& concept_name, const AlphaHyper& hyper) {
  const LayerInfo& info = gen.layer(hyper.layer);
  if (hyper.batch == 0) throw std::invalid_argument("batch size must be positive");
  if (!(hyper.lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
  const std::size_t k = gen.spec().concept_index(concept_name);
  AlphaSolution sol;
  sol.concept_name = concept_name;
  sol.hyper = hyper;
  sol.coverage = coverage_for(gen, concept_name, hyper);
  const std::vector<double> levels = levels_for(gen, hyper);
  sol.hyper.levels = levels;
  std::vector<double> alpha(info.channels, std::clamp(hyper.init, 0.0, 1.0));
  const double step_penalty = hyper.learning_rate * hyper.lambda;
  for (std::size_t step = 0; step < hyper.steps; ++step) {
    const AlphaObjective obj = alpha_objective(gen, k, alpha, alpha_batch(gen, hyper, step), levels, sol.coverage, hyper.layer);
    const double loss = -obj.effect + hyper.lambda * norm2(alpha);
    sol.objective.push_back(obj.effect);
    sol.loss.push_back(loss);
    if (!std::isfinite(loss)) {
      sol.alpha = alpha;
      throw std::runtime_error("alpha optimization diverged at step " + std::to_string(step));
    }
    // Gradient step on -effect, then the proximal step of the norm penalty
    // (block soft-threshold), then projection onto the box.
    for (std::size_t u = 0; u < alpha.size(); ++u) alpha[u] += hyper.learning_rate * obj.gradient[u];
    const double n = norm2(alpha);
    const double shrink = n > 0.0 ? std::max(0.0, 1.0 - step_penalty / n) : 0.0;
    for (auto& a : alpha) a = std::clamp(a * shrink, 0.0, 1.0);
  }
  sol.alpha = alpha;
  sol.ranking = rank_units(alpha);
  return sol;
}

double probe_lambda(const Generator& gen, const std::string& concept_name, const AlphaHyper& hyper, double ratio,
                    std::size_t batches) {
  if (batches == 0) throw std::invalid_argument("probe needs at least one batch");
  const LayerInfo& info = gen.layer(hyper.layer);
  const std::size_t k = gen.spec().concept_index(concept_name);
  const double coverage = coverage_for(gen, concept_name, hyper);
  const std::vector<double> levels = levels_for(gen, hyper);
  const std::vector<double> half(info.channels, 0.5);
  AlphaHyper probe = hyper;
  probe.seed = hyper.seed ^ 0x70726f6265ULL;
  std::vector<double> grad(info.channels, 0.0);
  for (std::size_t b = 0; b < batches; ++b) {
    const AlphaObjective obj = alpha_objective(gen, k, half, alpha_batch(gen, probe, b), levels, coverage, hyper.layer);
    for (std::size_t u = 0; u < grad.size(); ++u) grad[u] += obj.gradient[u] / static_cast<double>(batches);
  }
  return ratio * norm2(grad);
}

std::vector<std::size_t> random_ranking(std::size_t units, std::uint64_t seed, std::uint64_t index) {
  std::vector<std::size_t> order(units);
  std::iota(order.begin(), order.end(), 0);
  RngStream rng = RngStream(seed, "random-ranking").split(index);
  for (std::size_t i = units; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

AblationCurve topk_ablation_curve(const Generator& gen, const std::vector<std::size_t>& ranking,
                                  const std::string& concept_name, const std::vector<std::size_t>& k_grid,
                                  const CurveOptions& options) {
  const LayerInfo& info = gen.layer(options.layer);
  if (options.n_samples == 0) throw std::invalid_argument("ablation curve needs at least one sample");
  for (auto k : k_grid) {
    if (k > info.channels) throw std::invalid_argument("k = " + std::to_string(k) + " exceeds the layer width");
    if (k > ranking.size()) throw std::invalid_argument("ranking is shorter than k = " + std::to_string(k));
  }
  for (auto u : ranking) {
    if (u >= info.channels) throw std::invalid_argument("ranked unit " + std::to_string(u) + " outside the layer");
  }
  const OracleSegmenter seg(gen.spec());
  const auto& concepts = gen.spec().concepts;
  const bool base_concept =
      std::any_of(concepts.begin(), concepts.end(), [&](const ConceptSpec& c) { return c.name == concept_name; });
  auto area = [&](const Tensor& image) {
    const SegmentationSet segs = base_concept ? seg.segment(image) : seg.segment_with_parts(image);
    return static_cast<double>(segs.mask(concept_name).count());
  };
  std::vector<double> after(k_grid.size(), 0.0);
  double base = 0.0;
  for (std::size_t s = 0; s < options.n_samples; ++s) {
    const ForwardTrace trace = gen.forward(gen.z_for(options.stream, s));
    base += area(trace.image);
    const Tensor& r = trace.layer(options.layer);
    for (std::size_t g = 0; g < k_grid.size(); ++g) {
      if (k_grid[g] == 0) continue;
      Tensor edited = r;
      for (std::size_t i = 0; i < k_grid[g]; ++i) {
        const std::size_t u = ranking[i];
        std::fill_n(edited.data().begin() + static_cast<std::ptrdiff_t>(u * info.height * info.width),
                    info.height * info.width, 0.0);
      }
      after[g] += area(options.layer == kNumLayers ? gen.render(edited) : gen.image_from(options.layer, edited));
    }
  }
  AblationCurve curve;
  curve.concept_name = concept_name;
  curve.k = k_grid;
  for (std::size_t g = 0; g < k_grid.size(); ++g) {
    if (k_grid[g] == 0) {
      curve.remaining.push_back(1.0);
    } else {
      curve.remaining.push_back(base > 0.0 ? after[g] / base : 0.0);
    }
  }
  return curve;
}

std::vector<RemovalScore> removal_difficulty(const Generator& gen,
                                             const std::map<std::string, std::vector<std::size_t>>& rankings,
                                             std::size_t k, const CurveOptions& options) {
  std::vector<RemovalScore> out;
  for (const auto& [name, ranking] : rankings) {
    const AblationCurve curve = topk_ablation_curve(gen, ranking, name, {k}, options);
    const auto& spec = gen.spec();
    const bool scene = spec.concept_index(name) < spec.concepts.size() && spec.concept_named(name).scene_defining;
    out.push_back({name, k, 1.0 - curve.remaining[0], scene});
  }
  return out;
}

}  // namespace gandissect
