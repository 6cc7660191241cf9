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

#include "gandissect/intervention.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace gandissect {

void InterventionSpec::validate(const Generator& gen) const {
  const LayerInfo& info = gen.layer(layer);
  if (units.empty()) throw std::invalid_argument("intervention needs at least one unit");
  if (locations.empty()) throw std::invalid_argument("intervention needs at least one location");
  for (auto u : units)
    if (u >= info.channels)
      throw std::invalid_argument("unit " + std::to_string(u) + " outside layer " + std::to_string(layer));
  for (const auto& [i, j] : locations)
    if (i >= info.height || j >= info.width)
      throw std::invalid_argument("location (" + std::to_string(i) + "," + std::to_string(j) + ") outside the featuremap");
  if (mode == InterventionMode::kInsert && !levels.empty() && levels.size() != units.size())
    throw std::invalid_argument("insertion needs one level per unit");
  if (!(strength >= 0.0 && strength <= 1.0)) throw std::invalid_argument("strength must lie in [0,1]");
}

std::string_view mode_name(InterventionMode mode) { return mode == InterventionMode::kAblate ? "ablate" : "insert"; }

InterventionMode parse_mode(std::string_view name) {
  if (name == "ablate") return InterventionMode::kAblate;
  if (name == "insert") return InterventionMode::kInsert;
  throw std::invalid_argument("mode must be 'ablate' or 'insert'");
}

void apply_in_place(const InterventionSpec& spec, Tensor& value) {
  const std::size_t h = value.dim(1), w = value.dim(2);
  const std::set<Location> where(spec.locations.begin(), spec.locations.end());
  for (std::size_t k = 0; k < spec.units.size(); ++k) {
    const std::size_t u = spec.units[k];
    for (const auto& [i, j] : where) {
      double& v = value[(u * h + i) * w + j];
      double target;
      if (spec.mode == InterventionMode::kAblate) {
        target = 0.0;
      } else if (spec.levels.empty()) {
        continue;
      } else {
        target = spec.levels[k];
      }
      v = spec.strength == 1.0 ? target : v + spec.strength * (target - v);
    }
  }
}

ForwardTrace apply(const Generator& gen, const Tensor& z, const InterventionSpec& spec) {
  return apply(gen, z, std::vector<InterventionSpec>{spec});
}

ForwardTrace apply(const Generator& gen, const Tensor& z, const std::vector<InterventionSpec>& stack) {
  for (const auto& s : stack) s.validate(gen);
  if (stack.empty()) return gen.forward(z);
  return gen.forward(z, [&stack](std::size_t l, Tensor& value) {
    for (const auto& s : stack)
      if (s.layer == l) apply_in_place(s, value);
  });
}

std::vector<Location> all_locations(const Generator& gen, std::size_t layer) {
  const LayerInfo& info = gen.layer(layer);
  std::vector<Location> out;
  for (std::size_t i = 0; i < info.height; ++i)
    for (std::size_t j = 0; j < info.width; ++j) out.emplace_back(i, j);
  return out;
}

std::string_view policy_name(LocationPolicy policy) { return policy == LocationPolicy::kPoint ? "point" : "everywhere"; }

std::string_view level_name(InsertLevel level) {
  switch (level) {
    case InsertLevel::kQuantile99: return "q99";
    case InsertLevel::kConceptMean: return "concept-mean";
    case InsertLevel::kCurrent: return "current";
  }
  return "";
}

LocationPolicy parse_policy(std::string_view name) {
  if (name == "point") return LocationPolicy::kPoint;
  if (name == "everywhere") return LocationPolicy::kEverywhere;
  throw std::invalid_argument("location policy must be 'point' or 'everywhere'");
}

InsertLevel parse_level(std::string_view name) {
  if (name == "q99") return InsertLevel::kQuantile99;
  if (name == "concept-mean") return InsertLevel::kConceptMean;
  if (name == "current") return InsertLevel::kCurrent;
  throw std::invalid_argument("insertion level must be 'q99', 'concept-mean' or 'current'");
}

std::vector<double> insertion_levels(const Generator& gen, std::size_t layer, InsertLevel level,
                                     const std::string& concept_name, std::size_t n_samples) {
  switch (level) {
    case InsertLevel::kCurrent:
      return {};
    case InsertLevel::kQuantile99:
      return unit_percentiles(gen, layer, std::max<std::size_t>(n_samples, 100)).q99;
    case InsertLevel::kConceptMean: {
      const LayerInfo& info = gen.layer(layer);
      const OracleSegmenter seg(gen.spec());
      std::vector<double> sum(info.channels, 0.0);
      double count = 0.0;
      for (std::size_t s = 0; s < n_samples; ++s) {
        const ForwardTrace trace = gen.forward(gen.z_for("concept-mean", s));
        const BinaryMask mask = seg.segment_with_parts(trace.image).mask(concept_name);
        count += static_cast<double>(mask.count());
        const Tensor up = upsample_nearest(trace.layer(layer), gen.image_size(), gen.image_size());
        const std::size_t plane = gen.image_size() * gen.image_size();
        for (std::size_t u = 0; u < info.channels; ++u)
          for (std::size_t p = 0; p < plane; ++p)
            if (mask[p]) sum[u] += up[u * plane + p];
      }
      if (count == 0.0) throw std::invalid_argument("concept '" + concept_name + "' never appears; no mean level");
      for (auto& v : sum) v /= count;
      return sum;
    }
  }
  return {};
}

double concept_coverage(const Generator& gen, const std::string& concept_name, std::size_t n_samples,
                        std::string_view stream) {
  if (n_samples == 0) throw std::invalid_argument("coverage needs at least one sample");
  const OracleSegmenter seg(gen.spec());
  std::vector<BinaryMask> masks;
  for (std::size_t s = 0; s < n_samples; ++s)
    masks.push_back(seg.segment_with_parts(gen.forward(gen.z_for(stream, s)).image).mask(concept_name));
  return class_coverage(masks);
}

namespace {

std::vector<Location> region(const LayerInfo& info, Location centre, std::size_t radius) {
  std::vector<Location> out;
  const std::size_t i0 = centre.first >= radius ? centre.first - radius : 0;
  const std::size_t j0 = centre.second >= radius ? centre.second - radius : 0;
  for (std::size_t i = i0; i <= std::min(info.height - 1, centre.first + radius); ++i)
    for (std::size_t j = j0; j <= std::min(info.width - 1, centre.second + radius); ++j) out.emplace_back(i, j);
  return out;
}

BinaryMask footprint_mask(const Generator& gen, std::size_t layer, const std::vector<Location>& cells) {
  const std::size_t n = gen.image_size();
  BinaryMask m(n, n);
  for (const auto& [i, j] : cells) {
    const auto f = gen.footprint(layer, i, j);
    for (std::size_t r = f.row0; r < f.row1; ++r)
      for (std::size_t c = f.col0; c < f.col1; ++c) m.set(r, c, true);
  }
  return m;
}

double fraction_inside(const BinaryMask& mask, const BinaryMask& where) {
  const double n = static_cast<double>(where.count());
  return n > 0.0 ? static_cast<double>((mask & where).count()) / n : 0.0;
}

struct Arms {
  double insert_sum = 0.0, ablate_sum = 0.0;
  std::size_t samples = 0;
};

// Evaluates both arms of one paired draw and accumulates footprint means.
void accumulate(const Generator& gen, const OracleSegmenter& seg, const Tensor& z, const std::vector<std::size_t>& units,
                const std::string& concept_name, const std::vector<Location>& cells, const std::vector<double>& levels,
                const AceOptions& o, Arms& arms) {
  InterventionSpec spec;
  spec.layer = o.layer;
  spec.units = units;
  spec.locations = cells;
  spec.mode = InterventionMode::kInsert;
  for (auto u : units)
    if (!levels.empty()) spec.levels.push_back(levels.at(u));
  const ForwardTrace inserted = apply(gen, z, spec);
  spec.mode = InterventionMode::kAblate;
  spec.levels.clear();
  const ForwardTrace ablated = o.ablate_arm ? apply(gen, z, spec) : gen.forward(z);
  const BinaryMask where = footprint_mask(gen, o.layer, cells);
  arms.insert_sum += fraction_inside(seg.segment_with_parts(inserted.image).mask(concept_name), where);
  arms.ablate_sum += fraction_inside(seg.segment_with_parts(ablated.image).mask(concept_name), where);
  ++arms.samples;
}

AceResult finish(const std::string& concept_name, const Arms& arms, double coverage, const AceOptions& o) {
  AceResult r;
  r.concept_name = concept_name;
  r.coverage = coverage;
  r.samples = arms.samples;
  r.policy = std::string(policy_name(o.policy));
  if (arms.samples == 0) {
    r.empty = true;
    return r;
  }
  r.insert_mean = arms.insert_sum / static_cast<double>(arms.samples);
  r.ablate_mean = arms.ablate_sum / static_cast<double>(arms.samples);
  r.raw = r.insert_mean - r.ablate_mean;
  if (coverage > 0.0) r.ace = r.raw / coverage;
  return r;
}

std::vector<double> resolve_levels(const Generator& gen, const std::string& concept_name, const AceOptions& o) {
  if (o.levels) return *o.levels;
  return insertion_levels(gen, o.layer, o.level, concept_name);
}

}  // namespace

AceResult ace(const Generator& gen, const std::vector<std::size_t>& units, const std::string& concept_name,
              const AceOptions& options) {
  if (options.n_samples == 0) throw std::invalid_argument("ace needs at least one sample");
  const LayerInfo& info = gen.layer(options.layer);
  const OracleSegmenter seg(gen.spec());
  const double coverage = concept_coverage(gen, concept_name, options.coverage_samples);
  const std::vector<double> levels = resolve_levels(gen, concept_name, options);
  const RngStream places = RngStream(gen.spec().seed, options.stream).split("locations");
  Arms arms;
  for (std::size_t s = 0; s < options.n_samples; ++s) {
    const Tensor z = gen.z_for(options.stream, s);
    std::vector<Location> cells;
    if (options.policy == LocationPolicy::kEverywhere) {
      cells = all_locations(gen, options.layer);
    } else {
      RngStream rng = places.split(s);
      const std::size_t i = rng.below(info.height);
      const std::size_t j = rng.below(info.width);
      cells = region(info, {i, j}, options.region_radius);
    }
    accumulate(gen, seg, z, units, concept_name, cells, levels, options, arms);
  }
  return finish(concept_name, arms, coverage, options);
}

AceResult conditional_ace(const Generator& gen, const std::vector<std::size_t>& units, const std::string& concept_name,
                          const std::string& context, const AceOptions& options) {
  if (options.n_samples == 0) throw std::invalid_argument("ace needs at least one sample");
  const LayerInfo& info = gen.layer(options.layer);
  const OracleSegmenter seg(gen.spec());
  const double coverage = concept_coverage(gen, concept_name, options.coverage_samples);
  const std::vector<double> levels = resolve_levels(gen, concept_name, options);
  const RngStream places = RngStream(gen.spec().seed, options.stream).split("context-locations");
  Arms arms;
  for (std::size_t s = 0; s < options.n_samples; ++s) {
    const Tensor z = gen.z_for(options.stream, s);
    const BinaryMask ctx = seg.segment_with_parts(gen.forward(z).image).mask(context);
    std::vector<std::vector<Location>> admissible;
    for (std::size_t i = 0; i < info.height; ++i) {
      for (std::size_t j = 0; j < info.width; ++j) {
        auto cells = options.policy == LocationPolicy::kEverywhere ? all_locations(gen, options.layer)
                                                                   : region(info, {i, j}, options.region_radius);
        if (footprint_mask(gen, options.layer, cells).is_subset_of(ctx)) admissible.push_back(std::move(cells));
        if (options.policy == LocationPolicy::kEverywhere) break;
      }
      if (options.policy == LocationPolicy::kEverywhere) break;
    }
    if (admissible.empty()) continue;
    RngStream rng = places.split(s);
    accumulate(gen, seg, z, units, concept_name, admissible[rng.below(admissible.size())], levels, options, arms);
  }
  AceResult r = finish(concept_name, arms, coverage, options);
  r.context = context;
  return r;
}

std::vector<std::vector<double>> reference_magnitudes(const Generator& gen, std::size_t n_samples,
                                                      std::string_view stream) {
  if (n_samples == 0) throw std::invalid_argument("reference magnitudes need at least one sample");
  std::vector<std::vector<double>> mags(kNumLayers);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const ForwardTrace trace = gen.forward(gen.z_for(stream, s));
    for (std::size_t l = 1; l <= kNumLayers; ++l) {
      const Tensor& r = trace.layer(l);
      const std::size_t c = r.dim(0), plane = r.dim(1) * r.dim(2);
      mags[l - 1].resize(c, 0.0);
      for (std::size_t k = 0; k < c; ++k) {
        double sum = 0.0;
        for (std::size_t p = 0; p < plane; ++p) sum += std::abs(r[k * plane + p]);
        mags[l - 1][k] += sum / static_cast<double>(plane * n_samples);
      }
    }
  }
  return mags;
}

LayerTrace layer_trace(const Generator& gen, const Tensor& z, const InterventionSpec& spec,
                       const std::vector<std::vector<double>>& magnitudes) {
  if (magnitudes.size() != kNumLayers) throw std::invalid_argument("reference magnitudes must cover every layer");
  const ForwardTrace base = gen.forward(z);
  const ForwardTrace edited = apply(gen, z, spec);
  LayerTrace out;
  for (std::size_t l = spec.layer; l <= kNumLayers; ++l) {
    const Tensor& a = base.layer(l);
    const Tensor& b = edited.layer(l);
    const std::size_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
    if (magnitudes[l - 1].size() != c) throw std::invalid_argument("reference magnitudes do not match the layer width");
    std::vector<std::size_t> excluded;
    Tensor change({h, w});
    std::size_t included = 0;
    for (std::size_t k = 0; k < c; ++k) {
      const double m = magnitudes[l - 1][k];
      if (!(m > 0.0)) {
        excluded.push_back(k);
        continue;
      }
      ++included;
      for (std::size_t p = 0; p < h * w; ++p) change[p] += std::abs(b[k * h * w + p] - a[k * h * w + p]) / m;
    }
    double total = 0.0;
    for (std::size_t p = 0; p < h * w; ++p) {
      if (included > 0) change[p] /= static_cast<double>(included);
      total += change[p];
    }
    out.layers.push_back(l);
    out.mean_change.push_back(total / static_cast<double>(h * w));
    out.excluded.push_back(std::move(excluded));
    if (l == kNumLayers) out.final_change = std::move(change);
  }
  return out;
}

}  // namespace gandissect
