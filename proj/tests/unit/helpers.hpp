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

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <map>
#include <string>
#include <vector>

#include "gandissect/ace_optimizer.hpp"
#include "gandissect/generator.hpp"
#include "gandissect/intervention.hpp"
#include "gandissect/rng.hpp"
#include "gandissect/world_spec.hpp"

namespace testing {

using namespace gandissect;

inline const Generator& default_generator() {
  static const Generator gen(make_default_world(1));
  return gen;
}

// Every unit except `keep` zeroed at every location of the causal layer.
inline InterventionSpec ablate_all_but(const Generator& gen, const std::vector<std::size_t>& keep) {
  InterventionSpec spec;
  spec.layer = gen.spec().causal_layer;
  for (std::size_t u = 0; u < gen.spec().units; ++u)
    if (std::find(keep.begin(), keep.end(), u) == keep.end()) spec.units.push_back(u);
  spec.locations = all_locations(gen, spec.layer);
  spec.mode = InterventionMode::kAblate;
  return spec;
}

// A and B share a dictionary that includes "lamp". In A the lamp has no units;
// in B three former noise units draw it.
inline std::pair<WorldSpec, WorldSpec> lamp_worlds() {
  WorldSpec a = make_default_world(1);
  ConceptSpec lamp;
  lamp.name = "lamp";
  lamp.palette = {0.704, 0.5, 0.296};
  a.concepts.push_back(lamp);
  a.depth_order.insert(a.depth_order.end() - 1, "lamp");
  a.name = "lampless";
  WorldSpec b = a;
  b.name = "lamp";
  std::vector<std::size_t> units;
  for (std::size_t i = 0; i < 3; ++i) units.push_back(b.noise_units[i].unit);
  b.noise_units.erase(b.noise_units.begin(), b.noise_units.begin() + 3);
  UnitGroup g;
  g.box.top = LatentAffine{0.0, {{10, 0.4}}};
  g.box.bottom = LatentAffine{2.5, {{10, 0.4}}};
  g.box.left = LatentAffine{5.0, {{11, 0.8}}};
  g.box.right = LatentAffine{7.0, {{11, 0.8}}};
  g.units = units;
  g.render_gain = 1.5;
  b.concepts.back().groups.push_back(g);
  a.validate();
  b.validate();
  return {a, b};
}

// Label each planted causal or distractor unit should receive from dissection.
inline std::map<std::size_t, std::string> planted_labels(const WorldSpec& spec) {
  std::map<std::size_t, std::string> out;
  auto label = [](const ConceptSpec& c, const UnitGroup& g) { return g.part.empty() ? c.name : c.name + "-" + g.part; };
  for (const auto& c : spec.concepts)
    for (const auto& g : c.groups)
      for (auto u : g.units) out[u] = label(c, g);
  for (const auto& d : spec.distractors) {
    const auto& c = spec.concept_named(d.concept_name);
    out[d.unit] = label(c, c.groups.at(d.group));
  }
  return out;
}

// Surrogate effect recomputed on the full frame by editing layer 4 of an
// ordinary forward pass and reading the final layer.
inline double full_frame_effect(const Generator& gen, std::size_t concept_index, const std::vector<double>& alpha,
                         const std::vector<AlphaSample>& batch, const std::vector<double>& levels, double coverage) {
  const Tensor z(Shape{gen.spec().latent_dim});
  double total = 0.0;
  for (const auto& s : batch) {
    auto arm = [&](bool insert) {
      const ForwardTrace t = gen.forward(z, [&](std::size_t l, Tensor& value) {
        if (l != 4) return;
        value = s.r;
        const auto [i, j] = s.location;
        for (std::size_t u = 0; u < alpha.size(); ++u) {
          double& v = value.at(u, i, j);
          const double target = insert ? levels[u] : 0.0;
          v = v + alpha[u] * (target - v);
        }
      });
      const auto f = gen.footprint(4, s.location.first, s.location.second);
      double sum = 0.0;
      for (std::size_t r = f.row0; r < f.row1; ++r)
        for (std::size_t c = f.col0; c < f.col1; ++c) sum += t.layer(kNumLayers).at(concept_index, r, c);
      return sum / static_cast<double>((f.row1 - f.row0) * (f.col1 - f.col0));
    };
    total += arm(true) - arm(false);
  }
  return total / (static_cast<double>(batch.size()) * coverage);
}

struct GradientCheck {
  double max_relative_error = 0.0;
  double effect_error = 0.0;  // cropped surrogate vs full-frame effect
  std::size_t units_checked = 0;
};

// Central differences of the full-frame effect at a random alpha, on the first
// minibatch whose footprints see the concept, for up to six causal units and
// enough others to make ten.
inline GradientCheck alpha_gradient_check(const Generator& gen, const std::string& name, std::uint64_t seed) {
  AlphaHyper h;
  h.batch = 3;
  h.seed = seed;
  const auto levels = insertion_levels(gen, h.layer, InsertLevel::kQuantile99);
  const std::size_t k = gen.spec().concept_index(name);
  RngStream rng(seed, name);
  std::vector<double> alpha(gen.layer(h.layer).channels);
  for (auto& a : alpha) a = 0.2 + 0.6 * rng.uniform();
  const double coverage = 0.1;
  std::vector<AlphaSample> batch;
  AlphaObjective obj;
  double norm = 0.0;
  for (std::uint64_t index = 0; norm == 0.0; ++index) {
    if (index == 50) throw std::runtime_error("no minibatch reaches " + name);
    batch = alpha_batch(gen, h, index);
    obj = alpha_objective(gen, k, alpha, batch, levels, coverage);
    norm = 0.0;
    for (double g : obj.gradient) norm += g * g;
    norm = std::sqrt(norm);
  }
  GradientCheck out;
  out.effect_error = std::abs(obj.effect - full_frame_effect(gen, k, alpha, batch, levels, coverage));
  std::vector<std::size_t> probe = gen.spec().causal_units(name);
  probe.resize(std::min<std::size_t>(probe.size(), 6));
  for (std::size_t u = 0; probe.size() < 10; u += 7)
    if (std::find(probe.begin(), probe.end(), u) == probe.end()) probe.push_back(u);
  for (auto u : probe) {
    const double eps = 1e-6;
    auto plus = alpha, minus = alpha;
    plus[u] += eps;
    minus[u] -= eps;
    const double fd = (full_frame_effect(gen, k, plus, batch, levels, coverage) -
                       full_frame_effect(gen, k, minus, batch, levels, coverage)) /
                      (2 * eps);
    const double rel = std::abs(fd - obj.gradient[u]) / std::max({std::abs(fd), std::abs(obj.gradient[u]), 1e-3 * norm});
    out.max_relative_error = std::max(out.max_relative_error, rel);
    ++out.units_checked;
  }
  return out;
}

}  // namespace testing
