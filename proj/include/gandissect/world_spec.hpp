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

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace gandissect {

inline constexpr int kWorldSchemaVersion = 1;

// edge(z) = base + sum(coef * z[index]), in featuremap-grid units (y grows down).
struct LatentAffine {
  double base = 0.0;
  std::vector<std::pair<std::size_t, double>> terms;

  double eval(const std::vector<double>& z) const;
};

// Axis-aligned soft box. A missing side is unbounded.
struct BoxRule {
  std::optional<LatentAffine> top, bottom, left, right;
};

// Units that together draw one field of a concept. `part` is empty for the
// whole object, or one of t/b/l/r when the group draws that half only.
struct UnitGroup {
  std::string part;
  BoxRule box;
  std::vector<std::size_t> units;
  // Each unit contributes render_gain / |units| of the field; a gain equal to
  // |units| makes every unit individually sufficient (redundant wiring).
  double render_gain = 1.0;
};

struct ConceptSpec {
  std::string name;
  std::array<double, 3> palette{};
  double tau = 0.5;
  bool scene_defining = false;
  std::vector<UnitGroup> groups;
};

// Reads the same latents as a concept group but has no rendering pathway.
struct DistractorSpec {
  std::size_t unit = 0;
  std::string concept_name;
  std::size_t group = 0;
};

// Sparse scattered field: relu(sum_k z[latents_k] * phi_k(p) - bias), where
// phi_k are seeded white-noise spatial patterns.
struct ScatterUnitSpec {
  std::size_t unit = 0;
  std::vector<std::size_t> latents;
  double bias = 1.5;
};

struct VetoRule {
  std::string concept_name;
  std::string context;
  std::size_t layer = 8;
  double lo = 0.25;  // context intensity where suppression starts
  double hi = 0.5;   // context intensity where suppression is total
};

struct RenderSpec {
  double blur_center = 0.7;      // 1-D kernel [(1-c)/2, c, (1-c)/2]
  double sharpen_gain = 2.0;
  double sharpen_offset = -0.5;
  double occlusion_band = 0.1;   // soft occlusion over tau +- band
  double artifact_strength = 0.6;
  std::array<double, 3> background{0.1, 0.1, 0.1};
};

struct WorldSpec {
  int schema_version = kWorldSchemaVersion;
  std::string name = "world";
  std::uint64_t seed = 1;
  std::size_t latent_dim = 32;
  std::size_t image_size = 32;
  std::size_t units = 64;         // width of the causal layer
  std::size_t causal_layer = 4;
  double ramp_steepness = 1.0;
  double unit_gain_spread = 0.2;  // per-unit gains drawn from 1 +- spread
  std::vector<std::string> depth_order;  // front to back
  std::vector<ConceptSpec> concepts;
  std::vector<DistractorSpec> distractors;
  std::vector<ScatterUnitSpec> noise_units;
  std::vector<ScatterUnitSpec> artifact_units;
  std::vector<VetoRule> vetoes;
  RenderSpec render;

  std::size_t grid_size() const { return image_size / 4; }
  std::size_t concept_index(const std::string& name) const;  // throws if unknown
  const ConceptSpec& concept_named(const std::string& name) const { return concepts[concept_index(name)]; }

  // All units that have a rendering pathway for `concept`.
  std::vector<std::size_t> causal_units(const std::string& concept_name) const;
  std::vector<std::size_t> distractor_units(const std::string& concept_name) const;
  std::vector<std::size_t> artifact_unit_ids() const;
  std::vector<std::size_t> noise_unit_ids() const;
  // Concepts wired through exactly one group with no part split.
  bool singly_wired(const std::string& concept_name) const;

  // Throws std::invalid_argument describing the first violated invariant.
  void validate() const;
};

// Planted-truth layout for the default 64-unit world; `seed` permutes unit
// indices and per-unit gains.
WorldSpec make_default_world(std::uint64_t seed = 1);

// Same world with every artifact unit removed from the wiring.
WorldSpec without_artifacts(const WorldSpec& spec);

}  // namespace gandissect
