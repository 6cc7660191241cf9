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

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gandissect/generator.hpp"
#include "gandissect/segmenter.hpp"

namespace gandissect {

enum class InterventionMode { kAblate, kInsert };

using Location = std::pair<std::size_t, std::size_t>;  // (row, col) in the featuremap

struct InterventionSpec {
  std::size_t layer = 4;
  std::vector<std::size_t> units;
  std::vector<Location> locations;
  InterventionMode mode = InterventionMode::kAblate;
  // Insertion constant per entry of `units`; ignored when ablating.
  std::vector<double> levels;
  // r <- r + strength * (target - r); 1 forces the target value.
  double strength = 1.0;

  // Throws std::invalid_argument on an empty unit or location set, a unit or
  // location outside the layer, a level count mismatch, or strength outside [0,1].
  void validate(const Generator& gen) const;
};

std::string_view mode_name(InterventionMode mode);
InterventionMode parse_mode(std::string_view name);

// Edits `value` (the featuremap of spec.layer) in place.
void apply_in_place(const InterventionSpec& spec, Tensor& value);

ForwardTrace apply(const Generator& gen, const Tensor& z, const InterventionSpec& spec);
// Applies a stack of interventions in order; later entries see earlier edits.
ForwardTrace apply(const Generator& gen, const Tensor& z, const std::vector<InterventionSpec>& stack);

std::vector<Location> all_locations(const Generator& gen, std::size_t layer);

enum class LocationPolicy { kPoint, kEverywhere };
enum class InsertLevel { kQuantile99, kConceptMean, kCurrent };

std::string_view policy_name(LocationPolicy policy);
std::string_view level_name(InsertLevel level);
LocationPolicy parse_policy(std::string_view name);
InsertLevel parse_level(std::string_view name);

// Per-unit insertion constants for the layer. kCurrent yields an empty vector
// (insertion keeps the current value). kConceptMean needs `concept_name`.
std::vector<double> insertion_levels(const Generator& gen, std::size_t layer, InsertLevel level,
                                     const std::string& concept_name = {}, std::size_t n_samples = 200);

struct AceOptions {
  std::size_t layer = 4;
  std::size_t n_samples = 500;
  std::string stream = "ace";
  LocationPolicy policy = LocationPolicy::kPoint;
  std::size_t region_radius = 0;  // point policy: square of cells around the sampled centre
  InsertLevel level = InsertLevel::kQuantile99;
  std::optional<std::vector<double>> levels;  // one per layer unit; overrides `level`
  bool ablate_arm = true;                     // false: the ablate arm renders the unedited image
  std::size_t coverage_samples = 200;
};

struct AceResult {
  std::string concept_name;
  std::string context;       // empty for unconditional ACE
  double insert_mean = 0.0;  // E[s_c(x_i)] over the footprint of P
  double ablate_mean = 0.0;  // E[s_c(x_a)] over the footprint of P
  double coverage = 0.0;     // E[s_c(x)] on unedited images
  double raw = 0.0;          // insert_mean - ablate_mean
  std::optional<double> ace; // raw / coverage; empty when coverage is 0
  std::size_t samples = 0;
  std::string policy;
  bool empty = false;        // no admissible location was found
};

// Class coverage of a concept over the named stream's first n samples.
double concept_coverage(const Generator& gen, const std::string& concept_name, std::size_t n_samples,
                        std::string_view stream = "coverage");

AceResult ace(const Generator& gen, const std::vector<std::size_t>& units, const std::string& concept_name,
              const AceOptions& options = {});

// ACE restricted to locations whose pixel footprint lies inside the context
// concept's mask in the unedited image.
AceResult conditional_ace(const Generator& gen, const std::vector<std::size_t>& units, const std::string& concept_name,
                          const std::string& context, const AceOptions& options = {});

struct LayerTrace {
  std::vector<std::size_t> layers;        // edited layer .. final layer
  std::vector<double> mean_change;        // normalized mean |delta| per layer
  std::vector<std::vector<std::size_t>> excluded;  // channels with zero reference magnitude
  Tensor final_change;                    // H x W normalized change at the final layer
};

// Per-channel mean L1 magnitudes for every layer over a reference sample.
std::vector<std::vector<double>> reference_magnitudes(const Generator& gen, std::size_t n_samples = 50,
                                                      std::string_view stream = "reference");

LayerTrace layer_trace(const Generator& gen, const Tensor& z, const InterventionSpec& spec,
                       const std::vector<std::vector<double>>& magnitudes);

}  // namespace gandissect
