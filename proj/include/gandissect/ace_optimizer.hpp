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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gandissect/generator.hpp"
#include "gandissect/intervention.hpp"

namespace gandissect {

inline constexpr double kDefaultLambdaRatio = 0.5;

struct AlphaHyper {
  std::size_t layer = 4;
  double lambda = 0.0;  // weight of ||alpha||_2 in the loss
  double learning_rate = 0.05;
  std::size_t steps = 1000;
  std::size_t batch = 16;
  double init = 0.5;
  std::uint64_t seed = 1;
  std::size_t coverage_samples = 200;
  std::optional<std::vector<double>> levels;  // insertion constants; default per-unit 99% quantile
};

// One (z, P) draw, reduced to the featuremap at the intervened layer.
struct AlphaSample {
  Tensor r;
  Location location;
};

struct AlphaSolution {
  std::string concept_name;
  std::vector<double> alpha;
  std::vector<std::size_t> ranking;  // descending alpha, ties by unit index
  std::vector<double> objective;     // minibatch surrogate effect per step
  std::vector<double> loss;          // -objective + lambda * ||alpha|| per step
  double coverage = 0.0;
  AlphaHyper hyper;
};

struct AlphaObjective {
  double effect = 0.0;             // mean normalized surrogate effect over the batch
  std::vector<double> gradient;    // d effect / d alpha
};

// Minibatch draw `index` of the optimizer's sampling stream.
std::vector<AlphaSample> alpha_batch(const Generator& gen, const AlphaHyper& hyper, std::uint64_t index);

// Surrogate effect: footprint mean of the concept's visible intensity under
// the alpha-insertion minus under the alpha-ablation, divided by coverage.
AlphaObjective alpha_objective(const Generator& gen, std::size_t concept_index, const std::vector<double>& alpha,
                               const std::vector<AlphaSample>& batch, const std::vector<double>& levels,
                               double coverage, std::size_t layer = 4);

// Projected SGD on -effect + lambda * ||alpha||_2 with alpha clamped to [0,1].
// Throws std::invalid_argument for zero coverage and std::runtime_error when
// the objective stops being finite.
AlphaSolution optimize_alpha(const Generator& gen, const std::string& concept_name, const AlphaHyper& hyper);

// lambda = ratio * ||d effect / d alpha|| at alpha = 1/2, averaged over
// `batches` probe minibatches; the penalty gradient has unit norm there.
double probe_lambda(const Generator& gen, const std::string& concept_name, const AlphaHyper& hyper,
                    double ratio = kDefaultLambdaRatio, std::size_t batches = 8);

std::vector<std::size_t> rank_units(const std::vector<double>& alpha);

struct AblationCurve {
  std::string concept_name;
  std::vector<std::size_t> k;
  std::vector<double> remaining;  // pooled concept area after ablation / before
};

struct CurveOptions {
  std::size_t layer = 4;
  std::size_t n_samples = 100;
  std::string stream = "ablation";
};

// Ablates the first k units of `ranking` at every location.
AblationCurve topk_ablation_curve(const Generator& gen, const std::vector<std::size_t>& ranking,
                                  const std::string& concept_name, const std::vector<std::size_t>& k_grid,
                                  const CurveOptions& options = {});

// A seeded uniform permutation of the layer's units.
std::vector<std::size_t> random_ranking(std::size_t units, std::uint64_t seed, std::uint64_t index);

inline constexpr std::size_t kRemovalUnits = 20;

struct RemovalScore {
  std::string concept_name;
  std::size_t k = 0;
  double removed = 0.0;  // 1 - remaining fraction
  bool scene_defining = false;
};

std::vector<RemovalScore> removal_difficulty(const Generator& gen,
                                             const std::map<std::string, std::vector<std::size_t>>& rankings,
                                             std::size_t k = kRemovalUnits, const CurveOptions& options = {});

}  // namespace gandissect
