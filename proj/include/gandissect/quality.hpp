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

#include <string>
#include <vector>

#include "gandissect/generator.hpp"
#include "gandissect/segmenter.hpp"
#include "gandissect/tensor.hpp"

namespace gandissect {

inline constexpr int kQualityStatsVersion = 1;

// Per-image statistic vector, version 1: mean R, G, B; coverage fraction of
// each base concept in WorldSpec order; mean absolute Laplacian over all
// pixels and channels (edge-replicated 4-neighbour stencil).
std::vector<double> image_statistics(const Tensor& image, const OracleSegmenter& segmenter);
std::vector<std::string> statistic_names(const WorldSpec& spec);

// Per-pixel mean absolute Laplacian over the three channels (H x W).
Tensor laplacian_energy(const Tensor& image);

struct QualityStats {
  std::vector<double> mean;
  std::vector<double> covariance;  // m x m, row-major, unbiased
  std::size_t dimension = 0;
  std::size_t samples = 0;
};

// Gaussian fit over rows of statistics; needs at least dimension + 1 rows.
QualityStats fit_statistics(const std::vector<std::vector<double>>& rows);

struct FrechetResult {
  double distance = 0.0;
  std::size_t clamped_eigenvalues = 0;  // negative eigenvalues set to 0
};

FrechetResult frechet(const QualityStats& a, const QualityStats& b);
double frechet_distance(const QualityStats& a, const QualityStats& b);

struct FlagOptions {
  std::size_t layer = 4;
  std::size_t n_images = 200;
  std::size_t top_images = 10;
  std::string stream = "flag";
};

struct UnitEvidence {
  std::size_t unit = 0;
  std::vector<std::size_t> top_images;  // sample indices, strongest first
  double energy = 0.0;                  // mean Laplacian energy in the active region
  bool active = false;                  // false when the unit never fires
};

struct ArtifactFlagSet {
  std::size_t layer = 0;
  std::vector<std::size_t> flagged;     // highest energy first
  std::vector<UnitEvidence> evidence;   // every unit, in unit order
};

ArtifactFlagSet flag_artifact_units(const Generator& gen, std::size_t n_flag, const FlagOptions& options = {});

struct RepairOptions {
  std::size_t layer = 4;
  std::size_t n_images = 300;
  std::size_t random_draws = 10;
  std::string stream = "repair";
  std::string clean_stream = "repair-clean";
  std::uint64_t random_seed = 1;
};

struct RepairReport {
  std::vector<std::size_t> flagged;
  double frechet_original = 0.0;   // original vs clean reference
  double frechet_repaired = 0.0;   // flagged units ablated vs clean reference
  std::vector<double> frechet_random;  // one per random draw of |flagged| units
  double frechet_random_mean = 0.0;
  // Mean |delta pixel| of the repaired images outside the receptive fields of
  // cells where a flagged unit is active.
  double preserved_delta = 0.0;
  // Mean |delta pixel| of the repaired images over all pixels.
  double total_delta = 0.0;
  std::size_t samples = 0;
};

// Clean reference renders come from the same world with artifact units
// removed, on a disjoint seed stream.
RepairReport repair(const Generator& gen, const std::vector<std::size_t>& flagged, const RepairOptions& options = {});

}  // namespace gandissect
