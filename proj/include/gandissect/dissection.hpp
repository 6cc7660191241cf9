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
#include "gandissect/segmenter.hpp"
#include "gandissect/tensor.hpp"

namespace gandissect {

// Pooled 2x2 table of A = (unit above threshold) against B = (concept mask).
struct Contingency {
  double n11 = 0, n10 = 0, n01 = 0, n00 = 0;  // n{A}{B}
  double total() const { return n11 + n10 + n01 + n00; }
};

// Entropies in nats with 0 log 0 = 0.
double joint_entropy(const Contingency& t);
double mutual_information(const Contingency& t);
// I(A;B) / H(A,B); 0 when H(A,B) = 0.
double information_quality_ratio(const Contingency& t);

// Thresholds at the 1%, 2%, ..., 99% quantiles of the pooled activations.
std::vector<double> quantile_grid(std::vector<double> activations);

struct ThresholdChoice {
  double threshold = 0.0;
  double iqr = 0.0;
  bool degenerate = false;  // H(A,B) = 0 for every candidate
};

// Pixel-level inputs for a single (unit, concept) pair: featuremaps are
// upsampled to the mask resolution before thresholding.
struct PairSample {
  std::vector<Tensor> activations;  // h x w per sample
  std::vector<BinaryMask> masks;    // H x W per sample
};

ThresholdChoice iqr_threshold(const PairSample& validation, UpsampleMode mode = UpsampleMode::kNearest);
// Same criterion over an explicit candidate list.
ThresholdChoice iqr_threshold(const PairSample& validation, const std::vector<double>& candidates,
                              UpsampleMode mode = UpsampleMode::kNearest);
Contingency contingency(const PairSample& sample, double threshold, UpsampleMode mode = UpsampleMode::kNearest);
// E|A and B| / E|A or B| over pooled counts; 0 when the union is empty.
double iou(const PairSample& evaluation, double threshold, UpsampleMode mode = UpsampleMode::kNearest);
double iou(const std::vector<BinaryMask>& a, const std::vector<BinaryMask>& b);

struct DissectionOptions {
  std::size_t n_validation = 200;  // seeds [0, n_validation) of the stream
  std::size_t n_eval = 200;        // seeds [n_validation, n_validation + n_eval)
  std::string stream = "dissect";
  double iou_floor = 0.05;
  bool parts = true;
  UpsampleMode upsample = UpsampleMode::kNearest;
};

struct UnitLabel {
  std::size_t layer = 0;
  std::size_t unit = 0;
  std::string label;  // best concept; empty when every IoU is 0
  double iou = 0.0;
  double threshold = 0.0;
  bool degenerate = false;
  std::vector<double> iou_row;         // per dictionary entry
  std::vector<double> threshold_row;   // per dictionary entry
  std::vector<double> iqr_row;         // validation IQR at the chosen threshold
};

struct DissectionReport {
  std::string world;
  std::uint64_t world_seed = 0;
  std::size_t layer = 0;
  std::vector<std::string> dictionary;
  std::vector<UnitLabel> units;
  DissectionOptions options;

  // Units whose best IoU reaches the floor, by label.
  std::map<std::string, std::size_t> matched_counts() const;
  std::size_t matched_units() const;
};

DissectionReport dissect_layer(const Generator& gen, std::size_t layer, const DissectionOptions& options = {});

struct ConceptDelta {
  std::string label;
  std::size_t count_a = 0, count_b = 0;
  long delta = 0;
};

struct ReportDiff {
  std::vector<ConceptDelta> concepts;  // dictionary order
  std::size_t distinct_a = 0, distinct_b = 0;
  std::size_t matched_a = 0, matched_b = 0;
  // Relative change in matched units; empty when report a has none.
  std::optional<double> percent_change;
};

// Throws std::invalid_argument when the dictionaries differ.
ReportDiff compare_reports(const DissectionReport& a, const DissectionReport& b);

}  // namespace gandissect
