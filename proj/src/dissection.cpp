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

#include "gandissect/dissection.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gandissect {

namespace {

double plogp(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

// Number of thresholds strictly below v; A_k = (v > t_k) holds iff k < bin.
std::size_t bin_of(const std::vector<double>& thresholds, double v) {
  return static_cast<std::size_t>(std::lower_bound(thresholds.begin(), thresholds.end(), v) - thresholds.begin());
}

// Per-bin pixel totals and concept hits for one (unit, concept) pair.
struct Bins {
  std::vector<double> total, hit;
  explicit Bins(std::size_t n) : total(n + 1, 0.0), hit(n + 1, 0.0) {}

  // Tables for every candidate k, from suffix sums over bins above k.
  std::vector<Contingency> tables() const {
    const std::size_t n = total.size() - 1;
    double all = 0.0, all_hit = 0.0;
    for (std::size_t b = 0; b <= n; ++b) {
      all += total[b];
      all_hit += hit[b];
    }
    std::vector<Contingency> out(n);
    double above = 0.0, above_hit = 0.0;
    for (std::size_t k = n; k-- > 0;) {
      above += total[k + 1];
      above_hit += hit[k + 1];
      out[k] = {above_hit, above - above_hit, all_hit - above_hit, all - above - (all_hit - above_hit)};
    }
    return out;
  }
};

ThresholdChoice choose(const std::vector<double>& thresholds, const std::vector<Contingency>& tables) {
  ThresholdChoice best;
  bool any = false;
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    if (joint_entropy(tables[k]) <= 0.0) continue;
    const double q = information_quality_ratio(tables[k]);
    if (!any || q > best.iqr) {
      best = {thresholds[k], q, false};
      any = true;
    }
  }
  if (!any) best = {thresholds.back(), 0.0, true};
  return best;
}

double iou_of(const Contingency& t) {
  const double uni = t.n11 + t.n10 + t.n01;
  return uni > 0.0 ? t.n11 / uni : 0.0;
}

std::vector<double> pooled_values(const std::vector<Tensor>& maps) {
  std::vector<double> all;
  for (const auto& m : maps) all.insert(all.end(), m.data().begin(), m.data().end());
  return all;
}

void check_pair(const PairSample& s) {
  if (s.activations.empty()) throw std::invalid_argument("empty sample set");
  if (s.activations.size() != s.masks.size()) throw std::invalid_argument("activation and mask counts differ");
}

Bins bin_pair(const PairSample& s, const std::vector<double>& thresholds, UpsampleMode mode) {
  Bins bins(thresholds.size());
  for (std::size_t i = 0; i < s.activations.size(); ++i) {
    const BinaryMask& m = s.masks[i];
    const Tensor up = upsample(s.activations[i], m.height(), m.width(), mode);
    for (std::size_t p = 0; p < up.size(); ++p) {
      const std::size_t b = bin_of(thresholds, up[p]);
      bins.total[b] += 1.0;
      if (m[p]) bins.hit[b] += 1.0;
    }
  }
  return bins;
}

}  // namespace

double joint_entropy(const Contingency& t) {
  const double n = t.total();
  if (n <= 0.0) return 0.0;
  return -(plogp(t.n11 / n) + plogp(t.n10 / n) + plogp(t.n01 / n) + plogp(t.n00 / n));
}

double mutual_information(const Contingency& t) {
  const double n = t.total();
  if (n <= 0.0) return 0.0;
  const double a = (t.n11 + t.n10) / n, b = (t.n11 + t.n01) / n;
  const double ha = -(plogp(a) + plogp(1.0 - a));
  const double hb = -(plogp(b) + plogp(1.0 - b));
  return std::max(0.0, ha + hb - joint_entropy(t));
}

double information_quality_ratio(const Contingency& t) {
  const double h = joint_entropy(t);
  return h > 0.0 ? mutual_information(t) / h : 0.0;
}

std::vector<double> quantile_grid(std::vector<double> activations) {
  if (activations.empty()) throw std::invalid_argument("quantile grid of an empty sample");
  std::sort(activations.begin(), activations.end());
  std::vector<double> grid;
  for (int k = 1; k <= 99; ++k) grid.push_back(sorted_quantile(activations, k / 100.0));
  return grid;
}

ThresholdChoice iqr_threshold(const PairSample& validation, UpsampleMode mode) {
  check_pair(validation);
  return iqr_threshold(validation, quantile_grid(pooled_values(validation.activations)), mode);
}

ThresholdChoice iqr_threshold(const PairSample& validation, const std::vector<double>& candidates, UpsampleMode mode) {
  check_pair(validation);
  if (candidates.empty()) throw std::invalid_argument("no threshold candidates");
  std::vector<double> sorted = candidates;
  std::sort(sorted.begin(), sorted.end());
  return choose(sorted, bin_pair(validation, sorted, mode).tables());
}

Contingency contingency(const PairSample& sample, double threshold, UpsampleMode mode) {
  check_pair(sample);
  Contingency t;
  for (std::size_t i = 0; i < sample.activations.size(); ++i) {
    const BinaryMask& m = sample.masks[i];
    const Tensor up = upsample(sample.activations[i], m.height(), m.width(), mode);
    for (std::size_t p = 0; p < up.size(); ++p) {
      const bool a = up[p] > threshold;
      (a ? (m[p] ? t.n11 : t.n10) : (m[p] ? t.n01 : t.n00)) += 1.0;
    }
  }
  return t;
}

double iou(const PairSample& evaluation, double threshold, UpsampleMode mode) {
  return iou_of(contingency(evaluation, threshold, mode));
}

double iou(const std::vector<BinaryMask>& a, const std::vector<BinaryMask>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("iou: mask counts differ");
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].height() != b[i].height() || a[i].width() != b[i].width()) throw std::invalid_argument("iou: mask shapes differ");
    inter += static_cast<double>((a[i] & b[i]).count());
    uni += static_cast<double>((a[i] | b[i]).count());
  }
  return uni > 0.0 ? inter / uni : 0.0;
}

std::map<std::string, std::size_t> DissectionReport::matched_counts() const {
  std::map<std::string, std::size_t> out;
  for (const auto& u : units)
    if (!u.label.empty() && u.iou >= options.iou_floor) ++out[u.label];
  return out;
}

std::size_t DissectionReport::matched_units() const {
  std::size_t n = 0;
  for (const auto& [label, count] : matched_counts()) n += count;
  return n;
}

namespace {

struct LayerSample {
  std::vector<Tensor> maps;                 // per sample, C x h x w
  std::vector<std::vector<BinaryMask>> masks;  // per sample, per dictionary entry
};

LayerSample collect(const Generator& gen, const OracleSegmenter& seg, std::size_t layer, const DissectionOptions& o,
                    std::size_t begin, std::size_t end) {
  LayerSample s;
  for (std::size_t i = begin; i < end; ++i) {
    const ForwardTrace trace = gen.forward(gen.z_for(o.stream, i));
    const SegmentationSet set = o.parts ? seg.segment_with_parts(trace.image) : seg.segment(trace.image);
    s.maps.push_back(trace.layer(layer));
    s.masks.push_back(set.masks);
  }
  return s;
}

// hist[c][b] for one unit: concept hits per bin, with totals in the last row.
std::vector<Bins> bin_unit(const LayerSample& s, std::size_t unit, const std::vector<double>& thresholds,
                           std::size_t n_labels, std::size_t size, UpsampleMode mode) {
  std::vector<Bins> per_label(n_labels, Bins(thresholds.size()));
  std::vector<double> total(thresholds.size() + 1, 0.0);
  std::vector<std::size_t> bins(size * size);
  for (std::size_t i = 0; i < s.maps.size(); ++i) {
    const Tensor up = upsample(s.maps[i].channel(unit), size, size, mode);
    for (std::size_t p = 0; p < up.size(); ++p) {
      bins[p] = bin_of(thresholds, up[p]);
      total[bins[p]] += 1.0;
    }
    for (std::size_t c = 0; c < n_labels; ++c) {
      const BinaryMask& m = s.masks[i][c];
      auto& hit = per_label[c].hit;
      for (std::size_t p = 0; p < bins.size(); ++p)
        if (m[p]) hit[bins[p]] += 1.0;
    }
  }
  for (auto& b : per_label) b.total = total;
  return per_label;
}

}  // namespace

DissectionReport dissect_layer(const Generator& gen, std::size_t layer, const DissectionOptions& options) {
  if (options.n_validation == 0 || options.n_eval == 0) throw std::invalid_argument("empty validation or evaluation set");
  const LayerInfo& info = gen.layer(layer);
  const OracleSegmenter seg(gen.spec());
  const std::size_t size = gen.image_size();

  DissectionReport report;
  report.world = gen.spec().name;
  report.world_seed = gen.spec().seed;
  report.layer = layer;
  report.options = options;
  if (options.parts) {
    report.dictionary = seg.dictionary();
  } else {
    for (const auto& c : gen.spec().concepts) report.dictionary.push_back(c.name);
  }
  const std::size_t n_labels = report.dictionary.size();

  const LayerSample validation = collect(gen, seg, layer, options, 0, options.n_validation);
  const LayerSample evaluation =
      collect(gen, seg, layer, options, options.n_validation, options.n_validation + options.n_eval);

  const std::size_t plane = info.height * info.width;
  for (std::size_t u = 0; u < info.channels; ++u) {
    std::vector<double> values;
    values.reserve(validation.maps.size() * plane);
    for (const auto& m : validation.maps)
      values.insert(values.end(), m.data().begin() + u * plane, m.data().begin() + (u + 1) * plane);
    const std::vector<double> grid = quantile_grid(std::move(values));

    const auto val_bins = bin_unit(validation, u, grid, n_labels, size, options.upsample);
    const auto eval_bins = bin_unit(evaluation, u, grid, n_labels, size, options.upsample);

    UnitLabel label;
    label.layer = layer;
    label.unit = u;
    for (std::size_t c = 0; c < n_labels; ++c) {
      const ThresholdChoice choice = choose(grid, val_bins[c].tables());
      const std::size_t k = static_cast<std::size_t>(std::find(grid.begin(), grid.end(), choice.threshold) - grid.begin());
      const double value = iou_of(eval_bins[c].tables()[k]);
      label.iou_row.push_back(value);
      label.threshold_row.push_back(choice.threshold);
      label.iqr_row.push_back(choice.iqr);
      if (value > label.iou) {
        label.iou = value;
        label.label = report.dictionary[c];
        label.threshold = choice.threshold;
        label.degenerate = choice.degenerate;
      }
    }
    report.units.push_back(std::move(label));
  }
  return report;
}

ReportDiff compare_reports(const DissectionReport& a, const DissectionReport& b) {
  if (a.dictionary != b.dictionary) throw std::invalid_argument("reports use different concept dictionaries");
  const auto ca = a.matched_counts(), cb = b.matched_counts();
  ReportDiff diff;
  for (const auto& label : a.dictionary) {
    ConceptDelta d{label, 0, 0, 0};
    if (auto it = ca.find(label); it != ca.end()) d.count_a = it->second;
    if (auto it = cb.find(label); it != cb.end()) d.count_b = it->second;
    d.delta = static_cast<long>(d.count_b) - static_cast<long>(d.count_a);
    diff.distinct_a += d.count_a > 0;
    diff.distinct_b += d.count_b > 0;
    diff.matched_a += d.count_a;
    diff.matched_b += d.count_b;
    diff.concepts.push_back(d);
  }
  if (diff.matched_a > 0)
    diff.percent_change = 100.0 * (static_cast<double>(diff.matched_b) - static_cast<double>(diff.matched_a)) /
                          static_cast<double>(diff.matched_a);
  return diff;
}

}  // namespace gandissect
