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

#include "gandissect/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gandissect {

namespace {

constexpr double kMinChroma = 1e-3;

}  // namespace

std::size_t SegmentationSet::index_of(const std::string& label) const {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) return i;
  throw std::invalid_argument("label '" + label + "' is not in the concept dictionary");
}

OracleSegmenter::OracleSegmenter(const WorldSpec& spec) : size_(spec.image_size) {
  for (const auto& c : spec.concepts) {
    const auto& p = c.palette;
    const double m = (p[0] + p[1] + p[2]) / 3.0;
    std::array<double, 3> d{p[0] - m, p[1] - m, p[2] - m};
    const double n = std::hypot(d[0], d[1], d[2]);
    if (!(n > kMinChroma) || !(m > 0.0)) throw std::invalid_argument("palette of '" + c.name + "' cannot be segmented");
    for (auto& v : d) v /= n;
    const bool parts = std::any_of(c.groups.begin(), c.groups.end(), [](const UnitGroup& g) { return !g.part.empty(); });
    entries_.push_back({c.name, d, m, c.tau, parts});
    dictionary_.push_back(c.name);
  }
  for (const auto& e : entries_) {
    if (!e.has_parts) continue;
    for (const char* s : {"-t", "-b", "-l", "-r"}) dictionary_.push_back(e.name + s);
  }
}

SegmentationSet OracleSegmenter::segment(const Tensor& image) const {
  if (image.shape() != Shape{size_, size_, 3})
    throw std::invalid_argument("segment: expected a " + shape_string({size_, size_, 3}) + " image, got " +
                                shape_string(image.shape()));
  SegmentationSet out;
  for (const auto& e : entries_) {
    out.labels.push_back(e.name);
    out.masks.emplace_back(size_, size_);
    out.scores.emplace_back(Shape{size_, size_});
  }
  for (std::size_t p = 0; p < size_ * size_; ++p) {
    const double* x = &image.values()[p * 3];
    const double m = (x[0] + x[1] + x[2]) / 3.0;
    const double d[3] = {x[0] - m, x[1] - m, x[2] - m};
    const double n = std::hypot(d[0], d[1], d[2]);
    if (n < kMinChroma) continue;
    std::size_t best = 0;
    double best_cos = -2.0;
    for (std::size_t k = 0; k < entries_.size(); ++k) {
      const auto& u = entries_[k].direction;
      const double c = (d[0] * u[0] + d[1] * u[1] + d[2] * u[2]) / n;
      if (c > best_cos) {
        best_cos = c;
        best = k;
      }
    }
    const double score = std::clamp(2.0 * m / entries_[best].mean - 1.0, 0.0, 1.0);
    out.scores[best][p] = score;
    out.masks[best].set(p, score > entries_[best].tau);
  }
  return out;
}

SegmentationSet OracleSegmenter::segment_with_parts(const Tensor& image) const {
  std::vector<std::string> with_parts;
  for (const auto& e : entries_)
    if (e.has_parts) with_parts.push_back(e.name);
  return expand_parts(segment(image), with_parts);
}

std::vector<Component> connected_components(const BinaryMask& m) {
  const std::size_t h = m.height(), w = m.width();
  std::vector<int> label(h * w, -1);
  std::vector<Component> out;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (!m[start] || label[start] >= 0) continue;
    const int id = static_cast<int>(out.size());
    Component c{{}, start / w, start / w, start % w, start % w};
    label[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      c.pixels.push_back(p);
      const std::size_t i = p / w, j = p % w;
      c.row0 = std::min(c.row0, i);
      c.row1 = std::max(c.row1, i);
      c.col0 = std::min(c.col0, j);
      c.col1 = std::max(c.col1, j);
      auto visit = [&](std::size_t q) {
        if (m[q] && label[q] < 0) {
          label[q] = id;
          stack.push_back(q);
        }
      };
      if (i > 0) visit(p - w);
      if (i + 1 < h) visit(p + w);
      if (j > 0) visit(p - 1);
      if (j + 1 < w) visit(p + 1);
    }
    std::sort(c.pixels.begin(), c.pixels.end());
    out.push_back(std::move(c));
  }
  return out;
}

PartMasks split_parts(const BinaryMask& m) {
  const std::size_t h = m.height(), w = m.width();
  PartMasks parts{BinaryMask(h, w), BinaryMask(h, w), BinaryMask(h, w), BinaryMask(h, w)};
  for (const auto& c : connected_components(m)) {
    // First row of the bottom half / first column of the right half.
    const std::size_t row_split = c.row0 + (c.row1 - c.row0 + 2) / 2;
    const std::size_t col_split = c.col0 + (c.col1 - c.col0 + 2) / 2;
    for (auto p : c.pixels) {
      const std::size_t i = p / w, j = p % w;
      (i < row_split ? parts.top : parts.bottom).set(p, true);
      (j < col_split ? parts.left : parts.right).set(p, true);
    }
  }
  return parts;
}

SegmentationSet expand_parts(const SegmentationSet& segs, const std::vector<std::string>& concepts) {
  SegmentationSet out = segs;
  for (const auto& name : concepts) {
    const std::size_t k = segs.index_of(name);
    PartMasks parts = split_parts(segs.masks[k]);
    const std::pair<const char*, BinaryMask*> named[] = {
        {"-t", &parts.top}, {"-b", &parts.bottom}, {"-l", &parts.left}, {"-r", &parts.right}};
    for (const auto& [suffix, mask] : named) {
      Tensor score = segs.scores[k];
      for (std::size_t p = 0; p < score.size(); ++p)
        if (!(*mask)[p]) score[p] = 0.0;
      out.labels.push_back(name + suffix);
      out.masks.push_back(std::move(*mask));
      out.scores.push_back(std::move(score));
    }
  }
  return out;
}

double class_coverage(const std::vector<BinaryMask>& masks) {
  if (masks.empty()) throw std::invalid_argument("class_coverage needs at least one mask");
  double total = 0.0, pixels = 0.0;
  for (const auto& m : masks) {
    total += static_cast<double>(m.count());
    pixels += static_cast<double>(m.size());
  }
  return pixels > 0.0 ? total / pixels : 0.0;
}

}  // namespace gandissect
