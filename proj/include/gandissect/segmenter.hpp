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
#include <string>
#include <vector>

#include "gandissect/tensor.hpp"
#include "gandissect/world_spec.hpp"

namespace gandissect {

struct SegmentationSet {
  std::vector<std::string> labels;  // concept dictionary, base concepts first
  std::vector<BinaryMask> masks;
  std::vector<Tensor> scores;       // soft score in [0,1]; a part keeps the parent score inside its mask

  std::size_t index_of(const std::string& label) const;  // throws if absent
  const BinaryMask& mask(const std::string& label) const { return masks[index_of(label)]; }
};

// Pixel-only segmenter. A pixel belongs to the concept whose palette chroma
// direction is closest to the pixel's chroma; its score recovers the rendered
// intensity from brightness. Base-concept masks are disjoint: rendering is
// winner-take-all per pixel, so palettes never blend.
class OracleSegmenter {
 public:
  explicit OracleSegmenter(const WorldSpec& spec);

  // Base concepts only.
  SegmentationSet segment(const Tensor& image) const;
  // Base concepts plus c-t/c-b/c-l/c-r for every part-bearing concept.
  SegmentationSet segment_with_parts(const Tensor& image) const;

  const std::vector<std::string>& dictionary() const { return dictionary_; }
  std::size_t image_size() const { return size_; }

 private:
  struct Entry {
    std::string name;
    std::array<double, 3> direction;  // unit chroma
    double mean;
    double tau;
    bool has_parts;
  };
  std::vector<Entry> entries_;
  std::vector<std::string> dictionary_;
  std::size_t size_;
};

struct Component {
  std::vector<std::size_t> pixels;  // row-major indices, ascending
  std::size_t row0, row1, col0, col1;  // inclusive bounding box
};

// 4-connected components in raster order of their first pixel.
std::vector<Component> connected_components(const BinaryMask& m);

struct PartMasks {
  BinaryMask top, bottom, left, right;
};

// Splits each component at the middle of its bounding box; the top and left
// halves take the extra row or column of an odd extent.
PartMasks split_parts(const BinaryMask& m);

// Appends "<c>-t", "<c>-b", "<c>-l", "<c>-r" for each listed concept.
SegmentationSet expand_parts(const SegmentationSet& segs, const std::vector<std::string>& concepts);

// Mean fraction of true pixels over a sample of masks.
double class_coverage(const std::vector<BinaryMask>& masks);

}  // namespace gandissect
