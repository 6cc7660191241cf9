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

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gandissect {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Value type: copies are deep, and a const
// Tensor can be shared freely across threads.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // 2-D and 3-D accessors (row-major).
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  double& at(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }

  // Channel c of a C x h x w tensor as an h x w tensor.
  Tensor channel(std::size_t c) const;
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;
  double max_abs_diff(const Tensor& other) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(std::size_t height, std::size_t width, bool fill = false);
  BinaryMask(std::size_t height, std::size_t width, std::vector<bool> bits);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return bits_.size(); }

  bool operator[](std::size_t i) const { return bits_[i]; }
  bool at(std::size_t i, std::size_t j) const { return bits_[i * width_ + j]; }
  void set(std::size_t i, std::size_t j, bool v) { bits_[i * width_ + j] = v; }
  void set(std::size_t i, bool v) { bits_[i] = v; }

  std::size_t count() const;
  BinaryMask operator&(const BinaryMask& o) const;
  BinaryMask operator|(const BinaryMask& o) const;
  bool is_subset_of(const BinaryMask& o) const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<bool> bits_;
};

enum class UpsampleMode { kNearest, kBilinear };

// out[i][j] = t[floor(i*h/H)][floor(j*w/W)]. Accepts h x w or C x h x w.
Tensor upsample_nearest(const Tensor& t, std::size_t height, std::size_t width);
// Half-pixel-centred bilinear interpolation with edge clamping.
Tensor upsample_bilinear(const Tensor& t, std::size_t height, std::size_t width);
Tensor upsample(const Tensor& t, std::size_t height, std::size_t width, UpsampleMode mode);

// Picks every k-th element (top-left of each k x k block).
Tensor downsample_stride(const Tensor& t, std::size_t stride);

// mask[p] = t[p] > level (strict).
BinaryMask threshold(const Tensor& t, double level);

}  // namespace gandissect
