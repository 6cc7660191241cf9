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

#include "gandissect/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace gandissect {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t h = rows.size();
  const std::size_t w = h ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(h * w);
  for (const auto& row : rows) {
    if (row.size() != w) throw std::invalid_argument("ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({h, w}, std::move(data));
}

Tensor Tensor::channel(std::size_t c) const {
  if (rank() != 3 || c >= shape_[0]) throw std::out_of_range("channel index out of range");
  const std::size_t plane = shape_[1] * shape_[2];
  return Tensor({shape_[1], shape_[2]},
                std::vector<double>(data_.begin() + c * plane, data_.begin() + (c + 1) * plane));
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::max_abs_diff(const Tensor& other) const {
  if (shape_ != other.shape_) throw std::invalid_argument("shape mismatch in max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < data_.size(); ++i) m = std::max(m, std::abs(data_[i] - other.data_[i]));
  return m;
}

BinaryMask::BinaryMask(std::size_t height, std::size_t width, bool fill)
    : height_(height), width_(width), bits_(height * width, fill) {}

BinaryMask::BinaryMask(std::size_t height, std::size_t width, std::vector<bool> bits)
    : height_(height), width_(width), bits_(std::move(bits)) {
  if (bits_.size() != height * width) throw std::invalid_argument("mask size mismatch");
}

std::size_t BinaryMask::count() const { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), true)); }

BinaryMask BinaryMask::operator&(const BinaryMask& o) const {
  if (height_ != o.height_ || width_ != o.width_) throw std::invalid_argument("mask shape mismatch");
  BinaryMask out(height_, width_);
  for (std::size_t i = 0; i < bits_.size(); ++i) out.bits_[i] = bits_[i] && o.bits_[i];
  return out;
}

BinaryMask BinaryMask::operator|(const BinaryMask& o) const {
  if (height_ != o.height_ || width_ != o.width_) throw std::invalid_argument("mask shape mismatch");
  BinaryMask out(height_, width_);
  for (std::size_t i = 0; i < bits_.size(); ++i) out.bits_[i] = bits_[i] || o.bits_[i];
  return out;
}

bool BinaryMask::is_subset_of(const BinaryMask& o) const {
  if (height_ != o.height_ || width_ != o.width_) return false;
  for (std::size_t i = 0; i < bits_.size(); ++i)
    if (bits_[i] && !o.bits_[i]) return false;
  return true;
}

namespace {

struct Planes {
  std::size_t channels, h, w;
};

Planes planes_of(const Tensor& t) {
  if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
  throw std::invalid_argument("upsample expects a 2-D or 3-D tensor, got " + shape_string(t.shape()));
}

Shape resized(const Tensor& t, std::size_t height, std::size_t width) {
  if (t.rank() == 2) return {height, width};
  return {t.dim(0), height, width};
}

}  // namespace

Tensor upsample_nearest(const Tensor& t, std::size_t height, std::size_t width) {
  const auto [c, h, w] = planes_of(t);
  if (height < h || width < w) {
    throw std::invalid_argument("upsample target " + std::to_string(height) + "x" + std::to_string(width) +
                                " is smaller than source " + std::to_string(h) + "x" + std::to_string(w));
  }
  Tensor out(resized(t, height, width));
  auto src = t.data();
  auto dst = out.data();
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < height; ++i) {
      const std::size_t si = i * h / height;
      for (std::size_t j = 0; j < width; ++j) {
        dst[(k * height + i) * width + j] = src[(k * h + si) * w + j * w / width];
      }
    }
  }
  return out;
}

Tensor upsample_bilinear(const Tensor& t, std::size_t height, std::size_t width) {
  const auto [c, h, w] = planes_of(t);
  if (height < h || width < w) throw std::invalid_argument("upsample target smaller than source");
  Tensor out(resized(t, height, width));
  auto src = t.data();
  auto dst = out.data();
  auto coord = [](std::size_t i, std::size_t n_out, std::size_t n_in, std::size_t& lo, std::size_t& hi,
                  double& frac) {
    double x = (static_cast<double>(i) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
    x = std::clamp(x, 0.0, static_cast<double>(n_in - 1));
    lo = static_cast<std::size_t>(std::floor(x));
    hi = std::min(lo + 1, n_in - 1);
    frac = x - static_cast<double>(lo);
  };
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < height; ++i) {
      std::size_t i0, i1;
      double fi;
      coord(i, height, h, i0, i1, fi);
      for (std::size_t j = 0; j < width; ++j) {
        std::size_t j0, j1;
        double fj;
        coord(j, width, w, j0, j1, fj);
        const double* plane = src.data() + k * h * w;
        const double top = plane[i0 * w + j0] * (1 - fj) + plane[i0 * w + j1] * fj;
        const double bot = plane[i1 * w + j0] * (1 - fj) + plane[i1 * w + j1] * fj;
        dst[(k * height + i) * width + j] = top * (1 - fi) + bot * fi;
      }
    }
  }
  return out;
}

Tensor upsample(const Tensor& t, std::size_t height, std::size_t width, UpsampleMode mode) {
  return mode == UpsampleMode::kNearest ? upsample_nearest(t, height, width) : upsample_bilinear(t, height, width);
}

Tensor downsample_stride(const Tensor& t, std::size_t stride) {
  const auto [c, h, w] = planes_of(t);
  if (stride == 0 || h % stride || w % stride) throw std::invalid_argument("stride must divide the tensor size");
  const std::size_t oh = h / stride, ow = w / stride;
  Tensor out(resized(t, oh, ow));
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        out.data()[(k * oh + i) * ow + j] = t.data()[(k * h + i * stride) * w + j * stride];
  return out;
}

BinaryMask threshold(const Tensor& t, double level) {
  const auto [c, h, w] = planes_of(t);
  if (c != 1) throw std::invalid_argument("threshold expects a single-channel tensor");
  BinaryMask mask(h, w);
  for (std::size_t i = 0; i < t.size(); ++i) mask.set(i, t[i] > level);
  return mask;
}

}  // namespace gandissect
