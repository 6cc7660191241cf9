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
#include <filesystem>
#include <string>
#include <vector>

#include "gandissect/tensor.hpp"

namespace gandissect {

// Channel byte for a value in [0,1]: floor(v * 255 + 0.5), so 0.5 -> 128.
// Throws std::domain_error for values outside [0,1] or non-finite values.
std::uint8_t to_byte(double v);

// H x W x 3 image to interleaved RGB bytes.
std::vector<std::uint8_t> image_bytes(const Tensor& image);

// Binary portable pixmap: "P6\n<W> <H>\n255\n" followed by RGB bytes.
std::string encode_ppm(const Tensor& image);
Tensor decode_ppm(const std::string& data);
// Binary portable bitmap (P4); set pixels are 1 (black).
std::string encode_pbm(const BinaryMask& mask);
BinaryMask decode_pbm(const std::string& data);
// Lossless 8-bit RGB PNG.
std::string encode_png(const Tensor& image);
// 8-bit grayscale PNG of a mask (255 where set).
std::string encode_png(const BinaryMask& mask);

// h x w map scaled by its maximum into a grayscale H x W x 3 image.
Tensor heatmap_image(const Tensor& map);

void write_file(const std::filesystem::path& path, const std::string& data);
std::string read_file(const std::filesystem::path& path);

void export_image(const Tensor& image, const std::filesystem::path& path);  // .ppm or .png by extension
void export_mask(const BinaryMask& mask, const std::filesystem::path& path);  // .pbm or .png

}  // namespace gandissect
