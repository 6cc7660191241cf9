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

#include "gandissect/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gandissect {

namespace {

void require_image(const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw std::invalid_argument("expected an H x W x 3 image, got " + shape_string(image.shape()));
  }
}

// Reads the next header token, skipping whitespace and '#' comments.
std::string header_token(const std::string& data, std::size_t& pos) {
  while (pos < data.size()) {
    if (data[pos] == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  std::size_t start = pos;
  while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
  if (start == pos) throw std::runtime_error("truncated netpbm header");
  return data.substr(start, pos - start);
}

std::size_t header_number(const std::string& data, std::size_t& pos) {
  std::string tok = header_token(data, pos);
  std::size_t used = 0;
  unsigned long v = std::stoul(tok, &used);
  if (used != tok.size()) throw std::runtime_error("bad netpbm header field: " + tok);
  return v;
}

void png_append(png_structp png, png_bytep bytes, png_size_t n) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(bytes), n);
}

void png_error_throw(png_structp, png_const_charp message) { throw std::runtime_error(std::string("png: ") + message); }

std::string encode_png_rows(std::size_t width, std::size_t height, int color_type, std::size_t channels,
                            const std::vector<std::uint8_t>& pixels) {
  std::string out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_throw, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  try {
    png_set_write_fn(png, &out, png_append, nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t r = 0; r < height; ++r) {
      png_write_row(png, const_cast<png_bytep>(pixels.data() + r * width * channels));
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace

std::uint8_t to_byte(double v) {
  if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
    throw std::domain_error("pixel value outside [0,1]: " + std::to_string(v));
  }
  return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

std::vector<std::uint8_t> image_bytes(const Tensor& image) {
  require_image(image);
  std::vector<std::uint8_t> out(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = to_byte(image[i]);
  return out;
}

std::string encode_ppm(const Tensor& image) {
  auto bytes = image_bytes(image);
  std::string out = "P6\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
  out.append(bytes.begin(), bytes.end());
  return out;
}

Tensor decode_ppm(const std::string& data) {
  std::size_t pos = 0;
  if (header_token(data, pos) != "P6") throw std::runtime_error("not a binary pixmap");
  std::size_t w = header_number(data, pos), h = header_number(data, pos), maxval = header_number(data, pos);
  if (maxval == 0 || maxval > 255) throw std::runtime_error("unsupported pixmap maxval");
  ++pos;  // single whitespace after maxval
  if (data.size() < pos + w * h * 3) throw std::runtime_error("truncated pixmap data");
  Tensor out({h, w, 3});
  for (std::size_t i = 0; i < w * h * 3; ++i) {
    out[i] = static_cast<unsigned char>(data[pos + i]) / static_cast<double>(maxval);
  }
  return out;
}

std::string encode_pbm(const BinaryMask& mask) {
  std::string out = "P4\n" + std::to_string(mask.width()) + " " + std::to_string(mask.height()) + "\n";
  std::size_t row_bytes = (mask.width() + 7) / 8;
  for (std::size_t i = 0; i < mask.height(); ++i) {
    std::string row(row_bytes, '\0');
    for (std::size_t j = 0; j < mask.width(); ++j) {
      if (mask.at(i, j)) row[j / 8] = static_cast<char>(row[j / 8] | (0x80 >> (j % 8)));
    }
    out += row;
  }
  return out;
}

BinaryMask decode_pbm(const std::string& data) {
  std::size_t pos = 0;
  if (header_token(data, pos) != "P4") throw std::runtime_error("not a binary bitmap");
  std::size_t w = header_number(data, pos), h = header_number(data, pos);
  ++pos;
  std::size_t row_bytes = (w + 7) / 8;
  if (data.size() < pos + row_bytes * h) throw std::runtime_error("truncated bitmap data");
  BinaryMask out(h, w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      auto byte = static_cast<unsigned char>(data[pos + i * row_bytes + j / 8]);
      out.set(i, j, (byte >> (7 - j % 8)) & 1);
    }
  }
  return out;
}

std::string encode_png(const Tensor& image) {
  auto bytes = image_bytes(image);
  return encode_png_rows(image.dim(1), image.dim(0), PNG_COLOR_TYPE_RGB, 3, bytes);
}

std::string encode_png(const BinaryMask& mask) {
  std::vector<std::uint8_t> bytes(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) bytes[i] = mask[i] ? 255 : 0;
  return encode_png_rows(mask.width(), mask.height(), PNG_COLOR_TYPE_GRAY, 1, bytes);
}

Tensor heatmap_image(const Tensor& map) {
  if (map.rank() != 2) throw std::invalid_argument("heatmap expects an h x w map");
  double peak = 0.0;
  for (double v : map.data()) peak = std::max(peak, std::abs(v));
  Tensor out({map.dim(0), map.dim(1), 3});
  for (std::size_t i = 0; i < map.size(); ++i) {
    double v = peak > 0.0 ? std::abs(map[i]) / peak : 0.0;
    for (std::size_t k = 0; k < 3; ++k) out[i * 3 + k] = v;
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void export_image(const Tensor& image, const std::filesystem::path& path) {
  const auto ext = path.extension();
  if (ext == ".png") return write_file(path, encode_png(image));
  if (ext == ".ppm") return write_file(path, encode_ppm(image));
  throw std::invalid_argument("image path must end in .png or .ppm: " + path.string());
}

void export_mask(const BinaryMask& mask, const std::filesystem::path& path) {
  const auto ext = path.extension();
  if (ext == ".png") return write_file(path, encode_png(mask));
  if (ext == ".pbm") return write_file(path, encode_pbm(mask));
  throw std::invalid_argument("mask path must end in .png or .pbm: " + path.string());
}

}  // namespace gandissect
