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

#include "gandissect/quality.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gandissect/intervention.hpp"

namespace gandissect {

Tensor laplacian_energy(const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw std::invalid_argument("laplacian_energy expects an H x W x 3 image");
  const std::size_t h = image.dim(0), w = image.dim(1);
  Tensor out({h, w});
  auto px = [&](std::size_t i, std::size_t j, std::size_t c) { return image[(i * w + j) * 3 + c]; };
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t up = i > 0 ? i - 1 : i, down = i + 1 < h ? i + 1 : i;
      const std::size_t left = j > 0 ? j - 1 : j, right = j + 1 < w ? j + 1 : j;
      double e = 0.0;
      for (std::size_t c = 0; c < 3; ++c)
        e += std::abs(px(up, j, c) + px(down, j, c) + px(i, left, c) + px(i, right, c) - 4.0 * px(i, j, c));
      out.at(i, j) = e / 3.0;
    }
  }
  return out;
}

std::vector<double> image_statistics(const Tensor& image, const OracleSegmenter& segmenter) {
  const SegmentationSet seg = segmenter.segment(image);
  const std::size_t n = image.dim(0) * image.dim(1);
  std::vector<double> stats(3, 0.0);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < 3; ++c) stats[c] += image[p * 3 + c] / static_cast<double>(n);
  for (const auto& m : seg.masks) stats.push_back(static_cast<double>(m.count()) / static_cast<double>(n));
  double energy = 0.0;
  for (double v : laplacian_energy(image).data()) energy += v;
  stats.push_back(energy / static_cast<double>(n));
  return stats;
}

std::vector<std::string> statistic_names(const WorldSpec& spec) {
  std::vector<std::string> names{"mean_r", "mean_g", "mean_b"};
  for (const auto& c : spec.concepts) names.push_back("coverage_" + c.name);
  names.push_back("laplacian");
  return names;
}

QualityStats fit_statistics(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw std::invalid_argument("no statistics to fit");
  const std::size_t m = rows[0].size();
  if (rows.size() < m + 1)
    throw std::invalid_argument("a Gaussian fit over " + std::to_string(m) + " statistics needs at least " +
                                std::to_string(m + 1) + " images");
  QualityStats q;
  q.dimension = m;
  q.samples = rows.size();
  q.mean.assign(m, 0.0);
  for (const auto& r : rows) {
    if (r.size() != m) throw std::invalid_argument("statistic rows differ in length");
    for (std::size_t i = 0; i < m; ++i) {
      if (!std::isfinite(r[i])) throw std::invalid_argument("non-finite image statistic");
      q.mean[i] += r[i] / static_cast<double>(rows.size());
    }
  }
  q.covariance.assign(m * m, 0.0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) q.covariance[i * m + j] += (r[i] - q.mean[i]) * (r[j] - q.mean[j]);
  for (auto& v : q.covariance) v /= static_cast<double>(rows.size() - 1);
  return q;
}

namespace {

using Matrix = Eigen::MatrixXd;

Matrix as_matrix(const QualityStats& q) {
  Matrix s(q.dimension, q.dimension);
  for (std::size_t i = 0; i < q.dimension; ++i)
    for (std::size_t j = 0; j < q.dimension; ++j) s(i, j) = q.covariance[i * q.dimension + j];
  return 0.5 * (s + s.transpose());
}

void check(const QualityStats& q) {
  if (q.mean.size() != q.dimension || q.covariance.size() != q.dimension * q.dimension)
    throw std::invalid_argument("malformed quality statistics");
  for (double v : q.mean)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite mean in quality statistics");
  for (double v : q.covariance)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite covariance in quality statistics");
}

}  // namespace

FrechetResult frechet(const QualityStats& a, const QualityStats& b) {
  check(a);
  check(b);
  if (a.dimension != b.dimension) throw std::invalid_argument("quality statistics differ in dimension");
  const Matrix sa = as_matrix(a), sb = as_matrix(b);
  FrechetResult out;

  // Tr((Sa Sb)^1/2) = Tr((Sa^1/2 Sb Sa^1/2)^1/2), the inner product being symmetric.
  Eigen::SelfAdjointEigenSolver<Matrix> ea(sa);
  Eigen::VectorXd la = ea.eigenvalues();
  for (Eigen::Index i = 0; i < la.size(); ++i) {
    if (la(i) < 0.0) {
      la(i) = 0.0;
      ++out.clamped_eigenvalues;
    }
  }
  const Matrix root_a = ea.eigenvectors() * la.cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
  Matrix inner = root_a * sb * root_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> ei(inner, Eigen::EigenvaluesOnly);
  double cross = 0.0;
  for (Eigen::Index i = 0; i < ei.eigenvalues().size(); ++i) {
    const double v = ei.eigenvalues()(i);
    if (v < 0.0) {
      ++out.clamped_eigenvalues;
    } else {
      cross += std::sqrt(v);
    }
  }
  double diff = 0.0;
  for (std::size_t i = 0; i < a.dimension; ++i) diff += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
  out.distance = std::max(0.0, diff + sa.trace() + sb.trace() - 2.0 * cross);
  return out;
}

double frechet_distance(const QualityStats& a, const QualityStats& b) { return frechet(a, b).distance; }

ArtifactFlagSet flag_artifact_units(const Generator& gen, std::size_t n_flag, const FlagOptions& options) {
  const LayerInfo& info = gen.layer(options.layer);
  if (n_flag > info.channels) throw std::invalid_argument("cannot flag more units than the layer has");
  ArtifactFlagSet out;
  out.layer = options.layer;
  if (n_flag == 0) return out;

  std::vector<Tensor> maps, energy;
  for (std::size_t s = 0; s < options.n_images; ++s) {
    const ForwardTrace trace = gen.forward(gen.z_for(options.stream, s));
    maps.push_back(trace.layer(options.layer));
    energy.push_back(laplacian_energy(trace.image));
  }
  const std::size_t plane = info.height * info.width;
  for (std::size_t u = 0; u < info.channels; ++u) {
    UnitEvidence ev;
    ev.unit = u;
    std::vector<std::pair<double, std::size_t>> peaks;
    for (std::size_t s = 0; s < maps.size(); ++s) {
      const double* v = maps[s].data().data() + u * plane;
      peaks.emplace_back(*std::max_element(v, v + plane), s);
    }
    std::stable_sort(peaks.begin(), peaks.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    double sum = 0.0, count = 0.0;
    for (std::size_t t = 0; t < std::min(options.top_images, peaks.size()); ++t) {
      const auto [peak, s] = peaks[t];
      if (!(peak > 0.0)) break;
      ev.top_images.push_back(s);
      // Region: footprints of cells at or above half the image's peak.
      const double* v = maps[s].data().data() + u * plane;
      for (std::size_t i = 0; i < info.height; ++i) {
        for (std::size_t j = 0; j < info.width; ++j) {
          if (v[i * info.width + j] < 0.5 * peak) continue;
          const auto f = gen.footprint(options.layer, i, j);
          for (std::size_t r = f.row0; r < f.row1; ++r) {
            for (std::size_t c = f.col0; c < f.col1; ++c) {
              sum += energy[s].at(r, c);
              count += 1.0;
            }
          }
        }
      }
    }
    ev.active = count > 0.0;
    ev.energy = ev.active ? sum / count : 0.0;
    out.evidence.push_back(std::move(ev));
  }
  std::vector<std::size_t> order;
  for (const auto& ev : out.evidence)
    if (ev.active) order.push_back(ev.unit);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return out.evidence[a].energy > out.evidence[b].energy; });
  order.resize(std::min(order.size(), n_flag));
  out.flagged = std::move(order);
  return out;
}

namespace {

std::vector<Tensor> render_set(const Generator& gen, const std::vector<Tensor>& zs,
                               const std::vector<std::size_t>& ablate, std::size_t layer,
                               std::vector<Tensor>* base_layers = nullptr) {
  std::vector<Tensor> images;
  for (const auto& z : zs) {
    if (ablate.empty()) {
      const ForwardTrace t = gen.forward(z);
      if (base_layers) base_layers->push_back(t.layer(layer));
      images.push_back(t.image);
      continue;
    }
    InterventionSpec spec;
    spec.layer = layer;
    spec.units = ablate;
    spec.locations = all_locations(gen, layer);
    spec.mode = InterventionMode::kAblate;
    images.push_back(apply(gen, z, spec).image);
  }
  return images;
}

QualityStats fit_images(const std::vector<Tensor>& images, const OracleSegmenter& seg) {
  std::vector<std::vector<double>> rows;
  for (const auto& im : images) rows.push_back(image_statistics(im, seg));
  return fit_statistics(rows);
}

}  // namespace

RepairReport repair(const Generator& gen, const std::vector<std::size_t>& flagged, const RepairOptions& options) {
  const LayerInfo& info = gen.layer(options.layer);
  for (auto u : flagged)
    if (u >= info.channels) throw std::invalid_argument("flagged unit outside the layer");
  const OracleSegmenter seg(gen.spec());
  const Generator clean(without_artifacts(gen.spec()));

  std::vector<Tensor> zs, clean_zs;
  for (std::size_t s = 0; s < options.n_images; ++s) {
    zs.push_back(gen.z_for(options.stream, s));
    clean_zs.push_back(clean.z_for(options.clean_stream, s));
  }
  const QualityStats reference = fit_images(render_set(clean, clean_zs, {}, options.layer), seg);

  std::vector<Tensor> base_layers;
  const std::vector<Tensor> original = render_set(gen, zs, {}, options.layer, &base_layers);
  const std::vector<Tensor> repaired = flagged.empty() ? original : render_set(gen, zs, flagged, options.layer);

  RepairReport report;
  report.flagged = flagged;
  report.samples = options.n_images;
  report.frechet_original = frechet_distance(fit_images(original, seg), reference);
  report.frechet_repaired = frechet_distance(fit_images(repaired, seg), reference);

  const std::size_t size = gen.image_size();
  double outside_sum = 0.0, outside_count = 0.0, total_sum = 0.0;
  for (std::size_t s = 0; s < original.size(); ++s) {
    BinaryMask touched(size, size);
    for (auto u : flagged) {
      for (std::size_t i = 0; i < info.height; ++i) {
        for (std::size_t j = 0; j < info.width; ++j) {
          if (!(base_layers[s].at(u, i, j) > 0.0)) continue;
          const auto f = gen.receptive_field(options.layer, i, j);
          for (std::size_t r = f.row0; r < f.row1; ++r)
            for (std::size_t c = f.col0; c < f.col1; ++c) touched.set(r, c, true);
        }
      }
    }
    for (std::size_t p = 0; p < size * size; ++p) {
      double d = 0.0;
      for (std::size_t c = 0; c < 3; ++c) d += std::abs(repaired[s][p * 3 + c] - original[s][p * 3 + c]) / 3.0;
      total_sum += d;
      if (!touched[p]) {
        outside_sum += d;
        outside_count += 1.0;
      }
    }
  }
  report.preserved_delta = outside_count > 0.0 ? outside_sum / outside_count : 0.0;
  report.total_delta = total_sum / static_cast<double>(original.size() * size * size);

  if (!flagged.empty()) {
    for (std::size_t d = 0; d < options.random_draws; ++d) {
      RngStream rng = RngStream(options.random_seed, "random-ablation").split(d);
      std::vector<std::size_t> pool(info.channels);
      for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
      for (std::size_t i = 0; i < flagged.size(); ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
      std::vector<std::size_t> pick(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(flagged.size()));
      std::sort(pick.begin(), pick.end());
      report.frechet_random.push_back(
          frechet_distance(fit_images(render_set(gen, zs, pick, options.layer), seg), reference));
    }
    double sum = 0.0;
    for (double v : report.frechet_random) sum += v;
    report.frechet_random_mean = sum / static_cast<double>(report.frechet_random.size());
  }
  return report;
}

}  // namespace gandissect
