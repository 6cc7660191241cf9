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

#include <doctest.h>

#include <deque>
#include <set>

#include "gandissect/rng.hpp"
#include "gandissect/segmenter.hpp"
#include "helpers.hpp"

using namespace gandissect;
using testing::default_generator;

namespace {

BinaryMask support(const Tensor& intensity, double tau) { return threshold(intensity, tau); }

BinaryMask random_mask(RngStream& rng, std::size_t h, std::size_t w, double p) {
  BinaryMask m(h, w);
  for (std::size_t i = 0; i < h * w; ++i) m.set(i, rng.uniform() < p);
  return m;
}

// Breadth-first labelling, written independently of the library's stack fill.
std::vector<int> bfs_labels(const BinaryMask& m, int& count) {
  const int h = static_cast<int>(m.height()), w = static_cast<int>(m.width());
  std::vector<int> label(m.size(), -1);
  count = 0;
  for (int start = 0; start < h * w; ++start) {
    if (!m[start] || label[start] >= 0) continue;
    std::deque<int> queue{start};
    label[start] = count;
    while (!queue.empty()) {
      const int p = queue.front();
      queue.pop_front();
      const int r = p / w, c = p % w;
      const int nr[4] = {r - 1, r + 1, r, r}, nc[4] = {c, c, c - 1, c + 1};
      for (int k = 0; k < 4; ++k) {
        if (nr[k] < 0 || nr[k] >= h || nc[k] < 0 || nc[k] >= w) continue;
        const int q = nr[k] * w + nc[k];
        if (m[q] && label[q] < 0) {
          label[q] = count;
          queue.push_back(q);
        }
      }
    }
    ++count;
  }
  return label;
}

}  // namespace

TEST_SUITE("segmenter") {
  TEST_CASE("an all-black image has empty masks") {
    const OracleSegmenter seg(default_generator().spec());
    const SegmentationSet s = seg.segment_with_parts(Tensor({32, 32, 3}, 0.0));
    for (const auto& m : s.masks) CHECK(m.count() == 0);
  }

  TEST_CASE("a single-concept render segments to the generator's own support") {
    const Generator& gen = default_generator();
    const OracleSegmenter seg(gen.spec());
    for (std::size_t c = 0; c < gen.num_concepts(); ++c) {
      const auto& concept_spec = gen.spec().concepts[c];
      const InterventionSpec only = testing::ablate_all_but(gen, gen.spec().causal_units(concept_spec.name));
      for (std::size_t s = 0; s < 10; ++s) {
        const ForwardTrace t = apply(gen, gen.z_for("single", s), only);
        const SegmentationSet segs = seg.segment(t.image);
        CHECK(segs.mask(concept_spec.name) == support(t.intensity[c], concept_spec.tau));
        for (std::size_t k = 0; k < gen.num_concepts(); ++k)
          if (k != c) CHECK(segs.masks[k].count() == 0);
      }
    }
  }

  TEST_CASE("two-concept renders match the supports within 1% of pixels") {
    const Generator& gen = default_generator();
    const OracleSegmenter seg(gen.spec());
    const auto& concepts = gen.spec().concepts;
    for (std::size_t a = 0; a < concepts.size(); ++a) {
      for (std::size_t b = a + 1; b < concepts.size(); ++b) {
        auto keep = gen.spec().causal_units(concepts[a].name);
        const auto more = gen.spec().causal_units(concepts[b].name);
        keep.insert(keep.end(), more.begin(), more.end());
        const InterventionSpec only = testing::ablate_all_but(gen, keep);
        for (std::size_t s = 0; s < 5; ++s) {
          const ForwardTrace t = apply(gen, gen.z_for("pair", s), only);
          const SegmentationSet segs = seg.segment(t.image);
          for (std::size_t c : {a, b}) {
            const long got = static_cast<long>(segs.masks[c].count());
            const long want = static_cast<long>(support(t.intensity[c], concepts[c].tau).count());
            CHECK(std::abs(got - want) <= 32 * 32 / 100);
          }
        }
      }
    }
  }

  TEST_CASE("unedited renders agree with the intensity supports") {
    const Generator& gen = default_generator();
    const OracleSegmenter seg(gen.spec());
    for (std::size_t c = 0; c < gen.num_concepts(); ++c) {
      std::size_t inter = 0, uni = 0;
      for (std::size_t s = 0; s < 50; ++s) {
        const ForwardTrace t = gen.forward(gen.z_for("consistency", s));
        const BinaryMask m = seg.segment(t.image).masks[c];
        const BinaryMask sup = support(t.intensity[c], gen.spec().concepts[c].tau);
        inter += (m & sup).count();
        uni += (m | sup).count();
      }
      CHECK(static_cast<double>(inter) / static_cast<double>(uni) >= 0.99);
    }
  }

  TEST_CASE("connected components conventions") {
    BinaryMask square(6, 6);
    for (std::size_t i = 1; i < 4; ++i)
      for (std::size_t j = 2; j < 5; ++j) square.set(i, j, true);
    const auto cc = connected_components(square);
    REQUIRE(cc.size() == 1);
    CHECK(cc[0].pixels.size() == 9);
    CHECK(cc[0].row0 == 1);
    CHECK(cc[0].row1 == 3);
    CHECK(cc[0].col0 == 2);
    CHECK(cc[0].col1 == 4);

    BinaryMask diagonal(2, 2);
    diagonal.set(0, 0, true);
    diagonal.set(1, 1, true);
    CHECK(connected_components(diagonal).size() == 2);
  }

  TEST_CASE("connected components match a breadth-first oracle") {
    RngStream rng(17, "cc");
    for (std::size_t trial = 0; trial < 200; ++trial) {
      const BinaryMask m = random_mask(rng, 16, 16, 0.2 + 0.5 * rng.uniform());
      int count = 0;
      const std::vector<int> oracle = bfs_labels(m, count);
      const auto cc = connected_components(m);
      REQUIRE(cc.size() == static_cast<std::size_t>(count));
      BinaryMask uni(16, 16);
      std::set<std::size_t> seen;
      for (const auto& comp : cc) {
        const int label = oracle[comp.pixels.front()];
        std::size_t expected = 0;
        for (int v : oracle) expected += v == label;
        CHECK(comp.pixels.size() == expected);
        for (auto p : comp.pixels) {
          CHECK(oracle[p] == label);
          CHECK(seen.insert(p).second);
          uni.set(p, true);
        }
      }
      CHECK(uni == m);
    }
  }

  TEST_CASE("part split conventions") {
    BinaryMask even(8, 8);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) even.set(i, j, true);
    const PartMasks pe = split_parts(even);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(pe.top.at(i, j) == (i < 2));

    BinaryMask odd(8, 8);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) odd.set(i, j, true);
    const PartMasks po = split_parts(odd);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(po.top.at(0, j));
      CHECK(po.top.at(1, j));
      CHECK(po.bottom.at(2, j));
      CHECK(!po.bottom.at(1, j));
    }
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(po.left.at(i, 1));
      CHECK(po.right.at(i, 2));
    }
  }

  TEST_CASE("parts partition their parent per component") {
    RngStream rng(23, "parts");
    for (std::size_t trial = 0; trial < 100; ++trial) {
      const BinaryMask m = random_mask(rng, 16, 16, 0.45);
      const PartMasks p = split_parts(m);
      CHECK((p.top | p.bottom) == m);
      CHECK((p.left | p.right) == m);
      CHECK((p.top & p.bottom).count() == 0);
      CHECK((p.left & p.right).count() == 0);
      // Brute force: split every component at its own bounding-box middle.
      BinaryMask top(16, 16), left(16, 16);
      for (const auto& comp : connected_components(m)) {
        const std::size_t h = comp.row1 - comp.row0 + 1, w = comp.col1 - comp.col0 + 1;
        for (auto px : comp.pixels) {
          const std::size_t r = px / 16, c = px % 16;
          top.set(px, r - comp.row0 < (h + 1) / 2);
          left.set(px, c - comp.col0 < (w + 1) / 2);
        }
      }
      CHECK(p.top == top);
      CHECK(p.left == left);
    }
  }

  TEST_CASE("expand_parts adds four classes per part-bearing concept") {
    const Generator& gen = default_generator();
    const OracleSegmenter seg(gen.spec());
    const SegmentationSet s = seg.segment_with_parts(gen.forward(gen.z_for("parts", 0)).image);
    CHECK(s.labels.size() == gen.num_concepts() + 4);
    for (const char* suffix : {"-t", "-b", "-l", "-r"}) {
      CHECK(s.mask(std::string("person") + suffix).is_subset_of(s.mask("person")));
    }
    CHECK((s.mask("person-t") | s.mask("person-b")) == s.mask("person"));
    CHECK((s.mask("person-l") | s.mask("person-r")) == s.mask("person"));
  }

  TEST_CASE("class coverage") {
    CHECK(class_coverage({BinaryMask(4, 4), BinaryMask(4, 4)}) == 0.0);
    CHECK(class_coverage({BinaryMask(4, 4, true), BinaryMask(4, 4, true)}) == 1.0);
    CHECK_THROWS(class_coverage({}));

    const Generator& gen = default_generator();
    const OracleSegmenter seg(gen.spec());
    std::vector<BinaryMask> masks;
    const std::size_t n = 1000;
    for (std::size_t s = 0; s < n; ++s) masks.push_back(seg.segment(gen.forward(gen.z_for("coverage-test", s)).image).mask("tree"));
    // Recount back to front, per image first.
    double total = 0.0;
    for (std::size_t s = n; s-- > 0;) {
      std::size_t here = 0;
      for (std::size_t p = masks[s].size(); p-- > 0;) here += masks[s][p];
      total += static_cast<double>(here) / static_cast<double>(masks[s].size());
    }
    CHECK(class_coverage(masks) == doctest::Approx(total / n).epsilon(1e-12));
  }
}
