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

#include <cmath>

#include "gandissect/generator.hpp"
#include "gandissect/intervention.hpp"
#include "gandissect/rng.hpp"
#include "gandissect/segmenter.hpp"
#include "gandissect/world_io.hpp"
#include "helpers.hpp"

using namespace gandissect;
using testing::default_generator;

TEST_SUITE("world") {
  TEST_CASE("sample_z is deterministic per stream") {
    const Generator& gen = default_generator();
    RngStream a(5, "z"), b(5, "z"), c(5, "other");
    const Tensor za = gen.sample_z(a);
    CHECK(za == gen.sample_z(b));
    CHECK(!(za == gen.sample_z(c)));
    CHECK(za.size() == gen.spec().latent_dim);
  }

  TEST_CASE("sample_z coordinates have mean near zero") {
    const Generator& gen = default_generator();
    RngStream rng(11, "lln");
    std::vector<double> sum(gen.spec().latent_dim, 0.0);
    const std::size_t n = 10000;
    for (std::size_t s = 0; s < n; ++s) {
      const Tensor z = gen.sample_z(rng);
      for (std::size_t k = 0; k < z.size(); ++k) sum[k] += z[k];
    }
    for (double v : sum) CHECK(std::abs(v / n) < 0.05);
  }

  TEST_CASE("forward is deterministic and images lie in [0,1]") {
    const Generator& gen = default_generator();
    const Tensor z = gen.z_for("determinism", 3);
    const ForwardTrace a = gen.forward(z), b = gen.forward(z);
    CHECK(a.image == b.image);
    REQUIRE(a.layers.size() == kNumLayers);
    for (double v : a.image.data()) CHECK((v >= 0.0 && v <= 1.0));
    for (std::size_t l = 1; l <= kNumLayers; ++l) {
      const LayerInfo& info = gen.layer(l);
      CHECK(a.layer(l).shape() == Shape{info.channels, info.height, info.width});
    }
  }

  TEST_CASE("override shape mismatch is rejected") {
    const Generator& gen = default_generator();
    CHECK_THROWS_AS(gen.forward(gen.z_for("x", 0), Edits{{4, Tensor({3, 8, 8})}}), std::invalid_argument);
  }

  TEST_CASE("layers before an edit are untouched, later ones recomputed") {
    const Generator& gen = default_generator();
    const Tensor z = gen.z_for("edits", 1);
    const ForwardTrace base = gen.forward(z);
    Tensor r = base.layer(4);
    for (auto& v : r.data()) v *= 0.5;
    const ForwardTrace edited = gen.forward(z, Edits{{4, r}});
    for (std::size_t l = 1; l < 4; ++l) CHECK(edited.layer(l) == base.layer(l));
    CHECK(edited.layer(4) == r);
    CHECK(!(edited.layer(5) == base.layer(5)));
  }

  TEST_CASE("zeroing a concept's causal units removes its intensity") {
    const Generator& gen = default_generator();
    for (std::size_t c = 0; c < gen.num_concepts(); ++c) {
      const auto& name = gen.spec().concepts[c].name;
      InterventionSpec spec;
      spec.units = gen.spec().causal_units(name);
      spec.locations = all_locations(gen, 4);
      for (std::size_t s = 0; s < 10; ++s) {
        const ForwardTrace t = apply(gen, gen.z_for("causal", s), spec);
        double peak = 0.0;
        for (double v : t.intensity[c].data()) peak = std::max(peak, v);
        CHECK(peak == 0.0);
      }
    }
  }

  TEST_CASE("distractor edits leave the image bit-identical") {
    const Generator& gen = default_generator();
    const auto& spec = gen.spec();
    std::vector<std::size_t> units;
    for (const auto& d : spec.distractors) units.push_back(d.unit);
    for (std::size_t s = 0; s < 20; ++s) {
      const Tensor z = gen.z_for("distractor", s);
      const Tensor before = gen.forward(z).image;
      for (auto mode : {InterventionMode::kAblate, InterventionMode::kInsert}) {
        InterventionSpec edit;
        edit.units = units;
        edit.locations = all_locations(gen, 4);
        edit.mode = mode;
        edit.levels.assign(units.size(), 5.0);
        CHECK(apply(gen, z, edit).image == before);
      }
    }
  }

  TEST_CASE("ablating U*_c removes at least 99% of the segmented area") {
    const Generator& gen = default_generator();
    const OracleSegmenter seg(gen.spec());
    for (const auto& c : gen.spec().concepts) {
      InterventionSpec spec;
      spec.units = gen.spec().causal_units(c.name);
      spec.locations = all_locations(gen, 4);
      std::size_t before = 0, after = 0;
      for (std::size_t s = 0; s < 30; ++s) {
        const Tensor z = gen.z_for("sufficiency", s);
        const std::size_t b = seg.segment(gen.forward(z).image).mask(c.name).count();
        const std::size_t a = seg.segment(apply(gen, z, spec).image).mask(c.name).count();
        CHECK(a <= b / 100);
        before += b;
        after += a;
      }
      CHECK(after <= before / 100);
    }
  }

  TEST_CASE("inserting a vetoed concept on its context adds no pixels") {
    const Generator& gen = default_generator();
    const OracleSegmenter seg(gen.spec());
    const auto units = gen.spec().causal_units("door");
    const auto q99 = insertion_levels(gen, 4, InsertLevel::kQuantile99);
    std::size_t tried = 0;
    for (std::size_t s = 0; s < 10; ++s) {
      const Tensor z = gen.z_for("veto", s);
      const ForwardTrace base = gen.forward(z);
      const BinaryMask sky = seg.segment(base.image).mask("sky");
      const BinaryMask door = seg.segment(base.image).mask("door");
      for (const auto& [i, j] : all_locations(gen, 4)) {
        const auto rf = gen.receptive_field(4, i, j);
        bool inside = true;
        for (std::size_t r = rf.row0; r < rf.row1 && inside; ++r)
          for (std::size_t c = rf.col0; c < rf.col1 && inside; ++c) inside = sky.at(r, c);
        if (!inside) continue;
        InterventionSpec spec;
        spec.units = units;
        spec.locations = {{i, j}};
        spec.mode = InterventionMode::kInsert;
        for (auto u : units) spec.levels.push_back(q99[u]);
        const BinaryMask after = seg.segment(apply(gen, z, spec).image).mask("door");
        CHECK(after.is_subset_of(door));
        ++tried;
      }
    }
    CHECK(tried > 0);
  }

  TEST_CASE("edits change pixels only inside the receptive field") {
    const Generator& gen = default_generator();
    RngStream rng(9, "locality");
    for (std::size_t l = 1; l <= kNumLayers; ++l) {
      const LayerInfo& info = gen.layer(l);
      for (std::size_t trial = 0; trial < 6; ++trial) {
        const Tensor z = gen.z_for("locality", trial);
        const ForwardTrace base = gen.forward(z);
        const std::size_t i = rng.below(info.height), j = rng.below(info.width);
        Tensor r = base.layer(l);
        for (std::size_t c = 0; c < info.channels; ++c) r.at(c, i, j) += 0.5 + rng.uniform();
        const Tensor image = gen.forward(z, Edits{{l, r}}).image;
        const auto rf = gen.receptive_field(l, i, j);
        for (std::size_t p = 0; p < image.dim(0); ++p) {
          for (std::size_t q = 0; q < image.dim(1); ++q) {
            if (p >= rf.row0 && p < rf.row1 && q >= rf.col0 && q < rf.col1) continue;
            for (std::size_t k = 0; k < 3; ++k) REQUIRE(image.at(p, q, k) == base.image.at(p, q, k));
          }
        }
      }
    }
  }

  TEST_CASE("quantiles") {
    std::vector<double> constant(1000, 0.7);
    CHECK(sorted_quantile(constant, 0.5) == 0.7);
    CHECK(sorted_quantile(constant, 0.99) == 0.7);
    RngStream rng(4, "uniform");
    std::vector<double> u(100000);
    for (auto& v : u) v = rng.uniform();
    std::sort(u.begin(), u.end());
    CHECK(std::abs(sorted_quantile(u, 0.99) - 0.99) < 0.01);
    CHECK_THROWS(sorted_quantile({}, 0.5));
  }

  TEST_CASE("an unwired unit has all quantiles zero") {
    WorldSpec w = make_default_world(1);
    w.units = 65;
    const Generator gen(w);
    const UnitQuantiles q = unit_percentiles(gen, 4, 100);
    CHECK(q.q50[64] == 0.0);
    CHECK(q.q90[64] == 0.0);
    CHECK(q.q99[64] == 0.0);
    CHECK(q.q99[gen.spec().causal_units("sky")[0]] > 0.0);
    CHECK_THROWS(unit_percentiles(gen, 4, 99));
  }

  TEST_CASE("world validation") {
    WorldSpec w = make_default_world(1);
    w.distractors[0].unit = w.concepts[0].groups[0].units[0];
    CHECK_THROWS_AS(w.validate(), std::invalid_argument);
    w = make_default_world(1);
    w.concepts[0].groups[0].box.bottom->terms.push_back({99, 1.0});
    CHECK_THROWS_AS(w.validate(), std::invalid_argument);
    w = make_default_world(1);
    w.vetoes[0].layer = 4;
    CHECK_THROWS_AS(w.validate(), std::invalid_argument);
    w = make_default_world(1);
    w.concepts[1].palette = w.concepts[0].palette;
    CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  }

  TEST_CASE("default world layout") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const WorldSpec w = make_default_world(seed);
      CHECK(w.units == 64);
      CHECK(w.concepts.size() == 6);
      CHECK(w.distractors.size() == 4);
      CHECK(w.artifact_units.size() == 4);
      CHECK(w.vetoes.size() == 1);
      CHECK(w.singly_wired("tree"));
      CHECK(w.singly_wired("person"));
      CHECK(!w.singly_wired("ground"));
    }
    CHECK(make_default_world(1).causal_units("tree") != make_default_world(2).causal_units("tree"));
  }

  TEST_CASE("world file round trip and hash") {
    const WorldSpec w = make_default_world(3);
    const std::string text = world_to_yaml(w);
    const WorldSpec back = world_from_yaml(text);
    CHECK(world_to_yaml(back) == text);
    CHECK(world_hash(back) == world_hash(w));
    CHECK(world_hash(make_default_world(4)) != world_hash(w));
    const Generator ga(w), gb(back);
    CHECK(gb.forward(gb.z_for("rt", 0)).image == ga.forward(ga.z_for("rt", 0)).image);
  }

  TEST_CASE("world file errors") {
    CHECK_THROWS_AS(world_from_yaml("schema_version: 2\ndepth_order: []\n"), std::invalid_argument);
    CHECK_THROWS_AS(world_from_yaml("schema_version: 1\nbogus: 3\n"), std::invalid_argument);
    CHECK_THROWS_AS(world_from_yaml("[unclosed"), std::invalid_argument);
    std::string text = world_to_yaml(make_default_world(1));
    text.replace(text.find("units: 64"), 9, "units: 8");
    CHECK_THROWS_AS(world_from_yaml(text), std::invalid_argument);
    CHECK(resolve_world("default:2").seed == 2);
    CHECK_THROWS(resolve_world("default:x"));
  }

  TEST_CASE("sha256 known answer") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }
}
