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

#include <filesystem>
#include <limits>
#include <sstream>

#include "gandissect/image_io.hpp"
#include "gandissect/report.hpp"
#include "helpers.hpp"

using namespace gandissect;
using testing::default_generator;

namespace {

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::string cell;
    std::istringstream cells(line);
    while (std::getline(cells, cell, ',')) row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("byte conversion") {
    CHECK(to_byte(0.0) == 0);
    CHECK(to_byte(1.0) == 255);
    CHECK(to_byte(0.5) == 128);
    CHECK_THROWS_AS(to_byte(1.0001), std::domain_error);
    CHECK_THROWS_AS(to_byte(-0.1), std::domain_error);
    CHECK_THROWS_AS(to_byte(std::numeric_limits<double>::quiet_NaN()), std::domain_error);
  }

  TEST_CASE("a white pixel as PPM") {
    const std::string ppm = encode_ppm(Tensor({1, 1, 3}, 1.0));
    CHECK(ppm == std::string("P6\n1 1\n255\n\xff\xff\xff", 14));
  }

  TEST_CASE("PPM round trip stays within one level") {
    const Generator& gen = default_generator();
    const Tensor img = gen.forward(gen.z_for("io", 0)).image;
    const Tensor back = decode_ppm(encode_ppm(img));
    REQUIRE(back.shape() == img.shape());
    CHECK(back.max_abs_diff(img) <= 0.5 / 255.0 + 1e-12);
    CHECK(encode_ppm(back) == encode_ppm(img));
    CHECK_THROWS(decode_ppm("P5\n1 1\n255\n\x00"));
  }

  TEST_CASE("PBM round trip") {
    BinaryMask m(5, 11);
    for (std::size_t i = 0; i < m.size(); ++i) m.set(i, (i * 7) % 3 == 0);
    const std::string pbm = encode_pbm(m);
    CHECK(pbm.rfind("P4\n11 5\n", 0) == 0);
    CHECK(pbm.size() == 8 + 5 * 2);
    CHECK(decode_pbm(pbm) == m);
  }

  TEST_CASE("PNG encoding") {
    const Generator& gen = default_generator();
    const Tensor img = gen.forward(gen.z_for("io", 1)).image;
    const std::string png = encode_png(img);
    CHECK(png.substr(0, 8) == std::string("\x89PNG\r\n\x1a\n", 8));
    CHECK(encode_png(img) == png);
    CHECK(encode_png(BinaryMask(4, 4, true)).substr(1, 3) == "PNG");
  }

  TEST_CASE("files are written under new directories") {
    const auto dir = std::filesystem::temp_directory_path() / "gandissect-io-test";
    std::filesystem::remove_all(dir);
    export_image(Tensor({2, 2, 3}, 0.5), dir / "a" / "img.ppm");
    export_mask(BinaryMask(2, 2, true), dir / "b" / "mask.png");
    CHECK(read_file(dir / "a" / "img.ppm") == encode_ppm(Tensor({2, 2, 3}, 0.5)));
    CHECK(std::filesystem::exists(dir / "b" / "mask.png"));
    CHECK_THROWS(export_image(Tensor({2, 2, 3}, 0.5), dir / "img.bmp"));
    CHECK_THROWS(read_file(dir / "missing"));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("number formatting round-trips") {
    for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.125, -2.5, 0.0}) CHECK(std::stod(format_number(v)) == v);
    CHECK(format_number(0.5) == "0.5");
    CHECK(format_number(2.0) == "2");
  }

  TEST_CASE("dissection CSV and JSON carry identical values") {
    const Generator& gen = default_generator();
    DissectionOptions o;
    o.n_validation = 40;
    o.n_eval = 40;
    const DissectionReport r = dissect_layer(gen, 4, o);
    const Json j = Json::parse(to_json(r).dump());
    const auto rows = parse_csv(to_csv(r));
    REQUIRE(rows.size() == r.units.size() + 1);
    CHECK(rows[0][6] == "iou:" + r.dictionary[0]);
    for (std::size_t u = 0; u < r.units.size(); ++u) {
      const auto& row = rows[u + 1];
      const Json& ju = j["units"][u];
      CHECK(std::stoul(row[1]) == ju["unit"].get<std::size_t>());
      CHECK(row[2] == ju["label"].get<std::string>());
      CHECK(std::stod(row[3]) == ju["iou"].get<double>());
      CHECK(std::stod(row[4]) == ju["threshold"].get<double>());
      for (std::size_t c = 0; c < r.dictionary.size(); ++c)
        CHECK(std::stod(row[6 + c]) == ju["iou_row"][c].get<double>());
    }
    const DissectionReport back = dissection_from_json(j);
    CHECK(back.units.size() == r.units.size());
    CHECK(back.units[5].iou == r.units[5].iou);
    CHECK(back.dictionary == r.dictionary);
  }

  TEST_CASE("intervention specs round-trip through JSON") {
    InterventionSpec s;
    s.units = {3, 9};
    s.locations = {{1, 2}, {7, 7}};
    s.mode = InterventionMode::kInsert;
    s.levels = {0.25, 1.5};
    s.strength = 0.75;
    const InterventionSpec back = intervention_from_json(Json::parse(to_json(s).dump()));
    CHECK(back.units == s.units);
    CHECK(back.locations == s.locations);
    CHECK(back.mode == s.mode);
    CHECK(back.levels == s.levels);
    CHECK(back.strength == s.strength);
  }

  TEST_CASE("manifests round-trip") {
    RunManifest m;
    m.world_ref = "default";
    m.world_hash = std::string(64, 'f');
    m.subcommand = "dissect";
    m.arguments = {"dissect", "--layer", "4"};
    m.seeds = {{"dissect", 0, 400}};
    m.outputs = {{"report.json", "ab"}, {"units.csv", "cd"}};
    const Json j = to_json(m);
    CHECK(j["schema"] == "gandissect-manifest");
    const RunManifest back = manifest_from_json(Json::parse(j.dump()));
    CHECK(back.world_ref == m.world_ref);
    CHECK(back.world_hash == m.world_hash);
    CHECK(back.arguments == m.arguments);
    REQUIRE(back.seeds.size() == 1);
    CHECK(back.seeds[0].end == 400);
    REQUIRE(back.outputs.size() == 2);
    CHECK(back.outputs[1].path == "units.csv");
    CHECK(back.outputs[1].sha256 == "cd");
  }

  TEST_CASE("report envelope") {
    const Generator& gen = default_generator();
    const Json e = report_envelope("dissection", gen.spec(), {{"dissect", 0, 10}}, Json::object());
    CHECK(e["schema"] == "gandissect-report");
    CHECK(e["schema_version"] == kReportSchemaVersion);
    CHECK(e["kind"] == "dissection");
    CHECK(e["world"]["seed"] == 1);
    CHECK(e["world"]["hash"].get<std::string>().size() == 64);
    CHECK(e["seeds"][0]["end"] == 10);
  }
}
