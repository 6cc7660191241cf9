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

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "gandissect/image_io.hpp"
#include "gandissect/report.hpp"

using namespace gandissect;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "gandissect-cli-test" / name;
  fs::remove_all(p);
  return p;
}

Json manifest(const fs::path& dir) { return Json::parse(read_file(dir / "manifest.json")); }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit with 1") {
    CHECK(run({}).code == cli::kExitUsage);
    CHECK(run({"frobnicate"}).code == cli::kExitUsage);
    CHECK(run({"dissect", "--layer", "four"}).code == cli::kExitUsage);
    CHECK(run({"intervene", "--strength", "2"}).code == cli::kExitUsage);
    CHECK(run({"optimize"}).code == cli::kExitUsage);
    const Run help = run({"--help"});
    CHECK(help.code == cli::kExitOk);
    CHECK(help.out.find("dissect") != std::string::npos);
  }

  TEST_CASE("data errors exit with 2") {
    const fs::path out = scratch("data-error");
    CHECK(run({"generate", "--world", "/nonexistent/world.yaml", "--out", out.string()}).code == cli::kExitData);
    CHECK(run({"intervene", "--units", "99", "--everywhere", "--out", out.string()}).code == cli::kExitData);
    CHECK(run({"optimize", "--concept", "unicorn", "--out", out.string()}).code == cli::kExitData);
    CHECK(run({"replay", "--manifest", (out / "missing.json").string(), "--out", out.string()}).code ==
          cli::kExitData);
  }

  TEST_CASE("identical commands give identical manifests") {
    const fs::path a = scratch("det-a"), b = scratch("det-b");
    for (const auto& dir : {a, b}) {
      REQUIRE(run({"dissect", "--train", "20", "--eval", "20", "--grid-images", "2", "--out", dir.string()}).code ==
              cli::kExitOk);
    }
    CHECK(read_file(a / "manifest.json") == read_file(b / "manifest.json"));
    const Json m = manifest(a);
    CHECK(m["subcommand"] == "dissect");
    CHECK(m["outputs"].size() >= 3);
    for (const auto& o : m["outputs"]) CHECK(fs::exists(a / o["path"].get<std::string>()));
  }

  TEST_CASE("replay reproduces every output hash") {
    const fs::path first = scratch("replay-first"), second = scratch("replay-second");
    REQUIRE(run({"intervene", "--concept", "tree", "--everywhere", "--png", "--out", first.string()}).code ==
            cli::kExitOk);
    REQUIRE(run({"replay", "--manifest", (first / "manifest.json").string(), "--out", second.string()}).code ==
            cli::kExitOk);
    CHECK(manifest(first)["outputs"] == manifest(second)["outputs"]);
    CHECK(fs::exists(second / "after.png"));
  }

  TEST_CASE("the output directory defaults to the environment variable") {
    const fs::path dir = scratch("env");
    ::setenv(cli::kOutEnv, dir.string().c_str(), 1);
    const Run r = run({"generate", "--count", "2"});
    ::unsetenv(cli::kOutEnv);
    REQUIRE(r.code == cli::kExitOk);
    CHECK(fs::exists(dir / "manifest.json"));
    CHECK(fs::exists(dir / "generate.json"));
  }

  TEST_CASE("compare reads two dissection reports") {
    const fs::path a = scratch("cmp-a"), out = scratch("cmp-out");
    REQUIRE(run({"dissect", "--train", "20", "--eval", "20", "--grid-images", "0", "--out", a.string()}).code ==
            cli::kExitOk);
    const std::string report = (a / "dissection.json").string();
    REQUIRE(run({"compare", "--a", report, "--b", report, "--out", out.string()}).code == cli::kExitOk);
    const Json c = Json::parse(read_file(out / "compare.json"));
    CHECK(c["kind"] == "compare");
    CHECK(c["body"]["percent_change"] == 0.0);
  }
}
