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

#include <atomic>
#include <filesystem>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "cli.hpp"
#include "gandissect/image_io.hpp"
#include "gandissect/report.hpp"
#include "gandissect/studio.hpp"
#include "helpers.hpp"

using namespace gandissect;
namespace fs = std::filesystem;

namespace {

std::string base64_decode(const std::string& in) {
  static const std::string alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  unsigned buffer = 0;
  int bits = 0;
  for (char ch : in) {
    if (ch == '=') break;
    const auto v = alphabet.find(ch);
    REQUIRE(v != std::string::npos);
    buffer = (buffer << 6) | static_cast<unsigned>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((buffer >> bits) & 0xff));
    }
  }
  return out;
}

class Server {
 public:
  Server() {
    StudioOptions o;
    o.alpha_steps = 10;
    o.coverage_samples = 40;
    o.dissection.n_validation = 20;
    o.dissection.n_eval = 20;
    service_ = std::make_unique<StudioService>(o);
    port_ = service_->bind_any_port("127.0.0.1");
    thread_ = std::thread([this] { service_->listen_after_bind(); });
    service_->wait_until_ready();
  }
  ~Server() {
    service_->stop();
    thread_.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(120, 0);
    return c;
  }

 private:
  std::unique_ptr<StudioService> service_;
  int port_ = 0;
  std::thread thread_;
};

Json post(httplib::Client& c, const std::string& path, const Json& body, int expect) {
  const auto res = c.Post(path, body.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == expect);
  return res->body.empty() ? Json() : Json::parse(res->body);
}

Json get(httplib::Client& c, const std::string& path, int expect = 200) {
  const auto res = c.Get(path);
  REQUIRE(res);
  CHECK(res->status == expect);
  return Json::parse(res->body);
}

std::string create(httplib::Client& c, std::uint64_t seed) {
  return post(c, "/sessions", {{"seed", seed}}, 201)["sessionId"].get<std::string>();
}

Json tree_edit(const std::string& mode, std::vector<std::vector<std::size_t>> locations, double strength = 1.0) {
  return {{"layer", 4},
          {"units", testing::default_generator().spec().causal_units("tree")},
          {"locations", locations},
          {"mode", mode},
          {"strength", strength}};
}

std::vector<std::vector<std::size_t>> every_cell() {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) out.push_back({i, j});
  return out;
}

}  // namespace

TEST_SUITE("studio") {
  TEST_CASE("session round trip") {
    Server server;
    auto c = server.client();
    const std::string id = create(c, 5);
    const Json s = get(c, "/sessions/" + id);
    CHECK(s["seed"] == 5);
    CHECK(s["stack"].empty());

    const Json before = get(c, "/sessions/" + id + "/image");
    CHECK(before["width"] == 32);
    CHECK(base64_decode(before["image"]).substr(1, 3) == "PNG");

    const Json same = post(c, "/sessions/" + id + "/intervene", tree_edit("ablate", every_cell(), 0.0), 200);
    CHECK(same["image"] == before["image"]);
    CHECK(same["stackDepth"] == 1);

    const Json gone = post(c, "/sessions/" + id + "/intervene", tree_edit("ablate", every_cell()), 200);
    CHECK(gone["areas"]["tree"] == 0);
    CHECK(gone["areaDelta"]["tree"] == -before["areas"]["tree"].get<long>());
    CHECK(gone["stackDepth"] == 2);

    CHECK(post(c, "/sessions/" + id + "/undo", Json::object(), 200)["stackDepth"] == 1);
    CHECK(get(c, "/sessions/" + id + "/image")["image"] == before["image"]);
    post(c, "/sessions/" + id + "/undo", Json::object(), 200);
    post(c, "/sessions/" + id + "/undo", Json::object(), 400);

    const auto del = c.Delete("/sessions/" + id);
    REQUIRE(del);
    CHECK(del->status == 204);
    get(c, "/sessions/" + id, 404);
  }

  TEST_CASE("request errors") {
    Server server;
    auto c = server.client();
    get(c, "/sessions/nope/image", 404);
    post(c, "/sessions/nope/undo", Json::object(), 404);
    const std::string id = create(c, 0);
    const auto bad = c.Post("/sessions/" + id + "/intervene", "{not json", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    post(c, "/sessions/" + id + "/intervene", {{"units", {1}}, {"locations", Json::array()}}, 400);
    post(c, "/sessions/" + id + "/intervene", {{"units", {1}}, {"locations", {{9, 9}}}}, 400);
    post(c, "/sessions", {{"worldRef", "/missing/world.yaml"}}, 400);
    get(c, "/sessions/" + id + "/units?layer=12", 400);
  }

  TEST_CASE("sessions are isolated") {
    Server server;
    auto c = server.client();
    const std::string a = create(c, 2), b = create(c, 2);
    CHECK(a != b);
    const Json before = get(c, "/sessions/" + b + "/image");
    post(c, "/sessions/" + a + "/intervene", tree_edit("ablate", every_cell()), 200);
    CHECK(get(c, "/sessions/" + b + "/image")["image"] == before["image"]);
    CHECK(get(c, "/sessions/" + b)["stack"].empty());
  }

  TEST_CASE("concurrent mutations are accepted or refused, never lost") {
    Server server;
    auto setup = server.client();
    const std::string id = create(setup, 1);
    std::atomic<int> ok{0}, busy{0}, other{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < 6; ++t) {
      threads.emplace_back([&, t] {
        auto c = server.client();
        const Json edit = tree_edit("ablate", {{static_cast<std::size_t>(t), 0}});
        const auto res = c.Post("/sessions/" + id + "/intervene", edit.dump(), "application/json");
        if (res && res->status == 200)
          ++ok;
        else if (res && res->status == 409)
          ++busy;
        else
          ++other;
      });
    }
    for (auto& t : threads) t.join();
    CHECK(other == 0);
    CHECK(ok >= 1);
    CHECK(ok + busy == 6);
    CHECK(get(setup, "/sessions/" + id)["stack"].size() == static_cast<std::size_t>(ok.load()));
  }

  TEST_CASE("a recorded stack replays on a fresh service") {
    Json stack, image;
    {
      Server server;
      auto c = server.client();
      const std::string id = create(c, 4);
      post(c, "/sessions/" + id + "/intervene", tree_edit("insert", {{2, 2}, {2, 3}}), 200);
      post(c, "/sessions/" + id + "/intervene", tree_edit("ablate", {{6, 6}}), 200);
      stack = get(c, "/sessions/" + id)["stack"];
      image = get(c, "/sessions/" + id + "/image")["image"];
    }
    Server fresh;
    auto c = fresh.client();
    const std::string id = post(c, "/sessions", {{"seed", 4}, {"stack", stack}}, 201)["sessionId"];
    CHECK(get(c, "/sessions/" + id + "/image")["image"] == image);
  }

  TEST_CASE("studio edits render exactly like the command line") {
    Server server;
    auto c = server.client();
    const std::string id = create(c, 3);
    const Json units = get(c, "/sessions/" + id + "/units?layer=4&alpha=1");
    REQUIRE(units["units"].size() == 64);
    REQUIRE(units["alpha"].contains("tree"));
    const Json before = get(c, "/sessions/" + id + "/image");
    const Json edited = post(c, "/sessions/" + id + "/intervene", tree_edit("insert", {{5, 3}}), 200);

    std::string unit_list;
    for (auto u : testing::default_generator().spec().causal_units("tree"))
      unit_list += (unit_list.empty() ? "" : ",") + std::to_string(u);
    const fs::path out = fs::temp_directory_path() / "gandissect-studio-cli";
    fs::remove_all(out);
    std::ostringstream sink;
    REQUIRE(cli::run({"intervene", "--units", unit_list, "--locations", "5,3", "--mode", "insert", "--seed", "3",
                      "--png", "--out", out.string()},
                     sink, sink) == cli::kExitOk);
    CHECK(base64_decode(edited["image"]) == read_file(out / "after.png"));
    CHECK(base64_decode(before["image"]) == read_file(out / "before.png"));

    post(c, "/sessions/" + id + "/undo", Json::object(), 200);
    CHECK(get(c, "/sessions/" + id + "/image")["image"] == before["image"]);
  }
}
