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

#include "gandissect/studio.hpp"

#include <httplib.h>
#include <openssl/evp.h>

#include <atomic>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>

#include "gandissect/ace_optimizer.hpp"
#include "gandissect/image_io.hpp"
#include "gandissect/report.hpp"
#include "gandissect/segmenter.hpp"
#include "gandissect/world_io.hpp"

namespace gandissect {

std::string base64_encode(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

Tensor session_image(const Generator& gen, const std::string& stream, std::uint64_t seed,
                     const std::vector<InterventionSpec>& stack) {
  const Tensor z = gen.z_for(stream, seed);
  return stack.empty() ? gen.forward(z).image : apply(gen, z, stack).image;
}

namespace {

struct HttpError : std::runtime_error {
  int status;
  HttpError(int s, const std::string& what) : std::runtime_error(what), status(s) {}
};

// Per-world state shared by every session on that world.
struct World {
  std::string ref;
  std::string hash;
  Generator gen;
  OracleSegmenter seg;

  std::mutex cache_mutex;
  std::map<std::size_t, DissectionReport> reports;
  std::optional<std::map<std::string, AlphaSolution>> alphas;
  std::optional<std::vector<double>> q99;
  std::map<std::string, double> coverage;

  World(std::string r, const WorldSpec& spec) : ref(std::move(r)), hash(world_hash(spec)), gen(spec), seg(spec) {}
};

struct Session {
  std::string id;
  std::shared_ptr<World> world;
  std::uint64_t seed = 0;

  std::mutex mutation;       // held for the whole of a mutation
  mutable std::shared_mutex state;  // guards stack
  std::vector<InterventionSpec> stack;
};

void send_json(httplib::Response& res, const Json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

Json parse_body(const httplib::Request& req) {
  try {
    Json j = req.body.empty() ? Json::object() : Json::parse(req.body);
    if (!j.is_object()) throw HttpError(400, "request body must be a JSON object");
    return j;
  } catch (const Json::parse_error& e) {
    throw HttpError(400, std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace

struct StudioService::Impl {
  StudioOptions options;
  httplib::Server server;

  std::shared_mutex store_mutex;
  std::map<std::string, std::shared_ptr<Session>> sessions;
  std::map<std::string, std::shared_ptr<World>> worlds;  // by ref
  std::uint64_t next_id = 1;

  explicit Impl(StudioOptions o) : options(std::move(o)) {
    worlds["default"] = std::make_shared<World>("default", options.default_world);
    routes();
  }

  std::shared_ptr<World> world_for(const std::string& ref) {
    {
      std::shared_lock lock(store_mutex);
      if (auto it = worlds.find(ref); it != worlds.end()) return it->second;
    }
    WorldSpec spec;
    try {
      spec = resolve_world(ref);
    } catch (const std::exception& e) {
      throw HttpError(400, std::string("bad worldRef: ") + e.what());
    }
    std::unique_lock lock(store_mutex);
    auto& slot = worlds[ref];
    if (!slot) slot = std::make_shared<World>(ref, spec);
    return slot;
  }

  std::shared_ptr<Session> session(const std::string& id) {
    std::shared_lock lock(store_mutex);
    auto it = sessions.find(id);
    if (it == sessions.end()) throw HttpError(404, "unknown session '" + id + "'");
    return it->second;
  }

  const std::vector<double>& q99(World& w) {
    std::lock_guard lock(w.cache_mutex);
    if (!w.q99) w.q99 = insertion_levels(w.gen, w.gen.spec().causal_layer, InsertLevel::kQuantile99);
    return *w.q99;
  }

  double coverage(World& w, const std::string& concept_name) {
    std::lock_guard lock(w.cache_mutex);
    auto it = w.coverage.find(concept_name);
    if (it == w.coverage.end()) {
      it = w.coverage.emplace(concept_name, concept_coverage(w.gen, concept_name, options.coverage_samples)).first;
    }
    return it->second;
  }

  InterventionSpec spec_from(World& w, const Json& body) {
    InterventionSpec spec;
    try {
      spec = intervention_from_json(body);
      if (spec.layer < 1 || spec.layer > kNumLayers) throw std::invalid_argument("layer out of range");
      if (spec.mode == InterventionMode::kInsert && spec.levels.empty()) {
        const std::string level = body.value("level", std::string("q99"));
        std::vector<double> all;
        if (level == "q99" && spec.layer == w.gen.spec().causal_layer) {
          all = q99(w);
        } else {
          all = insertion_levels(w.gen, spec.layer, parse_level(level), body.value("concept", std::string()));
        }
        for (auto u : spec.units) {
          if (!all.empty()) spec.levels.push_back(u < all.size() ? all[u] : 0.0);
        }
      }
      spec.validate(w.gen);
    } catch (const Json::exception& e) {
      throw HttpError(400, std::string("bad intervention: ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw HttpError(400, std::string("bad intervention: ") + e.what());
    }
    return spec;
  }

  Json image_json(World& w, const Tensor& image) {
    const SegmentationSet segs = w.seg.segment_with_parts(image);
    Json masks = Json::object(), areas = Json::object();
    for (std::size_t c = 0; c < segs.labels.size(); ++c) {
      masks[segs.labels[c]] = base64_encode(encode_png(segs.masks[c]));
      areas[segs.labels[c]] = segs.masks[c].count();
    }
    return {{"width", image.dim(1)},
            {"height", image.dim(0)},
            {"format", "png"},
            {"image", base64_encode(encode_png(image))},
            {"masks", masks},
            {"areas", areas}};
  }

  Json session_json(const Session& s) {
    std::shared_lock lock(s.state);
    Json stack = Json::array();
    for (const auto& spec : s.stack) stack.push_back(to_json(spec));
    return {{"sessionId", s.id},
            {"worldRef", s.world->ref},
            {"worldHash", s.world->hash},
            {"seed", s.seed},
            {"stream", options.stream},
            {"stack", stack}};
  }

  // Paired effect of the painted units at this session's z: footprint mean of
  // s_c with the units inserted minus with them ablated, over class coverage.
  Json region_ace(World& w, const Session& s, const std::vector<InterventionSpec>& base,
                  const InterventionSpec& painted) {
    InterventionSpec ins = painted, abl = painted;
    ins.mode = InterventionMode::kInsert;
    if (ins.levels.empty() && ins.layer == w.gen.spec().causal_layer) {
      for (auto u : ins.units) ins.levels.push_back(q99(w).at(u));
    }
    abl.mode = InterventionMode::kAblate;
    auto with = [&](const InterventionSpec& top) {
      std::vector<InterventionSpec> stack = base;
      stack.push_back(top);
      return session_image(w.gen, options.stream, s.seed, stack);
    };
    const SegmentationSet si = w.seg.segment(with(ins)), sa = w.seg.segment(with(abl));
    BinaryMask region(w.gen.image_size(), w.gen.image_size());
    for (const auto& [i, j] : painted.locations) {
      const auto fp = w.gen.footprint(painted.layer, i, j);
      for (std::size_t r = fp.row0; r < fp.row1; ++r)
        for (std::size_t c = fp.col0; c < fp.col1; ++c) region.set(r, c, true);
    }
    const double n = static_cast<double>(region.count());
    Json out = Json::object();
    for (std::size_t c = 0; c < si.labels.size(); ++c) {
      const double raw = n > 0 ? (static_cast<double>((si.masks[c] & region).count()) -
                                  static_cast<double>((sa.masks[c] & region).count())) / n
                               : 0.0;
      const double cov = coverage(w, si.labels[c]);
      out[si.labels[c]] = {{"raw", raw}, {"coverage", cov}, {"ace", cov > 0 ? Json(raw / cov) : Json(nullptr)}};
    }
    return out;
  }

  Json units_json(World& w, std::size_t layer, bool with_alpha) {
    const DissectionReport* report;
    {
      std::lock_guard lock(w.cache_mutex);
      auto it = w.reports.find(layer);
      if (it == w.reports.end()) it = w.reports.emplace(layer, dissect_layer(w.gen, layer, options.dissection)).first;
      report = &it->second;
    }
    Json units = Json::array();
    for (const auto& u : report->units) {
      units.push_back({{"unit", u.unit}, {"label", u.label}, {"iou", u.iou}, {"threshold", u.threshold}});
    }
    Json out = {{"layer", layer}, {"dictionary", report->dictionary}, {"units", units}};
    if (with_alpha && layer == w.gen.spec().causal_layer) {
      std::lock_guard lock(w.cache_mutex);
      if (!w.alphas) {
        std::map<std::string, AlphaSolution> solved;
        for (const auto& c : w.gen.spec().concepts) {
          AlphaHyper hyper;
          hyper.layer = layer;
          hyper.steps = options.alpha_steps;
          hyper.coverage_samples = options.coverage_samples;
          if (concept_coverage(w.gen, c.name, hyper.coverage_samples) <= 0.0) continue;
          hyper.lambda = probe_lambda(w.gen, c.name, hyper);
          solved.emplace(c.name, optimize_alpha(w.gen, c.name, hyper));
        }
        w.alphas = std::move(solved);
      }
      Json rankings = Json::object();
      for (const auto& [name, sol] : *w.alphas) {
        rankings[name] = {{"ranking", sol.ranking}, {"alpha", sol.alpha}, {"lambda", sol.hyper.lambda}};
      }
      out["alpha"] = rankings;
    }
    return out;
  }

  template <typename F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const HttpError& e) {
        send_json(res, {{"error", e.what()}}, e.status);
      } catch (const std::exception& e) {
        send_json(res, {{"error", e.what()}}, 500);
      }
    };
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const Json body = parse_body(req);
      auto s = std::make_shared<Session>();
      try {
        s->world = world_for(body.value("worldRef", std::string("default")));
        s->seed = body.value("seed", std::uint64_t{0});
        if (body.contains("stack")) {
          for (const auto& entry : body.at("stack")) s->stack.push_back(spec_from(*s->world, entry));
        }
      } catch (const Json::exception& e) {
        throw HttpError(400, e.what());
      }
      {
        std::unique_lock lock(store_mutex);
        s->id = "s" + std::to_string(next_id++);
        sessions[s->id] = s;
      }
      send_json(res, {{"sessionId", s->id}}, 201);
    }));

    server.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, session_json(*session(req.matches[1])));
    }));

    server.Get(R"(/sessions/([^/]+)/image)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = session(req.matches[1]);
      std::vector<InterventionSpec> stack;
      {
        std::shared_lock lock(s->state);
        stack = s->stack;
      }
      Json out = image_json(*s->world, session_image(s->world->gen, options.stream, s->seed, stack));
      out["stackDepth"] = stack.size();
      send_json(res, out);
    }));

    server.Get(R"(/sessions/([^/]+)/units)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = session(req.matches[1]);
      std::size_t layer = s->world->gen.spec().causal_layer;
      if (req.has_param("layer")) {
        try {
          layer = std::stoul(req.get_param_value("layer"));
        } catch (const std::logic_error&) {
          throw HttpError(400, "bad layer");
        }
      }
      if (layer < 1 || layer > kNumLayers) throw HttpError(400, "layer out of range");
      const bool alpha = !req.has_param("alpha") || req.get_param_value("alpha") != "0";
      send_json(res, units_json(*s->world, layer, alpha));
    }));

    server.Post(R"(/sessions/([^/]+)/intervene)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = session(req.matches[1]);
      std::unique_lock mutation(s->mutation, std::try_to_lock);
      if (!mutation.owns_lock()) throw HttpError(409, "session is being modified by another request");
      const InterventionSpec spec = spec_from(*s->world, parse_body(req));
      std::vector<InterventionSpec> before;
      {
        std::shared_lock lock(s->state);
        before = s->stack;
      }
      std::vector<InterventionSpec> after = before;
      after.push_back(spec);
      World& w = *s->world;
      const Tensor old_image = session_image(w.gen, options.stream, s->seed, before);
      const Tensor new_image = session_image(w.gen, options.stream, s->seed, after);
      const SegmentationSet sb = w.seg.segment_with_parts(old_image), sn = w.seg.segment_with_parts(new_image);
      Json deltas = Json::object();
      for (std::size_t c = 0; c < sb.labels.size(); ++c) {
        deltas[sb.labels[c]] = static_cast<long>(sn.masks[c].count()) - static_cast<long>(sb.masks[c].count());
      }
      Json out = image_json(w, new_image);
      out["areaDelta"] = deltas;
      out["ace"] = region_ace(w, *s, before, spec);
      {
        std::unique_lock lock(s->state);
        s->stack = std::move(after);
      }
      out["stackDepth"] = before.size() + 1;
      send_json(res, out);
    }));

    server.Post(R"(/sessions/([^/]+)/undo)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = session(req.matches[1]);
      std::unique_lock mutation(s->mutation, std::try_to_lock);
      if (!mutation.owns_lock()) throw HttpError(409, "session is being modified by another request");
      std::size_t depth;
      {
        std::unique_lock lock(s->state);
        if (s->stack.empty()) throw HttpError(400, "nothing to undo");
        s->stack.pop_back();
        depth = s->stack.size();
      }
      send_json(res, {{"sessionId", s->id}, {"stackDepth", depth}});
    }));

    server.Delete(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto s = session(req.matches[1]);
      std::unique_lock mutation(s->mutation, std::try_to_lock);
      if (!mutation.owns_lock()) throw HttpError(409, "session is being modified by another request");
      std::unique_lock lock(store_mutex);
      sessions.erase(s->id);
      res.status = 204;
    }));
  }
};

StudioService::StudioService(StudioOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

StudioService::~StudioService() { stop(); }

bool StudioService::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int StudioService::bind_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool StudioService::listen_after_bind() { return impl_->server.listen_after_bind(); }

void StudioService::wait_until_ready() const { impl_->server.wait_until_ready(); }

void StudioService::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace gandissect
