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

#include "gandissect/world_io.hpp"

#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include <charconv>
#include <set>
#include <stdexcept>

#include "gandissect/image_io.hpp"

namespace gandissect {

namespace {

std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

YAML::Node affine_node(const LatentAffine& a) {
  YAML::Node n(YAML::NodeType::Map);
  n["base"] = num(a.base);
  YAML::Node terms(YAML::NodeType::Sequence);
  for (const auto& [index, coef] : a.terms) {
    YAML::Node t(YAML::NodeType::Sequence);
    t.push_back(index);
    t.push_back(num(coef));
    t.SetStyle(YAML::EmitterStyle::Flow);
    terms.push_back(t);
  }
  terms.SetStyle(YAML::EmitterStyle::Flow);
  n["terms"] = terms;
  n.SetStyle(YAML::EmitterStyle::Flow);
  return n;
}

template <typename T>
YAML::Node flow_seq(const T& values) {
  YAML::Node n(YAML::NodeType::Sequence);
  for (const auto& v : values) {
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) {
      n.push_back(num(v));
    } else {
      n.push_back(v);
    }
  }
  n.SetStyle(YAML::EmitterStyle::Flow);
  return n;
}

YAML::Node scatter_node(const ScatterUnitSpec& s) {
  YAML::Node n(YAML::NodeType::Map);
  n["unit"] = s.unit;
  n["latents"] = flow_seq(s.latents);
  n["bias"] = num(s.bias);
  n.SetStyle(YAML::EmitterStyle::Flow);
  return n;
}

[[noreturn]] void schema_error(const YAML::Node& node, const std::string& what) {
  std::string where = node.Mark().is_null() ? "" : " (line " + std::to_string(node.Mark().line + 1) + ")";
  throw std::invalid_argument("world file: " + what + where);
}

void check_keys(const YAML::Node& node, const std::set<std::string>& allowed, const std::string& context) {
  if (!node.IsMap()) schema_error(node, context + " must be a mapping");
  for (const auto& kv : node) {
    auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) schema_error(kv.first, "unknown key '" + key + "' in " + context);
  }
}

template <typename T>
T get(const YAML::Node& node, const char* key, T fallback) {
  const YAML::Node v = node[key];
  if (!v) return fallback;
  try {
    return v.as<T>();
  } catch (const YAML::Exception&) {
    schema_error(v, std::string("bad value for '") + key + "'");
  }
}

template <typename T>
T need(const YAML::Node& node, const char* key) {
  if (!node[key]) schema_error(node, std::string("missing key '") + key + "'");
  return get<T>(node, key, T{});
}

LatentAffine parse_affine(const YAML::Node& n) {
  check_keys(n, {"base", "terms"}, "box edge");
  LatentAffine a;
  a.base = get<double>(n, "base", 0.0);
  if (n["terms"]) {
    for (const auto& t : n["terms"]) {
      if (!t.IsSequence() || t.size() != 2) schema_error(t, "latent term must be [index, coefficient]");
      a.terms.emplace_back(t[0].as<std::size_t>(), t[1].as<double>());
    }
  }
  return a;
}

ScatterUnitSpec parse_scatter(const YAML::Node& n) {
  check_keys(n, {"unit", "latents", "bias"}, "scattered unit");
  ScatterUnitSpec s;
  s.unit = need<std::size_t>(n, "unit");
  s.latents = need<std::vector<std::size_t>>(n, "latents");
  s.bias = get<double>(n, "bias", s.bias);
  return s;
}

}  // namespace

std::string world_to_yaml(const WorldSpec& spec) {
  YAML::Node root(YAML::NodeType::Map);
  root["schema_version"] = spec.schema_version;
  root["name"] = spec.name;
  root["seed"] = spec.seed;
  root["latent_dim"] = spec.latent_dim;
  root["image_size"] = spec.image_size;
  root["units"] = spec.units;
  root["causal_layer"] = spec.causal_layer;
  root["ramp_steepness"] = num(spec.ramp_steepness);
  root["unit_gain_spread"] = num(spec.unit_gain_spread);
  root["depth_order"] = flow_seq(spec.depth_order);

  YAML::Node render(YAML::NodeType::Map);
  render["blur_center"] = num(spec.render.blur_center);
  render["sharpen_gain"] = num(spec.render.sharpen_gain);
  render["sharpen_offset"] = num(spec.render.sharpen_offset);
  render["occlusion_band"] = num(spec.render.occlusion_band);
  render["artifact_strength"] = num(spec.render.artifact_strength);
  render["background"] = flow_seq(spec.render.background);
  root["render"] = render;

  YAML::Node concepts(YAML::NodeType::Sequence);
  for (const auto& c : spec.concepts) {
    YAML::Node cn(YAML::NodeType::Map);
    cn["name"] = c.name;
    cn["palette"] = flow_seq(c.palette);
    cn["tau"] = num(c.tau);
    cn["scene_defining"] = c.scene_defining;
    YAML::Node groups(YAML::NodeType::Sequence);
    for (const auto& g : c.groups) {
      YAML::Node gn(YAML::NodeType::Map);
      gn["part"] = g.part;
      gn["render_gain"] = num(g.render_gain);
      gn["units"] = flow_seq(g.units);
      YAML::Node box(YAML::NodeType::Map);
      if (g.box.top) box["top"] = affine_node(*g.box.top);
      if (g.box.bottom) box["bottom"] = affine_node(*g.box.bottom);
      if (g.box.left) box["left"] = affine_node(*g.box.left);
      if (g.box.right) box["right"] = affine_node(*g.box.right);
      gn["box"] = box;
      groups.push_back(gn);
    }
    cn["groups"] = groups;
    concepts.push_back(cn);
  }
  root["concepts"] = concepts;

  YAML::Node distractors(YAML::NodeType::Sequence);
  for (const auto& d : spec.distractors) {
    YAML::Node n(YAML::NodeType::Map);
    n["unit"] = d.unit;
    n["concept"] = d.concept_name;
    n["group"] = d.group;
    n.SetStyle(YAML::EmitterStyle::Flow);
    distractors.push_back(n);
  }
  root["distractors"] = distractors;

  YAML::Node noise(YAML::NodeType::Sequence), artifacts(YAML::NodeType::Sequence);
  for (const auto& s : spec.noise_units) noise.push_back(scatter_node(s));
  for (const auto& s : spec.artifact_units) artifacts.push_back(scatter_node(s));
  root["noise_units"] = noise;
  root["artifact_units"] = artifacts;

  YAML::Node vetoes(YAML::NodeType::Sequence);
  for (const auto& v : spec.vetoes) {
    YAML::Node n(YAML::NodeType::Map);
    n["concept"] = v.concept_name;
    n["context"] = v.context;
    n["layer"] = v.layer;
    n["lo"] = num(v.lo);
    n["hi"] = num(v.hi);
    n.SetStyle(YAML::EmitterStyle::Flow);
    vetoes.push_back(n);
  }
  root["vetoes"] = vetoes;

  YAML::Emitter out;
  out << root;
  return std::string(out.c_str()) + "\n";
}

WorldSpec world_from_yaml(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw std::invalid_argument(std::string("world file: ") + e.what());
  }
  check_keys(root,
             {"schema_version", "name", "seed", "latent_dim", "image_size", "units", "causal_layer", "ramp_steepness",
              "unit_gain_spread", "depth_order", "render", "concepts", "distractors", "noise_units", "artifact_units",
              "vetoes"},
             "world");
  WorldSpec w;
  w.schema_version = need<int>(root, "schema_version");
  if (w.schema_version != kWorldSchemaVersion) {
    throw std::invalid_argument("world file: unsupported schema_version " + std::to_string(w.schema_version));
  }
  w.name = get<std::string>(root, "name", w.name);
  w.seed = get<std::uint64_t>(root, "seed", w.seed);
  w.latent_dim = get<std::size_t>(root, "latent_dim", w.latent_dim);
  w.image_size = get<std::size_t>(root, "image_size", w.image_size);
  w.units = get<std::size_t>(root, "units", w.units);
  w.causal_layer = get<std::size_t>(root, "causal_layer", w.causal_layer);
  w.ramp_steepness = get<double>(root, "ramp_steepness", w.ramp_steepness);
  w.unit_gain_spread = get<double>(root, "unit_gain_spread", w.unit_gain_spread);
  w.depth_order = need<std::vector<std::string>>(root, "depth_order");

  if (const YAML::Node r = root["render"]) {
    check_keys(r, {"blur_center", "sharpen_gain", "sharpen_offset", "occlusion_band", "artifact_strength", "background"},
               "render");
    w.render.blur_center = get<double>(r, "blur_center", w.render.blur_center);
    w.render.sharpen_gain = get<double>(r, "sharpen_gain", w.render.sharpen_gain);
    w.render.sharpen_offset = get<double>(r, "sharpen_offset", w.render.sharpen_offset);
    w.render.occlusion_band = get<double>(r, "occlusion_band", w.render.occlusion_band);
    w.render.artifact_strength = get<double>(r, "artifact_strength", w.render.artifact_strength);
    w.render.background = get<std::array<double, 3>>(r, "background", w.render.background);
  }

  for (const auto& cn : root["concepts"]) {
    check_keys(cn, {"name", "palette", "tau", "scene_defining", "groups"}, "concept");
    ConceptSpec c;
    c.name = need<std::string>(cn, "name");
    c.palette = need<std::array<double, 3>>(cn, "palette");
    c.tau = get<double>(cn, "tau", c.tau);
    c.scene_defining = get<bool>(cn, "scene_defining", false);
    for (const auto& gn : cn["groups"]) {
      check_keys(gn, {"part", "render_gain", "units", "box"}, "unit group");
      UnitGroup g;
      g.part = get<std::string>(gn, "part", "");
      g.render_gain = get<double>(gn, "render_gain", g.render_gain);
      g.units = need<std::vector<std::size_t>>(gn, "units");
      if (const YAML::Node box = gn["box"]) {
        check_keys(box, {"top", "bottom", "left", "right"}, "box");
        if (box["top"]) g.box.top = parse_affine(box["top"]);
        if (box["bottom"]) g.box.bottom = parse_affine(box["bottom"]);
        if (box["left"]) g.box.left = parse_affine(box["left"]);
        if (box["right"]) g.box.right = parse_affine(box["right"]);
      }
      c.groups.push_back(std::move(g));
    }
    w.concepts.push_back(std::move(c));
  }
  for (const auto& n : root["distractors"]) {
    check_keys(n, {"unit", "concept", "group"}, "distractor");
    w.distractors.push_back({need<std::size_t>(n, "unit"), need<std::string>(n, "concept"), get<std::size_t>(n, "group", 0)});
  }
  for (const auto& n : root["noise_units"]) w.noise_units.push_back(parse_scatter(n));
  for (const auto& n : root["artifact_units"]) w.artifact_units.push_back(parse_scatter(n));
  for (const auto& n : root["vetoes"]) {
    check_keys(n, {"concept", "context", "layer", "lo", "hi"}, "veto");
    VetoRule v;
    v.concept_name = need<std::string>(n, "concept");
    v.context = need<std::string>(n, "context");
    v.layer = get<std::size_t>(n, "layer", v.layer);
    v.lo = get<double>(n, "lo", v.lo);
    v.hi = get<double>(n, "hi", v.hi);
    w.vetoes.push_back(std::move(v));
  }
  w.validate();
  return w;
}

WorldSpec load_world(const std::filesystem::path& path) { return world_from_yaml(read_file(path)); }

void save_world(const WorldSpec& spec, const std::filesystem::path& path) { write_file(path, world_to_yaml(spec)); }

WorldSpec resolve_world(const std::string& ref) {
  if (ref == "default") return make_default_world();
  if (ref.rfind("default:", 0) == 0) {
    const std::string tail = ref.substr(8);
    std::uint64_t seed = 0;
    auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), seed);
    if (ec != std::errc{} || ptr != tail.data() + tail.size()) throw std::invalid_argument("bad world seed in '" + ref + "'");
    return make_default_world(seed);
  }
  return load_world(ref);
}

std::string world_hash(const WorldSpec& spec) { return sha256_hex(world_to_yaml(spec)); }

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

}  // namespace gandissect
