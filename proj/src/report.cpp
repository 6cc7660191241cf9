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

#include "gandissect/report.hpp"

#include <charconv>
#include <sstream>
#include <stdexcept>

#include "gandissect/world_io.hpp"

namespace gandissect {

namespace {

Json seeds_json(const std::vector<SeedRange>& seeds) {
  Json out = Json::array();
  for (const auto& s : seeds) out.push_back({{"stream", s.stream}, {"begin", s.begin}, {"end", s.end}});
  return out;
}

std::vector<SeedRange> seeds_from_json(const Json& j) {
  std::vector<SeedRange> out;
  for (const auto& s : j) out.push_back({s.at("stream"), s.at("begin"), s.at("end")});
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string join_units(const std::vector<std::size_t>& units) {
  std::string out;
  for (std::size_t i = 0; i < units.size(); ++i) out += (i ? " " : "") + std::to_string(units[i]);
  return out;
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

Json report_envelope(const std::string& kind, const WorldSpec& spec, const std::vector<SeedRange>& seeds, Json body) {
  Json out;
  out["schema"] = "gandissect-report";
  out["schema_version"] = kReportSchemaVersion;
  out["kind"] = kind;
  out["tool_version"] = kToolVersion;
  out["world"] = {{"name", spec.name}, {"seed", spec.seed}, {"hash", world_hash(spec)}};
  out["seeds"] = seeds_json(seeds);
  out["body"] = std::move(body);
  return out;
}

Json to_json(const DissectionReport& report) {
  Json units = Json::array();
  for (const auto& u : report.units) {
    units.push_back({{"layer", u.layer},
                     {"unit", u.unit},
                     {"label", u.label},
                     {"iou", u.iou},
                     {"threshold", u.threshold},
                     {"degenerate", u.degenerate},
                     {"iou_row", u.iou_row},
                     {"threshold_row", u.threshold_row},
                     {"iqr_row", u.iqr_row}});
  }
  Json counts = Json::object();
  for (const auto& [label, n] : report.matched_counts()) counts[label] = n;
  const auto& o = report.options;
  return {{"world", report.world},
          {"world_seed", report.world_seed},
          {"layer", report.layer},
          {"dictionary", report.dictionary},
          {"options",
           {{"n_validation", o.n_validation},
            {"n_eval", o.n_eval},
            {"stream", o.stream},
            {"iou_floor", o.iou_floor},
            {"parts", o.parts},
            {"upsample", o.upsample == UpsampleMode::kNearest ? "nearest" : "bilinear"}}},
          {"matched_counts", counts},
          {"matched_units", report.matched_units()},
          {"units", units}};
}

DissectionReport dissection_from_json(const Json& body) {
  DissectionReport r;
  r.world = body.at("world");
  r.world_seed = body.at("world_seed");
  r.layer = body.at("layer");
  r.dictionary = body.at("dictionary").get<std::vector<std::string>>();
  const auto& o = body.at("options");
  r.options.n_validation = o.at("n_validation");
  r.options.n_eval = o.at("n_eval");
  r.options.stream = o.at("stream");
  r.options.iou_floor = o.at("iou_floor");
  r.options.parts = o.at("parts");
  r.options.upsample = o.at("upsample") == "bilinear" ? UpsampleMode::kBilinear : UpsampleMode::kNearest;
  for (const auto& u : body.at("units")) {
    UnitLabel l;
    l.layer = u.at("layer");
    l.unit = u.at("unit");
    l.label = u.at("label");
    l.iou = u.at("iou");
    l.threshold = u.at("threshold");
    l.degenerate = u.at("degenerate");
    l.iou_row = u.at("iou_row").get<std::vector<double>>();
    l.threshold_row = u.at("threshold_row").get<std::vector<double>>();
    l.iqr_row = u.at("iqr_row").get<std::vector<double>>();
    r.units.push_back(std::move(l));
  }
  return r;
}

std::string to_csv(const DissectionReport& report) {
  std::ostringstream out;
  out << "layer,unit,label,iou,threshold,degenerate";
  for (const auto& c : report.dictionary) out << "," << csv_field("iou:" + c);
  out << "\n";
  for (const auto& u : report.units) {
    out << u.layer << "," << u.unit << "," << csv_field(u.label) << "," << format_number(u.iou) << ","
        << format_number(u.threshold) << "," << (u.degenerate ? 1 : 0);
    for (double v : u.iou_row) out << "," << format_number(v);
    out << "\n";
  }
  return out.str();
}

Json to_json(const ReportDiff& diff) {
  Json concepts = Json::array();
  for (const auto& c : diff.concepts) {
    concepts.push_back({{"label", c.label}, {"count_a", c.count_a}, {"count_b", c.count_b}, {"delta", c.delta}});
  }
  return {{"concepts", concepts},
          {"distinct_a", diff.distinct_a},
          {"distinct_b", diff.distinct_b},
          {"matched_a", diff.matched_a},
          {"matched_b", diff.matched_b},
          {"percent_change", optional_number(diff.percent_change)}};
}

std::string to_csv(const ReportDiff& diff) {
  std::ostringstream out;
  out << "label,count_a,count_b,delta\n";
  for (const auto& c : diff.concepts) {
    out << csv_field(c.label) << "," << c.count_a << "," << c.count_b << "," << c.delta << "\n";
  }
  return out.str();
}

Json to_json(const InterventionSpec& spec) {
  Json locations = Json::array();
  for (const auto& [i, j] : spec.locations) locations.push_back({i, j});
  return {{"layer", spec.layer},
          {"units", spec.units},
          {"locations", locations},
          {"mode", mode_name(spec.mode)},
          {"levels", spec.levels},
          {"strength", spec.strength}};
}

InterventionSpec intervention_from_json(const Json& j) {
  InterventionSpec s;
  s.layer = j.value("layer", s.layer);
  s.units = j.at("units").get<std::vector<std::size_t>>();
  for (const auto& loc : j.at("locations")) {
    if (!loc.is_array() || loc.size() != 2) throw std::invalid_argument("location must be [row, col]");
    s.locations.emplace_back(loc[0].get<std::size_t>(), loc[1].get<std::size_t>());
  }
  s.mode = parse_mode(j.value("mode", std::string("ablate")));
  if (j.contains("levels")) s.levels = j.at("levels").get<std::vector<double>>();
  s.strength = j.value("strength", 1.0);
  return s;
}

Json to_json(const AceResult& r) {
  return {{"concept", r.concept_name},
          {"context", r.context},
          {"insert_mean", r.insert_mean},
          {"ablate_mean", r.ablate_mean},
          {"coverage", r.coverage},
          {"raw", r.raw},
          {"ace", optional_number(r.ace)},
          {"samples", r.samples},
          {"policy", r.policy},
          {"empty", r.empty}};
}

std::string to_csv(const std::vector<AceResult>& results) {
  std::ostringstream out;
  out << "concept,context,insert_mean,ablate_mean,coverage,raw,ace,samples,policy,empty\n";
  for (const auto& r : results) {
    out << csv_field(r.concept_name) << "," << csv_field(r.context) << "," << format_number(r.insert_mean) << ","
        << format_number(r.ablate_mean) << "," << format_number(r.coverage) << "," << format_number(r.raw) << ","
        << (r.ace ? format_number(*r.ace) : "") << "," << r.samples << "," << r.policy << "," << (r.empty ? 1 : 0)
        << "\n";
  }
  return out.str();
}

Json to_json(const LayerTrace& trace) {
  Json excluded = Json::array();
  for (const auto& e : trace.excluded) excluded.push_back(e);
  return {{"layers", trace.layers},
          {"mean_change", trace.mean_change},
          {"excluded", excluded},
          {"final_shape", trace.final_change.shape()},
          {"final_change", trace.final_change.values()}};
}

std::string to_csv(const LayerTrace& trace) {
  std::ostringstream out;
  out << "layer,mean_change,excluded\n";
  for (std::size_t i = 0; i < trace.layers.size(); ++i) {
    out << trace.layers[i] << "," << format_number(trace.mean_change[i]) << "," << join_units(trace.excluded[i])
        << "\n";
  }
  return out.str();
}

Json to_json(const AlphaSolution& s) {
  const auto& h = s.hyper;
  Json hyper = {{"layer", h.layer},
                {"lambda", h.lambda},
                {"learning_rate", h.learning_rate},
                {"steps", h.steps},
                {"batch", h.batch},
                {"init", h.init},
                {"seed", h.seed},
                {"coverage_samples", h.coverage_samples}};
  hyper["levels"] = h.levels ? Json(*h.levels) : Json(nullptr);
  return {{"concept", s.concept_name}, {"alpha", s.alpha},         {"ranking", s.ranking},
          {"coverage", s.coverage},    {"objective", s.objective}, {"loss", s.loss},
          {"hyper", hyper}};
}

std::string trajectory_csv(const AlphaSolution& s) {
  std::ostringstream out;
  out << "step,objective,loss\n";
  for (std::size_t i = 0; i < s.objective.size(); ++i) {
    out << i << "," << format_number(s.objective[i]) << "," << format_number(s.loss[i]) << "\n";
  }
  return out.str();
}

std::string alpha_csv(const AlphaSolution& s) {
  std::vector<std::size_t> rank(s.alpha.size());
  for (std::size_t r = 0; r < s.ranking.size(); ++r) rank[s.ranking[r]] = r;
  std::ostringstream out;
  out << "unit,alpha,rank\n";
  for (std::size_t u = 0; u < s.alpha.size(); ++u) out << u << "," << format_number(s.alpha[u]) << "," << rank[u] << "\n";
  return out.str();
}

Json to_json(const AblationCurve& curve) {
  return {{"concept", curve.concept_name}, {"k", curve.k}, {"remaining", curve.remaining}};
}

std::string to_csv(const std::vector<std::string>& names, const std::vector<AblationCurve>& curves) {
  if (names.size() != curves.size() || curves.empty()) throw std::invalid_argument("curve names and curves differ");
  std::ostringstream out;
  out << "k";
  for (const auto& n : names) out << "," << csv_field(n);
  out << "\n";
  for (std::size_t i = 0; i < curves[0].k.size(); ++i) {
    out << curves[0].k[i];
    for (const auto& c : curves) out << "," << format_number(c.remaining.at(i));
    out << "\n";
  }
  return out.str();
}

Json to_json(const std::vector<RemovalScore>& scores) {
  Json out = Json::array();
  for (const auto& s : scores) {
    out.push_back({{"concept", s.concept_name}, {"k", s.k}, {"removed", s.removed}, {"scene_defining", s.scene_defining}});
  }
  return out;
}

std::string to_csv(const std::vector<RemovalScore>& scores) {
  std::ostringstream out;
  out << "concept,k,removed,scene_defining\n";
  for (const auto& s : scores) {
    out << csv_field(s.concept_name) << "," << s.k << "," << format_number(s.removed) << ","
        << (s.scene_defining ? 1 : 0) << "\n";
  }
  return out.str();
}

Json to_json(const ArtifactFlagSet& flags) {
  Json evidence = Json::array();
  for (const auto& e : flags.evidence) {
    evidence.push_back({{"unit", e.unit}, {"top_images", e.top_images}, {"energy", e.energy}, {"active", e.active}});
  }
  return {{"layer", flags.layer}, {"flagged", flags.flagged}, {"evidence", evidence}};
}

Json to_json(const RepairReport& r) {
  return {{"flagged", r.flagged},
          {"frechet_original", r.frechet_original},
          {"frechet_repaired", r.frechet_repaired},
          {"frechet_random", r.frechet_random},
          {"frechet_random_mean", r.frechet_random_mean},
          {"preserved_delta", r.preserved_delta},
          {"total_delta", r.total_delta},
          {"samples", r.samples}};
}

std::string to_csv(const RepairReport& r) {
  std::ostringstream out;
  out << "method,frechet,preserved_delta,total_delta\n";
  out << "original," << format_number(r.frechet_original) << ",0,0\n";
  out << "flagged-ablation," << format_number(r.frechet_repaired) << "," << format_number(r.preserved_delta) << ","
      << format_number(r.total_delta) << "\n";
  out << "random-ablation-mean," << format_number(r.frechet_random_mean) << ",,\n";
  for (std::size_t i = 0; i < r.frechet_random.size(); ++i) {
    out << "random-ablation-" << i << "," << format_number(r.frechet_random[i]) << ",,\n";
  }
  return out.str();
}

Json to_json(const RunManifest& m) {
  Json outputs = Json::array();
  for (const auto& o : m.outputs) outputs.push_back({{"path", o.path}, {"sha256", o.sha256}});
  return {{"schema", "gandissect-manifest"},
          {"schema_version", kReportSchemaVersion},
          {"tool_version", m.tool_version},
          {"world_ref", m.world_ref},
          {"world_hash", m.world_hash},
          {"subcommand", m.subcommand},
          {"arguments", m.arguments},
          {"seeds", seeds_json(m.seeds)},
          {"outputs", outputs}};
}

RunManifest manifest_from_json(const Json& j) {
  if (j.value("schema", "") != "gandissect-manifest") throw std::invalid_argument("not a run manifest");
  RunManifest m;
  m.tool_version = j.at("tool_version");
  m.world_ref = j.at("world_ref");
  m.world_hash = j.at("world_hash");
  m.subcommand = j.at("subcommand");
  m.arguments = j.at("arguments").get<std::vector<std::string>>();
  m.seeds = seeds_from_json(j.at("seeds"));
  for (const auto& o : j.at("outputs")) m.outputs.push_back({o.at("path"), o.at("sha256")});
  return m;
}

}  // namespace gandissect
