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

#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "gandissect/ace_optimizer.hpp"
#include "gandissect/dissection.hpp"
#include "gandissect/image_io.hpp"
#include "gandissect/intervention.hpp"
#include "gandissect/quality.hpp"
#include "gandissect/report.hpp"
#include "gandissect/segmenter.hpp"
#include "gandissect/studio.hpp"
#include "gandissect/world_io.hpp"

namespace gandissect::cli {

namespace fs = std::filesystem;

namespace {

// Raised for bad input data (unreadable files, invalid worlds, bad values).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class OutputDir {
 public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) {}

  void write(const std::string& rel, const std::string& data) {
    write_file(root_ / rel, data);
    files_.push_back({rel, sha256_hex(data)});
  }
  void write_json(const std::string& rel, const Json& j) { write(rel, j.dump(2) + "\n"); }
  void write_image(const std::string& rel, const Tensor& image, bool png) {
    write(rel + (png ? ".png" : ".ppm"), png ? encode_png(image) : encode_ppm(image));
  }

  const fs::path& root() const { return root_; }
  const std::vector<OutputFile>& files() const { return files_; }

 private:
  fs::path root_;
  std::vector<OutputFile> files_;
};

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    auto dots = item.find("..");
    try {
      if (dots == std::string::npos) {
        out.push_back(std::stoul(item));
      } else {
        std::size_t lo = std::stoul(item.substr(0, dots)), hi = std::stoul(item.substr(dots + 2));
        for (std::size_t v = lo; v <= hi; ++v) out.push_back(v);
      }
    } catch (const std::logic_error&) {
      throw DataError("bad integer list '" + text + "'");
    }
  }
  return out;
}

std::vector<Location> parse_locations(const std::string& text) {
  std::vector<Location> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.empty()) continue;
    auto parts = parse_list(item);
    if (parts.size() != 2) throw DataError("location '" + item + "' is not row,col");
    out.emplace_back(parts[0], parts[1]);
  }
  return out;
}

std::string format_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string seed_tag(std::size_t s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", s);
  return buf;
}

// Shared flags of every batch subcommand.
struct Common {
  std::string world = "default";
  std::string out;
  bool png = false;
};

struct Context {
  WorldSpec spec;
  Generator gen;
  OutputDir dir;
  RunManifest manifest;
};

Context open_context(const Common& common, const std::string& subcommand, const std::vector<std::string>& args) {
  WorldSpec spec;
  try {
    spec = resolve_world(common.world);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  fs::path out = common.out;
  if (out.empty()) {
    const char* env = std::getenv(kOutEnv);
    out = env && *env ? env : "out";
  }
  RunManifest m;
  m.world_ref = common.world;
  m.world_hash = world_hash(spec);
  m.subcommand = subcommand;
  m.arguments = args;
  Generator gen(spec);
  return Context{std::move(spec), std::move(gen), OutputDir(out), std::move(m)};
}

void finish(Context& ctx, std::ostream& out, const std::string& summary) {
  ctx.manifest.outputs = ctx.dir.files();
  write_file(ctx.dir.root() / "manifest.json", to_json(ctx.manifest).dump(2) + "\n");
  out << summary << "\n";
}

// Arguments to record: everything but the output directory.
std::vector<std::string> recorded_arguments(const std::vector<std::string>& args) {
  std::vector<std::string> kept;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--out" || args[i] == "-o") {
      ++i;
      continue;
    }
    if (args[i].rfind("--out=", 0) == 0) continue;
    kept.push_back(args[i]);
  }
  return kept;
}

std::vector<std::size_t> resolve_units(const WorldSpec& spec, const std::string& units, const std::string& concept_name) {
  if (!units.empty()) return parse_list(units);
  if (!concept_name.empty()) return spec.causal_units(concept_name);
  throw DataError("give --units or --concept");
}

// Top-activating images of one unit side by side; pixels where the unit is
// below threshold are dimmed.
Tensor unit_grid(const Generator& gen, std::size_t layer, std::size_t unit, const std::vector<std::size_t>& seeds,
                 const std::string& stream, double threshold_value) {
  const std::size_t size = gen.image_size();
  Tensor grid({size, size * seeds.size(), 3});
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    const ForwardTrace trace = gen.forward(gen.z_for(stream, seeds[k]));
    const BinaryMask active = threshold(upsample_nearest(trace.layer(layer).channel(unit), size, size), threshold_value);
    for (std::size_t i = 0; i < size; ++i) {
      for (std::size_t j = 0; j < size; ++j) {
        const double dim = active.at(i, j) ? 1.0 : 0.35;
        for (std::size_t c = 0; c < 3; ++c) grid.at(i, k * size + j, c) = trace.image.at(i, j, c) * dim;
      }
    }
  }
  return grid;
}

int cmd_generate(const Common& common, std::size_t seed, std::size_t count, const std::string& stream, bool masks,
                 const std::vector<std::string>& args, std::ostream& out) {
  Context ctx = open_context(common, "generate", args);
  const OracleSegmenter seg(ctx.spec);
  Json samples = Json::array();
  for (std::size_t s = seed; s < seed + count; ++s) {
    const ForwardTrace trace = ctx.gen.forward(ctx.gen.z_for(stream, s));
    const std::string tag = seed_tag(s);
    ctx.dir.write_image("images/sample_" + tag, trace.image, common.png);
    const SegmentationSet segs = seg.segment_with_parts(trace.image);
    Json areas = Json::object();
    for (std::size_t c = 0; c < segs.labels.size(); ++c) {
      areas[segs.labels[c]] = segs.masks[c].count();
      if (masks) {
        const std::string rel = "masks/" + segs.labels[c] + "/sample_" + tag + (common.png ? ".png" : ".pbm");
        ctx.dir.write(rel, common.png ? encode_png(segs.masks[c]) : encode_pbm(segs.masks[c]));
      }
    }
    samples.push_back({{"seed", s}, {"z", trace.z.values()}, {"areas", areas}});
  }
  std::vector<SeedRange> seeds{{stream, seed, seed + count}};
  ctx.manifest.seeds = seeds;
  ctx.dir.write_json("generate.json", report_envelope("generate", ctx.spec, seeds, {{"samples", samples}}));
  finish(ctx, out, "generate: " + std::to_string(count) + " images -> " + ctx.dir.root().string());
  return kExitOk;
}

int cmd_dissect(const Common& common, std::size_t layer, const DissectionOptions& options, std::size_t grid_images,
                const std::vector<std::string>& args, std::ostream& out) {
  Context ctx = open_context(common, "dissect", args);
  const DissectionReport report = dissect_layer(ctx.gen, layer, options);
  std::vector<SeedRange> seeds{{options.stream, 0, options.n_validation},
                               {options.stream, options.n_validation, options.n_validation + options.n_eval}};
  ctx.manifest.seeds = seeds;
  ctx.dir.write_json("dissection.json", report_envelope("dissection", ctx.spec, seeds, to_json(report)));
  ctx.dir.write("dissection.csv", to_csv(report));

  if (grid_images > 0) {
    // Rank evaluation images by each unit's peak activation.
    const LayerInfo& info = ctx.gen.layer(layer);
    std::vector<std::vector<std::pair<double, std::size_t>>> peaks(info.channels);
    for (std::size_t s = options.n_validation; s < options.n_validation + options.n_eval; ++s) {
      const ForwardTrace trace = ctx.gen.forward(ctx.gen.z_for(options.stream, s));
      const Tensor& r = trace.layer(layer);
      for (std::size_t u = 0; u < info.channels; ++u) {
        double peak = 0.0;
        for (std::size_t p = 0; p < info.height * info.width; ++p) peak = std::max(peak, r[u * info.height * info.width + p]);
        peaks[u].emplace_back(-peak, s);
      }
    }
    for (std::size_t u = 0; u < info.channels; ++u) {
      std::sort(peaks[u].begin(), peaks[u].end());
      std::vector<std::size_t> top;
      for (std::size_t k = 0; k < std::min(grid_images, peaks[u].size()); ++k) top.push_back(peaks[u][k].second);
      ctx.dir.write_image("grids/unit_" + seed_tag(u),
                          unit_grid(ctx.gen, layer, u, top, options.stream, report.units[u].threshold), common.png);
    }
  }
  finish(ctx, out,
         "dissect: layer " + std::to_string(layer) + ", " + std::to_string(report.matched_units()) + "/" +
             std::to_string(report.units.size()) + " units matched -> " + ctx.dir.root().string());
  return kExitOk;
}

struct InterveneFlags {
  std::size_t layer = 4;
  std::string units, concept_name, locations, mode = "ablate", level = "q99", ace_concept, context;
  bool everywhere = false, ace = false;
  double strength = 1.0;
  std::size_t seed = 0, samples = 500;
  std::string stream = "intervene", policy = "point";
};

InterventionSpec build_spec(const Context& ctx, const InterveneFlags& f) {
  InterventionSpec spec;
  spec.layer = f.layer;
  spec.units = resolve_units(ctx.spec, f.units, f.concept_name);
  spec.locations = f.everywhere ? all_locations(ctx.gen, f.layer) : parse_locations(f.locations);
  spec.mode = parse_mode(f.mode);
  spec.strength = f.strength;
  if (spec.mode == InterventionMode::kInsert) {
    const InsertLevel level = parse_level(f.level);
    const std::vector<double> all = insertion_levels(ctx.gen, f.layer, level, f.concept_name);
    if (!all.empty()) {
      for (auto u : spec.units) spec.levels.push_back(all.at(u));
    }
  }
  spec.validate(ctx.gen);
  return spec;
}

int cmd_intervene(const Common& common, const InterveneFlags& f, const std::vector<std::string>& args,
                  std::ostream& out) {
  Context ctx = open_context(common, "intervene", args);
  const InterventionSpec spec = build_spec(ctx, f);
  const Tensor z = ctx.gen.z_for(f.stream, f.seed);
  const ForwardTrace before = ctx.gen.forward(z);
  const ForwardTrace after = apply(ctx.gen, z, spec);
  const OracleSegmenter seg(ctx.spec);
  const SegmentationSet sb = seg.segment_with_parts(before.image), sa = seg.segment_with_parts(after.image);
  Json deltas = Json::object();
  for (std::size_t c = 0; c < sb.labels.size(); ++c) {
    deltas[sb.labels[c]] = {{"before", sb.masks[c].count()},
                            {"after", sa.masks[c].count()},
                            {"delta", static_cast<long>(sa.masks[c].count()) - static_cast<long>(sb.masks[c].count())}};
  }
  double max_delta = 0.0;
  for (std::size_t i = 0; i < before.image.size(); ++i) {
    max_delta = std::max(max_delta, std::abs(after.image[i] - before.image[i]));
  }
  std::vector<SeedRange> seeds{{f.stream, f.seed, f.seed + 1}};
  Json body = {{"intervention", to_json(spec)}, {"area", deltas}, {"max_pixel_delta", max_delta}};
  std::string summary = "intervene: " + std::string(mode_name(spec.mode)) + " " + std::to_string(spec.units.size()) +
                        " units at " + std::to_string(spec.locations.size()) + " locations";
  if (f.ace) {
    AceOptions options;
    options.layer = f.layer;
    options.n_samples = f.samples;
    options.policy = parse_policy(f.policy);
    options.level = parse_level(f.level);
    const std::string target = f.ace_concept.empty() ? f.concept_name : f.ace_concept;
    if (target.empty()) throw DataError("--ace needs --ace-concept or --concept");
    const AceResult r = f.context.empty() ? gandissect::ace(ctx.gen, spec.units, target, options)
                                          : conditional_ace(ctx.gen, spec.units, target, f.context, options);
    seeds.push_back({options.stream, 0, options.n_samples});
    seeds.push_back({"coverage", 0, options.coverage_samples});
    body["ace"] = to_json(r);
    ctx.dir.write("ace.csv", to_csv(std::vector<AceResult>{r}));
    summary += ", ACE " + (r.ace ? format_number(*r.ace) : std::string("undefined"));
  }
  ctx.manifest.seeds = seeds;
  ctx.dir.write_image("before", before.image, common.png);
  ctx.dir.write_image("after", after.image, common.png);
  ctx.dir.write_json("intervention.json", report_envelope("intervention", ctx.spec, seeds, body));
  finish(ctx, out, summary + " -> " + ctx.dir.root().string());
  return kExitOk;
}

struct OptimizeFlags {
  std::string concept_name;
  AlphaHyper hyper;
  bool probe = false;
  double ratio = kDefaultLambdaRatio;
  std::optional<double> lambda;
};

AlphaSolution run_optimizer(const Generator& gen, const OptimizeFlags& f, std::vector<SeedRange>& seeds) {
  AlphaHyper hyper = f.hyper;
  if (f.lambda) {
    hyper.lambda = *f.lambda;
  } else {
    hyper.lambda = probe_lambda(gen, f.concept_name, hyper, f.ratio);
  }
  seeds.push_back({"coverage", 0, hyper.coverage_samples});
  seeds.push_back({"alpha:" + std::to_string(hyper.seed), 0, hyper.steps * hyper.batch});
  return optimize_alpha(gen, f.concept_name, hyper);
}

int cmd_optimize(const Common& common, const OptimizeFlags& f, const std::vector<std::string>& args, std::ostream& out) {
  Context ctx = open_context(common, "optimize", args);
  std::vector<SeedRange> seeds;
  const AlphaSolution sol = run_optimizer(ctx.gen, f, seeds);
  ctx.manifest.seeds = seeds;
  ctx.dir.write_json("alpha.json", report_envelope("alpha", ctx.spec, seeds, to_json(sol)));
  ctx.dir.write("alpha.csv", alpha_csv(sol));
  ctx.dir.write("trajectory.csv", trajectory_csv(sol));
  std::vector<std::size_t> top(sol.ranking.begin(), sol.ranking.begin() + std::min<std::size_t>(6, sol.ranking.size()));
  finish(ctx, out,
         "optimize: " + f.concept_name + " lambda " + format_number(sol.hyper.lambda) + ", top units " +
             format_list(top) + " -> " + ctx.dir.root().string());
  return kExitOk;
}

std::vector<std::size_t> ranking_from_file(const std::string& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
    const Json& body = j.contains("body") ? j.at("body") : j;
    return body.at("ranking").get<std::vector<std::size_t>>();
  } catch (const std::exception& e) {
    throw DataError("cannot read ranking from " + path + ": " + e.what());
  }
}

int cmd_ablation(const Common& common, const OptimizeFlags& f, const std::string& ranking_file,
                 const std::string& k_text, std::size_t randoms, const CurveOptions& options,
                 const std::string& removal_concepts, const std::vector<std::string>& args, std::ostream& out) {
  Context ctx = open_context(common, "ablation-curve", args);
  const std::size_t width = ctx.gen.layer(options.layer).channels;
  std::vector<std::size_t> k_grid = k_text.empty() ? std::vector<std::size_t>{} : parse_list(k_text);
  if (k_grid.empty()) {
    k_grid.resize(width + 1);
    std::iota(k_grid.begin(), k_grid.end(), 0);
  }
  std::vector<SeedRange> seeds{{options.stream, 0, options.n_samples}};
  Json body = Json::object();
  std::string summary = "ablation-curve:";

  if (!f.concept_name.empty()) {
    std::vector<std::size_t> ranking;
    if (!ranking_file.empty()) {
      ranking = ranking_from_file(ranking_file);
    } else {
      OptimizeFlags probe = f;
      if (!probe.lambda) probe.probe = true;
      ranking = run_optimizer(ctx.gen, probe, seeds).ranking;
    }
    std::vector<std::string> names{"ranked"};
    std::vector<AblationCurve> curves{topk_ablation_curve(ctx.gen, ranking, f.concept_name, k_grid, options)};
    AblationCurve mean{f.concept_name, k_grid, std::vector<double>(k_grid.size(), 0.0)};
    for (std::size_t r = 0; r < randoms; ++r) {
      curves.push_back(topk_ablation_curve(ctx.gen, random_ranking(width, f.hyper.seed, r), f.concept_name, k_grid, options));
      names.push_back("random_" + std::to_string(r));
      for (std::size_t i = 0; i < k_grid.size(); ++i) mean.remaining[i] += curves.back().remaining[i] / randoms;
    }
    if (randoms > 0) {
      curves.insert(curves.begin() + 1, mean);
      names.insert(names.begin() + 1, "random_mean");
    }
    Json curve_json = Json::object();
    for (std::size_t i = 0; i < curves.size(); ++i) curve_json[names[i]] = to_json(curves[i]);
    body["ranking"] = ranking;
    body["curves"] = curve_json;
    ctx.dir.write("curve.csv", to_csv(names, curves));
    summary += " " + f.concept_name + " " + std::to_string(curves.size()) + " curves";
  }

  if (!removal_concepts.empty()) {
    std::map<std::string, std::vector<std::size_t>> rankings;
    std::stringstream ss(removal_concepts);
    std::string name;
    while (std::getline(ss, name, ',')) {
      if (name.empty()) continue;
      OptimizeFlags each = f;
      each.concept_name = name;
      if (!each.lambda) each.probe = true;
      std::vector<SeedRange> unused;
      rankings[name] = run_optimizer(ctx.gen, each, unused).ranking;
    }
    const std::vector<RemovalScore> scores = removal_difficulty(ctx.gen, rankings, kRemovalUnits, options);
    body["removal"] = to_json(scores);
    ctx.dir.write("removal.csv", to_csv(scores));
    summary += " removal for " + std::to_string(scores.size()) + " concepts";
  }
  if (body.empty()) throw DataError("give --concept and/or --removal");
  ctx.manifest.seeds = seeds;
  ctx.dir.write_json("curve.json", report_envelope("ablation-curve", ctx.spec, seeds, body));
  finish(ctx, out, summary + " -> " + ctx.dir.root().string());
  return kExitOk;
}

int cmd_repair(const Common& common, std::size_t n_flag, const FlagOptions& flag_options, const RepairOptions& options,
               std::size_t examples, const std::vector<std::string>& args, std::ostream& out) {
  Context ctx = open_context(common, "repair", args);
  const ArtifactFlagSet flags = flag_artifact_units(ctx.gen, n_flag, flag_options);
  const RepairReport report = repair(ctx.gen, flags.flagged, options);
  std::vector<SeedRange> seeds{{flag_options.stream, 0, flag_options.n_images},
                               {options.stream, 0, options.n_images},
                               {options.clean_stream, 0, options.n_images}};
  ctx.manifest.seeds = seeds;
  Json body = {{"flags", to_json(flags)}, {"repair", to_json(report)}};
  ctx.dir.write_json("repair.json", report_envelope("repair", ctx.spec, seeds, body));
  ctx.dir.write("repair.csv", to_csv(report));
  if (!flags.flagged.empty()) {
    InterventionSpec spec;
    spec.layer = options.layer;
    spec.units = flags.flagged;
    spec.locations = all_locations(ctx.gen, options.layer);
    for (std::size_t s = 0; s < examples; ++s) {
      const Tensor z = ctx.gen.z_for(options.stream, s);
      ctx.dir.write_image("examples/original_" + seed_tag(s), ctx.gen.forward(z).image, common.png);
      ctx.dir.write_image("examples/repaired_" + seed_tag(s), apply(ctx.gen, z, spec).image, common.png);
    }
  }
  finish(ctx, out,
         "repair: flagged " + format_list(flags.flagged) + ", frechet " + format_number(report.frechet_original) +
             " -> " + format_number(report.frechet_repaired) + " -> " + ctx.dir.root().string());
  return kExitOk;
}

int cmd_trace(const Common& common, const InterveneFlags& f, std::size_t reference, const std::vector<std::string>& args,
              std::ostream& out) {
  Context ctx = open_context(common, "trace", args);
  const InterventionSpec spec = build_spec(ctx, f);
  const auto magnitudes = reference_magnitudes(ctx.gen, reference);
  const LayerTrace trace = layer_trace(ctx.gen, ctx.gen.z_for(f.stream, f.seed), spec, magnitudes);
  std::vector<SeedRange> seeds{{f.stream, f.seed, f.seed + 1}, {"reference", 0, reference}};
  ctx.manifest.seeds = seeds;
  ctx.dir.write_json("trace.json", report_envelope("trace", ctx.spec, seeds,
                                                   {{"intervention", to_json(spec)}, {"trace", to_json(trace)}}));
  ctx.dir.write("trace.csv", to_csv(trace));
  ctx.dir.write_image("heatmap", heatmap_image(trace.final_change), common.png);
  finish(ctx, out,
         "trace: " + std::to_string(trace.layers.size()) + " layers, final change " +
             format_number(trace.mean_change.back()) + " -> " + ctx.dir.root().string());
  return kExitOk;
}

DissectionReport load_report(const std::string& path) {
  try {
    const Json j = Json::parse(read_file(path));
    if (j.value("kind", "") != "dissection") throw std::invalid_argument("not a dissection report");
    return dissection_from_json(j.at("body"));
  } catch (const std::exception& e) {
    throw DataError("cannot read report " + path + ": " + e.what());
  }
}

int cmd_compare(const Common& common, const std::string& a_path, const std::string& b_path,
                const std::vector<std::string>& args, std::ostream& out) {
  Context ctx = open_context(common, "compare", args);
  const DissectionReport a = load_report(a_path), b = load_report(b_path);
  ReportDiff diff;
  try {
    diff = compare_reports(a, b);
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  Json body = to_json(diff);
  body["a"] = {{"world", a.world}, {"world_seed", a.world_seed}, {"layer", a.layer}};
  body["b"] = {{"world", b.world}, {"world_seed", b.world_seed}, {"layer", b.layer}};
  ctx.dir.write_json("compare.json", report_envelope("compare", ctx.spec, {}, body));
  ctx.dir.write("compare.csv", to_csv(diff));
  finish(ctx, out,
         "compare: distinct " + std::to_string(diff.distinct_a) + " -> " + std::to_string(diff.distinct_b) +
             ", change " + (diff.percent_change ? format_number(*diff.percent_change) + "%" : std::string("undefined")));
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dissect and intervene on a synthetic layered generator", "gandissect"};
  app.require_subcommand(1);
  const std::vector<std::string> recorded = recorded_arguments(args);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--world,-w", common.world, "World file, or default[:seed]")->capture_default_str();
    sub->add_option("--out,-o", common.out, std::string("Output directory (default $") + kOutEnv + " or ./out)");
    sub->add_flag("--png", common.png, "Write PNG rasters instead of portable pixmaps");
  };

  auto* generate = app.add_subcommand("generate", "Render images and their oracle segmentations");
  add_common(generate);
  std::size_t gen_seed = 0, gen_count = 8;
  std::string gen_stream = "generate";
  bool gen_masks = false;
  generate->add_option("--seed", gen_seed, "First sample index")->capture_default_str();
  generate->add_option("--count", gen_count, "Number of images")->capture_default_str();
  generate->add_option("--stream", gen_stream, "Sample stream name")->capture_default_str();
  generate->add_flag("--masks", gen_masks, "Export per-concept masks");

  auto* dissect = app.add_subcommand("dissect", "Label every unit of a layer by IoU");
  add_common(dissect);
  std::size_t dis_layer = 4, grid_images = 4;
  DissectionOptions dis_options;
  bool no_parts = false;
  std::string upsample_kind = "nearest";
  dissect->add_option("--layer", dis_layer)->capture_default_str();
  dissect->add_option("--train", dis_options.n_validation, "Threshold-selection samples")->capture_default_str();
  dissect->add_option("--eval", dis_options.n_eval, "IoU evaluation samples")->capture_default_str();
  dissect->add_option("--stream", dis_options.stream)->capture_default_str();
  dissect->add_option("--floor", dis_options.iou_floor, "IoU floor for matched units")->capture_default_str();
  dissect->add_flag("--no-parts", no_parts, "Skip part classes");
  dissect->add_option("--upsample", upsample_kind)->check(CLI::IsMember({"nearest", "bilinear"}))->capture_default_str();
  dissect->add_option("--grid-images", grid_images, "Top-activating images per unit grid (0 disables)")
      ->capture_default_str();

  InterveneFlags iflags;
  auto add_intervention = [&](CLI::App* sub) {
    sub->add_option("--layer", iflags.layer)->capture_default_str();
    sub->add_option("--units", iflags.units, "Unit list, e.g. 3,7,10..12");
    sub->add_option("--concept", iflags.concept_name, "Use the concept's planted causal units");
    sub->add_option("--locations", iflags.locations, "Featuremap cells, e.g. 2,3;2,4");
    sub->add_flag("--everywhere", iflags.everywhere, "Intervene at every location");
    sub->add_option("--mode", iflags.mode)->check(CLI::IsMember({"ablate", "insert"}))->capture_default_str();
    sub->add_option("--strength", iflags.strength)->check(CLI::Range(0.0, 1.0))->capture_default_str();
    sub->add_option("--level", iflags.level, "Insertion level: q99, mean or current")
        ->check(CLI::IsMember({"q99", "mean", "current"}))
        ->capture_default_str();
    sub->add_option("--seed", iflags.seed, "Sample index")->capture_default_str();
    sub->add_option("--stream", iflags.stream)->capture_default_str();
  };

  auto* intervene = app.add_subcommand("intervene", "Ablate or insert units and measure the effect");
  add_common(intervene);
  add_intervention(intervene);
  intervene->add_flag("--ace", iflags.ace, "Also estimate the normalized ACE");
  intervene->add_option("--ace-concept", iflags.ace_concept, "Concept for the ACE estimate");
  intervene->add_option("--context", iflags.context, "Condition the ACE on this context concept");
  intervene->add_option("--samples", iflags.samples, "ACE samples")->capture_default_str();
  intervene->add_option("--policy", iflags.policy)->check(CLI::IsMember({"point", "everywhere"}))->capture_default_str();

  OptimizeFlags oflags;
  double lambda_value = 0.0;
  auto add_optimizer = [&](CLI::App* sub) {
    sub->add_option("--concept", oflags.concept_name, "Target concept");
    auto* lam = sub->add_option("--lambda", lambda_value, "Weight of the L2 penalty");
    sub->add_flag("--lambda-probe", oflags.probe, "Calibrate lambda by a gradient-norm probe (the default)")
        ->excludes(lam);
    sub->add_option("--lambda-ratio", oflags.ratio, "Probe ratio")->capture_default_str();
    sub->add_option("--steps", oflags.hyper.steps)->capture_default_str();
    sub->add_option("--lr", oflags.hyper.learning_rate)->capture_default_str();
    sub->add_option("--batch", oflags.hyper.batch)->capture_default_str();
    sub->add_option("--init", oflags.hyper.init)->capture_default_str();
    sub->add_option("--seed", oflags.hyper.seed)->capture_default_str();
    sub->add_option("--layer", oflags.hyper.layer)->capture_default_str();
  };
  auto* optimize = app.add_subcommand("optimize", "Optimize the continuous intervention vector alpha");
  add_common(optimize);
  add_optimizer(optimize);
  optimize->get_option("--concept")->required();

  auto* ablation = app.add_subcommand("ablation-curve", "Remaining concept area as top-ranked units are ablated");
  add_common(ablation);
  add_optimizer(ablation);
  std::string ranking_file, k_text, removal;
  std::size_t randoms = 10;
  CurveOptions curve_options;
  ablation->add_option("--ranking", ranking_file, "alpha.json from optimize (default: optimize inline)");
  ablation->add_option("--k", k_text, "k grid, e.g. 0..64 (default every k)");
  ablation->add_option("--random", randoms, "Random rankings to compare")->capture_default_str();
  ablation->add_option("--samples", curve_options.n_samples)->capture_default_str();
  ablation->add_option("--removal", removal, "Concepts for removal difficulty at k=20, comma separated");

  auto* repair_cmd = app.add_subcommand("repair", "Flag artifact units, ablate them and score the result");
  add_common(repair_cmd);
  std::size_t n_flag = 4, examples = 4;
  FlagOptions flag_options;
  RepairOptions repair_options;
  repair_cmd->add_option("--flag", n_flag, "Units to flag")->capture_default_str();
  repair_cmd->add_option("--layer", flag_options.layer)->capture_default_str();
  repair_cmd->add_option("--flag-images", flag_options.n_images)->capture_default_str();
  repair_cmd->add_option("--images", repair_options.n_images)->capture_default_str();
  repair_cmd->add_option("--draws", repair_options.random_draws, "Random-ablation baseline draws")->capture_default_str();
  repair_cmd->add_option("--examples", examples, "Before/after image pairs to export")->capture_default_str();

  auto* trace_cmd = app.add_subcommand("trace", "Per-layer normalized change caused by an intervention");
  add_common(trace_cmd);
  add_intervention(trace_cmd);
  std::size_t reference = 50;
  trace_cmd->add_option("--reference", reference, "Samples for per-channel magnitudes")->capture_default_str();

  auto* compare = app.add_subcommand("compare", "Compare two dissection reports");
  add_common(compare);
  std::string a_path, b_path;
  compare->add_option("--a", a_path, "First dissection.json")->required();
  compare->add_option("--b", b_path, "Second dissection.json")->required();

  auto* serve = app.add_subcommand("serve", "Run the studio HTTP service");
  std::string serve_world = "default", host = "127.0.0.1";
  int port = 8080;
  StudioOptions studio_options;
  serve->add_option("--world,-w", serve_world, "Default world for new sessions")->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--alpha-steps", studio_options.alpha_steps, "Optimizer steps for unit rankings")
      ->capture_default_str();

  auto* replay = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  std::string manifest_path, replay_out;
  replay->add_option("--manifest", manifest_path)->required();
  replay->add_option("--out,-o", replay_out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*generate) return cmd_generate(common, gen_seed, gen_count, gen_stream, gen_masks, recorded, out);
    if (*dissect) {
      dis_options.parts = !no_parts;
      dis_options.upsample = upsample_kind == "bilinear" ? UpsampleMode::kBilinear : UpsampleMode::kNearest;
      return cmd_dissect(common, dis_layer, dis_options, grid_images, recorded, out);
    }
    if (*intervene) return cmd_intervene(common, iflags, recorded, out);
    if (*optimize || *ablation) {
      if ((*optimize && optimize->count("--lambda")) || (*ablation && ablation->count("--lambda"))) {
        oflags.lambda = lambda_value;
      }
      if (*optimize) return cmd_optimize(common, oflags, recorded, out);
      curve_options.layer = oflags.hyper.layer;
      return cmd_ablation(common, oflags, ranking_file, k_text, randoms, curve_options, removal, recorded, out);
    }
    if (*repair_cmd) {
      repair_options.layer = flag_options.layer;
      return cmd_repair(common, n_flag, flag_options, repair_options, examples, recorded, out);
    }
    if (*trace_cmd) return cmd_trace(common, iflags, reference, recorded, out);
    if (*compare) return cmd_compare(common, a_path, b_path, recorded, out);
    if (*serve) {
      try {
        studio_options.default_world = resolve_world(serve_world);
      } catch (const std::exception& e) {
        throw DataError(e.what());
      }
      StudioService service(studio_options);
      out << "serve: listening on " << host << ":" << port << "\n" << std::flush;
      if (!service.listen(host, port)) throw DataError("cannot listen on " + host + ":" + std::to_string(port));
      return kExitOk;
    }
    if (*replay) {
      RunManifest m;
      try {
        m = manifest_from_json(Json::parse(read_file(manifest_path)));
      } catch (const std::exception& e) {
        throw DataError("cannot read manifest: " + std::string(e.what()));
      }
      if (world_hash(resolve_world(m.world_ref)) != m.world_hash) {
        throw DataError("world '" + m.world_ref + "' no longer matches the manifest hash");
      }
      std::vector<std::string> again{m.subcommand};
      again.insert(again.end(), m.arguments.begin() + 1, m.arguments.end());
      again.push_back("--out");
      again.push_back(replay_out);
      return run(again, out, err);
    }
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace gandissect::cli
