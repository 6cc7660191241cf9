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

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "gandissect/ace_optimizer.hpp"
#include "gandissect/dissection.hpp"
#include "gandissect/intervention.hpp"
#include "gandissect/quality.hpp"
#include "gandissect/world_spec.hpp"

namespace gandissect {

using Json = nlohmann::ordered_json;

inline constexpr int kReportSchemaVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

// Seeds [begin, end) of a named stream.
struct SeedRange {
  std::string stream;
  std::uint64_t begin = 0, end = 0;
};

// Shortest text that parses back to the same double.
std::string format_number(double v);

// {"schema", "schema_version", "kind", "world": {name, seed, hash}, "seeds", "body"}
Json report_envelope(const std::string& kind, const WorldSpec& spec, const std::vector<SeedRange>& seeds, Json body);

Json to_json(const DissectionReport& report);
DissectionReport dissection_from_json(const Json& body);
// One row per unit; the per-concept IoU row follows as iou:<concept> columns.
std::string to_csv(const DissectionReport& report);

Json to_json(const ReportDiff& diff);
std::string to_csv(const ReportDiff& diff);

Json to_json(const InterventionSpec& spec);
InterventionSpec intervention_from_json(const Json& j);

Json to_json(const AceResult& result);
std::string to_csv(const std::vector<AceResult>& results);

Json to_json(const LayerTrace& trace);
std::string to_csv(const LayerTrace& trace);

Json to_json(const AlphaSolution& solution);
// step, objective, loss
std::string trajectory_csv(const AlphaSolution& solution);
// unit, alpha, rank
std::string alpha_csv(const AlphaSolution& solution);

Json to_json(const AblationCurve& curve);
// k, remaining for each named curve as a column.
std::string to_csv(const std::vector<std::string>& names, const std::vector<AblationCurve>& curves);

Json to_json(const std::vector<RemovalScore>& scores);
std::string to_csv(const std::vector<RemovalScore>& scores);

Json to_json(const ArtifactFlagSet& flags);
Json to_json(const RepairReport& report);
// method, frechet, preserved_delta, total_delta
std::string to_csv(const RepairReport& report);

struct OutputFile {
  std::string path;  // relative to the output directory
  std::string sha256;
};

struct RunManifest {
  std::string tool_version = kToolVersion;
  std::string world_ref;
  std::string world_hash;
  std::string subcommand;
  std::vector<std::string> arguments;  // full argument list without the output directory
  std::vector<SeedRange> seeds;
  std::vector<OutputFile> outputs;
};

Json to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const Json& j);

}  // namespace gandissect
