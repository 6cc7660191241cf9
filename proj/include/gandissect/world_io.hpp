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

#include <filesystem>
#include <string>

#include "gandissect/world_spec.hpp"

namespace gandissect {

// Canonical YAML text of a world. Loading it back yields an identical spec.
std::string world_to_yaml(const WorldSpec& spec);
// Parses and validates; throws std::invalid_argument on schema errors.
WorldSpec world_from_yaml(const std::string& text);

WorldSpec load_world(const std::filesystem::path& path);
void save_world(const WorldSpec& spec, const std::filesystem::path& path);

// "default" or "default:<seed>" names the built-in world; anything else is a path.
WorldSpec resolve_world(const std::string& ref);

// SHA-256 of the canonical YAML, lowercase hex.
std::string world_hash(const WorldSpec& spec);

std::string sha256_hex(const std::string& data);

}  // namespace gandissect
