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

#include <memory>
#include <string>
#include <vector>

#include "gandissect/dissection.hpp"
#include "gandissect/intervention.hpp"
#include "gandissect/world_spec.hpp"

namespace gandissect {

struct StudioOptions {
  WorldSpec default_world = make_default_world();
  std::size_t alpha_steps = 1000;     // optimizer steps behind the unit rankings
  std::size_t coverage_samples = 200;
  DissectionOptions dissection;
  std::string stream = "intervene";   // session seed s renders z_for(stream, s)
};

// The image a session shows: the seed's render with every stacked
// intervention applied in order.
Tensor session_image(const Generator& gen, const std::string& stream, std::uint64_t seed,
                     const std::vector<InterventionSpec>& stack);

// Session-oriented HTTP/JSON service.
//
//   POST   /sessions                 {worldRef?, seed, stack?} -> {sessionId}
//   GET    /sessions/{id}            seed, world and intervention stack
//   GET    /sessions/{id}/image      base64 PNG plus per-concept masks
//   GET    /sessions/{id}/units      ?layer=L&alpha=0|1
//   POST   /sessions/{id}/intervene  {layer, units, locations, mode, strength, level?}
//   POST   /sessions/{id}/undo
//   DELETE /sessions/{id}
//
// A mutation that finds another mutation of the same session in flight is
// rejected with 409.
class StudioService {
 public:
  explicit StudioService(StudioOptions options = {});
  ~StudioService();
  StudioService(const StudioService&) = delete;
  StudioService& operator=(const StudioService&) = delete;

  // Blocks until stop().
  bool listen(const std::string& host, int port);
  // Binds an ephemeral port and returns it; then call listen_after_bind().
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void wait_until_ready() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string base64_encode(const std::string& bytes);

}  // namespace gandissect
