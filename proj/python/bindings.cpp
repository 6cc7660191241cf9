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

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

#include "cli.hpp"
#include "gandissect/ace_optimizer.hpp"
#include "gandissect/dissection.hpp"
#include "gandissect/generator.hpp"
#include "gandissect/intervention.hpp"
#include "gandissect/quality.hpp"
#include "gandissect/report.hpp"
#include "gandissect/segmenter.hpp"
#include "gandissect/world_io.hpp"

namespace py = pybind11;
using namespace gandissect;

namespace {

py::object to_python(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::array_t<double> to_numpy(const Tensor& t) {
  py::array_t<double> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

py::array_t<bool> to_numpy(const BinaryMask& m) {
  py::array_t<bool> out({static_cast<py::ssize_t>(m.height()), static_cast<py::ssize_t>(m.width())});
  bool* p = out.mutable_data();
  for (std::size_t i = 0; i < m.size(); ++i) p[i] = m[i];
  return out;
}

Tensor from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

InterventionSpec make_spec(const Generator& gen, std::vector<std::size_t> units, std::optional<std::vector<Location>> locations,
                           const std::string& mode, double strength, std::size_t layer, const std::string& level) {
  InterventionSpec s;
  s.layer = layer;
  s.units = std::move(units);
  s.locations = locations ? *locations : all_locations(gen, layer);
  s.mode = parse_mode(mode);
  s.strength = strength;
  if (s.mode == InterventionMode::kInsert) {
    const auto all = insertion_levels(gen, layer, parse_level(level));
    for (auto u : s.units)
      if (!all.empty()) s.levels.push_back(all.at(u));
  }
  s.validate(gen);
  return s;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Planted-truth GAN dissection: dissection, intervention, alpha optimization and repair.";
  m.attr("__version__") = kToolVersion;

  py::class_<WorldSpec>(m, "World")
      .def_property_readonly("name", [](const WorldSpec& w) { return w.name; })
      .def_property_readonly("seed", [](const WorldSpec& w) { return w.seed; })
      .def_property_readonly("units", [](const WorldSpec& w) { return w.units; })
      .def_property_readonly("image_size", [](const WorldSpec& w) { return w.image_size; })
      .def_property_readonly("concepts",
                             [](const WorldSpec& w) {
                               std::vector<std::string> out;
                               for (const auto& c : w.concepts) out.push_back(c.name);
                               return out;
                             })
      .def("causal_units", &WorldSpec::causal_units, py::arg("concept"))
      .def("distractor_units", &WorldSpec::distractor_units, py::arg("concept"))
      .def("artifact_units", &WorldSpec::artifact_unit_ids)
      .def("noise_units", &WorldSpec::noise_unit_ids)
      .def("to_yaml", &world_to_yaml)
      .def("hash", &world_hash)
      .def("__repr__", [](const WorldSpec& w) { return "<World " + w.name + " seed=" + std::to_string(w.seed) + ">"; });

  m.def("load_world", &resolve_world, py::arg("ref") = "default",
        "Load a world file, or 'default' / 'default:<seed>' for the built-in world.");
  m.def("world_from_yaml", &world_from_yaml, py::arg("text"));

  m.def(
      "generate",
      [](const WorldSpec& w, std::uint64_t seed, const std::string& stream) {
        const Generator gen(w);
        return to_numpy(gen.forward(gen.z_for(stream, seed)).image);
      },
      py::arg("world"), py::arg("seed") = 0, py::arg("stream") = "generate", "H x W x 3 image in [0, 1].");

  m.def(
      "segment",
      [](const WorldSpec& w, const py::array_t<double, py::array::c_style | py::array::forcecast>& image, bool parts) {
        const OracleSegmenter seg(w);
        const Tensor t = from_numpy(image);
        const SegmentationSet s = parts ? seg.segment_with_parts(t) : seg.segment(t);
        py::dict out;
        for (std::size_t c = 0; c < s.labels.size(); ++c) out[py::str(s.labels[c])] = to_numpy(s.masks[c]);
        return out;
      },
      py::arg("world"), py::arg("image"), py::arg("parts") = true);

  m.def(
      "dissect",
      [](const WorldSpec& w, std::size_t layer, std::size_t n_validation, std::size_t n_eval, bool parts) {
        DissectionOptions o;
        o.n_validation = n_validation;
        o.n_eval = n_eval;
        o.parts = parts;
        py::gil_scoped_release release;
        const DissectionReport r = dissect_layer(Generator(w), layer, o);
        py::gil_scoped_acquire acquire;
        return to_python(to_json(r));
      },
      py::arg("world"), py::arg("layer") = 4, py::arg("n_validation") = 200, py::arg("n_eval") = 200,
      py::arg("parts") = true);

  m.def(
      "intervene",
      [](const WorldSpec& w, std::vector<std::size_t> units, std::optional<std::vector<Location>> locations,
         const std::string& mode, double strength, std::uint64_t seed, const std::string& stream, std::size_t layer,
         const std::string& level) {
        const Generator gen(w);
        const InterventionSpec s = make_spec(gen, std::move(units), std::move(locations), mode, strength, layer, level);
        return to_numpy(apply(gen, gen.z_for(stream, seed), s).image);
      },
      py::arg("world"), py::arg("units"), py::arg("locations") = py::none(), py::arg("mode") = "ablate",
      py::arg("strength") = 1.0, py::arg("seed") = 0, py::arg("stream") = "intervene", py::arg("layer") = 4,
      py::arg("level") = "q99", "Render one sample with the units edited; locations default to every cell.");

  m.def(
      "ace",
      [](const WorldSpec& w, std::vector<std::size_t> units, const std::string& concept_name,
         std::optional<std::string> context, std::size_t samples) {
        AceOptions o;
        o.n_samples = samples;
        py::gil_scoped_release release;
        const Generator gen(w);
        const AceResult r = context ? conditional_ace(gen, units, concept_name, *context, o) : ace(gen, units, concept_name, o);
        py::gil_scoped_acquire acquire;
        return to_python(to_json(r));
      },
      py::arg("world"), py::arg("units"), py::arg("concept"), py::arg("context") = py::none(), py::arg("samples") = 500);

  m.def(
      "optimize",
      [](const WorldSpec& w, const std::string& concept_name, std::optional<double> lambda, std::size_t steps,
         std::uint64_t seed) {
        AlphaHyper h;
        h.steps = steps;
        h.seed = seed;
        py::gil_scoped_release release;
        const Generator gen(w);
        h.lambda = lambda ? *lambda : probe_lambda(gen, concept_name, h);
        const AlphaSolution s = optimize_alpha(gen, concept_name, h);
        py::gil_scoped_acquire acquire;
        return to_python(to_json(s));
      },
      py::arg("world"), py::arg("concept"), py::arg("lam") = py::none(), py::arg("steps") = 1000, py::arg("seed") = 1,
      "Alpha optimization; lam defaults to the gradient-norm probe.");

  m.def(
      "repair",
      [](const WorldSpec& w, std::size_t flag, std::size_t images) {
        RepairOptions o;
        o.n_images = images;
        py::gil_scoped_release release;
        const Generator gen(w);
        const ArtifactFlagSet flags = flag_artifact_units(gen, flag);
        const RepairReport r = repair(gen, flags.flagged, o);
        py::gil_scoped_acquire acquire;
        return to_python(to_json(r));
      },
      py::arg("world"), py::arg("flag") = 4, py::arg("images") = 300);

  m.def("frechet_distance",
        [](std::vector<double> mean_a, std::vector<double> cov_a, std::vector<double> mean_b, std::vector<double> cov_b) {
          auto stats = [](std::vector<double> mean, std::vector<double> cov) {
            QualityStats s;
            s.dimension = mean.size();
            s.mean = std::move(mean);
            s.covariance = std::move(cov);
            return s;
          };
          return frechet_distance(stats(std::move(mean_a), std::move(cov_a)), stats(std::move(mean_b), std::move(cov_b)));
        },
        py::arg("mean_a"), py::arg("cov_a"), py::arg("mean_b"), py::arg("cov_b"),
        "Covariances are flattened row-major.");

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run a command-line subcommand; returns (exit_code, stdout, stderr).");
}
