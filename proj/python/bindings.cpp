#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ende/corpus.hpp"
#include "ende/error.hpp"
#include "ende/eval.hpp"
#include "ende/experiment.hpp"
#include "ende/prompt.hpp"

namespace py = pybind11;
using namespace ende;

namespace {

py::object to_py(const nlohmann::json& j) {
  switch (j.type()) {
    case nlohmann::json::value_t::null:
      return py::none();
    case nlohmann::json::value_t::boolean:
      return py::bool_(j.get<bool>());
    case nlohmann::json::value_t::number_integer:
      return py::int_(j.get<std::int64_t>());
    case nlohmann::json::value_t::number_unsigned:
      return py::int_(j.get<std::uint64_t>());
    case nlohmann::json::value_t::number_float:
      return py::float_(j.get<double>());
    case nlohmann::json::value_t::string:
      return py::str(j.get<std::string>());
    case nlohmann::json::value_t::array: {
      py::list out;
      for (const auto& v : j) out.append(to_py(v));
      return out;
    }
    case nlohmann::json::value_t::object: {
      py::dict out;
      for (const auto& [k, v] : j.items()) out[py::str(k)] = to_py(v);
      return out;
    }
    default:
      return py::none();
  }
}

ExperimentConfig make_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  auto cfg = ExperimentConfig::load(path);
  for (const auto& o : overrides) cfg.set_assignment(o);
  return cfg;
}

py::dict loss_dict(const LossReport& r) {
  py::dict d;
  d["epoch"] = r.epoch;
  d["semantic"] = r.semantic;
  d["boundary_pos"] = r.boundary_pos;
  d["boundary_con"] = r.boundary_con;
  d["label"] = r.label;
  d["total"] = r.total;
  d["steps"] = r.steps;
  d["skipped_anchors"] = r.skipped_anchors;
  return d;
}

}  // namespace

PYBIND11_MODULE(_ende, m) {
  m.doc() = "Few-shot nested NER with retrieved demonstrations";

  auto base = py::register_exception<Error>(m, "EndeError");
  py::register_exception<DataError>(m, "DataError", base);
  py::register_exception<ParseError>(m, "ParseError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<TransportError>(m, "TransportError", base);
  py::register_exception<TrainingDiverged>(m, "TrainingDiverged", base);

  py::class_<Sentence>(m, "Sentence")
      .def(py::init<std::string, std::vector<std::string>>(), py::arg("id"), py::arg("tokens"))
      .def_readwrite("id", &Sentence::id)
      .def_readwrite("tokens", &Sentence::tokens)
      .def("text", py::overload_cast<>(&Sentence::text, py::const_))
      .def("__len__", &Sentence::size);

  py::class_<EntitySpan>(m, "EntitySpan")
      .def(py::init<int, int, std::string>(), py::arg("start"), py::arg("end"), py::arg("label"))
      .def_readwrite("start", &EntitySpan::start)
      .def_readwrite("end", &EntitySpan::end)
      .def_readwrite("label", &EntitySpan::label)
      .def(py::self == py::self)
      .def("__repr__", [](const EntitySpan& s) {
        return "EntitySpan(" + std::to_string(s.start) + ", " + std::to_string(s.end) + ", '" + s.label + "')";
      });

  py::class_<AnnotatedExample>(m, "AnnotatedExample")
      .def_readonly("sentence", &AnnotatedExample::sentence)
      .def_readonly("entities", &AnnotatedExample::entities)
      .def_property_readonly("id", &AnnotatedExample::id)
      .def_property_readonly("has_boundary", [](const AnnotatedExample& e) { return e.boundary.has_value(); });

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("labels", [](const Dataset& d) { return d.labels.labels(); })
      .def_readonly("examples", &Dataset::examples)
      .def("__len__", [](const Dataset& d) { return d.examples.size(); });

  m.def("load_dataset", &load_dataset, py::arg("path"));

  m.def(
      "nesting_stats",
      [](const Dataset& d) {
        const auto s = nesting_stats(d.examples, d.labels);
        py::dict out;
        out["sentences"] = s.sentences;
        out["tokens"] = s.tokens;
        out["entities"] = s.entities;
        out["disjoint_pairs"] = s.disjoint_pairs;
        out["overlapping_pairs"] = s.overlapping_pairs;
        out["nested_pairs"] = s.nested_pairs;
        out["sentences_with_overlap"] = s.sentences_with_overlap;
        py::dict labels;
        for (const auto& [l, n] : s.label_counts) labels[py::str(l)] = n;
        out["label_counts"] = labels;
        return out;
      },
      py::arg("dataset"));

  m.def(
      "score", [](const SpanSets& gold, const SpanSets& pred) { return to_py(to_json(score(gold, pred))); },
      py::arg("gold"), py::arg("pred"));

  m.def(
      "parse_lm_output",
      [](const std::string& text, const Sentence& sentence, const std::vector<std::string>& labels) {
        const auto p = parse_lm_output(text, sentence, LabelSet(labels));
        py::dict out;
        out["grammar"] = to_string(p.grammar);
        out["spans"] = p.spans;
        out["diagnostics"] = p.diagnostics;
        return out;
      },
      py::arg("text"), py::arg("sentence"), py::arg("labels"));

  m.def(
      "render_prompt",
      [](const std::vector<AnnotatedExample>& demos, const std::vector<std::string>& labels, const Sentence& test,
         bool include_pos, bool include_tree) {
        PromptTemplate tmpl;
        tmpl.include_pos = include_pos;
        tmpl.include_tree = include_tree;
        return render_prompt(tmpl, demos, LabelSet(labels), test).text;
      },
      py::arg("demos"), py::arg("labels"), py::arg("test"), py::arg("include_pos") = true,
      py::arg("include_tree") = true);

  m.def(
      "train",
      [](const std::filesystem::path& config, const std::vector<std::string>& overrides) {
        const auto cfg = make_config(config, overrides);
        std::vector<LossReport> trace;
        {
          py::gil_scoped_release release;
          trace = run_training(cfg);
        }
        py::list out;
        for (const auto& r : trace) out.append(loss_dict(r));
        return out;
      },
      py::arg("config"), py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "run",
      [](const std::filesystem::path& config, const std::vector<std::string>& overrides) {
        const auto cfg = make_config(config, overrides);
        RunOutcome outcome;
        {
          py::gil_scoped_release release;
          outcome = run_experiment(cfg);
        }
        return to_py(to_json(outcome.summary));
      },
      py::arg("config"), py::arg("overrides") = std::vector<std::string>{});
}
