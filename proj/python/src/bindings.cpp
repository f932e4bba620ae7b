#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "ragcfg/cli.hpp"
#include "ragcfg/config.hpp"
#include "ragcfg/corpus.hpp"
#include "ragcfg/error.hpp"
#include "ragcfg/metrics.hpp"
#include "ragcfg/policy.hpp"
#include "ragcfg/proxies.hpp"
#include "ragcfg/retrieval.hpp"

namespace py = pybind11;
using namespace ragcfg;
using nlohmann::json;

namespace {

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::handle& o) {
  return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

CaseBase base_from(const std::vector<std::tuple<std::string, Vector, Label>>& items) {
  std::vector<EmbeddingRecord> recs;
  std::map<std::string, Label> labels;
  for (const auto& [id, v, l] : items) {
    recs.push_back({id, normalize(v), l2_norm(v)});
    labels[id] = l;
  }
  return CaseBase(std::move(recs), std::move(labels), TruncationSpec{}, "python");
}

py::list neighbors_of(const RetrievalResult& r) {
  py::list out;
  for (const auto& n : r.neighbors) out.append(py::make_tuple(n.id, n.similarity, n.label));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Configuration optimizer for retrieval-augmented transcript classification";
  static py::exception<Error> error(m, "RagcfgError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  py::class_<Corpus>(m, "Corpus")
      .def_property_readonly("size", &Corpus::size)
      .def_property_readonly("content_hash", &Corpus::content_hash)
      .def("ids", [](const Corpus& c, const std::string& split) {
        std::vector<std::string> ids;
        for (const auto* t : c.split_sorted(parse_split(split))) ids.push_back(t->id);
        return ids;
      })
      .def("label", [](const Corpus& c, const std::string& id) -> std::optional<Label> {
        const Transcript* t = c.find(id);
        if (!t) throw Error(ErrorKind::kValidation, "corpus", "unknown id " + id);
        return t->label;
      })
      .def("class_counts", [](const Corpus& c) {
        std::map<std::string, std::map<Label, size_t>> out;
        for (const auto& [s, counts] : c.class_counts()) out[to_string(s)] = counts;
        return out;
      })
      .def("to_jsonl", &serialize_jsonl)
      .def("__len__", &Corpus::size);

  m.def("load_corpus", [](const std::string& path, bool label_flip) { return load_jsonl(path, {label_flip}); },
        py::arg("path"), py::arg("label_flip") = false);
  m.def("parse_corpus", [](const std::string& text, bool label_flip) { return parse_jsonl(text, {label_flip}); },
        py::arg("text"), py::arg("label_flip") = false);
  m.def("synthetic_corpus",
        [](int n_per_class, std::uint64_t seed, double separation) {
          return generate_synthetic({n_per_class, seed, separation});
        },
        py::arg("n_per_class") = 10, py::arg("seed") = 0, py::arg("separation") = 0.9);

  m.def("evaluate", [](const std::vector<Label>& preds, const std::vector<Label>& golds) {
    return to_py(json(evaluate(preds, golds)));
  });
  m.def("kendall_tau", [](const std::vector<std::string>& a, const std::vector<std::string>& b) {
    return kendall_tau(a, b);
  });
  m.def("label_entropy", [](const std::vector<Label>& ls) { return label_entropy(ls); });
  m.def("ndcg_at_k",
        [](const std::vector<Label>& ranked_labels, Label gold, int k) {
          RetrievalResult r;
          for (size_t i = 0; i < ranked_labels.size(); ++i) {
            r.neighbors.push_back({"n" + std::to_string(i), 0.0, ranked_labels[i]});
          }
          return ndcg_at_k(r, gold, k);
        },
        py::arg("ranked_labels"), py::arg("gold"), py::arg("k"));

  m.def("select",
        [](const Vector& query, const std::vector<std::tuple<std::string, Vector, Label>>& items, int k,
           double tau, const std::string& mode, const std::string& metric) {
          const CaseBase base = base_from(items);
          const RetrievalResult r =
              select(query, base, SelectionConfig{k, tau, parse_selection_mode(mode)}, parse_metric(metric));
          return py::make_tuple(neighbors_of(r), to_string(r.mode_used));
        },
        py::arg("query"), py::arg("items"), py::arg("k") = 5, py::arg("tau") = 0.75,
        py::arg("mode") = "dynamic", py::arg("metric") = "cosine");

  m.def("default_config", [] { return to_py(json(PipelineConfig{})); });
  m.def("config_hash", [](const py::object& cfg) { return config_hash(from_py(cfg).get<PipelineConfig>()); });
  m.def("load_frozen", [](const std::string& path) { return to_py(json(load_frozen(path))); });
  m.def("redecide", [](const py::object& inputs) { return to_py(json(redecide(from_py(inputs)))); });
  m.def("replay_ledger", [](const std::string& path) {
    std::vector<std::tuple<size_t, std::string, std::string>> out;
    for (const auto& mm : replay_ledger(load_ledger(path))) out.emplace_back(mm.index, mm.expected, mm.actual);
    return out;
  });

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::vector<std::string> full = {"ragcfg"};
          full.insert(full.end(), args.begin(), args.end());
          std::vector<const char*> argv;
          for (const auto& a : full) argv.push_back(a.c_str());
          std::ostringstream out;
          std::ostringstream err;
          int code = 0;
          {
            py::gil_scoped_release release;
            code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
          }
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"));
}
