// Python bindings: datasets, featurization, models, training, evaluation and
// the command-line entry point. Configs and reports cross the boundary as
// plain dicts (through JSON).

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "json.hpp"
#include "pifold/cli.hpp"
#include "pifold/dataset.hpp"
#include "pifold/decode.hpp"
#include "pifold/serialization.hpp"
#include "pifold/train.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace pifold {
namespace {

json to_native(const py::handle& obj) {
  if (obj.is_none()) return json::object();
  const std::string text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  return json::parse(text);
}

py::object to_python(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

template <class T>
T config_from(const py::handle& obj, const char* what) {
  try {
    return to_native(obj).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string(what) + ": " + e.what());
  }
}

using Coords = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

Coords stack(const std::vector<Vec3>& v) {
  Coords m(static_cast<Eigen::Index>(v.size()), 3);
  for (std::size_t i = 0; i < v.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = v[i].transpose();
  return m;
}

std::vector<Vec3> unstack(const Coords& m) {
  std::vector<Vec3> v(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) v[static_cast<std::size_t>(i)] = m.row(i).transpose();
  return v;
}

std::vector<ProteinGraph> featurize_for(const std::vector<Protein>& ps, const ModelParams& params) {
  std::vector<ProteinGraph> out;
  out.reserve(ps.size());
  const auto v = params.virtual_atoms();
  for (const auto& p : ps) out.push_back(featurize(p, params.config().features, v));
  return out;
}

}  // namespace
}  // namespace pifold

PYBIND11_MODULE(pifold, m) {
  using namespace pifold;
  m.doc() = "Protein sequence design from backbone structure";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      switch (e.kind()) {
        case ErrorKind::kNotFound: PyErr_SetString(PyExc_FileNotFoundError, e.what()); return;
        case ErrorKind::kInvalidArgument:
        case ErrorKind::kData: PyErr_SetString(PyExc_ValueError, e.what()); return;
        case ErrorKind::kNumeric: PyErr_SetString(PyExc_ArithmeticError, e.what()); return;
        default: PyErr_SetString(PyExc_RuntimeError, e.what()); return;
      }
    } catch (const json::exception& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.attr("alphabet") = std::string(kAlphabet);

  py::class_<Protein>(m, "Protein")
      .def(py::init([](std::string name, const std::string& seq, const Coords& n, const Coords& ca, const Coords& c,
                       const Coords& o) {
             Protein p;
             p.name = std::move(name);
             for (std::size_t i = 0; i < seq.size(); ++i) {
               const auto code = residue_code(seq[i]);
               if (!code) fail(ErrorKind::kData, "unknown residue letter '" + std::string(1, seq[i]) + "'");
               p.sequence.push_back(*code);
             }
             p.n = unstack(n), p.ca = unstack(ca), p.c = unstack(c), p.o = unstack(o);
             p.mask.assign(p.ca.size(), 1);
             p.validate();
             return p;
           }),
           py::arg("name"), py::arg("sequence"), py::arg("N"), py::arg("CA"), py::arg("C"), py::arg("O"))
      .def_readonly("name", &Protein::name)
      .def_property_readonly("sequence", &Protein::sequence_string)
      .def_property_readonly("mask", [](const Protein& p) { return std::vector<int>(p.mask.begin(), p.mask.end()); })
      .def_property_readonly("N", [](const Protein& p) { return stack(p.n); })
      .def_property_readonly("CA", [](const Protein& p) { return stack(p.ca); })
      .def_property_readonly("C", [](const Protein& p) { return stack(p.c); })
      .def_property_readonly("O", [](const Protein& p) { return stack(p.o); })
      .def("__len__", &Protein::size)
      .def("__repr__", [](const Protein& p) {
        return "<Protein '" + p.name + "' with " + std::to_string(p.size()) + " residues>";
      });

  m.def("synth", &synth_dataset, py::arg("seed"), py::arg("count"), py::arg("n"),
        "Synthetic backbones whose sequence follows their backbone torsions.");
  m.def("read_jsonl", &parse_jsonl, py::arg("path"));
  m.def("parse_jsonl", &parse_jsonl_text, py::arg("text"));
  m.def(
      "write_jsonl",
      [](const std::string& path, const std::vector<Protein>& ps) { write_jsonl(path, ps); }, py::arg("path"),
      py::arg("proteins"));

  m.def(
      "describe_layout",
      [](const py::object& features) {
        return to_python(json::parse(describe_layout(config_from<FeatureConfig>(features, "features"))));
      },
      py::arg("features") = py::none(), "Column layout of the node and edge features.");

  m.def(
      "featurize",
      [](const Protein& p, const py::object& features) {
        const FeatureConfig fc = config_from<FeatureConfig>(features, "features");
        const ProteinGraph g = featurize(p, fc, VirtualAtomParams::initial(fc.num_virtual, 1));
        py::dict d;
        d["node_features"] = g.node_features;
        d["edge_features"] = g.edge_features;
        d["src"] = *g.topology.src;
        d["dst"] = *g.topology.dst;
        return d;
      },
      py::arg("protein"), py::arg("features") = py::none(),
      "Node/edge features and the neighbour graph (virtual atoms at their initial positions).");

  py::class_<ModelParams>(m, "Model")
      .def(py::init([](const py::object& config, std::uint64_t seed) {
             const ModelConfig mc = config_from<ModelConfig>(config, "model config");
             mc.validate();
             return ModelParams::init(mc, seed);
           }),
           py::arg("config") = py::none(), py::arg("seed") = 0)
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("save", [](const ModelParams& p, const std::string& path) { save_checkpoint(path, p); }, py::arg("path"))
      .def_property_readonly("config", [](const ModelParams& p) { return to_python(json(p.config())); })
      .def_property_readonly("num_parameters", &ModelParams::num_scalars)
      .def_property_readonly("virtual_atoms", [](const ModelParams& p) { return p.virtual_atoms().positions; })
      .def(
          "logits",
          [](const ModelParams& p, const Protein& prot) {
            return pifold_logits(featurize(prot, p.config().features, p.virtual_atoms()), p);
          },
          py::arg("protein"), "One-shot logits, n x 20 (encoder only).")
      .def(
          "design",
          [](const ModelParams& p, const Protein& prot, const std::string& precision) {
            const auto d =
                decode(featurize(prot, p.config().features, p.virtual_atoms()), p, parse_precision(precision));
            std::string seq;
            for (auto c : d.sequence) seq += residue_letter(c);
            return py::make_tuple(seq, d.log_probs);
          },
          py::arg("protein"), py::arg("precision") = "f64",
          "Greedy design: (sequence, n x 20 log-probabilities).")
      .def(
          "train",
          [](ModelParams& p, const std::vector<Protein>& ps, const py::object& config) {
            const TrainConfig tc = config_from<TrainConfig>(config, "train config");
            const auto graphs = featurize_for(ps, p);
            py::gil_scoped_release release;
            return train(graphs, p, tc).losses;
          },
          py::arg("proteins"), py::arg("config") = py::none(), "Trains in place; returns the per-step losses.")
      .def(
          "evaluate",
          [](const ModelParams& p, const std::vector<Protein>& ps, int min_length, int max_length) {
            EvalOptions eo;
            eo.min_length = min_length;
            eo.max_length = max_length;
            return to_python(json(evaluate(featurize_for(ps, p), p, eo)));
          },
          py::arg("proteins"), py::arg("min_length") = 0, py::arg("max_length") = 0);

  m.def(
      "run",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_command(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a command-line invocation; returns (exit code, stdout, stderr).");
}
