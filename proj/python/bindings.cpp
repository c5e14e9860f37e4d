#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "txnlink/analytics.hpp"
#include "txnlink/cli.hpp"
#include "txnlink/datagen.hpp"
#include "txnlink/errors.hpp"
#include "txnlink/evaluation.hpp"
#include "txnlink/training.hpp"

namespace py = pybind11;
using namespace txnlink;

namespace {

py::array_t<double> to_numpy(const nd::Tensor& t) {
  py::array_t<double> a({t.rows(), t.cols()});
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

py::dict result_dict(const training::AnomalyResult& r) {
  py::dict d;
  d["txn_id"] = r.txn_id;
  d["direction"] = graph::to_string(r.dir);
  d["customer_id"] = r.customer_id;
  d["cold_start"] = r.cold_start;
  d["likelihood"] = r.likelihood ? py::cast(*r.likelihood) : py::none();
  d["anomaly_score"] = r.anomaly_score ? py::cast(*r.anomaly_score) : py::none();
  return d;
}

model::Model load_encoder(const std::string& checkpoint) {
  if (model::peek_checkpoint(checkpoint).kind == "mlp")
    throw ModelError("checkpoint holds an mlp baseline, not a graph encoder");
  return model::load_model(checkpoint);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Link prediction and anomaly scoring on customer-transaction graphs";
  m.attr("__version__") = cli::kToolVersion;

  py::register_exception<Error>(m, "TxnlinkError");

  m.def(
      "run",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one CLI command; returns (exit code, stdout, stderr).");

  m.def(
      "generate",
      [](const std::string& out_dir, std::size_t n_customers, std::uint64_t seed) {
        std::ostringstream out, err;
        const int code = cli::run({"gen-data", "-o", out_dir, "--set", "data.n_customers=" + std::to_string(n_customers),
                                   "--seed", std::to_string(seed)},
                                  out, err);
        if (code != 0) throw ConfigError(err.str());
      },
      py::arg("out_dir"), py::arg("n_customers") = 500, py::arg("seed") = 1);

  m.def(
      "roc_auc", [](const std::vector<double>& s, const std::vector<int>& y) { return evaluation::roc_auc(s, y); },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "average_precision",
      [](const std::vector<double>& s, const std::vector<int>& y) { return evaluation::average_precision(s, y); },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "cosine_similarity",
      [](const std::vector<double>& u, const std::vector<double>& v) { return analytics::cosine_similarity(u, v); },
      py::arg("u"), py::arg("v"));

  py::class_<graph::BipartiteGraph>(m, "Graph")
      .def_static(
          "build",
          [](const std::string& transactions, const std::string& profiles) {
            const auto t = graph::read_transactions(transactions);
            const auto p = graph::read_profiles(profiles);
            return graph::BipartiteGraph::build(t, p);
          },
          py::arg("transactions"), py::arg("profiles"))
      .def_static("load", py::overload_cast<const std::string&>(&graph::BipartiteGraph::load), py::arg("path"))
      .def("save", py::overload_cast<const std::string&>(&graph::BipartiteGraph::save, py::const_), py::arg("path"))
      .def_property_readonly("num_customers", &graph::BipartiteGraph::num_customers)
      .def_property_readonly("num_transactions", &graph::BipartiteGraph::num_transactions)
      .def_property_readonly("customer_ids", &graph::BipartiteGraph::customer_ids)
      .def_property_readonly("txn_ids", &graph::BipartiteGraph::txn_ids)
      .def("num_edges",
           [](const graph::BipartiteGraph& g, const std::string& d) { return g.num_edges(graph::parse_direction(d)); })
      .def("customer_features", [](const graph::BipartiteGraph& g) { return to_numpy(g.customer_features()); })
      .def("txn_features", [](const graph::BipartiteGraph& g) { return to_numpy(g.txn_features()); });

  m.def(
      "score",
      [](const std::string& checkpoint, const graph::BipartiteGraph& g, const std::string& transactions) {
        const auto txns = graph::read_transactions(transactions);
        std::vector<training::AnomalyResult> results;
        {
          py::gil_scoped_release release;
          training::Scorer scorer(load_encoder(checkpoint), g);
          results = scorer.score(txns);
        }
        py::list out;
        for (const auto& r : results) out.append(result_dict(r));
        return out;
      },
      py::arg("checkpoint"), py::arg("graph"), py::arg("transactions"));

  m.def(
      "embeddings",
      [](const std::string& checkpoint, const graph::BipartiteGraph& g, const std::string& node_type,
         std::size_t layer) {
        auto model = load_encoder(checkpoint);
        const auto type = node_type == "transaction" ? graph::NodeType::transaction : graph::NodeType::customer;
        return to_numpy(analytics::export_embeddings(model, g, type, layer));
      },
      py::arg("checkpoint"), py::arg("graph"), py::arg("node_type") = "customer", py::arg("layer") = 0);

  m.def(
      "kmeans",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> points, std::size_t k, std::uint64_t seed) {
        if (points.ndim() != 2) throw DimensionError("points must be a 2-d array");
        const auto n = static_cast<std::size_t>(points.shape(0)), d = static_cast<std::size_t>(points.shape(1));
        const auto c = analytics::kmeans(nd::Tensor::from({n, d}, std::vector<double>(points.data(), points.data() + n * d)),
                                         k, seed);
        return py::make_tuple(c.assignment, to_numpy(c.centroids), c.inertia);
      },
      py::arg("points"), py::arg("k"), py::arg("seed") = 0);
}
