#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <memory>
#include <optional>

#include "ultrag/entity_linker.hpp"
#include "ultrag/eval.hpp"
#include "ultrag/executor_wire.hpp"
#include "ultrag/fuzzy_exec.hpp"
#include "ultrag/orchestrator.hpp"
#include "ultrag/query_dsl.hpp"
#include "ultrag/seppr.hpp"

namespace py = pybind11;
using namespace ultrag;

namespace {

using Triples = std::vector<std::tuple<std::string, std::string, std::string>>;
using Weights = std::map<std::string, double>;

QueryFormat format_of(const std::string& name) {
  if (name == "dsl") return QueryFormat::Dsl;
  if (name == "betae") return QueryFormat::BetaE;
  throw py::value_error("format must be 'dsl' or 'betae'");
}

FuzzySet fuzzy_of(const KnowledgeGraph& g, const Weights& w) {
  std::vector<Membership> entries;
  for (const auto& [id, v] : w) {
    auto e = g.find_entity(id);
    if (!e) throw py::key_error("unknown entity " + id);
    entries.push_back({*e, v});
  }
  return FuzzySet::from_entries(g.num_entities(), std::move(entries));
}

std::vector<std::pair<std::string, double>> scored(const KnowledgeGraph& g, const std::vector<ScoredEntity>& xs) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& s : xs) out.emplace_back(g.entity_name(s.id), s.score);
  return out;
}

SeedSpec seeds_of(const KnowledgeGraph& g, const py::object& seeds) {
  if (py::isinstance<py::str>(seeds)) throw py::type_error("seeds must be a list");
  auto items = seeds.cast<py::list>();
  if (!items.empty() && py::isinstance<py::dict>(items[0])) {
    std::vector<FuzzySet> sets;
    for (auto it : items) sets.push_back(fuzzy_of(g, it.cast<Weights>()));
    return SeedSpec::fuzzy(std::move(sets));
  }
  std::vector<EntityId> ids;
  for (auto it : items) {
    const auto id = it.cast<std::string>();
    auto e = g.find_entity(id);
    if (!e) throw py::key_error("unknown entity " + id);
    ids.push_back(*e);
  }
  return SeedSpec::crisp(std::move(ids));
}

/// Embedding matrix plus the searcher used for linking.
class Linker {
 public:
  Linker(py::array_t<float, py::array::c_style | py::array::forcecast> vectors, std::vector<std::string> ids,
         bool exact, std::size_t n_centroids, std::size_t n_subquantizers, std::size_t nprobe, std::uint64_t seed) {
    if (vectors.ndim() != 2) throw py::value_error("vectors must be a 2-d array");
    const auto dim = static_cast<std::size_t>(vectors.shape(1));
    std::vector<float> flat(vectors.data(), vectors.data() + vectors.size());
    store_ = std::make_shared<const EmbeddingStore>(EmbeddingStore::from_flat(dim, std::move(flat), std::move(ids)));
    if (exact) {
      searcher_ = std::make_unique<ExactSearcher>(store_);
    } else {
      IvfPqParams p;
      p.n_centroids = n_centroids;
      p.n_subquantizers = n_subquantizers;
      p.seed = seed;
      auto index = std::make_unique<IvfPqIndex>(IvfPqIndex::train(store_, p));
      index->set_nprobe(nprobe);
      searcher_ = std::move(index);
    }
  }

  std::vector<std::pair<std::string, double>> search(const std::vector<float>& q, std::size_t k) const {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& h : searcher_->search(q, k)) out.emplace_back(store_->id(h.row), h.distance);
    return out;
  }

  std::vector<std::tuple<std::string, double, double>> link_vector(const std::vector<float>& q, std::size_t k,
                                                                   double sigma) const {
    std::vector<std::tuple<std::string, double, double>> out;
    for (const auto& c : link(*searcher_, q, k, sigma).candidates) out.emplace_back(c.entity, c.distance, c.probability);
    return out;
  }

  std::size_t size() const { return store_->size(); }
  std::size_t dim() const { return store_->dim(); }

 private:
  std::shared_ptr<const EmbeddingStore> store_;
  std::unique_ptr<VectorSearcher> searcher_;
};

}  // namespace

PYBIND11_MODULE(_ultrag, m) {
  m.doc() = "Native core of the ultrag retrieval engine";

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<ExecutionError>(m, "ExecutionError", PyExc_RuntimeError);
  py::register_exception<GroundTruthError>(m, "GroundTruthError", PyExc_RuntimeError);

  py::class_<KnowledgeGraph>(m, "Graph")
      .def(py::init([](const Triples& triples, const std::vector<std::string>& entities) {
             return KnowledgeGraph::from_external(entities, std::vector<std::string>{}, triples);
           }),
           py::arg("triples"), py::arg("entities") = std::vector<std::string>{})
      .def_static("load", [](const std::string& path) { return load_graph(path); }, py::arg("path"))
      .def_property_readonly("num_entities", &KnowledgeGraph::num_entities)
      .def_property_readonly("num_relations", &KnowledgeGraph::num_relations)
      .def_property_readonly("num_triples", &KnowledgeGraph::num_triples)
      .def("entities", [](const KnowledgeGraph& g) {
        return std::vector<std::string>(g.entity_names().begin(), g.entity_names().end());
      })
      .def("triples", [](const KnowledgeGraph& g) {
        Triples out;
        for (const auto& t : g.triples())
          out.emplace_back(g.entity_name(t.head), g.base_relation_name(t.rel), g.entity_name(t.tail));
        return out;
      })
      .def("__contains__", [](const KnowledgeGraph& g, const std::string& id) { return g.find_entity(id).has_value(); });

  m.def("normalize", [](const std::string& text, const std::string& fmt) {
        return serialize_dsl(parse_query(text, format_of(fmt)));
      }, py::arg("text"), py::arg("format") = "dsl", "Parse a query and print it in canonical DSL form.");
  m.def("to_betae", [](const std::string& text) { return serialize_betae(parse_dsl(text)); }, py::arg("text"));
  m.def("betae_to_dsl", [](const std::string& text) { return betae_to_dsl(text); }, py::arg("text"));
  m.def("query_json", [](const std::string& text, const std::string& fmt) {
        return query_to_json(parse_query(text, format_of(fmt))).dump();
      }, py::arg("text"), py::arg("format") = "dsl");
  m.def("nesting_depth", [](const std::string& text, const std::string& fmt) {
        return max_nesting_depth(text, format_of(fmt));
      }, py::arg("text"), py::arg("format") = "dsl");
  m.def("query_class", [](const std::string& text) { return query_class(parse_dsl(text)); }, py::arg("text"));

  m.def("execute", [](const KnowledgeGraph& g, const std::string& query, const std::vector<Weights>& leaves,
                      const std::string& semantics, std::size_t top) {
        std::vector<FuzzySet> sets;
        for (const auto& w : leaves) sets.push_back(fuzzy_of(g, w));
        const auto r = execute(g, parse_dsl(query), sets, parse_semantics(semantics));
        return wire_scores(g, r.scores, top == 0 ? g.num_entities() : top);
      }, py::arg("graph"), py::arg("query"), py::arg("leaves"), py::arg("semantics") = "godel", py::arg("top") = 0,
      "Run a DSL query; one {entity: weight} dict per leaf, left to right.");

  m.def("seppr", [](const KnowledgeGraph& g, const py::object& seeds, double alpha, std::size_t steps,
                    std::size_t topk, bool directed, std::size_t workers) {
        SepprConfig cfg;
        cfg.alpha = alpha;
        cfg.steps = steps;
        cfg.top_k = topk;
        cfg.symmetric = !directed;
        cfg.workers = workers;
        cfg.validate();
        return scored(g, seppr(g, seeds_of(g, seeds), cfg));
      }, py::arg("graph"), py::arg("seeds"), py::arg("alpha") = 0.85, py::arg("steps") = 5, py::arg("topk") = 30000,
      py::arg("directed") = false, py::arg("workers") = 1,
      "Seeds are entity ids, or one {entity: probability} dict per mention.");

  m.def("rbf_probabilities", [](const std::vector<double>& d, double sigma) { return rbf_probabilities(d, sigma); },
        py::arg("distances"), py::arg("sigma"));

  py::class_<Linker>(m, "Linker")
      .def(py::init<py::array_t<float, py::array::c_style | py::array::forcecast>, std::vector<std::string>, bool,
                    std::size_t, std::size_t, std::size_t, std::uint64_t>(),
           py::arg("vectors"), py::arg("ids"), py::arg("exact") = false, py::arg("n_centroids") = 64,
           py::arg("n_subquantizers") = 8, py::arg("nprobe") = 16, py::arg("seed") = 1234)
      .def("search", &Linker::search, py::arg("vector"), py::arg("k") = 10)
      .def("link", &Linker::link_vector, py::arg("vector"), py::arg("k") = 10, py::arg("sigma") = 0.1)
      .def_property_readonly("size", &Linker::size)
      .def_property_readonly("dim", &Linker::dim);

  m.def("gt_query", [](const KnowledgeGraph& g, const std::string& root) {
        auto e = g.find_entity(root);
        if (!e) throw py::key_error("unknown entity " + root);
        return serialize_dsl(gt_query_from_subgraph(g, *e));
      }, py::arg("graph"), py::arg("root"));

  m.def("gnn_flops", &gnn_flops, py::arg("nodes"), py::arg("edges"), py::arg("layers") = 6, py::arg("hidden") = 64);
  m.def("llm_flops", &llm_flops, py::arg("nodes"), py::arg("edges"), py::arg("active_params") = 5.1e9);
  m.def("mrr", [](const std::vector<std::size_t>& ranks) { return mrr(ranks); }, py::arg("best_ranks"));
  m.def("hit_at_k", [](const std::vector<std::size_t>& ranks, std::size_t k) { return hit_at_k(ranks, k); },
        py::arg("best_ranks"), py::arg("k"));

  m.def("run_pipeline", [](const KnowledgeGraph& g, const std::string& question, const std::vector<std::string>& replies,
                           const std::optional<std::vector<std::string>>& seeds, const std::string& config_json,
                           const std::map<std::string, std::string>& labels) {
        auto cfg = PipelineConfig::from_json(nlohmann::json::parse(config_json));
        LabelTable table;
        for (const auto& [id, label] : labels) table.set(id, label);
        ScriptedLlmClient llm(replies);
        PipelineResources res{&g, labels.empty() ? nullptr : &table, &llm};
        auto out = run_pipeline(cfg, res, question, seeds);
        return py::make_tuple(out.answers, out.transcript.to_json().dump());
      }, py::arg("graph"), py::arg("question"), py::arg("replies"), py::arg("seeds") = std::nullopt,
      py::arg("config_json") = "{}", py::arg("labels") = std::map<std::string, std::string>{},
      "Answer one question with canned model replies; returns (answers, transcript JSON).");
}
