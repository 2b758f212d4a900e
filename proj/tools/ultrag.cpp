// ultrag command-line front end.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ultrag/entity_linker.hpp"
#include "ultrag/eval.hpp"
#include "ultrag/executor_wire.hpp"
#include "ultrag/fuzzy_exec.hpp"
#include "ultrag/kg_store.hpp"
#include "ultrag/llm_client.hpp"
#include "ultrag/orchestrator.hpp"
#include "ultrag/query_dsl.hpp"
#include "ultrag/seppr.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ultrag;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error("'" + path + "' is not valid JSON");
  return j;
}

std::string resolve(const fs::path& base, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (base / p).string();
}

/// Output stream: a file when a path is given, stdout otherwise.
struct Output {
  std::ofstream file;
  std::ostream* out = &std::cout;
  explicit Output(const std::string& path) {
    if (path.empty() || path == "-") return;
    file.open(path);
    if (!file) throw std::runtime_error("cannot write '" + path + "'");
    out = &file;
  }
  std::ostream& operator*() { return *out; }
};

/// Seeds file: fuzzy-seed JSON, or one Q-id per line.
SeedSpec read_seed_file(const std::string& path, const KnowledgeGraph& g) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open seed file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  auto text = buf.str();
  auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    auto j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error("seed file '" + path + "' is not valid JSON");
    return fuzzy_seeds_from_json(j, g);
  }
  std::vector<EntityId> ids;
  std::istringstream lines(text);
  for (std::string tok; lines >> tok;) {
    auto e = g.find_entity(tok);
    if (!e) throw std::runtime_error("seed '" + tok + "' is not in the graph");
    ids.push_back(*e);
  }
  return SeedSpec::crisp(std::move(ids));
}

std::unique_ptr<VectorSearcher> make_searcher(std::shared_ptr<const EmbeddingStore> store, const LinkerConfig& cfg,
                                              const IvfPqParams& params) {
  if (cfg.exact) return std::make_unique<ExactSearcher>(store);
  auto p = params;
  p.n_centroids = std::min<std::size_t>(p.n_centroids, store->size());
  auto index = std::make_unique<IvfPqIndex>(IvfPqIndex::train(store, p));
  index->set_nprobe(cfg.nprobe);
  return index;
}

int cmd_run(const std::string& config_path, const std::string& dataset_path, const std::string& seeds_mode,
            const std::string& out_path, const std::string& report_path, const std::string& script_path,
            const std::string& replay_path) {
  auto raw = read_json_file(config_path);
  auto cfg = PipelineConfig::from_json(raw);
  const auto base = fs::path(config_path).parent_path();
  const auto resources = raw.value("resources", json::object());
  const auto graph_path = resolve(base, resources.value("graph", std::string()));
  if (graph_path.empty()) throw std::runtime_error("config needs resources.graph");
  auto g = load_graph(graph_path);
  std::optional<LabelTable> labels;
  if (auto p = resolve(base, resources.value("labels", std::string())); !p.empty()) labels = LabelTable::load(p);

  std::shared_ptr<const EmbeddingStore> entity_vecs;
  std::unique_ptr<VectorSearcher> searcher;
  std::unique_ptr<TableEncoder> encoder;
  if (auto p = resolve(base, resources.value("entity_embeddings", std::string())); !p.empty()) {
    entity_vecs = std::make_shared<const EmbeddingStore>(EmbeddingStore::load(p));
    IvfPqParams params;
    if (resources.contains("ivf_centroids")) params.n_centroids = resources["ivf_centroids"].get<std::size_t>();
    if (resources.contains("pq_subquantizers"))
      params.n_subquantizers = resources["pq_subquantizers"].get<std::size_t>();
    searcher = make_searcher(entity_vecs, cfg.linker, params);
  }
  if (auto p = resolve(base, resources.value("mention_embeddings", std::string())); !p.empty())
    encoder = std::make_unique<TableEncoder>(std::make_shared<const EmbeddingStore>(EmbeddingStore::load(p)));

  auto dataset = load_dataset(dataset_path);
  const auto mode = parse_seed_mode(seeds_mode);

  std::unique_ptr<LlmClient> llm;
  std::unique_ptr<ReplayExecutor> replay_exec;
  std::vector<Transcript> recorded;
  if (!replay_path.empty()) {
    std::ifstream in(replay_path);
    if (!in) throw std::runtime_error("cannot open '" + replay_path + "'");
    recorded = read_transcripts(in);
    auto client = std::make_unique<ScriptedLlmClient>();
    std::vector<ExecutorRecord> execs;
    for (const auto& t : recorded) {
      for (const auto& it : t.iterations) {
        for (const auto& c : it.generation)
          c.transport_error.empty() ? client->push_reply(c.response) : client->push_failure(c.transport_error);
        if (it.execution) execs.push_back(*it.execution);
      }
      if (t.arbitration)
        for (const auto& c : t.arbitration->calls)
          c.transport_error.empty() ? client->push_reply(c.response) : client->push_failure(c.transport_error);
    }
    llm = std::move(client);
    if (cfg.backend == ExecutorBackend::RemoteNeural) replay_exec = std::make_unique<ReplayExecutor>(std::move(execs));
    cfg.batch_concurrency = 1;
  } else if (!script_path.empty()) {
    auto j = read_json_file(script_path);
    llm = std::make_unique<ScriptedLlmClient>(j.get<std::vector<std::string>>());
    cfg.batch_concurrency = 1;
  } else {
    if (cfg.llm.endpoint.empty()) throw std::runtime_error("config needs llm.endpoint (or pass --script/--replay)");
    llm = std::make_unique<HttpLlmClient>(cfg.llm.endpoint, cfg.llm.model, cfg.llm.api_key_env,
                                          std::chrono::seconds(cfg.llm.timeout_seconds));
  }

  PipelineResources res;
  res.graph = &g;
  res.labels = labels ? &*labels : nullptr;
  res.llm = llm.get();
  res.executor = replay_exec.get();
  res.searcher = searcher.get();
  res.encoder = encoder.get();
  auto report = run_batch(cfg, res, dataset, mode);

  Output out(out_path);
  write_transcripts(report.transcripts, *out);
  std::size_t failed = 0;
  for (const auto& t : report.transcripts) failed += t.status != "answered";
  if (!report_path.empty()) {
    Output rep(report_path);
    *rep << report.metrics.to_json().dump(2) << '\n';
  }
  std::cerr << report.metrics.to_table(false);
  std::cerr << dataset.size() << " questions, " << failed << " failed\n";
  return 0;
}

int cmd_eval(const std::string& transcripts_path, const std::string& gold_path, bool per_class,
             const std::string& labels_path, const std::string& json_path) {
  std::ifstream tin(transcripts_path);
  if (!tin) throw std::runtime_error("cannot open '" + transcripts_path + "'");
  auto transcripts = read_transcripts(tin);
  auto gold = load_dataset(gold_path);
  if (gold.size() != transcripts.size())
    throw std::runtime_error("gold has " + std::to_string(gold.size()) + " questions, transcripts " +
                             std::to_string(transcripts.size()));
  std::vector<EvalRecord> records;
  for (const auto& t : transcripts) {
    if (t.index >= gold.size()) throw std::runtime_error("transcript index out of range");
    records.push_back(eval_record(t, gold[t.index].answers));
  }
  std::optional<LabelTable> labels;
  if (!labels_path.empty()) labels = LabelTable::load(labels_path);
  auto report = evaluate(records, labels ? &*labels : nullptr);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << report.to_table(per_class);
  if (!json_path.empty()) {
    Output out(json_path);
    *out << report.to_json().dump(2) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-graph question answering retrieval engine"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "answer a dataset of questions");
  std::string config_path, dataset_path, seeds_mode = "gt", run_out, run_report, script_path, replay_path;
  run->add_option("--config", config_path, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--dataset", dataset_path, "questions (JSONL)")->required()->check(CLI::ExistingFile);
  run->add_option("--seeds", seeds_mode, "seed source")->check(CLI::IsMember({"gt", "link"}));
  run->add_option("--out", run_out, "transcript JSONL (default stdout)");
  run->add_option("--report", run_report, "metrics JSON");
  run->add_option("--script", script_path, "JSON array of canned model replies instead of an endpoint")
      ->check(CLI::ExistingFile);
  run->add_option("--replay", replay_path, "replay model replies from a transcript file")->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("eval", "score transcripts against gold answers");
  std::string transcripts_path, gold_path, eval_labels, eval_json;
  bool per_class = false;
  ev->add_option("--transcripts", transcripts_path)->required()->check(CLI::ExistingFile);
  ev->add_option("--gold", gold_path, "dataset JSONL with answers")->required()->check(CLI::ExistingFile);
  ev->add_flag("--per-class", per_class, "break metrics down by query class");
  ev->add_option("--labels", eval_labels, "also match on normalized labels")->check(CLI::ExistingFile);
  ev->add_option("--json", eval_json, "write the report as JSON");

  auto* sp = app.add_subcommand("seppr", "seed-expanded personalized PageRank");
  std::string sp_graph, sp_seeds, sp_subgraph, sp_sub_fmt = "snapshot";
  SepprConfig scfg;
  std::size_t edge_cap = 0;
  bool directed = false;
  sp->add_option("--graph", sp_graph, "triple file or snapshot")->required()->check(CLI::ExistingFile);
  sp->add_option("--seeds", sp_seeds, "Q-id list or fuzzy-seed JSON")->required()->check(CLI::ExistingFile);
  sp->add_option("--alpha", scfg.alpha)->capture_default_str();
  sp->add_option("--steps", scfg.steps)->capture_default_str();
  sp->add_option("--topk", scfg.top_k)->capture_default_str();
  sp->add_option("--edge-cap", edge_cap, "prune the subgraph to this many triples (0 = none)");
  sp->add_flag("--directed-ppr", directed, "diffuse along edge direction only");
  sp->add_option("--workers", scfg.workers)->capture_default_str();
  sp->add_option("--subgraph", sp_subgraph, "write the induced subgraph here");
  sp->add_option("--subgraph-format", sp_sub_fmt)->check(CLI::IsMember({"snapshot", "triples"}));

  auto* ln = app.add_subcommand("link", "link mentions to entities");
  std::string ln_entities, ln_mentions, ln_out;
  std::vector<std::string> ln_texts;
  LinkerConfig lcfg;
  IvfPqParams ivf;
  ln->add_option("--entities", ln_entities, "entity embedding file")->required()->check(CLI::ExistingFile);
  ln->add_option("--mentions", ln_mentions, "mention embedding file (ids are mention texts)")
      ->required()
      ->check(CLI::ExistingFile);
  ln->add_option("--text", ln_texts, "link only these mentions (default: all)");
  ln->add_option("--k", lcfg.k)->capture_default_str();
  ln->add_option("--sigma", lcfg.sigma)->capture_default_str();
  ln->add_option("--nprobe", lcfg.nprobe)->capture_default_str();
  ln->add_flag("--exact", lcfg.exact, "exhaustive L2 search instead of IVF-PQ");
  ln->add_option("--centroids", ivf.n_centroids)->capture_default_str();
  ln->add_option("--subquantizers", ivf.n_subquantizers)->capture_default_str();
  ln->add_option("--seed", ivf.seed)->capture_default_str();
  ln->add_option("--out", ln_out, "fuzzy-seed JSON (default stdout)");

  auto* ex = app.add_subcommand("exec", "execute a query with the symbolic engine");
  std::string ex_graph, ex_query, ex_format = "dsl", ex_sem = "godel", ex_labels;
  std::size_t ex_top = 20;
  ex->add_option("--graph", ex_graph)->required()->check(CLI::ExistingFile);
  ex->add_option("--query", ex_query, "query text; anchors must be entity ids")->required();
  ex->add_option("--format", ex_format)->check(CLI::IsMember({"dsl", "betae"}));
  ex->add_option("--semantics", ex_sem)->check(CLI::IsMember({"godel", "product"}));
  ex->add_option("--labels", ex_labels)->check(CLI::ExistingFile);
  ex->add_option("--top", ex_top)->capture_default_str();

  auto* ps = app.add_subcommand("parse", "parse a query and print its AST");
  std::string ps_query, ps_format = "dsl";
  ps->add_option("query", ps_query)->required();
  ps->add_option("--format", ps_format)->check(CLI::IsMember({"dsl", "betae"}));

  auto* ing = app.add_subcommand("ingest", "convert a triple file to a binary snapshot");
  std::string ing_in, ing_out, ing_scheme = "external";
  ing->add_option("--triples", ing_in)->required()->check(CLI::ExistingFile);
  ing->add_option("--out", ing_out)->required();
  ing->add_option("--ids", ing_scheme, "external (Q/P ids) or integer")->check(CLI::IsMember({"external", "integer"}));

  auto* hl = app.add_subcommand("health", "query an executor service's health endpoint");
  std::string hl_url;
  hl->add_option("--endpoint", hl_url)->required();

  auto* fl = app.add_subcommand("flops", "compare executor and LLM compute for a subgraph size");
  std::uint64_t fl_n = 3000, fl_e = 30000;
  FlopsModel fm;
  fl->add_option("--nodes", fl_n)->capture_default_str();
  fl->add_option("--edges", fl_e)->capture_default_str();
  fl->add_option("--layers", fm.gnn_layers)->capture_default_str();
  fl->add_option("--hidden", fm.gnn_hidden)->capture_default_str();
  fl->add_option("--active-params", fm.llm_active_params)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path, dataset_path, seeds_mode, run_out, run_report, script_path, replay_path);
    if (*ev) return cmd_eval(transcripts_path, gold_path, per_class, eval_labels, eval_json);
    if (*sp) {
      scfg.symmetric = !directed;
      scfg.validate();
      auto g = load_graph(sp_graph);
      auto seeds = read_seed_file(sp_seeds, g);
      auto top = seppr(g, seeds, scfg);
      std::cout << std::setprecision(10);
      for (const auto& s : top) std::cout << g.entity_name(s.id) << '\t' << s.score << '\n';
      if (!sp_subgraph.empty()) {
        std::vector<EntityId> nodes;
        std::vector<double> scores;
        for (const auto& s : top) {
          nodes.push_back(s.id);
          scores.push_back(s.score);
        }
        auto sub = induce_subgraph(g, nodes, scores, edge_cap == 0 ? kNoEdgeCap : edge_cap);
        if (sp_sub_fmt == "snapshot") {
          save_snapshot(sub, sp_subgraph);
        } else {
          Output o(sp_subgraph);
          write_triples(sub, *o);
        }
        std::cerr << "subgraph: " << sub.num_entities() << " entities, " << sub.num_triples() << " triples\n";
      }
      return 0;
    }
    if (*ln) {
      auto entities = std::make_shared<const EmbeddingStore>(EmbeddingStore::load(ln_entities));
      auto mentions = EmbeddingStore::load(ln_mentions);
      auto searcher = make_searcher(entities, lcfg, ivf);
      std::vector<LinkResult> links;
      if (ln_texts.empty()) ln_texts.assign(mentions.ids().begin(), mentions.ids().end());
      for (std::size_t i = 0; i < ln_texts.size(); ++i) {
        auto row = mentions.find(ln_texts[i]);
        if (!row) throw std::runtime_error("no embedding for mention '" + ln_texts[i] + "'");
        auto v = mentions.row(*row);
        links.push_back(link(*searcher, std::vector<float>(v.begin(), v.end()), lcfg.k, lcfg.sigma,
                             Mention{ln_texts[i], i}));
      }
      Output o(ln_out);
      *o << fuzzy_seeds_to_json(links).dump(2) << '\n';
      return 0;
    }
    if (*ex) {
      auto g = load_graph(ex_graph);
      auto q = parse_query(ex_query, ex_format == "dsl" ? QueryFormat::Dsl : QueryFormat::BetaE);
      std::vector<std::string> diags;
      auto linking = link_query_leaves(g, q, nullptr, nullptr, 1, 0.1);
      auto result = execute(g, q, linking.leaf_sets, parse_semantics(ex_sem));
      std::optional<LabelTable> labels;
      if (!ex_labels.empty()) labels = LabelTable::load(ex_labels);
      for (const auto& d : linking.diagnostics) std::cerr << "note: " << d << '\n';
      for (const auto& d : result.diagnostics) std::cerr << "note: " << d << '\n';
      for (const auto& m : top_k(result.scores, ex_top)) {
        const auto& id = g.entity_name(m.id);
        std::cout << id << '\t' << m.value;
        if (labels) std::cout << '\t' << labels->lookup(id);
        std::cout << '\n';
      }
      return 0;
    }
    if (*ps) {
      const auto fmt = ps_format == "dsl" ? QueryFormat::Dsl : QueryFormat::BetaE;
      auto q = parse_query(ps_query, fmt);
      json j{{"ast", query_to_json(q)},
             {"dsl", serialize_dsl(q)},
             {"class", query_class(q)},
             {"nesting_depth", max_nesting_depth(ps_query, fmt)}};
      try {
        j["betae"] = serialize_betae(q);
      } catch (const std::exception&) {
        j["betae"] = nullptr;
      }
      std::cout << j.dump(2) << '\n';
      return 0;
    }
    if (*ing) {
      auto g = ingest_triples(ing_in, parse_id_scheme(ing_scheme));
      save_snapshot(g, ing_out);
      std::cerr << g.num_entities() << " entities, " << g.num_relations() << " relations, " << g.num_triples()
                << " triples\n";
      return 0;
    }
    if (*hl) {
      RemoteExecutor remote(hl_url);
      auto body = remote.health();
      std::cout << body.dump(2) << '\n';
      return body.value("http_status", 0) == 200 ? 0 : 1;
    }
    if (*fl) {
      const auto gnn = gnn_flops(fl_n, fl_e, fm.gnn_layers, fm.gnn_hidden);
      const auto llm = llm_flops(fl_n, fl_e, fm.llm_active_params);
      std::cout << "executor FLOPs\t" << gnn << "\nLLM FLOPs\t" << std::setprecision(4) << llm << "\nratio\t"
                << llm / static_cast<double>(gnn) << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
