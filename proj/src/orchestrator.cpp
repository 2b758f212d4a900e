#include "ultrag/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <regex>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

namespace ultrag {

namespace {

using nlohmann::json;

std::string semantics_key(Semantics s) { return s == Semantics::Godel ? "godel" : "product"; }

template <typename T>
void read_field(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* key : known) ok = ok || k == key;
    if (!ok) throw ConfigError("unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
  }
}

std::string label_of(const LabelTable* labels, const std::string& id) {
  if (!labels) return id;
  auto l = labels->lookup(id);
  return l == kUnlabeled ? id : l;
}

std::string format_prob(double p) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4) << p;
  return out.str();
}

std::string trim(std::string s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && is_space(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

json llm_json(const LlmExchange& e) {
  auto msgs = json::array();
  for (const auto& m : e.messages) msgs.push_back(to_json(m));
  json j{{"purpose", e.purpose},
         {"messages", std::move(msgs)},
         {"response", e.response},
         {"prompt_tokens", e.prompt_tokens},
         {"completion_tokens", e.completion_tokens}};
  if (!e.transport_error.empty()) j["transport_error"] = e.transport_error;
  return j;
}

LlmExchange llm_from_json(const json& j) {
  LlmExchange e;
  e.purpose = j.value("purpose", std::string());
  for (const auto& m : j.value("messages", json::array())) e.messages.push_back(chat_message_from_json(m));
  e.response = j.value("response", std::string());
  e.transport_error = j.value("transport_error", std::string());
  e.prompt_tokens = j.value("prompt_tokens", std::size_t{0});
  e.completion_tokens = j.value("completion_tokens", std::size_t{0});
  return e;
}

json weighted_json(std::span<const WeightedId> v) {
  auto a = json::array();
  for (const auto& [id, w] : v) a.push_back(json::array({id, w}));
  return a;
}

std::vector<WeightedId> weighted_from_json(const json& j) {
  std::vector<WeightedId> out;
  for (const auto& e : j) out.emplace_back(e.at(0).get<std::string>(), e.at(1).get<double>());
  return out;
}

json executor_json(const ExecutorRecord& r) {
  json j{{"backend", r.backend},     {"tag", r.tag},
         {"scores", weighted_json(r.scores)}, {"support_size", r.support_size},
         {"diagnostics", r.diagnostics}};
  if (!r.request.is_null()) j["request"] = r.request;
  if (!r.response.is_null()) j["response"] = r.response;
  if (r.status != 0) j["status"] = r.status;
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

ExecutorRecord executor_from_json(const json& j) {
  ExecutorRecord r;
  r.backend = j.value("backend", std::string());
  r.tag = j.value("tag", std::string());
  r.scores = weighted_from_json(j.value("scores", json::array()));
  r.support_size = j.value("support_size", std::size_t{0});
  r.diagnostics = j.value("diagnostics", std::vector<std::string>{});
  if (j.contains("request")) r.request = j["request"];
  if (j.contains("response")) r.response = j["response"];
  r.status = j.value("status", 0);
  r.error = j.value("error", std::string());
  return r;
}

/// One model call with transport retries; every attempt lands in `log`.
ChatCompletion call_llm(LlmClient& llm, const LlmConfig& cfg, const std::vector<ChatMessage>& messages,
                        const std::string& purpose, std::vector<LlmExchange>& log) {
  for (std::size_t attempt = 0;; ++attempt) {
    LlmExchange ex;
    ex.purpose = purpose;
    ex.messages = messages;
    try {
      auto c = llm.complete(messages);
      ex.response = c.content;
      ex.prompt_tokens = c.prompt_tokens;
      ex.completion_tokens = c.completion_tokens;
      log.push_back(std::move(ex));
      return c;
    } catch (const TransportError& e) {
      ex.transport_error = e.what();
      log.push_back(std::move(ex));
      if (attempt >= cfg.transport_retries) throw;
    }
  }
}

}  // namespace

std::string default_generation_system() {
  return "You translate questions into logical queries over a knowledge graph. Reply with the query only.\n"
         "Rules:\n"
         "- A projection follows a relation from an anchor: Q42 -> P19\n"
         "- Chain projections left to right: Q42 -> P19 -> P17\n"
         "- Add _inv to walk a relation backwards: Q5 -> P31_inv\n"
         "- AND(q1, q2, ...) keeps the entities every subquery reaches; it may be followed by projections:"
         " AND(Q1 -> P2, Q3 -> P4_inv) -> P5\n"
         "- Anchors are entity ids like Q42, or a mention in angle brackets like <Douglas Adams> when no id"
         " is given\n"
         "- Use only relation ids from the list you are given";
}

std::string default_generation_user() {
  return "Relation types:\n{relations}\n\n{seeds}\n{partials}Question: {question}\nQuery:";
}

std::string default_arbitration_system() {
  return "You receive a question, the query that was run for it and the ranked entities the query returned, with"
         " their probabilities. Choose the entities that answer the question. You may drop wrong candidates"
         " or add entities you know to be correct.\n"
         "Reply with a line 'ANSWER: ' followed by comma-separated entity ids, then optionally a line"
         " 'EXPLANATION: ' with a short free-text answer.";
}

std::string default_arbitration_user() {
  return "Question: {question}\nQuery: {query}\nCandidates:\n{candidates}\n";
}

std::string render_template(std::string tmpl, std::span<const std::pair<std::string, std::string>> vars) {
  std::string out;
  out.reserve(tmpl.size());
  for (std::size_t i = 0; i < tmpl.size();) {
    bool replaced = false;
    if (tmpl[i] == '{') {
      for (const auto& [key, value] : vars) {
        if (tmpl.compare(i + 1, key.size(), key) == 0 && i + 1 + key.size() < tmpl.size() &&
            tmpl[i + 1 + key.size()] == '}') {
          out += value;
          i += key.size() + 2;
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out += tmpl[i++];
  }
  return out;
}

void PipelineConfig::validate() const {
  seppr.validate();
  if (max_iterations < 1) throw ConfigError("max_iterations must be at least 1");
  if (arbitration_candidates < 1) throw ConfigError("arbitration_candidates must be at least 1");
  if (linker.k < 1) throw ConfigError("linker.k must be at least 1");
  if (!(linker.sigma > 0.0)) throw ConfigError("linker.sigma must be positive");
  if (linker.nprobe < 1) throw ConfigError("linker.nprobe must be at least 1");
  if (edge_cap == 0) throw ConfigError("edge_cap must be positive");
  if (batch_concurrency < 1) throw ConfigError("batch_concurrency must be at least 1");
  if (backend == ExecutorBackend::RemoteNeural && executor_endpoint.empty())
    throw ConfigError("remote_neural backend needs executor.endpoint");
}

json PipelineConfig::to_json() const {
  json j;
  j["seppr"] = {{"alpha", seppr.alpha},
                {"steps", seppr.steps},
                {"top_k", seppr.top_k},
                {"symmetric", seppr.symmetric},
                {"workers", seppr.workers}};
  j["edge_cap"] = edge_cap == kNoEdgeCap ? json(nullptr) : json(edge_cap);
  j["linker"] = {{"k", linker.k}, {"sigma", linker.sigma}, {"nprobe", linker.nprobe}, {"exact", linker.exact}};
  j["arbitration_candidates"] = arbitration_candidates;
  j["max_iterations"] = max_iterations;
  j["executor"] = {{"backend", backend == ExecutorBackend::LocalSymbolic ? "local_symbolic" : "remote_neural"},
                   {"endpoint", executor_endpoint}};
  j["llm"] = {{"endpoint", llm.endpoint},
              {"model", llm.model},
              {"api_key_env", llm.api_key_env},
              {"timeout_seconds", llm.timeout_seconds},
              {"transport_retries", llm.transport_retries},
              {"templates",
               {{"generation_system", llm.generation_system},
                {"generation_user", llm.generation_user},
                {"arbitration_system", llm.arbitration_system},
                {"arbitration_user", llm.arbitration_user}}}};
  j["semantics"] = semantics_key(semantics);
  j["relation_vocab_limit"] = relation_vocab_limit;
  j["partial_render_top"] = partial_render_top;
  j["transcript_top_n"] = transcript_top_n;
  j["batch_concurrency"] = batch_concurrency;
  return j;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  reject_unknown(j,
                 {"seppr", "edge_cap", "linker", "arbitration_candidates", "max_iterations", "executor", "llm",
                  "semantics", "relation_vocab_limit", "partial_render_top", "transcript_top_n",
                  "batch_concurrency", "resources"},
                 "");
  PipelineConfig c;
  c.llm.generation_system = default_generation_system();
  c.llm.generation_user = default_generation_user();
  c.llm.arbitration_system = default_arbitration_system();
  c.llm.arbitration_user = default_arbitration_user();
  if (j.contains("seppr")) {
    const auto& s = j["seppr"];
    reject_unknown(s, {"alpha", "steps", "top_k", "symmetric", "workers"}, "seppr");
    read_field(s, "alpha", c.seppr.alpha, "seppr");
    read_field(s, "steps", c.seppr.steps, "seppr");
    read_field(s, "top_k", c.seppr.top_k, "seppr");
    read_field(s, "symmetric", c.seppr.symmetric, "seppr");
    read_field(s, "workers", c.seppr.workers, "seppr");
  }
  if (j.contains("edge_cap") && !j["edge_cap"].is_null()) read_field(j, "edge_cap", c.edge_cap, "");
  if (j.contains("linker")) {
    const auto& l = j["linker"];
    reject_unknown(l, {"k", "sigma", "nprobe", "exact"}, "linker");
    read_field(l, "k", c.linker.k, "linker");
    read_field(l, "sigma", c.linker.sigma, "linker");
    read_field(l, "nprobe", c.linker.nprobe, "linker");
    read_field(l, "exact", c.linker.exact, "linker");
  }
  read_field(j, "arbitration_candidates", c.arbitration_candidates, "");
  read_field(j, "max_iterations", c.max_iterations, "");
  if (j.contains("executor")) {
    const auto& e = j["executor"];
    reject_unknown(e, {"backend", "endpoint"}, "executor");
    std::string backend = "local_symbolic";
    read_field(e, "backend", backend, "executor");
    if (backend == "local_symbolic" || backend == "local")
      c.backend = ExecutorBackend::LocalSymbolic;
    else if (backend == "remote_neural" || backend == "remote")
      c.backend = ExecutorBackend::RemoteNeural;
    else
      throw ConfigError("executor.backend must be local_symbolic or remote_neural");
    read_field(e, "endpoint", c.executor_endpoint, "executor");
  }
  if (j.contains("llm")) {
    const auto& l = j["llm"];
    reject_unknown(l, {"endpoint", "model", "api_key_env", "timeout_seconds", "transport_retries", "templates"},
                   "llm");
    read_field(l, "endpoint", c.llm.endpoint, "llm");
    read_field(l, "model", c.llm.model, "llm");
    read_field(l, "api_key_env", c.llm.api_key_env, "llm");
    read_field(l, "timeout_seconds", c.llm.timeout_seconds, "llm");
    read_field(l, "transport_retries", c.llm.transport_retries, "llm");
    if (l.contains("templates")) {
      const auto& t = l["templates"];
      reject_unknown(t, {"generation_system", "generation_user", "arbitration_system", "arbitration_user"},
                     "llm.templates");
      read_field(t, "generation_system", c.llm.generation_system, "llm.templates");
      read_field(t, "generation_user", c.llm.generation_user, "llm.templates");
      read_field(t, "arbitration_system", c.llm.arbitration_system, "llm.templates");
      read_field(t, "arbitration_user", c.llm.arbitration_user, "llm.templates");
    }
  }
  if (j.contains("semantics")) {
    try {
      c.semantics = parse_semantics(j["semantics"].get<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError(std::string("semantics: ") + e.what());
    }
  }
  read_field(j, "relation_vocab_limit", c.relation_vocab_limit, "");
  read_field(j, "partial_render_top", c.partial_render_top, "");
  read_field(j, "transcript_top_n", c.transcript_top_n, "");
  read_field(j, "batch_concurrency", c.batch_concurrency, "");
  try {
    c.validate();
  } catch (const SepprError& e) {
    throw ConfigError(std::string("seppr: ") + e.what());
  }
  return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config '" + path + "' is not valid JSON");
  return from_json(j);
}

bool ThresholdDecider::decide(const FuzzySet& x, const std::string&) const {
  return !x.empty() && x.max_value() >= tau_;
}

std::unique_ptr<QueryExecutor> make_executor(const PipelineConfig& cfg) {
  if (cfg.backend == ExecutorBackend::RemoteNeural) return std::make_unique<RemoteExecutor>(cfg.executor_endpoint);
  return std::make_unique<SymbolicExecutor>(cfg.semantics);
}

std::vector<std::string> relation_vocabulary(const KnowledgeGraph& g, const LabelTable* labels, std::size_t limit) {
  std::vector<std::uint32_t> order(g.num_relations());
  std::iota(order.begin(), order.end(), 0u);
  if (order.size() > limit) {
    auto freq = g.relation_frequencies();
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return freq[a] > freq[b]; });
    order.resize(limit);
  }
  std::vector<std::string> out;
  out.reserve(order.size());
  for (auto r : order) {
    const auto& id = g.base_relation_name(r);
    auto l = label_of(labels, id);
    out.push_back(l == id ? id : id + ": " + l);
  }
  return out;
}

std::string render_partials(const KnowledgeGraph& g, const LabelTable* labels, const PartialAnswers& partials,
                            std::size_t top) {
  if (partials.empty()) return "";
  std::ostringstream out;
  const auto sets = partials.sets();
  for (std::size_t i = 0; i < sets.size(); ++i) {
    out << "Partial answer " << (i + 1) << ":\n";
    auto best = top_k(sets[i], top);
    if (best.empty()) out << "(empty)\n";
    for (const auto& m : best) {
      const auto& id = g.entity_name(m.id);
      out << label_of(labels, id) << " (" << id << "): " << format_prob(m.value) << '\n';
    }
  }
  out << '\n';
  return out.str();
}

std::string extract_query_text(const std::string& reply) {
  std::istringstream in(reply);
  std::string joined;
  for (std::string line; std::getline(in, line);) {
    auto t = trim(line);
    if (t.rfind("```", 0) == 0) continue;
    if (joined.empty()) {
      for (const char* tag : {"QUERY:", "Query:", "query:"})
        if (t.rfind(tag, 0) == 0) t = trim(t.substr(std::char_traits<char>::length(tag)));
    }
    if (t.empty()) continue;
    if (!joined.empty()) joined += ' ';
    joined += t;
  }
  return joined;
}

Query generate_query(LlmClient& llm, const LlmConfig& cfg, const std::string& question,
                     std::span<const std::string> relations, const std::string& seeds_block,
                     const std::string& partials_block, IterationRecord& record) {
  std::string rel_lines;
  for (const auto& r : relations) rel_lines += r + '\n';
  if (!rel_lines.empty()) rel_lines.pop_back();
  const std::pair<std::string, std::string> vars[] = {
      {"question", question}, {"relations", rel_lines}, {"seeds", seeds_block}, {"partials", partials_block}};
  std::vector<ChatMessage> messages{{"system", render_template(cfg.generation_system, vars)},
                                    {"user", render_template(cfg.generation_user, vars)}};
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto reply = call_llm(llm, cfg, messages, "generate", record.generation);
    const auto text = extract_query_text(reply.content);
    std::string error;
    try {
      return parse_dsl(text);
    } catch (const ParseError& e) {
      error = e.what();
      try {
        (void)parse_betae(text);
        error = "tuple-style queries are not accepted; write the query with -> and AND(...)";
      } catch (const ParseError&) {
      }
    }
    record.parse_errors.push_back(error);
    messages.push_back({"assistant", reply.content});
    messages.push_back({"user", "That query could not be parsed: " + error + "\nReply with a corrected query only."});
  }
  throw GenerationError("no parseable query after retry: " + record.parse_errors.back());
}

std::optional<std::vector<std::string>> parse_arbitration_reply(const std::string& reply) {
  static const std::regex id_re("Q[0-9]+");
  std::string scope = reply;
  std::string upper = reply;
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  if (auto pos = upper.find("ANSWER:"); pos != std::string::npos) {
    scope = reply.substr(pos + 7);
    auto end = upper.find("EXPLANATION:", pos);
    if (end != std::string::npos) scope = reply.substr(pos + 7, end - pos - 7);
  }
  std::vector<std::string> ids;
  std::unordered_set<std::string> seen;
  for (std::sregex_iterator it(scope.begin(), scope.end(), id_re), end; it != end; ++it) {
    // Reject ids glued to other word characters such as "XQ12" or "Q12a".
    const auto p = static_cast<std::size_t>(it->position());
    const auto n = static_cast<std::size_t>(it->length());
    if (p > 0 && std::isalnum(static_cast<unsigned char>(scope[p - 1]))) continue;
    if (p + n < scope.size() && std::isalnum(static_cast<unsigned char>(scope[p + n]))) continue;
    if (seen.insert(it->str()).second) ids.push_back(it->str());
  }
  if (ids.empty()) return std::nullopt;
  return ids;
}

ArbitrationRecord arbitrate(LlmClient& llm, const LlmConfig& cfg, const KnowledgeGraph& g, const FuzzySet& x,
                            const Query& q, const std::string& question, const LabelTable* labels,
                            std::size_t candidates) {
  ArbitrationRecord rec;
  arbitrate_into(rec, llm, cfg, g, x, q, question, labels, candidates);
  return rec;
}

void arbitrate_into(ArbitrationRecord& rec, LlmClient& llm, const LlmConfig& cfg, const KnowledgeGraph& g,
                    const FuzzySet& x, const Query& q, const std::string& question, const LabelTable* labels,
                    std::size_t candidates) {
  rec = ArbitrationRecord{};
  for (const auto& m : top_k(x, candidates)) rec.candidates.emplace_back(g.entity_name(m.id), m.value);
  if (rec.candidates.empty()) {
    rec.fallback = true;
    return;
  }
  std::string lines;
  for (const auto& [id, p] : rec.candidates) lines += label_of(labels, id) + " (" + id + "): " + format_prob(p) + '\n';
  const std::pair<std::string, std::string> vars[] = {
      {"question", question}, {"query", serialize_dsl(q)}, {"candidates", lines}};
  std::vector<ChatMessage> messages{{"system", render_template(cfg.arbitration_system, vars)},
                                    {"user", render_template(cfg.arbitration_user, vars)}};
  const auto reply = call_llm(llm, cfg, messages, "arbitrate", rec.calls).content;
  auto ids = parse_arbitration_reply(reply);
  if (!ids) {
    rec.fallback = true;
    rec.answers = {rec.candidates.front().first};
  } else {
    std::unordered_set<std::string> cand;
    for (const auto& c : rec.candidates) cand.insert(c.first);
    rec.answers = *ids;
    for (const auto& id : *ids)
      if (!cand.count(id)) rec.outside_candidates.push_back(id);
  }
  std::string upper = reply;
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  auto pos = upper.find("EXPLANATION:");
  rec.free_text = pos == std::string::npos ? trim(reply) : trim(reply.substr(pos + 12));
}

namespace {

/// Leaf sets over g become SEPPR seeds: crisp when every leaf is a singleton at 1.
std::optional<SeedSpec> seeds_from_leaves(std::span<const FuzzySet> leaves) {
  bool crisp = true;
  bool any = false;
  for (const auto& s : leaves) {
    if (s.empty()) continue;
    any = true;
    crisp = crisp && s.support_size() == 1 && s.is_crisp();
  }
  if (!any) return std::nullopt;
  if (crisp) {
    std::vector<EntityId> ids;
    for (const auto& s : leaves)
      s.for_each([&](EntityId e, double) {
        if (std::find(ids.begin(), ids.end(), e) == ids.end()) ids.push_back(e);
      });
    return SeedSpec::crisp(std::move(ids));
  }
  std::vector<FuzzySet> sets;
  for (const auto& s : leaves)
    if (!s.empty()) sets.push_back(s);
  return SeedSpec::fuzzy(std::move(sets));
}

FuzzySet restrict_to(const KnowledgeGraph& sub, const std::unordered_map<std::uint32_t, EntityId>& to_sub,
                     const FuzzySet& x) {
  std::vector<Membership> entries;
  x.for_each([&](EntityId e, double v) {
    if (auto it = to_sub.find(e.value); it != to_sub.end()) entries.push_back({it->second, v});
  });
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return FuzzySet::from_entries(sub.num_entities(), std::move(entries));
}

FuzzySet lift_to(const KnowledgeGraph& g, const KnowledgeGraph& sub, const FuzzySet& x) {
  std::vector<Membership> entries;
  const auto parents = sub.parent_ids();
  x.for_each([&](EntityId e, double v) { entries.push_back({parents[e.value], v}); });
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return FuzzySet::from_entries(g.num_entities(), std::move(entries));
}

json linking_json(const KnowledgeGraph& g, const LeafLinking& linking) {
  auto leaves = json::array();
  for (const auto& s : linking.leaf_sets) {
    std::vector<WeightedId> list;
    for (const auto& m : top_k(s, s.support_size())) list.emplace_back(g.entity_name(m.id), m.value);
    leaves.push_back(weighted_json(list));
  }
  return {{"leaves", std::move(leaves)}, {"mentions", fuzzy_seeds_to_json(linking.links)["mentions"]}};
}

}  // namespace

PipelineOutcome run_pipeline(const PipelineConfig& cfg, const PipelineResources& res, const std::string& question,
                             const std::optional<std::vector<std::string>>& seeds, std::size_t index) {
  if (!res.graph) throw std::invalid_argument("pipeline needs a graph");
  if (!res.llm) throw std::invalid_argument("pipeline needs an LLM client");
  const auto& g = *res.graph;
  static const AlwaysSufficient always;
  const Decider& decider = res.decider ? *res.decider : always;
  std::unique_ptr<QueryExecutor> owned;
  const QueryExecutor* executor = res.executor;
  if (!executor) {
    owned = make_executor(cfg);
    executor = owned.get();
  }

  PipelineOutcome out;
  auto& t = out.transcript;
  t.index = index;
  t.question = question;
  t.seeds = seeds;

  try {
    PartialAnswers partials;
    std::string seeds_block;
    if (seeds) {
      seeds_block = "Seed entities:\n";
      for (const auto& s : *seeds) seeds_block += label_of(res.labels, s) + " (" + s + ")\n";
    } else {
      seeds_block = "No entity ids are given; write each anchor entity as a mention in angle brackets.\n";
    }
    const auto relations = relation_vocabulary(g, res.labels, cfg.relation_vocab_limit);

    std::optional<Query> last_query;
    FuzzySet x(g.num_entities());
    for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
      t.iterations.emplace_back();
      auto& rec = t.iterations.back();
      const auto partial_text = render_partials(g, res.labels, partials, cfg.partial_render_top);
      Query q = generate_query(*res.llm, cfg.llm, question, relations, seeds_block, partial_text, rec);
      rec.query = serialize_dsl(q);
      rec.query_class = query_class(q);
      last_query = q;

      auto linking = link_query_leaves(g, q, res.searcher, res.encoder, cfg.linker.k, cfg.linker.sigma);
      rec.linking = linking_json(g, linking);
      rec.link_diagnostics = linking.diagnostics;

      auto seed_spec = seeds_from_leaves(linking.leaf_sets);
      if (!seed_spec) {
        rec.link_diagnostics.push_back("no leaf resolved to a graph entity; execution skipped");
        x = FuzzySet(g.num_entities());
      } else {
        auto sub = extract_subgraph(g, *seed_spec, cfg.seppr, cfg.edge_cap);
        rec.subgraph_entities = sub.num_entities();
        rec.subgraph_triples = sub.num_triples();
        std::unordered_map<std::uint32_t, EntityId> to_sub;
        to_sub.reserve(sub.num_entities());
        for (std::uint32_t i = 0; i < sub.num_entities(); ++i) to_sub.emplace(sub.parent_ids()[i].value, EntityId{i});
        std::vector<FuzzySet> sub_leaves;
        for (const auto& s : linking.leaf_sets) sub_leaves.push_back(restrict_to(sub, to_sub, s));

        ExecutorRecord er;
        ExecutionResult result;
        try {
          if (auto* remote = dynamic_cast<const RemoteExecutor*>(executor)) {
            RemoteExecutor::Exchange ex;
            try {
              result = remote->execute(sub, q, sub_leaves, &ex);
            } catch (...) {
              er.request = ex.request;
              er.response = ex.response;
              er.status = ex.status;
              throw;
            }
            er.request = ex.request;
            er.response = ex.response;
            er.status = ex.status;
          } else if (auto* replay = dynamic_cast<const ReplayExecutor*>(executor)) {
            ExecutorRecord served;
            result = replay->execute(sub, q, sub_leaves, &served);
            er.request = served.request;
            er.response = served.response;
            er.status = served.status;
          } else {
            result = executor->execute(sub, q, sub_leaves);
          }
        } catch (const std::exception& e) {
          er.backend = dynamic_cast<const RemoteExecutor*>(executor) ? "remote" : "local";
          er.tag = executor->tag();
          er.error = e.what();
          rec.execution = std::move(er);
          throw;
        }
        er.backend = result.executor == ExecutorKind::Neural ? "remote" : "local";
        er.tag = result.executor_tag.empty() ? executor->tag() : result.executor_tag;
        er.support_size = result.scores.support_size();
        er.scores = wire_scores(sub, result.scores,
                                cfg.transcript_top_n == 0 ? result.scores.support_size() : cfg.transcript_top_n);
        er.diagnostics = result.diagnostics;
        rec.execution = std::move(er);
        x = lift_to(g, sub, result.scores);
      }
      const bool done = decider.decide(x, question);
      rec.sufficient = done;
      partials.append(x);
      if (done) break;
    }

    auto& arb = t.arbitration.emplace();
    arbitrate_into(arb, *res.llm, cfg.llm, g, x, *last_query, question, res.labels, cfg.arbitration_candidates);
    t.answers = arb.answers;
    out.answers = arb.answers;
    out.free_text = arb.free_text;
    t.status = "answered";
  } catch (const std::exception& e) {
    t.status = "failed";
    t.error = e.what();
  }
  for (const auto& it : t.iterations)
    for (const auto& c : it.generation) {
      t.prompt_tokens += c.prompt_tokens;
      t.completion_tokens += c.completion_tokens;
    }
  if (t.arbitration)
    for (const auto& c : t.arbitration->calls) {
      t.prompt_tokens += c.prompt_tokens;
      t.completion_tokens += c.completion_tokens;
    }
  return out;
}

std::size_t Transcript::executor_calls() const {
  std::size_t n = 0;
  for (const auto& it : iterations) n += it.execution.has_value();
  return n;
}

std::size_t Transcript::llm_calls() const {
  std::size_t n = 0;
  for (const auto& it : iterations) n += it.generation.size();
  if (arbitration) n += arbitration->calls.size();
  return n;
}

std::vector<WeightedId> Transcript::final_scores() const {
  for (auto it = iterations.rbegin(); it != iterations.rend(); ++it)
    if (it->execution) return it->execution->scores;
  return {};
}

std::string Transcript::final_query_class() const {
  for (auto it = iterations.rbegin(); it != iterations.rend(); ++it)
    if (!it->query_class.empty()) return it->query_class;
  return "";
}

json Transcript::to_json() const {
  json j;
  j["index"] = index;
  j["question"] = question;
  j["seeds"] = seeds ? json(*seeds) : json(nullptr);
  auto its = json::array();
  for (const auto& it : iterations) {
    json r;
    auto gen = json::array();
    for (const auto& c : it.generation) gen.push_back(llm_json(c));
    r["generation"] = std::move(gen);
    r["parse_errors"] = it.parse_errors;
    r["query"] = it.query;
    r["query_class"] = it.query_class;
    r["linking"] = it.linking;
    r["link_diagnostics"] = it.link_diagnostics;
    r["subgraph"] = {{"entities", it.subgraph_entities}, {"triples", it.subgraph_triples}};
    r["execution"] = it.execution ? executor_json(*it.execution) : json(nullptr);
    r["sufficient"] = it.sufficient ? json(*it.sufficient) : json(nullptr);
    its.push_back(std::move(r));
  }
  j["iterations"] = std::move(its);
  if (arbitration) {
    const auto& a = *arbitration;
    auto calls = json::array();
    for (const auto& c : a.calls) calls.push_back(llm_json(c));
    j["arbitration"] = {{"calls", std::move(calls)},
                        {"candidates", weighted_json(a.candidates)},
                        {"answers", a.answers},
                        {"outside_candidates", a.outside_candidates},
                        {"fallback", a.fallback},
                        {"free_text", a.free_text}};
  } else {
    j["arbitration"] = nullptr;
  }
  j["answers"] = answers;
  j["status"] = status;
  if (!error.empty()) j["error"] = error;
  j["tokens"] = {{"prompt", prompt_tokens}, {"completion", completion_tokens}};
  return j;
}

Transcript Transcript::from_json(const json& j) {
  Transcript t;
  t.index = j.value("index", std::size_t{0});
  t.question = j.value("question", std::string());
  if (j.contains("seeds") && !j["seeds"].is_null()) t.seeds = j["seeds"].get<std::vector<std::string>>();
  for (const auto& r : j.value("iterations", json::array())) {
    IterationRecord it;
    for (const auto& c : r.value("generation", json::array())) it.generation.push_back(llm_from_json(c));
    it.parse_errors = r.value("parse_errors", std::vector<std::string>{});
    it.query = r.value("query", std::string());
    it.query_class = r.value("query_class", std::string());
    it.linking = r.value("linking", json::object());
    it.link_diagnostics = r.value("link_diagnostics", std::vector<std::string>{});
    if (r.contains("subgraph")) {
      it.subgraph_entities = r["subgraph"].value("entities", std::size_t{0});
      it.subgraph_triples = r["subgraph"].value("triples", std::size_t{0});
    }
    if (r.contains("execution") && !r["execution"].is_null()) it.execution = executor_from_json(r["execution"]);
    if (r.contains("sufficient") && !r["sufficient"].is_null()) it.sufficient = r["sufficient"].get<bool>();
    t.iterations.push_back(std::move(it));
  }
  if (j.contains("arbitration") && !j["arbitration"].is_null()) {
    const auto& a = j["arbitration"];
    ArbitrationRecord rec;
    for (const auto& c : a.value("calls", json::array())) rec.calls.push_back(llm_from_json(c));
    rec.candidates = weighted_from_json(a.value("candidates", json::array()));
    rec.answers = a.value("answers", std::vector<std::string>{});
    rec.outside_candidates = a.value("outside_candidates", std::vector<std::string>{});
    rec.fallback = a.value("fallback", false);
    rec.free_text = a.value("free_text", std::string());
    t.arbitration = std::move(rec);
  }
  t.answers = j.value("answers", std::vector<std::string>{});
  t.status = j.value("status", std::string("pending"));
  t.error = j.value("error", std::string());
  if (j.contains("tokens")) {
    t.prompt_tokens = j["tokens"].value("prompt", std::size_t{0});
    t.completion_tokens = j["tokens"].value("completion", std::size_t{0});
  }
  return t;
}

bool operator==(const Transcript& a, const Transcript& b) { return a.to_json() == b.to_json(); }

std::vector<DatasetItem> read_dataset(std::istream& in) {
  std::vector<DatasetItem> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("question") || !j["question"].is_string())
      throw IngestError(line_no, "dataset line needs a \"question\" string");
    DatasetItem item;
    item.question = j["question"].get<std::string>();
    try {
      if (j.contains("seeds") && !j["seeds"].is_null()) item.seeds = j["seeds"].get<std::vector<std::string>>();
      if (j.contains("answers")) item.answers = j["answers"].get<std::vector<std::string>>();
    } catch (const json::exception&) {
      throw IngestError(line_no, "seeds and answers must be string arrays");
    }
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<DatasetItem> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
  return read_dataset(in);
}

SeedMode parse_seed_mode(const std::string& s) {
  if (s == "gt") return SeedMode::GroundTruth;
  if (s == "link") return SeedMode::Link;
  throw std::invalid_argument("seed mode must be gt or link");
}

EvalRecord eval_record(const Transcript& t, std::vector<std::string> gold) {
  return {t.final_query_class(), t.answers, t.final_scores(), std::move(gold)};
}

BatchReport run_batch(const PipelineConfig& cfg, const PipelineResources& res, std::span<const DatasetItem> dataset,
                      SeedMode mode) {
  BatchReport report;
  report.transcripts.resize(dataset.size());
  std::unique_ptr<QueryExecutor> owned;
  PipelineResources shared = res;
  if (!shared.executor) {
    owned = make_executor(cfg);
    shared.executor = owned.get();
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < dataset.size(); i = next++) {
      const auto& item = dataset[i];
      auto seeds = mode == SeedMode::GroundTruth ? item.seeds : std::nullopt;
      try {
        report.transcripts[i] = run_pipeline(cfg, shared, item.question, seeds, i).transcript;
      } catch (const std::exception& e) {
        Transcript t;
        t.index = i;
        t.question = item.question;
        t.seeds = seeds;
        t.status = "failed";
        t.error = e.what();
        report.transcripts[i] = std::move(t);
      }
    }
  };
  const auto n_threads = std::min(cfg.batch_concurrency, std::max<std::size_t>(dataset.size(), 1));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t k = 0; k < n_threads; ++k) pool.emplace_back(worker);
  }
  std::vector<EvalRecord> records;
  records.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) records.push_back(eval_record(report.transcripts[i], dataset[i].answers));
  report.metrics = evaluate(records);
  return report;
}

std::unique_ptr<ScriptedLlmClient> replay_client(const Transcript& t) {
  auto client = std::make_unique<ScriptedLlmClient>();
  auto push = [&](const LlmExchange& e) {
    if (!e.transport_error.empty())
      client->push_failure(e.transport_error);
    else
      client->push_reply(e.response);
  };
  for (const auto& it : t.iterations)
    for (const auto& c : it.generation) push(c);
  if (t.arbitration)
    for (const auto& c : t.arbitration->calls) push(c);
  return client;
}

ExecutionResult ReplayExecutor::execute(const KnowledgeGraph& g, const Query& q,
                                        std::span<const FuzzySet> leaf_inputs) const {
  return execute(g, q, leaf_inputs, nullptr);
}

ExecutionResult ReplayExecutor::execute(const KnowledgeGraph& g, const Query& q, std::span<const FuzzySet> leaf_inputs,
                                        ExecutorRecord* served) const {
  if (leaf_inputs.size() != q.num_leaves()) throw ExecutionError("leaf-count mismatch for replayed execution");
  ExecutorRecord rec;
  {
    std::lock_guard lock(mu_);
    if (next_ >= records_.size()) throw ExecutionError("no recorded execution left to replay");
    rec = records_[next_++];
  }
  if (served) *served = rec;
  if (!rec.error.empty()) throw ExecutionError(rec.error);
  std::vector<Membership> entries;
  for (const auto& [id, s] : rec.scores)
    if (auto e = g.find_entity(id); e && s > 0.0) entries.push_back({*e, s});
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  ExecutionResult out;
  out.scores = FuzzySet::from_entries(g.num_entities(), std::move(entries));
  out.per_leaf_inputs.assign(leaf_inputs.begin(), leaf_inputs.end());
  out.executor = rec.backend == "remote" ? ExecutorKind::Neural : ExecutorKind::Symbolic;
  out.executor_tag = rec.tag;
  out.diagnostics = rec.diagnostics;
  return out;
}

std::string ReplayExecutor::tag() const { return "replay"; }

std::vector<Transcript> read_transcripts(std::istream& in) {
  std::vector<Transcript> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw IngestError(line_no, "transcript line is not a JSON object");
    out.push_back(Transcript::from_json(j));
  }
  return out;
}

void write_transcripts(std::span<const Transcript> ts, std::ostream& out) {
  for (const auto& t : ts) out << t.to_json().dump() << '\n';
}

}  // namespace ultrag
