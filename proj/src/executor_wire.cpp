#include "ultrag/executor_wire.hpp"

#include <algorithm>
#include <unordered_set>

#include <httplib.h>

namespace ultrag {

namespace {

bool wire_order(const WeightedId& a, const WeightedId& b) {
  if (a.second != b.second) return a.second > b.second;
  return a.first < b.first;
}

[[noreturn]] void bad_request(const std::string& what) { throw WireError(400, what); }

std::vector<WeightedId> weighted_list(const nlohmann::json& j, const char* what) {
  if (!j.is_array()) bad_request(std::string(what) + " must be an array");
  std::vector<WeightedId> out;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_number())
      bad_request(std::string(what) + " entries must be [\"Q...\", number]");
    out.emplace_back(e[0].get<std::string>(), e[1].get<double>());
  }
  return out;
}

}  // namespace

nlohmann::json to_json(const ExecuteRequest& r) {
  auto seeds = nlohmann::json::array();
  for (const auto& leaf : r.leaf_seeds) {
    auto l = nlohmann::json::array();
    for (const auto& [id, w] : leaf) l.push_back(nlohmann::json::array({id, w}));
    seeds.push_back(std::move(l));
  }
  auto triples = nlohmann::json::array();
  for (const auto& [h, rel, t] : r.triples) triples.push_back(nlohmann::json::array({h, rel, t}));
  return {{"query", query_to_json(r.query)},
          {"leaf_seeds", std::move(seeds)},
          {"subgraph", {{"entities", r.entities}, {"triples", std::move(triples)}}},
          {"top_n", r.top_n}};
}

ExecuteRequest execute_request_from_json(const nlohmann::json& j) {
  if (!j.is_object()) bad_request("request must be a JSON object");
  for (const char* key : {"query", "leaf_seeds", "subgraph", "top_n"})
    if (!j.contains(key)) bad_request(std::string("missing field '") + key + "'");
  ExecuteRequest r;
  try {
    r.query = query_from_json(j["query"]);
  } catch (const std::invalid_argument& e) {
    bad_request(std::string("invalid query: ") + e.what());
  }
  if (!j["top_n"].is_number_unsigned()) bad_request("top_n must be a non-negative integer");
  r.top_n = j["top_n"].get<std::size_t>();

  const auto& sg = j["subgraph"];
  if (!sg.is_object() || !sg.contains("triples") || !sg["triples"].is_array())
    bad_request("subgraph must hold a 'triples' array");
  if (sg.contains("entities")) {
    if (!sg["entities"].is_array()) bad_request("subgraph.entities must be an array");
    for (const auto& e : sg["entities"]) {
      if (!e.is_string() || !is_entity_token(e.get<std::string>())) bad_request("subgraph entities must be Q-ids");
      r.entities.push_back(e.get<std::string>());
    }
  }
  for (const auto& t : sg["triples"]) {
    if (!t.is_array() || t.size() != 3 || !t[0].is_string() || !t[1].is_string() || !t[2].is_string())
      bad_request("triples must be [head, relation, tail] strings");
    auto h = t[0].get<std::string>();
    auto rel = t[1].get<std::string>();
    auto tail = t[2].get<std::string>();
    if (!is_entity_token(h) || !is_entity_token(tail) || !is_relation_token(rel))
      bad_request("triple ids must be Q<digits> / P<digits>");
    r.triples.emplace_back(std::move(h), std::move(rel), std::move(tail));
  }

  const auto& seeds = j["leaf_seeds"];
  if (!seeds.is_array()) bad_request("leaf_seeds must be an array");
  for (const auto& leaf : seeds) {
    auto list = weighted_list(leaf, "leaf_seeds");
    for (const auto& [id, w] : list)
      if (!(w >= 0.0 && w <= 1.0)) bad_request("seed weights must lie in [0,1]");
    r.leaf_seeds.push_back(std::move(list));
  }
  if (r.leaf_seeds.size() != r.query.num_leaves()) bad_request("leaf_seeds must have one list per query leaf");

  std::unordered_set<std::string> known(r.entities.begin(), r.entities.end());
  for (const auto& [h, rel, t] : r.triples) {
    known.insert(h);
    known.insert(t);
  }
  bool any_seed = false;
  for (const auto& leaf : r.leaf_seeds) {
    for (const auto& [id, w] : leaf) {
      if (!known.count(id)) throw WireError(422, "seed '" + id + "' is not in the subgraph");
      any_seed = any_seed || w > 0.0;
    }
  }
  if (!any_seed) throw WireError(422, "request carries no seed mass");
  return r;
}

nlohmann::json to_json(const ExecuteResponse& r) {
  auto scores = nlohmann::json::array();
  for (const auto& [id, s] : r.scores) scores.push_back(nlohmann::json::array({id, s}));
  return {{"scores", std::move(scores)}, {"executor_tag", r.executor_tag}};
}

ExecuteResponse execute_response_from_json(const nlohmann::json& j, std::size_t top_n) {
  if (!j.is_object() || !j.contains("scores")) throw WireError(502, "executor response lacks 'scores'");
  ExecuteResponse r;
  try {
    r.scores = weighted_list(j["scores"], "scores");
  } catch (const WireError& e) {
    throw WireError(502, e.what());
  }
  r.executor_tag = j.value("executor_tag", std::string("unknown"));
  if (r.scores.size() > top_n) throw WireError(502, "executor returned more than top_n scores");
  if (!std::is_sorted(r.scores.begin(), r.scores.end(), wire_order))
    throw WireError(502, "executor scores are not sorted");
  return r;
}

std::vector<WeightedId> wire_scores(const KnowledgeGraph& g, const FuzzySet& x, std::size_t top_n) {
  std::vector<WeightedId> all;
  all.reserve(x.support_size());
  x.for_each([&](EntityId e, double v) { all.emplace_back(g.entity_name(e), v); });
  const auto n = std::min(top_n, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), wire_order);
  all.resize(n);
  return all;
}

ExecuteRequest make_execute_request(const KnowledgeGraph& g, const Query& q, std::span<const FuzzySet> leaf_inputs,
                                    std::size_t top_n) {
  ExecuteRequest r;
  r.query = q;
  r.top_n = top_n;
  r.entities.assign(g.entity_names().begin(), g.entity_names().end());
  r.triples.reserve(g.num_triples());
  for (const auto& t : g.triples())
    r.triples.emplace_back(g.entity_name(t.head), g.base_relation_name(t.rel), g.entity_name(t.tail));
  for (const auto& leaf : leaf_inputs) {
    std::vector<WeightedId> seeds;
    leaf.for_each([&](EntityId e, double w) { seeds.emplace_back(g.entity_name(e), w); });
    r.leaf_seeds.push_back(std::move(seeds));
  }
  return r;
}

ExecuteResponse reference_execute(const ExecuteRequest& req, Semantics sem) {
  auto g = KnowledgeGraph::from_external(req.entities, {}, req.triples);
  std::vector<FuzzySet> leaves;
  for (const auto& seeds : req.leaf_seeds) {
    std::vector<Membership> entries;
    for (const auto& [id, w] : seeds) {
      auto e = g.find_entity(id);
      if (!e) throw WireError(422, "seed '" + id + "' is not in the subgraph");
      auto dup = std::find_if(entries.begin(), entries.end(), [&](const Membership& m) { return m.id == *e; });
      if (dup != entries.end())
        dup->value = std::max(dup->value, w);
      else
        entries.push_back({*e, w});
    }
    leaves.push_back(FuzzySet::from_entries(g.num_entities(), std::move(entries)));
  }
  auto result = execute(g, req.query, leaves, sem);
  return {wire_scores(g, result.scores, req.top_n), "reference"};
}

std::pair<std::string, std::string> split_url(const std::string& url) {
  auto scheme = url.find("://");
  auto path_start = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (path_start == std::string::npos) return {url, ""};
  auto prefix = url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, path_start), prefix};
}

RemoteExecutor::RemoteExecutor(std::string base_url, std::size_t top_n, std::chrono::milliseconds timeout)
    : base_url_(std::move(base_url)), top_n_(top_n), timeout_(timeout) {}

ExecutionResult RemoteExecutor::execute(const KnowledgeGraph& g, const Query& q,
                                        std::span<const FuzzySet> leaf_inputs) const {
  return execute(g, q, leaf_inputs, nullptr);
}

ExecutionResult RemoteExecutor::execute(const KnowledgeGraph& g, const Query& q, std::span<const FuzzySet> leaf_inputs,
                                        Exchange* exchange) const {
  if (leaf_inputs.size() != q.num_leaves()) throw ExecutionError("leaf-count mismatch for remote execution");
  const auto top_n = top_n_ == 0 ? g.num_entities() : top_n_;
  const auto body = to_json(make_execute_request(g, q, leaf_inputs, top_n));

  auto [host, prefix] = split_url(base_url_);
  httplib::Client cli(host);
  cli.set_connection_timeout(timeout_);
  cli.set_read_timeout(timeout_);
  cli.set_write_timeout(timeout_);
  auto res = cli.Post(prefix + "/execute", body.dump(), "application/json");
  if (!res) throw TransportError("executor at " + base_url_ + " unreachable: " + httplib::to_string(res.error()));

  Exchange ex{body, nlohmann::json(), res->status};
  ex.response = nlohmann::json::parse(res->body, nullptr, false);
  if (ex.response.is_discarded()) ex.response = res->body;
  if (exchange) *exchange = ex;
  {
    std::lock_guard lock(mu_);
    log_.push_back(ex);
  }
  if (res->status == 503) throw TransportError("executor backend unavailable (503)");
  if (res->status != 200)
    throw WireError(res->status, "executor rejected request (" + std::to_string(res->status) + "): " + res->body);
  if (ex.response.is_string()) throw WireError(502, "executor response is not JSON");
  auto parsed = execute_response_from_json(ex.response, top_n);

  std::vector<Membership> entries;
  ExecutionResult out;
  for (const auto& [id, s] : parsed.scores) {
    auto e = g.find_entity(id);
    if (!e) {
      out.diagnostics.push_back("executor scored unknown entity '" + id + "'");
      continue;
    }
    const double v = std::clamp(s, 0.0, 1.0);
    if (v > 0.0) entries.push_back({*e, v});
  }
  // Duplicates would throw in from_entries; keep the first (highest) score.
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  entries.erase(std::unique(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.id == b.id; }),
                entries.end());
  out.scores = FuzzySet::from_entries(g.num_entities(), std::move(entries));
  out.per_leaf_inputs.assign(leaf_inputs.begin(), leaf_inputs.end());
  out.executor = ExecutorKind::Neural;
  out.executor_tag = parsed.executor_tag;
  return out;
}

nlohmann::json RemoteExecutor::health() const {
  auto [host, prefix] = split_url(base_url_);
  httplib::Client cli(host);
  cli.set_connection_timeout(timeout_);
  cli.set_read_timeout(timeout_);
  auto res = cli.Get(prefix + "/health");
  if (!res) throw TransportError("executor at " + base_url_ + " unreachable: " + httplib::to_string(res.error()));
  auto body = nlohmann::json::parse(res->body, nullptr, false);
  if (body.is_discarded()) body = nlohmann::json{{"raw", res->body}};
  body["http_status"] = res->status;
  return body;
}

std::vector<RemoteExecutor::Exchange> RemoteExecutor::exchanges() const {
  std::lock_guard lock(mu_);
  return log_;
}

}  // namespace ultrag
