#pragma once

#include <chrono>
#include <cstddef>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ultrag/fuzzy_exec.hpp"
#include "ultrag/kg_store.hpp"
#include "ultrag/query_dsl.hpp"

namespace ultrag {

/// Schema or consistency failure of an executor payload, carrying the HTTP
/// status the service is expected to answer with (400 schema, 422 seeds).
class WireError : public std::runtime_error {
 public:
  WireError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

/// Transport-level failure talking to a remote service. Retryable.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using WeightedId = std::pair<std::string, double>;

/// POST /execute body.
///
///   {"query": <query JSON>,
///    "leaf_seeds": [[["Q189", 1.0]], ...],          one list per leaf
///    "subgraph": {"entities": ["Q1", ...], "triples": [["Q1","P1","Q2"], ...]},
///    "top_n": 50}
struct ExecuteRequest {
  Query query;
  std::vector<std::vector<WeightedId>> leaf_seeds;
  std::vector<std::string> entities;
  std::vector<std::tuple<std::string, std::string, std::string>> triples;
  std::size_t top_n = 50;
};

/// {"scores": [["Q1009", 1.0], ...], "executor_tag": "reference"}, descending, ties by id.
struct ExecuteResponse {
  std::vector<WeightedId> scores;
  std::string executor_tag;
};

nlohmann::json to_json(const ExecuteRequest& r);
/// Validates the schema (WireError 400) and that every seed id is in the subgraph (WireError 422).
ExecuteRequest execute_request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExecuteResponse& r);
/// Validates ordering, length and score range. Throws WireError(502).
ExecuteResponse execute_response_from_json(const nlohmann::json& j, std::size_t top_n);

/// Inlines g and the bound leaf sets into a request.
ExecuteRequest make_execute_request(const KnowledgeGraph& g, const Query& q, std::span<const FuzzySet> leaf_inputs,
                                    std::size_t top_n);

/// Top-n of a fuzzy set as wire scores: descending, ties by external id.
std::vector<WeightedId> wire_scores(const KnowledgeGraph& g, const FuzzySet& x, std::size_t top_n);

/// Reference backend: rebuilds the inline graph and runs the symbolic executor.
ExecuteResponse reference_execute(const ExecuteRequest& req, Semantics sem = Semantics::Godel);

/// Executor backed by a remote service speaking the protocol above. Scores for
/// ids outside g are ignored; values are clamped to [0,1].
class RemoteExecutor final : public QueryExecutor {
 public:
  struct Exchange {
    nlohmann::json request;
    nlohmann::json response;
    int status = 0;
  };

  explicit RemoteExecutor(std::string base_url, std::size_t top_n = 0,
                          std::chrono::milliseconds timeout = std::chrono::seconds(120));

  ExecutionResult execute(const KnowledgeGraph& g, const Query& q,
                          std::span<const FuzzySet> leaf_inputs) const override;
  /// Same, also handing back the raw payloads of this call.
  ExecutionResult execute(const KnowledgeGraph& g, const Query& q, std::span<const FuzzySet> leaf_inputs,
                          Exchange* exchange) const;
  std::string tag() const override { return "remote:" + base_url_; }

  /// GET /health body.
  nlohmann::json health() const;

  /// Raw payloads of every /execute call, in order.
  std::vector<Exchange> exchanges() const;

 private:
  std::string base_url_;
  std::size_t top_n_;
  std::chrono::milliseconds timeout_;
  mutable std::mutex mu_;
  mutable std::vector<Exchange> log_;
};

/// Splits "http://host:port/prefix" into scheme+host+port and the path prefix.
std::pair<std::string, std::string> split_url(const std::string& url);

}  // namespace ultrag
