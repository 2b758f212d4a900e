#pragma once

#include <cstddef>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ultrag/entity_linker.hpp"
#include "ultrag/eval.hpp"
#include "ultrag/executor_wire.hpp"
#include "ultrag/fuzzy_exec.hpp"
#include "ultrag/kg_store.hpp"
#include "ultrag/llm_client.hpp"
#include "ultrag/query_dsl.hpp"
#include "ultrag/seppr.hpp"

namespace ultrag {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ExecutorBackend { LocalSymbolic, RemoteNeural };

struct LlmConfig {
  std::string endpoint;
  std::string model;
  std::string api_key_env = "ULTRAG_API_KEY";
  /// Templates use {question}, {relations}, {seeds}, {partials}, {candidates}, {query}.
  std::string generation_system;
  std::string generation_user;
  std::string arbitration_system;
  std::string arbitration_user;
  std::size_t timeout_seconds = 300;
  /// Extra attempts after a transport failure.
  std::size_t transport_retries = 2;
};

struct PipelineConfig {
  SepprConfig seppr;
  std::size_t edge_cap = kNoEdgeCap;
  LinkerConfig linker;
  std::size_t arbitration_candidates = 50;
  std::size_t max_iterations = 1;
  ExecutorBackend backend = ExecutorBackend::LocalSymbolic;
  std::string executor_endpoint;
  LlmConfig llm;
  Semantics semantics = Semantics::Godel;
  /// Above this many relations the prompt lists only the most frequent ones.
  std::size_t relation_vocab_limit = 2000;
  /// Labeled candidates shown per earlier partial answer.
  std::size_t partial_render_top = 10;
  /// Executor scores kept per iteration; 0 keeps the whole support.
  std::size_t transcript_top_n = 0;
  std::size_t batch_concurrency = 4;

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const std::string& path);
};

std::string default_generation_system();
std::string default_generation_user();
std::string default_arbitration_system();
std::string default_arbitration_user();

/// Replaces every {key} in `tmpl`; unknown placeholders are left alone.
std::string render_template(std::string tmpl, std::span<const std::pair<std::string, std::string>> vars);

class Decider {
 public:
  virtual ~Decider() = default;
  virtual bool decide(const FuzzySet& x, const std::string& question) const = 0;
  virtual std::string name() const = 0;
};

/// Stops after the first execution.
class AlwaysSufficient final : public Decider {
 public:
  bool decide(const FuzzySet&, const std::string&) const override { return true; }
  std::string name() const override { return "always"; }
};

/// Sufficient once the best membership reaches tau; an empty set never is.
class ThresholdDecider final : public Decider {
 public:
  explicit ThresholdDecider(double tau) : tau_(tau) {}
  bool decide(const FuzzySet& x, const std::string& question) const override;
  std::string name() const override { return "threshold:" + std::to_string(tau_); }

 private:
  double tau_;
};

/// The set P: one fuzzy set per completed iteration, over the full graph.
class PartialAnswers {
 public:
  void append(FuzzySet x) { sets_.push_back(std::move(x)); }
  std::span<const FuzzySet> sets() const { return sets_; }
  std::size_t size() const { return sets_.size(); }
  bool empty() const { return sets_.empty(); }

 private:
  std::vector<FuzzySet> sets_;
};

struct LlmExchange {
  std::string purpose;  // "generate" or "arbitrate"
  std::vector<ChatMessage> messages;
  std::string response;
  std::string transport_error;  // set when the call failed
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
};

struct ExecutorRecord {
  std::string backend;  // "local" or "remote"
  std::string tag;
  nlohmann::json request;   // raw payload for remote calls
  nlohmann::json response;  // raw payload for remote calls
  int status = 0;
  std::vector<WeightedId> scores;
  std::size_t support_size = 0;
  std::vector<std::string> diagnostics;
  std::string error;
};

struct IterationRecord {
  std::vector<LlmExchange> generation;
  std::vector<std::string> parse_errors;
  std::string query;  // canonical DSL, empty when generation failed
  std::string query_class;
  nlohmann::json linking = nlohmann::json::object();
  std::vector<std::string> link_diagnostics;
  std::size_t subgraph_entities = 0;
  std::size_t subgraph_triples = 0;
  std::optional<ExecutorRecord> execution;
  std::optional<bool> sufficient;
};

struct ArbitrationRecord {
  /// Every attempt, failed ones included; the last is the one used.
  std::vector<LlmExchange> calls;
  std::vector<WeightedId> candidates;
  std::vector<std::string> answers;
  /// Answer ids the model added that were not among the candidates.
  std::vector<std::string> outside_candidates;
  bool fallback = false;
  std::string free_text;
};

struct Transcript {
  std::size_t index = 0;
  std::string question;
  std::optional<std::vector<std::string>> seeds;
  std::vector<IterationRecord> iterations;
  std::optional<ArbitrationRecord> arbitration;
  std::vector<std::string> answers;
  std::string status = "pending";  // "answered" or "failed" once finished
  std::string error;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;

  std::size_t executor_calls() const;
  std::size_t llm_calls() const;
  /// Scores of the last execution, best first.
  std::vector<WeightedId> final_scores() const;
  /// Class of the last parsed query, "" if none.
  std::string final_query_class() const;

  nlohmann::json to_json() const;
  static Transcript from_json(const nlohmann::json& j);
  friend bool operator==(const Transcript& a, const Transcript& b);
};

/// Shared, read-only state. Pointers may be null where noted.
struct PipelineResources {
  const KnowledgeGraph* graph = nullptr;
  const LabelTable* labels = nullptr;  // null: raw ids in prompts
  LlmClient* llm = nullptr;
  const QueryExecutor* executor = nullptr;  // null: built from the config
  const VectorSearcher* searcher = nullptr;  // needed for mention leaves
  const MentionEncoder* encoder = nullptr;
  const Decider* decider = nullptr;  // null: AlwaysSufficient
};

struct PipelineOutcome {
  std::vector<std::string> answers;
  std::string free_text;
  Transcript transcript;
  bool ok() const { return transcript.status == "answered"; }
};

/// Backend executor for cfg (symbolic or remote).
std::unique_ptr<QueryExecutor> make_executor(const PipelineConfig& cfg);

/// Relation vocabulary lines "P1: label" shown to the model.
std::vector<std::string> relation_vocabulary(const KnowledgeGraph& g, const LabelTable* labels, std::size_t limit);

/// Top entries of each partial as "label (Qid): value" lines.
std::string render_partials(const KnowledgeGraph& g, const LabelTable* labels, const PartialAnswers& partials,
                            std::size_t top);

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Asks the model for a DSL query; one retry with the parse error appended.
/// Every call is appended to `record`. Throws GenerationError when both
/// attempts fail to parse and TransportError when the endpoint stays down.
Query generate_query(LlmClient& llm, const LlmConfig& cfg, const std::string& question,
                     std::span<const std::string> relations, const std::string& seeds_block,
                     const std::string& partials_block, IterationRecord& record);

/// Strips code fences and a leading "QUERY:" tag from a model reply.
std::string extract_query_text(const std::string& reply);

/// Parses "ANSWER: Q1, Q2" style replies. Returns nullopt when no id is found.
std::optional<std::vector<std::string>> parse_arbitration_reply(const std::string& reply);

ArbitrationRecord arbitrate(LlmClient& llm, const LlmConfig& cfg, const KnowledgeGraph& g, const FuzzySet& x,
                            const Query& q, const std::string& question, const LabelTable* labels,
                            std::size_t candidates);
/// Same, filling `out` as it goes so failed attempts survive a TransportError.
void arbitrate_into(ArbitrationRecord& out, LlmClient& llm, const LlmConfig& cfg, const KnowledgeGraph& g,
                    const FuzzySet& x, const Query& q, const std::string& question, const LabelTable* labels,
                    std::size_t candidates);

PipelineOutcome run_pipeline(const PipelineConfig& cfg, const PipelineResources& res, const std::string& question,
                             const std::optional<std::vector<std::string>>& seeds, std::size_t index = 0);

struct DatasetItem {
  std::string question;
  std::optional<std::vector<std::string>> seeds;
  std::vector<std::string> answers;
};

/// JSONL: {"question": ..., "seeds": ["Q..."]?, "answers": ["Q..."]}
std::vector<DatasetItem> read_dataset(std::istream& in);
std::vector<DatasetItem> load_dataset(const std::string& path);

enum class SeedMode { GroundTruth, Link };
SeedMode parse_seed_mode(const std::string& s);

struct BatchReport {
  std::vector<Transcript> transcripts;  // in dataset order
  EvalReport metrics;
};

/// Questions run on up to cfg.batch_concurrency threads. One failing question
/// never affects the others.
BatchReport run_batch(const PipelineConfig& cfg, const PipelineResources& res, std::span<const DatasetItem> dataset,
                      SeedMode mode = SeedMode::GroundTruth);

EvalRecord eval_record(const Transcript& t, std::vector<std::string> gold);

/// Recorded model replies in call order, for a ScriptedLlmClient.
std::unique_ptr<ScriptedLlmClient> replay_client(const Transcript& t);

/// Serves recorded executor scores in order instead of calling a backend.
class ReplayExecutor final : public QueryExecutor {
 public:
  explicit ReplayExecutor(std::vector<ExecutorRecord> records) : records_(std::move(records)) {}
  ExecutionResult execute(const KnowledgeGraph& g, const Query& q,
                          std::span<const FuzzySet> leaf_inputs) const override;
  /// Same, also handing back the record that was served.
  ExecutionResult execute(const KnowledgeGraph& g, const Query& q, std::span<const FuzzySet> leaf_inputs,
                          ExecutorRecord* served) const;
  std::string tag() const override;

 private:
  std::vector<ExecutorRecord> records_;
  mutable std::mutex mu_;
  mutable std::size_t next_ = 0;
};

std::vector<Transcript> read_transcripts(std::istream& in);
void write_transcripts(std::span<const Transcript> ts, std::ostream& out);

}  // namespace ultrag
