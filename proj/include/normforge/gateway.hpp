#pragma once

#include <atomic>
#include <chrono>
#include <memory>
#include <optional>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace normforge {

class GatewayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Connection failure, timeout, or retryable status after all retries.
class TransportError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

/// Non-retryable 4xx response or an unusable response body.
class EndpointError : public GatewayError {
 public:
  EndpointError(int status, const std::string& message) : GatewayError(message), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

class EmptyCompletion : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

/// The endpoint refused the guided-decoding parameter.
class ConstraintUnsupported : public EndpointError {
 public:
  using EndpointError::EndpointError;
};

class DimensionMismatch : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

/// How the structured-output constraint travels in the request body.
enum class GuidedDialect {
  vllm,    // "guided_json": <schema>
  openai,  // "response_format": {"type": "json_schema", ...}
};

struct EndpointConfig {
  std::string base_url;  // up to and including the API version, e.g. http://host:8000/v1
  std::string model_name;
  std::optional<std::string> api_key;
  double timeout_s = 120.0;
  int max_retries = 3;
  double temperature = 0.0;
  double initial_backoff_s = 0.5;
  double max_backoff_s = 30.0;
  std::size_t embed_batch_size = 64;
  std::size_t max_in_flight = 8;
  GuidedDialect dialect = GuidedDialect::vllm;

  void validate() const;
};

/// Delay before retry i (0-based) for i < max_retries.
std::vector<std::chrono::duration<double>> backoff_delays(const EndpointConfig& cfg);

struct CompletionRequest {
  std::string system_prompt;
  std::string user_prompt;
  std::optional<nlohmann::json> schema;
  std::string schema_name = "response";
  int max_tokens = 4096;
};

/// Removes <think>...</think> blocks; an unclosed opening tag removes the rest
/// of the text. The result is trimmed.
std::string strip_think_blocks(std::string_view completion);

using Embedding = std::vector<float>;

class ChatModel {
 public:
  virtual ~ChatModel() = default;
  virtual std::string complete_text(const CompletionRequest& req) = 0;
  /// Returns the content verbatim; callers validate it.
  virtual std::string complete_structured(const CompletionRequest& req) = 0;
  /// True when the endpoint answers at all.
  virtual bool probe() { return true; }
};

class EmbeddingModel {
 public:
  virtual ~EmbeddingModel() = default;

  /// One unit vector per input, in input order. All vectors returned by one
  /// model instance share a dimension.
  std::vector<Embedding> embed_batch(const std::vector<std::string>& texts);
  Embedding embed(const std::string& text) { return embed_batch({text}).at(0); }
  virtual bool probe() { return true; }

 protected:
  virtual std::vector<std::vector<double>> embed_raw(const std::vector<std::string>& texts) = 0;

 private:
  std::atomic<std::size_t> dim_{0};
};

/// Chat client for an OpenAI-compatible /chat/completions endpoint.
class HttpChatModel : public ChatModel {
 public:
  explicit HttpChatModel(EndpointConfig cfg);
  std::string complete_text(const CompletionRequest& req) override;
  std::string complete_structured(const CompletionRequest& req) override;
  bool probe() override;
  const EndpointConfig& config() const { return cfg_; }

 private:
  std::string complete(const CompletionRequest& req, bool structured);

  EndpointConfig cfg_;
  std::unique_ptr<std::counting_semaphore<>> slots_;
};

/// Embedding client for an OpenAI-compatible /embeddings endpoint.
class HttpEmbeddingModel : public EmbeddingModel {
 public:
  explicit HttpEmbeddingModel(EndpointConfig cfg);
  bool probe() override;
  const EndpointConfig& config() const { return cfg_; }

 protected:
  std::vector<std::vector<double>> embed_raw(const std::vector<std::string>& texts) override;

 private:
  EndpointConfig cfg_;
  std::unique_ptr<std::counting_semaphore<>> slots_;
};

/// The three model roles used across the pipeline.
struct Gateway {
  std::shared_ptr<ChatModel> extractor;
  std::shared_ptr<ChatModel> judge;
  std::shared_ptr<EmbeddingModel> embedder;
};

/// Reads NORMFORGE_<ROLE>_BASE_URL / _MODEL / _API_KEY for ROLE in
/// EXTRACTOR, JUDGE, EMBEDDER. Unset values keep the fallback's.
EndpointConfig endpoint_from_env(const std::string& role, EndpointConfig fallback);

EndpointConfig endpoint_from_json(const nlohmann::json& j, EndpointConfig fallback = {});

Gateway make_http_gateway(const EndpointConfig& extractor, const EndpointConfig& judge,
                          const EndpointConfig& embedder);

}  // namespace normforge
