#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace promptforge {

enum class Role { System, User, Assistant };

std::string_view to_string(Role role);
Role parse_role(std::string_view text);

struct ChatMessage {
  Role role = Role::User;
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_output_tokens = 256;
  // Distinguishes otherwise identical requests (parse retries, independent
  // samples). Part of the cache key when nonzero; never sent on the wire.
  std::uint32_t variant = 0;

  friend bool operator==(const ChatRequest&, const ChatRequest&) = default;
};

/// Throws InvalidArgument unless the request has a user message, a finite
/// temperature in [0, 2] and a positive token budget.
void validate(const ChatRequest& request);

struct Usage {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;

  Usage& operator+=(const Usage& other) {
    input_tokens += other.input_tokens;
    output_tokens += other.output_tokens;
    return *this;
  }
  friend bool operator==(const Usage&, const Usage&) = default;
};

struct ChatResponse {
  std::string content;
  Usage usage;
  bool from_cache = false;
};

/// Chat-completion backend. Implementations must be safe to call concurrently.
class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Time, pacing and retry schedule

class Clock {
 public:
  using time_point = std::chrono::steady_clock::time_point;
  using duration = std::chrono::steady_clock::duration;

  virtual ~Clock() = default;
  virtual time_point now() = 0;
  virtual void sleep_until(time_point deadline) = 0;
  void sleep_for(duration d) { sleep_until(now() + d); }
};

class SteadyClock final : public Clock {
 public:
  time_point now() override;
  void sleep_until(time_point deadline) override;
};

/// Virtual time: sleeping advances the clock instantly.
class FakeClock final : public Clock {
 public:
  time_point now() override;
  void sleep_until(time_point deadline) override;
  void advance(duration d);

 private:
  std::mutex mu_;
  time_point now_{};
};

/// Spaces dispatch times at least `min_interval` apart. Slots are reserved
/// under a lock; waiting happens outside it.
class RateLimiter {
 public:
  RateLimiter(Clock::duration min_interval, std::shared_ptr<Clock> clock);

  /// Blocks until this caller's dispatch slot; returns the slot time.
  Clock::time_point acquire();

 private:
  Clock::duration min_interval_;
  std::shared_ptr<Clock> clock_;
  std::mutex mu_;
  std::optional<Clock::time_point> last_;
};

struct BackoffPolicy {
  std::chrono::milliseconds base{1000};
  double factor = 2.0;
  double jitter = 0.25;  // +/- fraction
  std::chrono::milliseconds cap{60000};

  /// Delay before retry number `retry` (0-based).
  std::chrono::milliseconds delay(int retry, std::mt19937_64& rng) const;
};

// ---------------------------------------------------------------------------
// Configuration

inline constexpr std::string_view kDefaultKeyEnv = "PROMPTFORGE_API_KEY";

/// Where the bearer token comes from: an in-memory secret when set, else the
/// named environment variable.
struct ApiKeySource {
  std::string env_var{kDefaultKeyEnv};
  std::optional<std::string> secret;

  /// Throws AuthError naming the variable when no key is available.
  std::string resolve() const;
};

struct ProviderConfig {
  std::string endpoint_url = "https://api.openai.com/v1/chat/completions";
  ApiKeySource api_key;
  std::chrono::milliseconds request_timeout{60000};
  int max_retries = 5;
  std::chrono::milliseconds min_request_interval{0};
  std::optional<std::filesystem::path> cache_dir;
  bool cache_any_temperature = false;
  BackoffPolicy backoff;
  std::uint64_t jitter_seed = 0x5eed;
};

/// Throws InvalidArgument when max_retries < 0 or timeout <= 0.
void validate(const ProviderConfig& config);

// ---------------------------------------------------------------------------
// Wire format (OpenAI-compatible chat completions)

struct HttpRequest {
  std::string url;
  std::string bearer_token;
  std::string body;
};

struct HttpResponse {
  int status = 0;  // 0: no HTTP response (timeout, connection failure)
  std::string body;
  std::string transport_error;
};

using Transport = std::function<HttpResponse(const HttpRequest&)>;

/// cpp-httplib backed transport for http:// and https:// endpoints.
Transport make_http_transport(std::chrono::milliseconds timeout);

std::string encode_wire_request(const ChatRequest& request);
/// Throws MalformedProviderReply when the body is not a chat-completion reply.
ChatResponse decode_wire_reply(std::string_view body);

/// Remote OpenAI-compatible endpoint with retries, backoff and rate limiting.
class RemoteProvider final : public ChatProvider {
 public:
  RemoteProvider(ProviderConfig config, Transport transport, std::shared_ptr<Clock> clock = nullptr);

  ChatResponse complete(const ChatRequest& request) override;

  /// Number of HTTP dispatches so far, retries included.
  std::size_t dispatch_count() const;

 private:
  ProviderConfig config_;
  Transport transport_;
  std::shared_ptr<Clock> clock_;
  RateLimiter limiter_;
  mutable std::mutex mu_;
  std::mt19937_64 jitter_rng_;
  std::size_t dispatches_ = 0;
};

// ---------------------------------------------------------------------------
// Response cache

/// SHA-256 hex digest of the canonical serialization of the request identity.
std::string cache_key(std::string_view model, const std::vector<ChatMessage>& messages, double temperature,
                      std::uint32_t variant = 0);
std::string cache_key(const ChatRequest& request);

/// Content-addressed on-disk cache: one file per entry plus a manifest.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  std::optional<ChatResponse> lookup(const std::string& key) const;
  void store(const std::string& key, const ChatResponse& response);
  std::size_t size() const;
  /// Removes every entry; returns how many were evicted.
  std::size_t clear();

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path entry_path(const std::string& key) const;

  std::filesystem::path dir_;
};

/// Serves cacheable requests from a ResponseCache, delegating misses.
class CachingProvider final : public ChatProvider {
 public:
  CachingProvider(std::shared_ptr<ChatProvider> inner, std::shared_ptr<ResponseCache> cache,
                  bool cache_any_temperature = false);

  ChatResponse complete(const ChatRequest& request) override;

 private:
  std::shared_ptr<ChatProvider> inner_;
  std::shared_ptr<ResponseCache> cache_;
  bool cache_any_temperature_;
};

/// Throws CacheError("no cache configured") when cfg has no cache_dir.
std::size_t clear_cache(const ProviderConfig& config);

/// Wraps `inner` in a CachingProvider when the config names a cache_dir.
std::shared_ptr<ChatProvider> with_cache(std::shared_ptr<ChatProvider> inner, const ProviderConfig& config);

/// RemoteProvider over the http transport, wrapped in a cache when configured.
std::shared_ptr<ChatProvider> make_provider(const ProviderConfig& config);

/// Builds the provider used for a batch of work; front ends accept one so
/// tests can substitute scripted providers.
using ProviderFactory = std::function<std::shared_ptr<ChatProvider>(const ProviderConfig&)>;

// ---------------------------------------------------------------------------
// Scripted provider

/// Deterministic offline provider. A rule returns the reply for a request or
/// nullopt when it does not apply (surfaced as ScriptMiss).
class ScriptedProvider final : public ChatProvider {
 public:
  using Rule = std::function<std::optional<std::string>(const ChatRequest&)>;

  explicit ScriptedProvider(Rule rule);

  /// Replies keyed by the exact content of the last user message.
  static std::shared_ptr<ScriptedProvider> from_map(std::vector<std::pair<std::string, std::string>> replies);

  /// First rule whose needle occurs in the last user message wins.
  struct KeywordRule {
    std::string needle;
    std::string reply;
  };
  static std::shared_ptr<ScriptedProvider> from_keywords(std::vector<KeywordRule> rules,
                                                         std::optional<std::string> fallback = std::nullopt);

  ChatResponse complete(const ChatRequest& request) override;

  std::vector<ChatRequest> call_log() const;
  std::size_t call_count() const;
  void clear_log();

 private:
  Rule rule_;
  mutable std::mutex mu_;
  std::vector<ChatRequest> log_;
};

/// Content of the last user message of a request ("" when absent).
std::string_view last_user_content(const ChatRequest& request);

/// Whitespace token count used for deterministic usage accounting offline.
std::int64_t approx_tokens(std::string_view text);

}  // namespace promptforge
