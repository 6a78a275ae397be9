#include "promptforge/providers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include "json.hpp"
#include "promptforge/domain.hpp"
#include "promptforge/errors.hpp"

namespace promptforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kCacheFormat = "promptforge-response-cache";
constexpr int kCacheVersion = 1;

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw CacheError("sha256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string snippet(std::string_view body, std::size_t max = 200) {
  std::string s(body.substr(0, max));
  if (body.size() > max) s += "...";
  return s;
}

std::string key_origin(const ApiKeySource& source) {
  return source.secret ? std::string("the in-memory access key") : "$" + source.env_var;
}

}  // namespace

std::string_view to_string(Role role) {
  switch (role) {
    case Role::System:
      return "system";
    case Role::User:
      return "user";
    case Role::Assistant:
      return "assistant";
  }
  return "user";
}

Role parse_role(std::string_view value) {
  if (value == "system") return Role::System;
  if (value == "user") return Role::User;
  if (value == "assistant") return Role::Assistant;
  throw InvalidArgument("unknown chat role '" + std::string(value) + "'");
}

void validate(const ChatRequest& request) {
  const bool has_user = std::any_of(request.messages.begin(), request.messages.end(),
                                    [](const ChatMessage& m) { return m.role == Role::User; });
  if (!has_user) throw InvalidArgument("chat request needs at least one user message");
  if (!std::isfinite(request.temperature) || request.temperature < 0.0 || request.temperature > 2.0) {
    throw InvalidArgument("chat request temperature must be finite and within [0, 2]");
  }
  if (request.max_output_tokens <= 0) throw InvalidArgument("max_output_tokens must be positive");
}

void validate(const ProviderConfig& config) {
  if (config.max_retries < 0) throw InvalidArgument("max_retries must be >= 0");
  if (config.request_timeout.count() <= 0) throw InvalidArgument("request_timeout must be > 0");
  if (config.min_request_interval.count() < 0) throw InvalidArgument("min_request_interval must be >= 0");
}

std::string_view last_user_content(const ChatRequest& request) {
  for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
    if (it->role == Role::User) return it->content;
  }
  return {};
}

std::int64_t approx_tokens(std::string_view s) {
  std::int64_t n = 0;
  bool in_token = false;
  for (char c : s) {
    const bool space = c == ' ' || c == '\n' || c == '\t' || c == '\r';
    if (!space && !in_token) ++n;
    in_token = !space;
  }
  return n;
}

// --- clocks ----------------------------------------------------------------

Clock::time_point SteadyClock::now() { return std::chrono::steady_clock::now(); }

void SteadyClock::sleep_until(time_point deadline) { std::this_thread::sleep_until(deadline); }

Clock::time_point FakeClock::now() {
  std::lock_guard lock(mu_);
  return now_;
}

void FakeClock::sleep_until(time_point deadline) {
  std::lock_guard lock(mu_);
  now_ = std::max(now_, deadline);
}

void FakeClock::advance(duration d) {
  std::lock_guard lock(mu_);
  now_ += d;
}

RateLimiter::RateLimiter(Clock::duration min_interval, std::shared_ptr<Clock> clock)
    : min_interval_(min_interval), clock_(std::move(clock)) {}

Clock::time_point RateLimiter::acquire() {
  Clock::time_point slot;
  {
    std::lock_guard lock(mu_);
    const auto now = clock_->now();
    slot = last_ ? std::max(now, *last_ + min_interval_) : now;
    last_ = slot;
  }
  clock_->sleep_until(slot);
  return slot;
}

std::chrono::milliseconds BackoffPolicy::delay(int retry, std::mt19937_64& rng) const {
  const double raw = static_cast<double>(base.count()) * std::pow(factor, retry);
  const double capped = std::min(raw, static_cast<double>(cap.count()));
  std::uniform_real_distribution<double> spread(1.0 - jitter, 1.0 + jitter);
  const double jittered = std::min(capped * spread(rng), static_cast<double>(cap.count()));
  return std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(jittered)));
}

std::string ApiKeySource::resolve() const {
  if (secret) {
    if (secret->empty()) throw AuthError("the in-memory access key is empty");
    return *secret;
  }
  const char* value = std::getenv(env_var.c_str());
  if (value == nullptr || *value == '\0') {
    throw AuthError("no API key: set the environment variable " + env_var);
  }
  return value;
}

// --- wire format -----------------------------------------------------------

std::string encode_wire_request(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  json body = {{"model", request.model},
               {"messages", std::move(messages)},
               {"temperature", request.temperature},
               {"max_tokens", request.max_output_tokens}};
  return body.dump();
}

ChatResponse decode_wire_reply(std::string_view body) {
  json doc = json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw MalformedProviderReply("provider reply is not a JSON object: " + snippet(body));
  }
  const auto choices = doc.find("choices");
  if (choices == doc.end() || !choices->is_array() || choices->empty()) {
    throw MalformedProviderReply("provider reply has no choices: " + snippet(body));
  }
  const json& first = (*choices)[0];
  if (!first.is_object() || !first.contains("message") || !first["message"].is_object()) {
    throw MalformedProviderReply("provider reply choice has no message: " + snippet(body));
  }
  const json& message = first["message"];
  ChatResponse out;
  if (!message.contains("content")) throw MalformedProviderReply("provider reply has no content: " + snippet(body));
  const json& content = message["content"];
  if (content.is_string()) {
    out.content = content.get<std::string>();
  } else if (!content.is_null()) {
    throw MalformedProviderReply("provider reply content is not text: " + snippet(body));
  }
  if (auto usage = doc.find("usage"); usage != doc.end() && usage->is_object()) {
    auto read = [&](std::initializer_list<const char*> names) -> std::int64_t {
      for (const char* name : names) {
        if (auto it = usage->find(name); it != usage->end() && it->is_number_integer()) {
          return std::max<std::int64_t>(0, it->get<std::int64_t>());
        }
      }
      return 0;
    };
    out.usage.input_tokens = read({"prompt_tokens", "input_tokens"});
    out.usage.output_tokens = read({"completion_tokens", "output_tokens"});
  }
  return out;
}

// --- remote provider -------------------------------------------------------

RemoteProvider::RemoteProvider(ProviderConfig config, Transport transport, std::shared_ptr<Clock> clock)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      clock_(clock ? std::move(clock) : std::make_shared<SteadyClock>()),
      limiter_(config_.min_request_interval, clock_),
      jitter_rng_(config_.jitter_seed) {
  validate(config_);
}

std::size_t RemoteProvider::dispatch_count() const {
  std::lock_guard lock(mu_);
  return dispatches_;
}

ChatResponse RemoteProvider::complete(const ChatRequest& request) {
  validate(request);
  HttpRequest http{config_.endpoint_url, config_.api_key.resolve(), encode_wire_request(request)};

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    limiter_.acquire();
    {
      std::lock_guard lock(mu_);
      ++dispatches_;
    }
    const HttpResponse reply = transport_(http);

    if (reply.status >= 200 && reply.status < 300) {
      ChatResponse out = decode_wire_reply(reply.body);
      out.from_cache = false;
      return out;
    }
    if (reply.status == 401 || reply.status == 403) {
      throw AuthError("provider rejected the credentials (HTTP " + std::to_string(reply.status) + "); check " +
                      key_origin(config_.api_key));
    }
    const bool retryable = reply.status == 0 || reply.status == 408 || reply.status == 429 || reply.status >= 500;
    last_error = reply.status == 0 ? "transport failure: " + reply.transport_error
                                   : "HTTP " + std::to_string(reply.status) + ": " + snippet(reply.body);
    if (!retryable) throw TransportError("provider request failed with " + last_error);
    if (attempt < config_.max_retries) {
      std::chrono::milliseconds wait;
      {
        std::lock_guard lock(mu_);
        wait = config_.backoff.delay(attempt, jitter_rng_);
      }
      clock_->sleep_for(wait);
    }
  }
  throw TransportError("provider request failed after " + std::to_string(config_.max_retries + 1) +
                       " attempts; last error " + last_error);
}

// --- cache -----------------------------------------------------------------

std::string cache_key(std::string_view model, const std::vector<ChatMessage>& messages, double temperature,
                      std::uint32_t variant) {
  json doc;  // object keys serialize sorted
  doc["model"] = model;
  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back({{"content", m.content}, {"role", to_string(m.role)}});
  doc["messages"] = std::move(msgs);
  doc["temperature"] = temperature;
  if (variant != 0) doc["variant"] = variant;
  return sha256_hex(doc.dump());
}

std::string cache_key(const ChatRequest& request) {
  return cache_key(request.model, request.messages, request.temperature, request.variant);
}

ResponseCache::ResponseCache(fs::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_ / "entries", ec);
  if (ec) throw CacheError("cannot create cache directory " + dir_.string() + ": " + ec.message());
  const fs::path manifest = dir_ / "manifest.json";
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded() || doc.value("format", "") != kCacheFormat) {
      throw CacheError(manifest.string() + " is not a response-cache manifest");
    }
    if (doc.value("version", 0) != kCacheVersion) {
      throw CacheError("unsupported cache version in " + manifest.string());
    }
  } else {
    std::ofstream out(manifest);
    out << json{{"format", kCacheFormat}, {"version", kCacheVersion}, {"key", "sha256"}}.dump() << '\n';
  }
}

fs::path ResponseCache::entry_path(const std::string& key) const { return dir_ / "entries" / (key + ".json"); }

std::optional<ChatResponse> ResponseCache::lookup(const std::string& key) const {
  std::ifstream in(entry_path(key));
  if (!in) return std::nullopt;
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("content")) return std::nullopt;
  ChatResponse out;
  out.content = doc["content"].get<std::string>();
  out.usage.input_tokens = doc.value("input_tokens", std::int64_t{0});
  out.usage.output_tokens = doc.value("output_tokens", std::int64_t{0});
  out.from_cache = true;
  return out;
}

void ResponseCache::store(const std::string& key, const ChatResponse& response) {
  const fs::path target = entry_path(key);
  std::ostringstream tmp_name;
  tmp_name << key << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id());
  const fs::path tmp = target.parent_path() / tmp_name.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CacheError("cannot write cache entry " + tmp.string());
    out << json{{"key", key},
                {"content", response.content},
                {"input_tokens", response.usage.input_tokens},
                {"output_tokens", response.usage.output_tokens}}
               .dump();
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);  // last write wins
  if (ec) {
    fs::remove(tmp, ec);
    throw CacheError("cannot commit cache entry " + target.string());
  }
}

std::size_t ResponseCache::size() const {
  std::size_t n = 0;
  for (const auto& entry : fs::directory_iterator(dir_ / "entries")) {
    if (entry.path().extension() == ".json") ++n;
  }
  return n;
}

std::size_t ResponseCache::clear() {
  std::size_t evicted = 0;
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir_ / "entries")) paths.push_back(entry.path());
  for (const auto& path : paths) {
    std::error_code ec;
    const bool is_entry = path.extension() == ".json";
    if (!fs::remove(path, ec) || ec) throw CacheError("cannot remove cache entry " + path.string());
    if (is_entry) ++evicted;
  }
  return evicted;
}

CachingProvider::CachingProvider(std::shared_ptr<ChatProvider> inner, std::shared_ptr<ResponseCache> cache,
                                 bool cache_any_temperature)
    : inner_(std::move(inner)), cache_(std::move(cache)), cache_any_temperature_(cache_any_temperature) {}

ChatResponse CachingProvider::complete(const ChatRequest& request) {
  const bool cacheable = cache_any_temperature_ || request.temperature == 0.0;
  if (!cacheable) return inner_->complete(request);
  const std::string key = cache_key(request);
  if (auto hit = cache_->lookup(key)) return *hit;
  ChatResponse fresh = inner_->complete(request);
  cache_->store(key, fresh);
  fresh.from_cache = false;
  return fresh;
}

std::size_t clear_cache(const ProviderConfig& config) {
  if (!config.cache_dir) throw CacheError("no cache configured");
  return ResponseCache(*config.cache_dir).clear();
}

std::shared_ptr<ChatProvider> with_cache(std::shared_ptr<ChatProvider> inner, const ProviderConfig& config) {
  if (!config.cache_dir) return inner;
  return std::make_shared<CachingProvider>(std::move(inner), std::make_shared<ResponseCache>(*config.cache_dir),
                                           config.cache_any_temperature);
}

std::shared_ptr<ChatProvider> make_provider(const ProviderConfig& config) {
  validate(config);
  return with_cache(std::make_shared<RemoteProvider>(config, make_http_transport(config.request_timeout)), config);
}

// --- scripted provider -----------------------------------------------------

ScriptedProvider::ScriptedProvider(Rule rule) : rule_(std::move(rule)) {}

std::shared_ptr<ScriptedProvider> ScriptedProvider::from_map(std::vector<std::pair<std::string, std::string>> replies) {
  return std::make_shared<ScriptedProvider>(
      [replies = std::move(replies)](const ChatRequest& req) -> std::optional<std::string> {
        const std::string_view content = last_user_content(req);
        for (const auto& [prompt, reply] : replies) {
          if (prompt == content) return reply;
        }
        return std::nullopt;
      });
}

std::shared_ptr<ScriptedProvider> ScriptedProvider::from_keywords(std::vector<KeywordRule> rules,
                                                                  std::optional<std::string> fallback) {
  return std::make_shared<ScriptedProvider>(
      [rules = std::move(rules), fallback = std::move(fallback)](const ChatRequest& req) -> std::optional<std::string> {
        const std::string_view content = last_user_content(req);
        for (const auto& rule : rules) {
          if (content.find(rule.needle) != std::string_view::npos) return rule.reply;
        }
        return fallback;
      });
}

ChatResponse ScriptedProvider::complete(const ChatRequest& request) {
  validate(request);
  std::optional<std::string> reply = rule_(request);
  {
    std::lock_guard lock(mu_);
    log_.push_back(request);
  }
  if (!reply) {
    throw ScriptMiss("no scripted reply for request: " + snippet(last_user_content(request), 80));
  }
  ChatResponse out;
  out.content = std::move(*reply);
  for (const auto& m : request.messages) out.usage.input_tokens += approx_tokens(m.content);
  out.usage.output_tokens = approx_tokens(out.content);
  return out;
}

std::vector<ChatRequest> ScriptedProvider::call_log() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::size_t ScriptedProvider::call_count() const {
  std::lock_guard lock(mu_);
  return log_.size();
}

void ScriptedProvider::clear_log() {
  std::lock_guard lock(mu_);
  log_.clear();
}

}  // namespace promptforge
