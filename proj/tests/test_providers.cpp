#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "promptforge/errors.hpp"
#include "promptforge/providers.hpp"
#include "support/tempdir.hpp"

using namespace promptforge;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ChatRequest req(std::string text, double temperature = 0.0) {
  ChatRequest r;
  r.model = "m";
  r.messages = {{Role::User, std::move(text)}};
  r.temperature = temperature;
  return r;
}

std::string ok_body(const std::string& content, int in = 5, int out = 1) {
  return json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}},
              {"usage", {{"prompt_tokens", in}, {"completion_tokens", out}}}}
      .dump();
}

ProviderConfig fake_config() {
  ProviderConfig cfg;
  cfg.endpoint_url = "http://fake.invalid/v1/chat/completions";
  cfg.api_key.secret = "sk-test-SECRET-123";
  return cfg;
}

}  // namespace

TEST_CASE("request validation") {
  CHECK_NOTHROW(validate(req("x")));
  ChatRequest r = req("x");
  r.messages = {{Role::System, "s"}};
  CHECK_THROWS_AS(validate(r), InvalidArgument);
  r = req("x", 2.5);
  CHECK_THROWS_AS(validate(r), InvalidArgument);
  r = req("x", std::nan(""));
  CHECK_THROWS_AS(validate(r), InvalidArgument);
  r = req("x");
  r.max_output_tokens = 0;
  CHECK_THROWS_AS(validate(r), InvalidArgument);

  ProviderConfig cfg;
  cfg.max_retries = -1;
  CHECK_THROWS_AS(validate(cfg), InvalidArgument);
  cfg.max_retries = 0;
  cfg.request_timeout = std::chrono::milliseconds(0);
  CHECK_THROWS_AS(validate(cfg), InvalidArgument);
}

TEST_CASE("wire format") {
  ChatRequest r = req("hello", 0.5);
  r.messages.insert(r.messages.begin(), {Role::System, "sys"});
  r.max_output_tokens = 12;
  r.variant = 3;
  const json body = json::parse(encode_wire_request(r));
  CHECK(body["model"] == "m");
  CHECK(body["temperature"] == 0.5);
  CHECK(body["max_tokens"] == 12);
  CHECK(body["messages"].size() == 2);
  CHECK(body["messages"][0]["role"] == "system");
  CHECK(body["messages"][1]["content"] == "hello");
  CHECK_FALSE(body.contains("variant"));

  const ChatResponse resp = decode_wire_reply(ok_body("hateful", 7, 2));
  CHECK(resp.content == "hateful");
  CHECK(resp.usage.input_tokens == 7);
  CHECK(resp.usage.output_tokens == 2);
  CHECK_THROWS_AS(decode_wire_reply("not json"), MalformedProviderReply);
  CHECK_THROWS_AS(decode_wire_reply(R"({"choices": []})"), MalformedProviderReply);
  CHECK_THROWS_AS(decode_wire_reply(R"({"choices": [{"message": {}}]})"), MalformedProviderReply);
}

TEST_CASE("remote provider retries transient failures with backoff") {
  auto clock = std::make_shared<FakeClock>();
  std::vector<Clock::time_point> sent;
  int calls = 0;
  Transport t = [&](const HttpRequest& h) {
    CHECK(h.bearer_token == "sk-test-SECRET-123");
    sent.push_back(clock->now());
    ++calls;
    if (calls == 1) return HttpResponse{429, "slow down", ""};
    if (calls == 2) return HttpResponse{503, "busy", ""};
    if (calls == 3) return HttpResponse{0, "", "timeout"};
    return HttpResponse{200, ok_body("fine"), ""};
  };
  RemoteProvider p(fake_config(), t, clock);
  const ChatResponse r = p.complete(req("x"));
  CHECK(r.content == "fine");
  CHECK_FALSE(r.from_cache);
  CHECK(p.dispatch_count() == 4);
  REQUIRE(sent.size() == 4);
  // 1s, 2s, 4s each within +/-25%
  const double expected[] = {1000, 2000, 4000};
  for (int i = 0; i < 3; ++i) {
    const auto gap = std::chrono::duration_cast<std::chrono::milliseconds>(sent[i + 1] - sent[i]).count();
    CHECK(gap >= expected[i] * 0.75 - 1);
    CHECK(gap <= expected[i] * 1.25 + 1);
  }
}

TEST_CASE("remote provider error classes") {
  auto clock = std::make_shared<FakeClock>();
  SUBCASE("401 is an auth error and not retried") {
    int calls = 0;
    RemoteProvider p(fake_config(), [&](const HttpRequest&) { ++calls; return HttpResponse{401, "{}", ""}; }, clock);
    CHECK_THROWS_AS(p.complete(req("x")), AuthError);
    CHECK(calls == 1);
  }
  SUBCASE("retries exhausted") {
    ProviderConfig cfg = fake_config();
    cfg.max_retries = 2;
    int calls = 0;
    RemoteProvider p(cfg, [&](const HttpRequest&) { ++calls; return HttpResponse{500, "x", ""}; }, clock);
    CHECK_THROWS_AS(p.complete(req("x")), TransportError);
    CHECK(calls == 3);
  }
  SUBCASE("400 is not retried") {
    int calls = 0;
    RemoteProvider p(fake_config(), [&](const HttpRequest&) { ++calls; return HttpResponse{400, "bad", ""}; }, clock);
    CHECK_THROWS_AS(p.complete(req("x")), TransportError);
    CHECK(calls == 1);
  }
  SUBCASE("malformed body") {
    RemoteProvider p(fake_config(), [](const HttpRequest&) { return HttpResponse{200, "<html>", ""}; }, clock);
    CHECK_THROWS_AS(p.complete(req("x")), MalformedProviderReply);
  }
  SUBCASE("missing key names the variable") {
    ProviderConfig cfg = fake_config();
    cfg.api_key.secret.reset();
    cfg.api_key.env_var = "PF_TEST_DEFINITELY_UNSET";
    RemoteProvider p(cfg, [](const HttpRequest&) { return HttpResponse{200, ok_body("x"), ""}; }, clock);
    try {
      p.complete(req("x"));
      FAIL("expected AuthError");
    } catch (const AuthError& e) {
      CHECK(std::string(e.what()).find("PF_TEST_DEFINITELY_UNSET") != std::string::npos);
    }
  }
}

TEST_CASE("backoff schedule caps") {
  BackoffPolicy b;
  std::mt19937_64 rng(1);
  for (int retry = 0; retry < 12; ++retry) {
    const double nominal = std::min(1000.0 * std::pow(2.0, retry), 60000.0);
    const auto d = b.delay(retry, rng).count();
    CHECK(d >= nominal * 0.75 - 1);
    CHECK(d <= std::min(nominal * 1.25, 60000.0) + 1);
  }
}

TEST_CASE("rate limiter spaces dispatches under concurrency") {
  auto clock = std::make_shared<FakeClock>();
  ProviderConfig cfg = fake_config();
  cfg.min_request_interval = std::chrono::milliseconds(250);
  std::mutex mu;
  std::vector<Clock::time_point> sent;
  RemoteProvider p(
      cfg,
      [&](const HttpRequest&) {
        std::lock_guard lock(mu);
        sent.push_back(clock->now());
        return HttpResponse{200, ok_body("x"), ""};
      },
      clock);
  std::vector<std::jthread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&] {
      for (int j = 0; j < 5; ++j) p.complete(req("x"));
    });
  }
  threads.clear();
  REQUIRE(sent.size() == 40);
  std::sort(sent.begin(), sent.end());
  for (std::size_t i = 1; i < sent.size(); ++i) CHECK(sent[i] - sent[i - 1] >= std::chrono::milliseconds(250));
}

TEST_CASE("cache key") {
  const auto a = cache_key("m", {{Role::User, "hello"}}, 0.0);
  CHECK(a == cache_key("m", {{Role::User, "hello"}}, 0.0));
  CHECK(a.size() == 64);
  CHECK(a != cache_key("m", {{Role::User, "hello"}}, 0.7));
  CHECK(a != cache_key("m", {{Role::User, "hellp"}}, 0.0));
  CHECK(a != cache_key("m2", {{Role::User, "hello"}}, 0.0));
  CHECK(a != cache_key("m", {{Role::System, "hello"}}, 0.0));
  CHECK(a != cache_key("m", {{Role::User, "hello"}}, 0.0, 1));
  CHECK(a == cache_key("m", {{Role::User, "hello"}}, 0.0, 0));
}

TEST_CASE("caching provider and clear_cache") {
  pf_test::TempDir dir;
  ProviderConfig cfg;
  cfg.cache_dir = dir.path() / "cache";
  auto inner = ScriptedProvider::from_keywords({{"hate", "hateful"}}, "non-hateful");
  auto cached = with_cache(inner, cfg);

  const ChatResponse cold = cached->complete(req("I hate you"));
  CHECK_FALSE(cold.from_cache);
  const ChatResponse warm = cached->complete(req("I hate you"));
  CHECK(warm.from_cache);
  CHECK(warm.content == cold.content);
  CHECK(warm.usage == cold.usage);
  CHECK(inner->call_count() == 1);

  // nonzero temperature bypasses the cache by default
  cached->complete(req("warm day", 1.0));
  cached->complete(req("warm day", 1.0));
  CHECK(inner->call_count() == 3);

  cached->complete(req("b"));
  cached->complete(req("c"));
  CHECK(fs::exists(*cfg.cache_dir / "manifest.json"));

  // survives a new instance (process restart)
  auto again = with_cache(inner, cfg);
  CHECK(again->complete(req("b")).from_cache);

  CHECK(clear_cache(cfg) == 3);
  CHECK_FALSE(cached->complete(req("I hate you")).from_cache);
  CHECK(clear_cache(cfg) == 1);
  CHECK(clear_cache(cfg) == 0);

  ProviderConfig none;
  try {
    clear_cache(none);
    FAIL("expected CacheError");
  } catch (const CacheError& e) {
    CHECK(std::string(e.what()) == "no cache configured");
  }
}

TEST_CASE("cache any temperature flag") {
  pf_test::TempDir dir;
  ProviderConfig cfg;
  cfg.cache_dir = dir.path();
  cfg.cache_any_temperature = true;
  auto inner = ScriptedProvider::from_keywords({}, "x");
  auto cached = with_cache(inner, cfg);
  cached->complete(req("a", 1.0));
  CHECK(cached->complete(req("a", 1.0)).from_cache);
  CHECK(inner->call_count() == 1);
}

TEST_CASE("concurrent cache writers") {
  pf_test::TempDir dir;
  ProviderConfig cfg;
  cfg.cache_dir = dir.path();
  auto inner = ScriptedProvider::from_keywords({}, "same");
  auto cached = with_cache(inner, cfg);
  std::vector<std::jthread> threads;
  for (int i = 0; i < 6; ++i) {
    threads.emplace_back([&] {
      for (int j = 0; j < 20; ++j) CHECK(cached->complete(req("q" + std::to_string(j % 7))).content == "same");
    });
  }
  threads.clear();
  CHECK(ResponseCache(dir.path()).size() == 7);
}

TEST_CASE("scripted provider") {
  auto p = ScriptedProvider::from_keywords({{"hate", "hateful"}}, "non-hateful");
  CHECK(p->complete(req("I hate you")).content == "hateful");
  CHECK(p->complete(req("I love you")).content == "non-hateful");
  const auto a = p->complete(req("same"));
  const auto b = p->complete(req("same"));
  CHECK(a.content == b.content);
  const auto log = p->call_log();
  REQUIRE(log.size() == 4);
  CHECK(log[2] == log[3]);

  auto strict = ScriptedProvider::from_keywords({{"hate", "hateful"}});
  CHECK_THROWS_AS(strict->complete(req("neutral")), ScriptMiss);

  auto map = ScriptedProvider::from_map({{"q1", "a1"}});
  CHECK(map->complete(req("q1")).content == "a1");
  CHECK_THROWS_AS(map->complete(req("q2")), ScriptMiss);
}

TEST_CASE("http transport against a local endpoint") {
  httplib::Server server;
  std::string seen_auth;
  std::mutex mu;
  server.Post("/v1/chat/completions", [&](const httplib::Request& r, httplib::Response& res) {
    {
      std::lock_guard lock(mu);
      seen_auth = r.get_header_value("Authorization");
    }
    const json body = json::parse(r.body);
    const std::string user = body["messages"].back()["content"];
    if (r.get_header_value("Authorization") != "Bearer good-key") {
      res.status = 401;
      res.set_content(R"({"error":"invalid key"})", "application/json");
      return;
    }
    res.set_content(ok_body(user == "ping" ? "pong" : "?"), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ProviderConfig cfg;
  cfg.endpoint_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  cfg.api_key.secret = "good-key";
  cfg.max_retries = 0;
  auto good = make_provider(cfg);
  CHECK(good->complete(req("ping")).content == "pong");
  {
    std::lock_guard lock(mu);
    CHECK(seen_auth == "Bearer good-key");
  }

  cfg.api_key.secret = "bad-key";
  auto bad = make_provider(cfg);
  CHECK_THROWS_AS(bad->complete(req("ping")), AuthError);

  server.stop();
  th.join();

  cfg.api_key.secret = "good-key";
  cfg.request_timeout = std::chrono::milliseconds(300);
  auto down = make_provider(cfg);
  CHECK_THROWS_AS(down->complete(req("ping")), TransportError);
}

TEST_CASE("the key never reaches the cache directory") {
  pf_test::TempDir dir;
  ProviderConfig cfg = fake_config();
  cfg.cache_dir = dir.path();
  auto remote = std::make_shared<RemoteProvider>(
      cfg, [](const HttpRequest& h) { return HttpResponse{200, ok_body("echo " + h.body.substr(0, 10)), ""}; },
      std::make_shared<FakeClock>());
  auto cached = with_cache(remote, cfg);
  for (int i = 0; i < 5; ++i) cached->complete(req("text " + std::to_string(i)));
  CHECK(pf_test::files_containing(dir.path(), "sk-test-SECRET-123").empty());
}
