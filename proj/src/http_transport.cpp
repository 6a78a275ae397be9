#include "httplib.h"

#include "promptforge/errors.hpp"
#include "promptforge/providers.hpp"

namespace promptforge {

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw InvalidArgument("endpoint url needs a scheme: " + url);
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw InvalidArgument("unsupported endpoint scheme: " + scheme);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

Transport make_http_transport(std::chrono::milliseconds timeout) {
  return [timeout](const HttpRequest& request) -> HttpResponse {
    const ParsedUrl url = parse_url(request.url);
    httplib::Client client(url.origin);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    client.set_bearer_token_auth(request.bearer_token);
    auto result = client.Post(url.path, request.body, "application/json");
    if (!result) return HttpResponse{0, {}, httplib::to_string(result.error())};
    return HttpResponse{result->status, result->body, {}};
  };
}

}  // namespace promptforge
