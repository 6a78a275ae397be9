#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "promptforge/providers.hpp"

namespace promptforge {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8787;  // 0 picks a free port
  // Label/eval jobs running at once; further jobs wait FIFO. Optimize jobs
  // run one at a time on their own lane.
  int job_concurrency = 2;
  // Provider settings for jobs; the api key is supplied at runtime via PUT /api/key.
  ProviderConfig provider;
  std::string default_model = "gpt-3.5-turbo";
  std::optional<std::filesystem::path> ui_dir;
  std::optional<std::filesystem::path> run_log_dir;
};

/// Local HTTP facade over the annotator, metrics, optimizer and dataio.
///
///   POST   /api/datasets                 multipart upload -> handle
///   GET    /api/datasets/{h}/download    csv
///   POST   /api/split                    -> two handles
///   POST   /api/jobs/{label,eval,optimize}
///   GET    /api/jobs/{id}                status
///   GET    /api/jobs/{id}/events         server-sent events
///   GET    /api/jobs/{id}/result         report / annotations / run summary
///   GET    /api/jobs/{id}/runlog         optimizer run log (partial while running)
///   POST   /api/jobs/{id}/cancel
///   DELETE /api/jobs/{id}
///   PUT    /api/key, DELETE /api/key, DELETE /api/cache
///   GET    /api/session
class Service {
 public:
  explicit Service(ServiceOptions options, ProviderFactory factory = {});
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace promptforge
