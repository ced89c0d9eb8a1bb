#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lookalike/annotation.hpp"
#include "lookalike/embedding_store.hpp"
#include "lookalike/task_builder.hpp"
#include "lookalike/trainer.hpp"

namespace httplib {
class Server;
}

namespace lookalike {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path embeddings;
  std::optional<std::filesystem::path> head;
  std::filesystem::path tasks;
  std::filesystem::path rankings;
  std::optional<std::filesystem::path> static_dir;
  std::size_t quota = 10;
  bool normalize = true;
};

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Append-only JSONL sink. Each line is written with a single write(2) and
/// flushed to disk before append() returns.
class RankingAppender {
 public:
  explicit RankingAppender(const std::filesystem::path& path);
  ~RankingAppender();
  RankingAppender(const RankingAppender&) = delete;
  RankingAppender& operator=(const RankingAppender&) = delete;

  void append(const std::string& line);

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

/// Request handlers of the lookalike HTTP API, independent of the transport.
///
///   GET  /health
///   GET  /lookalike/{item_id}?k=K
///   GET  /tasks/next?worker_id=W
///   POST /tasks/{task_id}/rankings   body {"worker_id", "order"}
class LookalikeService {
 public:
  static constexpr std::size_t kDefaultK = 6;
  static constexpr std::size_t kMaxK = 100;

  LookalikeService(EmbeddingSet base, std::optional<ProjectionHead> head, std::vector<RankingTask> tasks,
                   const std::filesystem::path& rankings_path, std::size_t quota);

  static std::unique_ptr<LookalikeService> from_config(const ServiceConfig& config);

  Response health() const;
  Response lookalike(std::string_view item_id, std::optional<std::string_view> k) const;
  Response next_task(std::string_view worker_id);
  Response submit_ranking(std::string_view task_id, std::string_view body);

  /// Registers every route (and the static directory, if any) on `server`.
  void mount(httplib::Server& server, const std::optional<std::filesystem::path>& static_dir);

  /// Similarity space used for retrieval: the projected set when a head is loaded, else the base set.
  const EmbeddingSet& retrieval_space() const noexcept { return space_; }

 private:
  EmbeddingSet space_;
  std::vector<RankingTask> tasks_;
  std::map<std::string, std::size_t, std::less<>> task_index_;
  std::size_t quota_;

  std::mutex dispatch_mutex_;
  std::map<std::string, std::set<std::size_t>, std::less<>> dispensed_;
  std::vector<std::size_t> dispatch_count_;

  std::mutex submit_mutex_;
  std::set<std::pair<std::string, std::size_t>> submitted_;
  RankingAppender appender_;
};

/// Loads everything named in `config` and serves until the process is stopped.
void serve(const ServiceConfig& config);

}  // namespace lookalike
