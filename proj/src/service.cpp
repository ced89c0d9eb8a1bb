#include "lookalike/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <limits>

#include "httplib.h"
#include "lookalike/errors.hpp"

namespace lookalike {

namespace {

Response json_response(int status, const nlohmann::json& body) { return {status, body.dump(), "application/json"}; }

Response error_response(int status, const std::string& message) {
  return json_response(status, {{"error", message}});
}

void reply(httplib::Response& res, const Response& r) {
  res.status = r.status;
  if (!r.body.empty()) res.set_content(r.body, r.content_type);
}

}  // namespace

RankingAppender::RankingAppender(const std::filesystem::path& path) : path_(path) {
  fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    throw ValidationError("cannot open '" + path.string() + "' for appending: " + std::strerror(errno));
  }
}

RankingAppender::~RankingAppender() {
  if (fd_ >= 0) ::close(fd_);
}

void RankingAppender::append(const std::string& line) {
  std::string buf = line;
  buf.push_back('\n');
  std::size_t done = 0;
  while (done < buf.size()) {
    const ssize_t n = ::write(fd_, buf.data() + done, buf.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error("append to '" + path_.string() + "' failed: " + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fdatasync(fd_) != 0) {
    throw Error("fdatasync on '" + path_.string() + "' failed: " + std::strerror(errno));
  }
}

LookalikeService::LookalikeService(EmbeddingSet base, std::optional<ProjectionHead> head,
                                   std::vector<RankingTask> tasks, const std::filesystem::path& rankings_path,
                                   std::size_t quota)
    : space_(head ? project(*head, base) : std::move(base)),
      tasks_(std::move(tasks)),
      quota_(quota),
      dispatch_count_(tasks_.size(), 0),
      appender_(rankings_path) {
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    if (!task_index_.emplace(tasks_[i].task_id, i).second) {
      throw ValidationError("duplicate task_id '" + tasks_[i].task_id + "'");
    }
  }
  // Earlier submissions stay binding across restarts.
  for (const auto& r : load_rankings(rankings_path)) {
    const auto it = task_index_.find(r.task_id);
    if (it == task_index_.end()) continue;
    submitted_.emplace(r.worker_id, it->second);
    if (dispensed_[r.worker_id].insert(it->second).second) ++dispatch_count_[it->second];
  }
}

std::unique_ptr<LookalikeService> LookalikeService::from_config(const ServiceConfig& config) {
  auto base = load_embeddings(config.embeddings, config.normalize);
  std::optional<ProjectionHead> head;
  if (config.head) head = load_head(*config.head);
  auto tasks = load_ranking_tasks(config.tasks);
  for (const auto& t : tasks) validate_task(t, base);
  if (!std::filesystem::exists(config.rankings)) {
    RankingAppender touch(config.rankings);
  }
  return std::make_unique<LookalikeService>(std::move(base), std::move(head), std::move(tasks), config.rankings,
                                            config.quota);
}

Response LookalikeService::health() const { return json_response(200, {{"status", "ok"}}); }

Response LookalikeService::lookalike(std::string_view item_id, std::optional<std::string_view> k) const {
  std::size_t count = kDefaultK;
  if (k) {
    const auto [ptr, ec] = std::from_chars(k->data(), k->data() + k->size(), count);
    if (ec != std::errc{} || ptr != k->data() + k->size() || count < 1 || count > kMaxK) {
      return error_response(400, "k must be an integer in [1, " + std::to_string(kMaxK) + "]");
    }
  }
  if (!space_.contains(item_id)) {
    return error_response(404, "unknown item_id '" + std::string(item_id) + "'");
  }
  nlohmann::json out = nlohmann::json::array();
  for (const auto& nb : top_k_similar(space_, item_id, count, /*exclude_same_identity=*/true)) {
    out.push_back({{"item_id", nb.item_id}, {"distance", nb.distance}});
  }
  return json_response(200, out);
}

Response LookalikeService::next_task(std::string_view worker_id) {
  if (worker_id.empty()) {
    return error_response(400, "worker_id is required");
  }
  std::size_t chosen = tasks_.size();
  {
    std::lock_guard lock(dispatch_mutex_);
    auto& mine = dispensed_[std::string(worker_id)];
    if (mine.size() >= quota_) return {204, "", "application/json"};
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
      if (mine.contains(i)) continue;
      if (chosen == tasks_.size() || dispatch_count_[i] < dispatch_count_[chosen]) chosen = i;
    }
    if (chosen == tasks_.size()) return {204, "", "application/json"};
    mine.insert(chosen);
    ++dispatch_count_[chosen];
  }
  const auto& task = tasks_[chosen];
  return json_response(200, {{"task_id", task.task_id},
                             {"query_id", task.query_id},
                             {"candidates", task.candidates},
                             {"presentation_order", task.presentation_order},
                             {"presented", task.presented()}});
}

Response LookalikeService::submit_ranking(std::string_view task_id, std::string_view body) {
  const auto it = task_index_.find(task_id);
  if (it == task_index_.end()) {
    return error_response(404, "unknown task '" + std::string(task_id) + "'");
  }
  const RankingTask& task = tasks_[it->second];
  WorkerRanking ranking;
  ranking.task_id = task.task_id;
  try {
    const auto j = nlohmann::json::parse(body);
    ranking.worker_id = j.at("worker_id").get<std::string>();
    ranking.order = j.at("order").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    return error_response(400, std::string("malformed body: ") + e.what());
  }
  if (ranking.worker_id.empty()) {
    return error_response(400, "worker_id is required");
  }
  try {
    validate_ranking(task, ranking);
  } catch (const ValidationError& e) {
    return error_response(400, e.what());
  }

  std::lock_guard lock(submit_mutex_);
  if (submitted_.contains({ranking.worker_id, it->second})) {
    return error_response(409, "worker '" + ranking.worker_id + "' already ranked task '" + task.task_id + "'");
  }
  appender_.append(ranking_to_json(ranking).dump());
  submitted_.emplace(ranking.worker_id, it->second);
  return json_response(201, {{"status", "created"}, {"task_id", task.task_id}});
}

void LookalikeService::mount(httplib::Server& server, const std::optional<std::filesystem::path>& static_dir) {
  server.Get("/health", [this](const httplib::Request&, httplib::Response& res) { reply(res, health()); });
  server.Get(R"(/lookalike/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string> k;
    if (req.has_param("k")) k = req.get_param_value("k");
    reply(res, lookalike(req.matches[1].str(), k ? std::optional<std::string_view>(*k) : std::nullopt));
  });
  server.Get("/tasks/next", [this](const httplib::Request& req, httplib::Response& res) {
    reply(res, next_task(req.has_param("worker_id") ? req.get_param_value("worker_id") : std::string()));
  });
  server.Post(R"(/tasks/([^/]+)/rankings)", [this](const httplib::Request& req, httplib::Response& res) {
    reply(res, submit_ranking(req.matches[1].str(), req.body));
  });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    reply(res, error_response(500, what));
  });
  if (static_dir && !server.set_mount_point("/", static_dir->string())) {
    throw ValidationError("static directory '" + static_dir->string() + "' does not exist");
  }
}

void serve(const ServiceConfig& config) {
  auto service = LookalikeService::from_config(config);
  httplib::Server server;
  service->mount(server, config.static_dir);
  if (!server.listen(config.host, config.port)) {
    throw Error("cannot listen on " + config.host + ":" + std::to_string(config.port));
  }
}

}  // namespace lookalike
