#include <gtest/gtest.h>

#include <atomic>
#include <map>
#include <set>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "lookalike/annotation.hpp"
#include "lookalike/errors.hpp"
#include "lookalike/service.hpp"
#include "lookalike/task_builder.hpp"
#include "test_support.hpp"

namespace lookalike {
namespace {

using nlohmann::json;

class ServiceTest : public ::testing::Test {
 protected:
  testing::TempDir dir;
  EmbeddingSet base = testing::random_set(60, 5, 20, 4);
  std::vector<RankingTask> tasks;

  void SetUp() override {
    const auto queries = sample_queries(base, 12, 1);
    tasks = build_ranking_tasks(base, queries, 6, 2);
  }

  std::filesystem::path rankings() const { return dir / "rankings.jsonl"; }

  std::unique_ptr<LookalikeService> make(std::size_t quota = 10, std::optional<ProjectionHead> head = {}) {
    return std::make_unique<LookalikeService>(base, std::move(head), tasks, rankings(), quota);
  }

  static std::string body(const std::string& worker, std::vector<std::string> order) {
    return json{{"worker_id", worker}, {"order", order}}.dump();
  }

  static std::vector<std::string> reversed(const RankingTask& t) {
    auto p = t.presented();
    return {p.rbegin(), p.rend()};
  }
};

TEST_F(ServiceTest, LookalikeMatchesLibraryRetrieval) {
  auto svc = make();
  const auto r = svc->lookalike("i007", std::nullopt);
  ASSERT_EQ(r.status, 200);
  const auto expected = top_k_similar(base, "i007", LookalikeService::kDefaultK, true);
  const auto got = json::parse(r.body);
  ASSERT_EQ(got.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_EQ(got[i]["item_id"], expected[i].item_id);
    EXPECT_EQ(got[i]["distance"].get<double>(), expected[i].distance);
  }
  EXPECT_EQ(json::parse(svc->lookalike("i007", "3").body).size(), 3u);
}

TEST_F(ServiceTest, LookalikeUsesProjectedSpaceWhenHeadGiven) {
  const auto head = ProjectionHead::near_identity(5, 3, true, 0.5, 8);
  auto svc = make(10, head);
  const auto projected = project(head, base);
  const auto expected = top_k_similar(projected, "i001", 4, true);
  const auto got = json::parse(svc->lookalike("i001", "4").body);
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(got[i]["item_id"], expected[i].item_id);
}

TEST_F(ServiceTest, LookalikeErrors) {
  auto svc = make();
  EXPECT_EQ(svc->lookalike("missing", std::nullopt).status, 404);
  for (const char* k : {"0", "-1", "abc", "101", "3x", ""}) EXPECT_EQ(svc->lookalike("i001", k).status, 400) << k;
  const auto e = json::parse(svc->lookalike("missing", std::nullopt).body);
  EXPECT_TRUE(e.contains("error"));
}

TEST_F(ServiceTest, NextTaskDispatch) {
  auto svc = make(100);
  EXPECT_EQ(svc->next_task("").status, 400);
  const auto first = svc->next_task("w1");
  ASSERT_EQ(first.status, 200);
  const auto j = json::parse(first.body);
  EXPECT_EQ(j["task_id"], tasks[0].task_id);
  EXPECT_EQ(j["presented"].get<std::vector<std::string>>(), tasks[0].presented());
  EXPECT_EQ(j["candidates"].size(), 6u);
  // A second worker is sent to the least-served task first.
  EXPECT_EQ(json::parse(svc->next_task("w2").body)["task_id"], tasks[1].task_id);
  for (std::size_t i = 1; i < tasks.size(); ++i) ASSERT_EQ(svc->next_task("w1").status, 200);
  EXPECT_EQ(svc->next_task("w1").status, 204);
}

TEST_F(ServiceTest, QuotaLimitsTasksPerWorker) {
  auto svc = make(3);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(svc->next_task("w").status, 200);
  EXPECT_EQ(svc->next_task("w").status, 204);
  EXPECT_EQ(svc->next_task("other").status, 200);
}

TEST_F(ServiceTest, ThousandRequestAuditNeverRepeatsForAWorker) {
  auto svc = make(1000);
  std::map<std::string, std::set<std::string>> seen;
  std::mt19937_64 rng(1);
  std::size_t served = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::string w = "w" + std::to_string(rng() % 40);
    const auto r = svc->next_task(w);
    if (r.status == 204) {
      EXPECT_EQ(seen[w].size(), tasks.size());
      continue;
    }
    ASSERT_EQ(r.status, 200);
    ++served;
    EXPECT_TRUE(seen[w].insert(json::parse(r.body)["task_id"].get<std::string>()).second);
  }
  EXPECT_GT(served, 0u);
}

TEST_F(ServiceTest, SubmitPersistsBeforeResponding) {
  auto svc = make();
  std::vector<WorkerRanking> expected;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto r = svc->submit_ranking(tasks[i].task_id, body("w1", reversed(tasks[i])));
    ASSERT_EQ(r.status, 201) << r.body;
    expected.push_back({"w1", tasks[i].task_id, reversed(tasks[i])});
    EXPECT_EQ(load_rankings(rankings()), expected);
  }
}

TEST_F(ServiceTest, SubmitRejectsBadInput) {
  auto svc = make();
  const auto& t = tasks[0];
  auto order = t.presented();
  order.pop_back();
  EXPECT_EQ(svc->submit_ranking(t.task_id, body("w", order)).status, 400);
  order.push_back(order.front());
  EXPECT_EQ(svc->submit_ranking(t.task_id, body("w", order)).status, 400);
  EXPECT_EQ(svc->submit_ranking(t.task_id, "{not json").status, 400);
  EXPECT_EQ(svc->submit_ranking(t.task_id, body("", t.presented())).status, 400);
  EXPECT_EQ(svc->submit_ranking("nope", body("w", t.presented())).status, 404);
  EXPECT_EQ(svc->submit_ranking(t.task_id, body("w", t.presented())).status, 201);
  EXPECT_EQ(svc->submit_ranking(t.task_id, body("w", reversed(t))).status, 409);
  EXPECT_EQ(load_rankings(rankings()).size(), 1u);
}

TEST_F(ServiceTest, RestartKeepsEarlierSubmissions) {
  {
    auto svc = make();
    ASSERT_EQ(svc->submit_ranking(tasks[0].task_id, body("w", reversed(tasks[0]))).status, 201);
  }
  auto svc = make(100);
  EXPECT_EQ(svc->submit_ranking(tasks[0].task_id, body("w", reversed(tasks[0]))).status, 409);
  for (std::size_t i = 1; i < tasks.size(); ++i) {
    EXPECT_NE(json::parse(svc->next_task("w").body)["task_id"], tasks[0].task_id);
  }
  EXPECT_EQ(svc->next_task("w").status, 204);
}

TEST_F(ServiceTest, ConcurrentSubmissionsAreAllRecorded) {
  auto svc = make();
  std::vector<std::thread> threads;
  std::atomic<int> created{0}, conflicts{0};
  for (int w = 0; w < 8; ++w) {
    threads.emplace_back([&, w] {
      for (const auto& t : tasks) {
        // Every worker submits every task twice; exactly one of each pair must win.
        for (int rep = 0; rep < 2; ++rep) {
          const auto s = svc->submit_ranking(t.task_id, body("w" + std::to_string(w), reversed(t))).status;
          (s == 201 ? created : conflicts)++;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(created.load(), static_cast<int>(8 * tasks.size()));
  EXPECT_EQ(conflicts.load(), static_cast<int>(8 * tasks.size()));
  EXPECT_EQ(load_rankings(rankings()).size(), 8 * tasks.size());
}

TEST_F(ServiceTest, FromConfigLoadsFiles) {
  save_embeddings(base, dir / "emb.jsonl");
  save_ranking_tasks(tasks, dir / "tasks.jsonl");
  ServiceConfig cfg;
  cfg.embeddings = dir / "emb.jsonl";
  cfg.tasks = dir / "tasks.jsonl";
  cfg.rankings = dir / "new_rankings.jsonl";
  auto svc = LookalikeService::from_config(cfg);
  EXPECT_TRUE(std::filesystem::exists(cfg.rankings));
  EXPECT_EQ(svc->next_task("w").status, 200);
}

TEST_F(ServiceTest, HttpRoutes) {
  std::filesystem::create_directory(dir / "static");
  testing::write_text(dir / "static" / "index.html", "<html>rank</html>");
  auto svc = make();
  httplib::Server server;
  svc->mount(server, dir / "static");
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto health = client.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body)["status"], "ok");

  auto look = client.Get("/lookalike/i003?k=2");
  ASSERT_TRUE(look);
  EXPECT_EQ(look->status, 200);
  EXPECT_EQ(json::parse(look->body).size(), 2u);
  EXPECT_EQ(client.Get("/lookalike/zzz")->status, 404);
  EXPECT_EQ(client.Get("/lookalike/i003?k=0")->status, 400);

  auto next = client.Get("/tasks/next?worker_id=alice");
  ASSERT_TRUE(next);
  ASSERT_EQ(next->status, 200);
  const auto task_id = json::parse(next->body)["task_id"].get<std::string>();
  const auto& task = *std::find_if(tasks.begin(), tasks.end(), [&](const RankingTask& t) { return t.task_id == task_id; });
  auto post = client.Post("/tasks/" + task_id + "/rankings", body("alice", reversed(task)), "application/json");
  ASSERT_TRUE(post);
  EXPECT_EQ(post->status, 201);
  EXPECT_EQ(client.Post("/tasks/" + task_id + "/rankings", body("alice", reversed(task)), "application/json")->status,
            409);
  EXPECT_EQ(client.Get("/tasks/next")->status, 400);

  auto page = client.Get("/index.html");
  ASSERT_TRUE(page);
  EXPECT_EQ(page->body, "<html>rank</html>");

  server.stop();
  th.join();
  EXPECT_EQ(load_rankings(rankings()).size(), 1u);
}

TEST(RankingAppenderTest, AppendsLines) {
  testing::TempDir dir;
  {
    RankingAppender a(dir / "x.jsonl");
    a.append("one");
    a.append("two");
  }
  RankingAppender b(dir / "x.jsonl");
  b.append("three");
  EXPECT_EQ(testing::read_text(dir / "x.jsonl"), "one\ntwo\nthree\n");
  EXPECT_THROW(RankingAppender{dir / "missing" / "x.jsonl"}, ValidationError);
}

}  // namespace
}  // namespace lookalike
