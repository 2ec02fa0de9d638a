#include <gtest/gtest.h>

#include <cstring>
#include <thread>

#include "seg4d/errors.hpp"
#include "seg4d/harness.hpp"
#include "seg4d/http_server.hpp"
#include "seg4d/session.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"

// After Eigen: resolv.h, pulled in here, defines a _res macro.
#include <httplib.h>

using namespace seg4d;
using namespace seg4d::server;
using nlohmann::json;

namespace {

class SessionTest : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg_ = test::synthetic_config(tmp_.path(), 2, 4);
    cfg_.eval.tau = 4;
    scenes_ = harness::load_scenes(cfg_);
    window_ = eval::build_window(scenes_[0].sequence, {0, 4}, cfg_.eval.voxel_size, cfg_.eval.position_backend);
    centers_ = window_.grid.centers();
    manager_ = std::make_unique<SessionManager>(cfg_);
  }

  std::shared_ptr<Session> open(int scene = 0) {
    SessionSpec spec;
    spec.scene = scene;
    return manager_->get(manager_->create(spec));
  }

  ClickRequest at(std::size_t voxel, ObjectId object = 1, bool fresh = false) const {
    ClickRequest r;
    r.position = centers_[voxel];
    r.object = object;
    r.new_object = fresh;
    return r;
  }

  test::TempDir tmp_;
  harness::RunConfig cfg_;
  std::vector<eval::Scene> scenes_;
  eval::WindowData window_;
  std::vector<Vec3> centers_;
  std::unique_ptr<SessionManager> manager_;
};

}  // namespace

TEST_F(SessionTest, CreateMatchesWindow) {
  const auto s = open();
  EXPECT_EQ(s->points(), window_.cloud.size());
  EXPECT_EQ(s->voxels(), window_.grid.cells.size());
  EXPECT_TRUE(s->has_gt());
  EXPECT_EQ(s->window().length, 4);
  EXPECT_EQ(s->voxel_ids(), std::vector<ObjectId>(s->voxels(), kBackground));
  EXPECT_EQ(manager_->size(), 1u);
}

TEST_F(SessionTest, BadSourceCreatesNothing) {
  SessionSpec spec;
  spec.root = (tmp_ / "missing").string();
  EXPECT_THROW(manager_->create(spec), SessionError);
  SessionSpec far;
  far.scene = 99;
  EXPECT_THROW(manager_->create(far), SessionError);
  EXPECT_EQ(manager_->size(), 0u);
}

TEST_F(SessionTest, FirstClickThenVoronoiSplit) {
  const auto s = open();
  const std::size_t a = 0, b = centers_.size() - 1;
  const auto first = s->click(at(a));
  ASSERT_TRUE(first.accepted);
  EXPECT_EQ(first.click.order, 1);
  EXPECT_EQ(first.click.iteration, 1);
  EXPECT_EQ(first.click.position, centers_[a]);
  EXPECT_EQ(first.delta.changed.size(), s->voxels());
  EXPECT_EQ(s->voxel_ids(), std::vector<ObjectId>(s->voxels(), 1));

  const auto second = s->click(at(b, 0, true));
  ASSERT_TRUE(second.accepted);
  EXPECT_EQ(second.click.object_id, 2u);
  EXPECT_FALSE(second.delta.changed.empty());

  const std::vector<Vec3> clicked{centers_[a], centers_[b]};
  const auto ids = s->voxel_ids();
  for (std::size_t v = 0; v < ids.size(); ++v) {
    EXPECT_EQ(ids[v], static_cast<ObjectId>(oracle::nearest(clicked, centers_[v]) + 1)) << v;
  }
  for (const auto& [v, id] : second.delta.changed) EXPECT_EQ(id, 2u) << v;
}

TEST_F(SessionTest, MissLeavesStateAlone) {
  const auto s = open();
  ASSERT_TRUE(s->click(at(3)).accepted);
  const auto before = s->point_ids();
  ClickRequest r;
  r.position = Vec3(1e4, 1e4, 1e4);
  const auto out = s->click(r);
  EXPECT_FALSE(out.accepted);
  EXPECT_EQ(out.reason, "no target");
  EXPECT_EQ(s->history().size(), 1u);
  EXPECT_EQ(s->point_ids(), before);
}

TEST_F(SessionTest, BackgroundObjectRejected) {
  const auto s = open();
  EXPECT_THROW(s->click(at(0, 0)), SessionError);
}

TEST_F(SessionTest, UndoRestoresPreviousState) {
  const auto s = open();
  EXPECT_FALSE(s->undo().has_value());
  const auto initial_points = s->point_ids();
  const auto initial_ious = s->ious();
  ASSERT_TRUE(s->click(at(5)).accepted);
  const auto one = s->point_ids();
  ASSERT_TRUE(s->click(at(centers_.size() / 2, 0, true)).accepted);
  ASSERT_TRUE(s->undo().has_value());
  EXPECT_EQ(s->point_ids(), one);
  ASSERT_TRUE(s->undo().has_value());
  EXPECT_EQ(s->point_ids(), initial_points);
  EXPECT_EQ(s->ious(), initial_ious);
  EXPECT_TRUE(s->history().empty());
  EXPECT_FALSE(s->undo().has_value());
}

TEST_F(SessionTest, StateIsPureFunctionOfHistory) {
  const auto s = open();
  Rng rng(90);
  for (int step = 0; step < 25; ++step) {
    if (!s->history().empty() && draw_index(rng, 4) == 0) {
      s->undo();
    } else {
      const auto v = draw_index(rng, centers_.size());
      const bool fresh = draw_index(rng, 3) == 0;
      ObjectId obj = 1;
      if (!s->history().empty()) obj = 1 + static_cast<ObjectId>(draw_index(rng, s->history().back().object_id));
      ASSERT_TRUE(s->click(at(v, obj, fresh)).accepted);
    }
    const auto history = s->history();
    for (std::size_t i = 0; i < history.size(); ++i) EXPECT_EQ(history[i].order, static_cast<int>(i) + 1);
    EXPECT_EQ(s->recompute_points(history), s->point_ids()) << "step " << step;
  }
}

TEST_F(SessionTest, SessionsAreIndependent) {
  const auto a = open(0);
  const auto b = open(1);
  ASSERT_NE(a->id(), b->id());
  ASSERT_TRUE(a->click(at(0)).accepted);
  EXPECT_TRUE(b->history().empty());
  EXPECT_TRUE(manager_->close(a->id()));
  EXPECT_FALSE(manager_->close(a->id()));
  EXPECT_EQ(manager_->size(), 1u);
  EXPECT_EQ(manager_->get(b->id()), b);
}

TEST_F(SessionTest, ConcurrentClicksSerialize) {
  const auto s = open();
  constexpr int kThreads = 4, kEach = 3;
  std::vector<std::thread> threads;
  for (int t = 0; t < kThreads; ++t) {
    threads.emplace_back([&, t] {
      for (int k = 0; k < kEach; ++k) {
        s->click(at(static_cast<std::size_t>(t * 7 + k) % centers_.size(), static_cast<ObjectId>(t + 1)));
      }
    });
  }
  for (auto& t : threads) t.join();
  const auto history = s->history();
  ASSERT_EQ(history.size(), static_cast<std::size_t>(kThreads * kEach));
  for (std::size_t i = 0; i < history.size(); ++i) EXPECT_EQ(history[i].order, static_cast<int>(i) + 1);
  EXPECT_EQ(s->recompute_points(history), s->point_ids());
}

TEST_F(SessionTest, ExportRoundTripsAndReplays) {
  const auto s = open();
  ASSERT_TRUE(s->click(at(2)).accepted);
  ASSERT_TRUE(s->click(at(centers_.size() - 3, 0, true)).accepted);
  ASSERT_TRUE(s->click(at(centers_.size() / 3, 1)).accepted);
  const auto out = s->export_to(tmp_ / "export");
  EXPECT_EQ(out.scans, 4);
  ASSERT_TRUE(std::filesystem::exists(out.trace));

  const auto set = harness::read_window_predictions(out.dir);
  ASSERT_EQ(set.windows.size(), 1u);
  EXPECT_EQ(set.scene, scenes_[0].name);
  EXPECT_EQ(set.windows[0].ids, s->point_ids());

  // Replay recomputes every logged IoU and fails on any difference.
  harness::RunConfig replay_cfg = cfg_;
  replay_cfg.output_dir = (tmp_ / "replay").string();
  EXPECT_NO_THROW(harness::cmd_replay(out.trace, replay_cfg));
}

TEST_F(SessionTest, EmptyExport) {
  const auto s = open();
  const auto out = s->export_to(tmp_ / "empty");
  const auto set = harness::read_window_predictions(out.dir);
  ASSERT_EQ(set.windows.size(), 1u);
  EXPECT_EQ(set.windows[0].ids, std::vector<ObjectId>(s->points(), kBackground));
  const auto text = test::read_file(out.trace);
  EXPECT_EQ(text.find("\"click\""), std::string::npos);
  harness::RunConfig replay_cfg = cfg_;
  replay_cfg.output_dir = (tmp_ / "replay").string();
  EXPECT_NO_THROW(harness::cmd_replay(out.trace, replay_cfg));
}

TEST_F(SessionTest, ProtocolMessages) {
  const auto created = manager_->handle({{"type", "create"}, {"scene", 0}});
  ASSERT_EQ(created.at("type"), "created") << created.dump();
  const auto id = created.at("session").get<std::string>();
  EXPECT_EQ(created.at("voxels").get<std::size_t>(), centers_.size());
  EXPECT_EQ(created.at("window").at("length"), 4);
  EXPECT_EQ(created.at("cloud"), "/api/cloud/" + id);

  const auto& c = centers_[1];
  const auto clicked = manager_->handle({{"type", "click"}, {"session", id}, {"pos", {c.x(), c.y(), c.z()}}});
  ASSERT_EQ(clicked.at("type"), "state_delta") << clicked.dump();
  EXPECT_EQ(clicked.at("clicks"), 1);
  EXPECT_EQ(clicked.at("changed").size(), centers_.size());
  EXPECT_TRUE(clicked.contains("ious"));
  EXPECT_TRUE(clicked.contains("click"));

  const auto miss = manager_->handle({{"type", "click"}, {"session", id}, {"pos", {1e4, 1e4, 1e4}}});
  EXPECT_EQ(miss.at("type"), "error");
  EXPECT_EQ(miss.at("code"), "no_target");

  const auto state = manager_->handle({{"type", "state"}, {"session", id}});
  EXPECT_EQ(state.at("clicks").size(), 1u);
  EXPECT_EQ(state.at("voxel_ids").size(), centers_.size());

  EXPECT_EQ(manager_->handle({{"type", "undo"}, {"session", id}}).at("type"), "state_delta");
  EXPECT_EQ(manager_->handle({{"type", "undo"}, {"session", id}}).at("type"), "noop");

  const auto exported = manager_->handle({{"type", "export"}, {"session", id}});
  ASSERT_EQ(exported.at("type"), "exported") << exported.dump();
  EXPECT_TRUE(std::filesystem::exists(exported.at("trace").get<std::string>()));

  EXPECT_EQ(manager_->handle({{"type", "bogus"}, {"session", id}}).at("type"), "error");
  EXPECT_EQ(manager_->handle({{"type", "click"}, {"session", id}, {"pos", {1, 2}}}).at("type"), "error");
  EXPECT_EQ(manager_->handle(json::array()).at("type"), "error");
  EXPECT_EQ(manager_->handle({{"type", "close"}, {"session", id}}).at("ok"), true);
  EXPECT_EQ(manager_->handle({{"type", "state"}, {"session", id}}).at("type"), "error");
}

namespace {

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

/// Splits a cloud frame into its blocks after checking magic and version.
std::vector<std::string> frame_blocks(const std::vector<std::uint8_t>& frame) {
  EXPECT_GE(frame.size(), 8u);
  EXPECT_EQ(std::string(frame.begin(), frame.begin() + 4), "S4DC");
  EXPECT_EQ(read_u32(frame.data() + 4), kCloudFrameVersion);
  std::vector<std::string> blocks;
  std::size_t at = 8;
  while (at + 4 <= frame.size()) {
    const auto n = read_u32(frame.data() + at);
    at += 4;
    if (at + n > frame.size()) break;
    blocks.emplace_back(frame.begin() + static_cast<std::ptrdiff_t>(at), frame.begin() + static_cast<std::ptrdiff_t>(at + n));
    at += n;
  }
  EXPECT_EQ(at, frame.size());
  return blocks;
}

}  // namespace

TEST_F(SessionTest, CloudFrameLayout) {
  const auto s = open();
  const int budget = 50;
  const auto blocks = frame_blocks(s->cloud_frame(budget));
  ASSERT_EQ(blocks.size(), 6u);
  const auto header = json::parse(blocks[0]);
  const auto n = header.at("preview").get<std::size_t>();
  EXPECT_EQ(n, std::min<std::size_t>(budget, s->voxels()));
  EXPECT_EQ(blocks[1].size(), n * 12);
  EXPECT_EQ(blocks[2].size(), n * 4);
  EXPECT_EQ(blocks[3].size(), n * 4);
  EXPECT_EQ(blocks[4].size(), n * 4);
  EXPECT_EQ(blocks[5].size(), n * 3);
}

TEST_F(SessionTest, HttpRoundTrip) {
  HttpServer http(*manager_);
  const int port = http.bind("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  std::thread serving([&] { http.listen(); });

  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(30, 0);
  const auto health = client.Get("/api/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body).at("ok"), true);

  const auto created = client.Post("/api", json{{"type", "create"}, {"scene", 1}}.dump(), "application/json");
  ASSERT_TRUE(created);
  const auto reply = json::parse(created->body);
  ASSERT_EQ(reply.at("type"), "created") << created->body;

  const auto cloud = client.Get(reply.at("cloud").get<std::string>().c_str());
  ASSERT_TRUE(cloud);
  EXPECT_EQ(cloud->status, 200);
  EXPECT_EQ(cloud->body.substr(0, 4), "S4DC");

  const auto bad = client.Post("/api", "{not json", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(json::parse(bad->body).at("type"), "error");

  http.stop();
  serving.join();
}
