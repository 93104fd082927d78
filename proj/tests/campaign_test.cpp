#include "ibws/campaign.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "campaign_driver.hpp"
#include "gtest/gtest.h"
#include "ibws/io.hpp"

using namespace ibws;
using namespace ibws::testing;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("ibws_campaign_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

CampaignError::Code code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const CampaignError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no CampaignError thrown";
  return CampaignError::Code::conflict;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    out.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

}  // namespace

TEST(campaign, create_and_describe) {
  double t = 100;
  CampaignService svc([&] { return t; });
  auto cfg = small_scalar_config(1);
  auto id = svc.create(cfg);
  EXPECT_EQ(id, "c1");
  auto d = svc.get(id).describe();
  EXPECT_EQ(d.at("status"), "open");
  EXPECT_EQ(d.at("created_at"), 100.0);
  EXPECT_EQ(d.at("config"), to_json(cfg));
  EXPECT_EQ(campaign_config_from_json(d.at("config")).items.size(), 8u);
  EXPECT_EQ(svc.create(small_ibws_config(1)), "c2");
  EXPECT_EQ(svc.ids(), (std::vector<std::string>{"c1", "c2"}));
  EXPECT_EQ(code_of([&] { svc.get("c9"); }), CampaignError::Code::not_found);
}

TEST(campaign, config_errors) {
  CampaignService svc;
  CampaignConfig empty;
  EXPECT_EQ(code_of([&] { svc.create(empty); }), CampaignError::Code::invalid);
  auto dup = small_ibws_config(1);
  dup.items[1].id = dup.items[0].id;
  EXPECT_EQ(code_of([&] { svc.create(dup); }), CampaignError::Code::invalid);
  auto shallow = small_ibws_config(1);
  shallow.depth = 0;
  EXPECT_EQ(code_of([&] { svc.create(shallow); }), CampaignError::Code::invalid);
  EXPECT_EQ(code_of([] { campaign_config_from_json(nlohmann::json::array()); }),
            CampaignError::Code::invalid);
  EXPECT_TRUE(svc.ids().empty());
}

TEST(campaign, minimal_ibws) {
  CampaignService svc([] { return 0.0; });
  auto cfg = small_ibws_config(3, 4, 1);
  auto& host = svc.get(svc.create(cfg));
  auto task = host.next_task("w1", 1);
  ASSERT_TRUE(task);
  ASSERT_TRUE(task->query);
  EXPECT_EQ(task->query->item_ids.size(), 4u);
  EXPECT_EQ(task->expires_at, 101);
  EXPECT_FALSE(host.next_task("w2", 2));  // the only query is leased

  std::mt19937_64 rng(0);
  auto sub = answer(*task, truth_map(cfg.items), rng, cfg.protocol);
  auto ack = host.submit(sub, 5);
  EXPECT_FALSE(ack.duplicate);
  EXPECT_TRUE(ack.completed);
  EXPECT_FALSE(host.next_task("w2", 6));
  auto res = host.results();
  EXPECT_EQ(res.at("mode"), "ibws");
  EXPECT_EQ(res.at("results").size(), 4u);
  auto events = host.events();
  ASSERT_EQ(events.size(), 4u);
  EXPECT_EQ(events.back().kind, EventKind::completed);
  for (std::size_t i = 0; i < events.size(); ++i) EXPECT_EQ(events[i].seq, i + 1);
}

TEST(campaign, scalar_leases_are_disjoint_until_redundancy) {
  CampaignService svc([] { return 0.0; });
  auto cfg = small_scalar_config(2, 6, 1);
  auto& host = svc.get(svc.create(cfg));
  auto a = host.next_task("w1", 1);
  auto b = host.next_task("w2", 1);
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a->items.size(), 3u);
  std::set<std::string> all(a->items.begin(), a->items.end());
  for (const auto& i : b->items) EXPECT_TRUE(all.insert(i).second) << i;
  EXPECT_EQ(all.size(), 6u);
  EXPECT_FALSE(host.next_task("w3", 1));
  auto p = host.progress();
  EXPECT_EQ(p.at("outstanding_leases"), 2);
  EXPECT_EQ(p.at("responses_target"), 6);
}

TEST(campaign, scalar_worker_never_sees_item_twice) {
  CampaignService svc([] { return 0.0; });
  auto cfg = small_scalar_config(4, 5, 3);
  auto& host = svc.get(svc.create(cfg));
  std::mt19937_64 rng(1);
  auto truth = truth_map(cfg.items);
  std::map<std::string, std::set<std::string>> seen;
  double t = 1;
  for (int round = 0; round < 20; ++round) {
    for (const char* w : {"w1", "w2", "w3", "w4"}) {
      auto task = host.next_task(w, t);
      if (!task) continue;
      for (const auto& i : task->items) EXPECT_TRUE(seen[w].insert(i).second) << w << " " << i;
      host.submit(answer(*task, truth, rng, cfg.protocol), t);
    }
  }
  EXPECT_EQ(host.progress().at("status"), "complete");
  EXPECT_EQ(host.progress().at("responses_collected"), 15);
  auto rows = host.results().at("results");
  ASSERT_EQ(rows.size(), 5u);
  for (const auto& r : rows) EXPECT_EQ(r.at("n_responses"), 3);
}

TEST(campaign, rejects_bad_answers) {
  CampaignService svc([] { return 0.0; });
  auto cfg = small_ibws_config(5);
  auto& host = svc.get(svc.create(cfg));
  auto task = host.next_task("w1", 1);
  std::mt19937_64 rng(0);
  auto sub = answer(*task, truth_map(cfg.items), rng, cfg.protocol);

  auto same = sub;
  same.bws->worst = same.bws->best;
  same.bws->full_order.reset();
  EXPECT_EQ(code_of([&] { host.submit(same, 2); }), CampaignError::Code::invalid);
  auto stranger = sub;
  stranger.bws->best = "nobody";
  EXPECT_EQ(code_of([&] { host.submit(stranger, 2); }), CampaignError::Code::invalid);
  auto other = sub;
  other.worker_id = "w2";
  EXPECT_EQ(code_of([&] { host.submit(other, 2); }), CampaignError::Code::invalid);
  auto unknown = sub;
  unknown.lease_id = "l77";
  EXPECT_EQ(code_of([&] { host.submit(unknown, 2); }), CampaignError::Code::invalid);
  EXPECT_EQ(code_of([&] { host.results(); }), CampaignError::Code::incomplete);
  // rejections leave no trace
  EXPECT_EQ(host.events().size(), 2u);
  EXPECT_FALSE(host.submit(sub, 3).duplicate);
}

TEST(campaign, duplicate_submit_is_idempotent) {
  CampaignService svc([] { return 0.0; });
  auto cfg = small_scalar_config(6);
  auto& host = svc.get(svc.create(cfg));
  auto task = host.next_task("w1", 1);
  std::mt19937_64 rng(0);
  auto sub = answer(*task, truth_map(cfg.items), rng, cfg.protocol);
  EXPECT_FALSE(host.submit(sub, 2).duplicate);
  auto state = host.state().dump();
  auto n = host.events().size();
  EXPECT_TRUE(host.submit(sub, 3).duplicate);
  EXPECT_TRUE(host.submit(sub, 5000).duplicate);
  EXPECT_EQ(host.events().size(), n);
  EXPECT_EQ(host.state().dump(), state);
}

TEST(campaign, expired_lease) {
  CampaignService svc([] { return 0.0; });
  auto cfg = small_ibws_config(7);
  auto& host = svc.get(svc.create(cfg));
  auto task = host.next_task("w1", 0);
  std::mt19937_64 rng(0);
  auto sub = answer(*task, truth_map(cfg.items), rng, cfg.protocol);
  EXPECT_EQ(code_of([&] { host.submit(sub, 100); }), CampaignError::Code::expired);
  // the orphaned query goes back out, to anybody
  auto again = host.next_task("w2", 150);
  ASSERT_TRUE(again);
  EXPECT_EQ(again->query->query_id, task->query->query_id);
  EXPECT_NE(again->lease_id, task->lease_id);
  EXPECT_EQ(code_of([&] { host.submit(sub, 151); }), CampaignError::Code::expired);
  EXPECT_EQ(host.progress().at("outstanding_leases"), 1);
}

TEST(campaign, event_and_task_json_round_trip) {
  Event e{3, 12.5, EventKind::task_issued, {{"x", 1}}};
  EXPECT_EQ(event_from_json(to_json(e)), e);
  EXPECT_THROW(event_kind_from_string("deleted"), CampaignError);
  Task t{"l1", "w", 1, 2, BwsQuery{"q", {"a", "b"}, std::nullopt, std::nullopt, "", QueryKind::small_bucket}, {}};
  EXPECT_EQ(task_from_json(to_json(t)), t);
  Task s{"l2", "w", 1, 2, std::nullopt, {"a", "b"}};
  EXPECT_EQ(task_from_json(to_json(s)), s);
  auto p = ProtocolKind::parse("dual_vas");
  Submission sub{"l2", "w", std::nullopt, {{"a", DualRating{Polarity::positive, 0.25}, 3}}};
  auto back = submission_from_json(to_json(sub), p);
  EXPECT_EQ(to_json(back), to_json(sub));
}

TEST(campaign, replay_matches_live) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    auto cfg = seed % 2 ? small_ibws_config(seed) : small_scalar_config(seed);
    CampaignService svc;
    double clock = 0;
    auto& host = svc.get(svc.create(cfg));
    auto log = random_session(host, cfg, seed, clock);
    auto events = host.events();
    auto replayed = Campaign::replay(events);
    EXPECT_EQ(replayed.to_json().dump(), host.state().dump()) << seed;
    EXPECT_EQ(replayed.progress().dump(), host.progress().dump()) << seed;
    if (log.completed) {
      EXPECT_EQ(replayed.results().dump(), host.results().dump()) << seed;
    }
    EXPECT_EQ(replayed.answered(), log.acked.size()) << seed;
  }
}

TEST(campaign, sessions_complete) {
  int completed = 0, rejected = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto cfg = seed % 2 ? small_ibws_config(seed) : small_scalar_config(seed);
    CampaignService svc;
    double clock = 0;
    auto log = random_session(svc.get(svc.create(cfg)), cfg, seed, clock, 5000);
    completed += log.completed;
    rejected += log.rejected;
  }
  EXPECT_EQ(completed, 20);
  EXPECT_GT(rejected, 0);
}

TEST(campaign, snapshot_plus_suffix_equals_replay) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto cfg = seed % 2 ? small_ibws_config(seed) : small_scalar_config(seed);
    CampaignService svc;
    double clock = 0;
    auto& host = svc.get(svc.create(cfg));
    random_session(host, cfg, seed, clock);
    auto events = host.events();
    auto full = Campaign::replay(events).to_json().dump();
    for (std::size_t cut = 1; cut <= events.size(); ++cut) {
      auto prefix = Campaign::replay(std::span<const Event>(events.data(), cut));
      auto resumed = Campaign::from_json(nlohmann::json::parse(prefix.to_json().dump()));
      for (std::size_t i = cut; i < events.size(); ++i) resumed.apply(events[i]);
      ASSERT_EQ(resumed.to_json().dump(), full) << seed << " cut " << cut;
    }
  }
}

TEST(campaign, tampered_log_is_rejected) {
  auto cfg = small_ibws_config(2);
  CampaignService svc;
  double clock = 0;
  auto& host = svc.get(svc.create(cfg));
  random_session(host, cfg, 2, clock);
  auto events = host.events();
  auto bad = events;
  for (auto& e : bad) {
    if (e.kind == EventKind::task_issued) {
      e.payload["task"]["worker_id"] = "mallory";
      break;
    }
  }
  EXPECT_THROW(Campaign::replay(bad), CampaignError);
  auto gap = events;
  gap.erase(gap.begin() + 1);
  EXPECT_THROW(Campaign::replay(gap), CampaignError);
}

TEST(campaign, persistent_service_survives_restart) {
  auto dir = fresh_dir("restart");
  double clock = 0;
  std::string state, id;
  std::vector<std::string> acked;
  auto cfg = small_scalar_config(3);
  {
    CampaignService svc(dir, [&] { return clock; }, 7);
    id = svc.create(cfg);
    auto log = random_session(svc.get(id), cfg, 3, clock, 60);
    acked = log.acked;
    state = svc.get(id).state().dump();
  }
  EXPECT_TRUE(std::filesystem::exists(dir / (id + ".snapshot.json")));
  CampaignService again(dir, [&] { return clock; }, 7);
  EXPECT_EQ(again.get(id).state().dump(), state);
  EXPECT_EQ(again.get(id).events().size(), lines_of(read_file(dir / (id + ".events.jsonl"))).size());
  EXPECT_EQ(again.create(cfg), "c2");
  std::filesystem::remove_all(dir);
}

TEST(campaign, crash_at_every_event_boundary) {
  auto dir = fresh_dir("crash");
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    auto cfg = seed % 2 ? small_ibws_config(seed) : small_scalar_config(seed);
    double clock = 0;
    CampaignService svc(dir / "live", [&] { return clock; }, 5);
    auto id = svc.create(cfg);
    random_session(svc.get(id), cfg, seed, clock, 200);
    auto events = svc.get(id).events();
    auto lines = lines_of(read_file(dir / "live" / (id + ".events.jsonl")));
    ASSERT_EQ(lines.size(), events.size());
    for (std::size_t cut = 1; cut <= events.size(); ++cut) {
      // the disk as it stood right after event `cut` became durable
      auto crash = dir / "crash";
      std::filesystem::remove_all(crash);
      std::filesystem::create_directories(crash);
      std::string text;
      for (std::size_t i = 0; i < cut; ++i) text += lines[i] + "\n";
      write_file(crash / (id + ".events.jsonl"), text);
      auto truth = Campaign::replay(std::span<const Event>(events.data(), cut));
      auto [rec, log] = EventLog::recover(crash, id, 5);
      ASSERT_EQ(rec.to_json().dump(), truth.to_json().dump()) << seed << " cut " << cut;
      std::size_t responses = 0;
      for (std::size_t i = 0; i < cut; ++i) responses += events[i].kind == EventKind::response;
      ASSERT_EQ(rec.answered(), responses);

      // a torn half-line after the boundary is dropped
      if (cut < lines.size()) {
        write_file(crash / (id + ".events.jsonl"), text + lines[cut].substr(0, lines[cut].size() / 2));
        auto [torn, tlog] = EventLog::recover(crash, id, 5);
        ASSERT_EQ(torn.to_json().dump(), truth.to_json().dump());
        ASSERT_EQ(read_file(crash / (id + ".events.jsonl")), text);
      }
    }
    std::filesystem::remove_all(dir / "live");
  }
  std::filesystem::remove_all(dir);
}

TEST(campaign, corrupt_middle_line_is_an_error) {
  auto dir = fresh_dir("corrupt");
  double clock = 0;
  auto cfg = small_ibws_config(4);
  std::string id;
  {
    CampaignService svc(dir, [&] { return clock; });
    id = svc.create(cfg);
    random_session(svc.get(id), cfg, 4, clock, 30);
  }
  auto path = dir / (id + ".events.jsonl");
  auto lines = lines_of(read_file(path));
  ASSERT_GT(lines.size(), 3u);
  lines[1] = "{not json";
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  write_file(path, text);
  EXPECT_THROW(EventLog::recover(dir, id, 100), CampaignError);
  std::filesystem::remove_all(dir);
}
