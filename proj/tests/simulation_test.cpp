#include "ibws/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "gtest/gtest.h"

using namespace ibws;

namespace {

double phi(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI); }
double Phi(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// E[clamp(X, 0, 1)] for X ~ N(mu, sigma^2).
double clamped_normal_mean(double mu, double sigma) {
  double a = (0 - mu) / sigma, b = (1 - mu) / sigma;
  double inside = mu * (Phi(b) - Phi(a)) + sigma * (phi(a) - phi(b));
  return inside + (1 - Phi(b));
}

SimConfig scalar_config(int n, const std::string& proto, int redundancy, std::uint64_t seed,
                        double sigma = 0.1, int workers = 20) {
  SimConfig cfg;
  cfg.items = synthetic_items(n, seed);
  cfg.workers = uniform_pool(workers, sigma);
  cfg.mode = ScalarSimMode{ProtocolKind::parse(proto), redundancy, 5};
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(simulation, perceive_noiseless_identity) {
  std::mt19937_64 rng(0);
  WorkerProfile p{"w", 1.0, 0.0, 0.0, 0.0};
  for (double t : {0.0, 0.13, 0.5, 0.99, 1.0}) EXPECT_EQ(perceive(t, p, rng), t);
}

TEST(simulation, perceive_reflection) {
  std::mt19937_64 rng(0);
  WorkerProfile p{"w", 1.0, 0.0, 0.0, 1.0};
  EXPECT_NEAR(perceive(0.9, p, rng), 0.1, 1e-12);
}

TEST(simulation, perceive_clamps) {
  std::mt19937_64 rng(0);
  WorkerProfile p{"w", 2.0, 0.3, 0.0, 0.0};
  EXPECT_EQ(perceive(0.9, p, rng), 1.0);
  p.bias_b = -0.5;
  EXPECT_EQ(perceive(0.1, p, rng), 0.0);
}

TEST(simulation, perceive_mean_monte_carlo) {
  struct Case {
    double a, b, sigma, t;
  };
  for (const auto& c : {Case{0.8, 0.1, 0.1, 0.5}, Case{1.0, 0.0, 0.2, 0.9}, Case{1.2, -0.1, 0.3, 0.1}}) {
    std::mt19937_64 rng(42);
    WorkerProfile p{"w", c.a, c.b, c.sigma, 0.0};
    const int draws = 100000;
    double sum = 0, sq = 0;
    for (int i = 0; i < draws; ++i) {
      double v = perceive(c.t, p, rng);
      sum += v;
      sq += v * v;
    }
    double mean = sum / draws;
    double se = std::sqrt((sq / draws - mean * mean) / draws);
    double expected = clamped_normal_mean(c.a * c.t + c.b, c.sigma);
    EXPECT_LE(std::abs(mean - expected), 3 * se) << c.t;
  }
}

TEST(simulation, noiseless_bws) {
  std::mt19937_64 rng(1);
  BwsQuery q{"q0", {"a", "b", "c", "d"}, std::nullopt, std::nullopt, "", QueryKind::pivot_seed};
  std::map<std::string, double> t{{"a", 0.9}, {"b", 0.1}, {"c", 0.95}, {"d", 0.05}};
  WorkerProfile p{"w", 1.0, 0.0, 0.0, 0.0};
  auto r = simulate_bws(q, t, p, rng);
  EXPECT_EQ(r.best, "c");
  EXPECT_EQ(r.worst, "d");
  EXPECT_EQ(*r.full_order, (std::vector<std::string>{"c", "a", "b", "d"}));
  EXPECT_EQ(r.worker_id, "w");
  EXPECT_GT(r.duration, 0.0);

  auto two = simulate_bws(q, t, p, rng, BwsInterface::two_column);
  EXPECT_FALSE(two.full_order);
  EXPECT_EQ(two.best, "c");

  p.inversion_rate = 1.0;
  auto inv = simulate_bws(q, t, p, rng);
  EXPECT_EQ(inv.best, "d");
  EXPECT_EQ(inv.worst, "c");
}

TEST(simulation, huge_noise_best_is_uniform) {
  std::mt19937_64 rng(7);
  BwsQuery q{"q0", {"a", "b", "c", "d"}, std::nullopt, std::nullopt, "", QueryKind::pivot_seed};
  std::map<std::string, double> t{{"a", 0.9}, {"b", 0.1}, {"c", 0.95}, {"d", 0.05}};
  WorkerProfile p{"w", 1.0, 0.0, 1e6, 0.0};
  std::map<std::string, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[simulate_bws(q, t, p, rng).best];
  double chi2 = 0;
  for (const auto& id : q.item_ids) {
    double e = draws / 4.0;
    chi2 += (counts[id] - e) * (counts[id] - e) / e;
  }
  // chi-square, 3 degrees of freedom, upper 1% point
  EXPECT_LT(chi2, 11.345);
}

TEST(simulation, noiseless_bws_matches_sort_on_every_query) {
  SimConfig cfg;
  cfg.items = synthetic_items(120, 5);
  cfg.workers = uniform_pool(5, 0.0);
  cfg.mode = IbwsSimMode{3, BwsInterface::vertical_drag};
  cfg.seed = 5;
  auto ds = run_campaign(cfg);
  auto t = truth_map(cfg.items);
  ASSERT_EQ(ds.queries.size(), ds.bws_responses.size());
  for (std::size_t i = 0; i < ds.queries.size(); ++i) {
    auto ids = ds.queries[i].item_ids;
    std::sort(ids.begin(), ids.end(), [&](const auto& a, const auto& b) { return t[a] > t[b]; });
    EXPECT_EQ(*ds.bws_responses[i].full_order, ids);
  }
}

TEST(simulation, ibws_noiseless_end_to_end) {
  SimConfig cfg;
  cfg.items = synthetic_items(200, 11);
  cfg.workers = uniform_pool(10, 0.0);
  cfg.mode = IbwsSimMode{3, BwsInterface::vertical_drag};
  cfg.seed = 11;
  auto ds = run_campaign(cfg);
  auto t = truth_map(cfg.items);
  ASSERT_EQ(ds.scores.size(), 200u);
  EXPECT_EQ(ds.queries.size(), query_count(cfg.items, 3, 11));
  // no discordant pair: a higher bucket never holds a lower truth
  for (const auto& [a, sa] : ds.scores) {
    for (const auto& [b, sb] : ds.scores) {
      if (sa < sb) {
        EXPECT_LT(t[a], t[b]);
      }
    }
  }
}

TEST(simulation, scalar_counts) {
  auto ds = run_campaign(scalar_config(100, "single_slider", 10, 3));
  EXPECT_EQ(ds.scalar_responses.size(), 1000u);
  std::map<std::string, std::set<std::string>> workers;
  for (const auto& r : ds.scalar_responses) workers[r.item_id].insert(r.worker_id);
  for (const auto& [id, ws] : workers) EXPECT_EQ(ws.size(), 10u) << id;

  auto one = run_campaign(scalar_config(37, "dual_vas", 1, 4));
  EXPECT_EQ(one.scalar_responses.size(), 37u);
  std::map<std::string, std::set<std::string>> hits;
  for (const auto& r : one.scalar_responses) hits[r.hit_id].insert(r.item_id);
  for (const auto& [h, items] : hits) EXPECT_LE(items.size(), 5u);
  EXPECT_EQ(hits.size(), 8u);
}

TEST(simulation, deterministic) {
  auto a = run_campaign(scalar_config(40, "single_ordinal7", 3, 9));
  auto b = run_campaign(scalar_config(40, "single_ordinal7", 3, 9));
  EXPECT_EQ(a.scalar_responses, b.scalar_responses);
  auto c = run_campaign(scalar_config(40, "single_ordinal7", 3, 10));
  EXPECT_NE(a.scalar_responses, c.scalar_responses);

  SimConfig cfg;
  cfg.items = synthetic_items(60, 2);
  cfg.workers = uniform_pool(8, 0.2);
  cfg.mode = IbwsSimMode{3, BwsInterface::two_column};
  cfg.seed = 2;
  auto x = run_campaign(cfg);
  auto y = run_campaign(cfg);
  EXPECT_EQ(x.bws_responses, y.bws_responses);
  EXPECT_EQ(x.scores, y.scores);
}

TEST(simulation, quantization_round_trip) {
  const std::map<std::string, double> bound = {
      {"single_ordinal7", 1.0 / 12}, {"single_slider", 0.005}, {"single_vas", 1e-12},
      {"dual_ordinal7", 1.0 / 12},   {"dual_slider", 0.005},   {"dual_vas", 1e-12}};
  for (const auto& [name, tol] : bound) {
    auto p = ProtocolKind::parse(name);
    for (int i = 0; i <= 1000; ++i) {
      double t = i / 1000.0;
      ScalarResponse r{"i", "w", p, quantize(t, p), 1.0, ""};
      ASSERT_NO_THROW(validate(r)) << name << " " << t;
      EXPECT_LE(std::abs(to_unit_scale(r) - t), tol + 1e-12) << name << " " << t;
    }
  }
}

TEST(simulation, config_validation_and_json) {
  auto cfg = scalar_config(10, "dual_slider", 3, 1);
  auto back = sim_config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));

  auto bad = cfg;
  std::get<ScalarSimMode>(bad.mode).redundancy = 0;
  EXPECT_THROW(validate(bad), std::invalid_argument);
  bad = cfg;
  bad.items[0].truth.reset();
  EXPECT_THROW(validate(bad), std::invalid_argument);
  bad = cfg;
  bad.workers[0].scale_a = 0;
  EXPECT_THROW(validate(bad), std::invalid_argument);
  bad = cfg;
  bad.workers.resize(2);
  EXPECT_THROW(validate(bad), std::invalid_argument);
  bad = cfg;
  bad.mode = IbwsSimMode{0, BwsInterface::vertical_drag};
  EXPECT_THROW(validate(bad), std::invalid_argument);
}

TEST(simulation, durations_positive) {
  std::mt19937_64 rng(0);
  for (const auto& p : ProtocolKind::all()) {
    for (int i = 0; i < 100; ++i) EXPECT_GT(simulated_duration(p, rng), 0.0);
  }
}
