#include "ibws/ltr.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "gtest/gtest.h"
#include "ibws/metrics.hpp"

using namespace ibws;

namespace {

AnnotatedSample sample(const std::string& id, double score, std::vector<double> phi,
                       const std::string& worker = "w", std::optional<std::string> hit = {}) {
  return {id, score, worker, hit, std::nullopt, std::move(phi)};
}

std::set<std::pair<std::string, std::string>> by_id(const std::vector<AnnotatedSample>& s,
                                                    const std::vector<TrainingPair>& pairs) {
  std::set<std::pair<std::string, std::string>> out;
  for (const auto& p : pairs) out.insert({s[p.higher].item_id, s[p.lower].item_id});
  return out;
}

// Loss as a function of a flattened parameter vector (weights..., offset).
double loss_at(const std::vector<double>& theta, const AnnotatedSample& a,
               const AnnotatedSample& b, const HingeConfig& cfg) {
  LinearRanker f(theta.size() - 1);
  std::copy(theta.begin(), theta.end() - 1, f.weights.begin());
  f.offset = theta.back();
  return hinge_loss(a, b, f, cfg);
}

void check_subgradient(LossForm form, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  HingeConfig cfg;
  cfg.form = form;
  const std::size_t dim = 4;
  int checked = 0;
  while (checked < 100) {
    std::vector<double> p1(dim), p2(dim), theta(dim + 1);
    for (auto& v : p1) v = z(rng);
    for (auto& v : p2) v = z(rng);
    for (auto& v : theta) v = z(rng);
    double s1 = u(rng), s2 = u(rng);
    if (s1 < s2) std::swap(s1, s2);
    cfg.margin = 0.5 + 2 * u(rng);
    auto a = sample("a", s1, p1), b = sample("b", s2, p2);
    LinearRanker f(dim);
    std::copy(theta.begin(), theta.end() - 1, f.weights.begin());
    f.offset = theta.back();
    // distance from the kink, measured on the hinge argument
    double inner = form == LossForm::corrected
                       ? (s1 - s2) - cfg.margin * (f.score(p1) - f.score(p2))
                       : s2 - s1 + cfg.margin * (f.score(p1) - f.score(p2));
    if (std::abs(inner) < 1e-3) continue;
    std::vector<double> gw(dim);
    double gb = 0;
    hinge_subgradient(a, b, f, cfg, gw, gb);
    const double h = 1e-6;
    for (std::size_t i = 0; i <= dim; ++i) {
      auto up = theta, down = theta;
      up[i] += h;
      down[i] -= h;
      double fd = (loss_at(up, a, b, cfg) - loss_at(down, a, b, cfg)) / (2 * h);
      double analytic = i < dim ? gw[i] : gb;
      ASSERT_NEAR(analytic, fd, 1e-4) << to_string(form) << " point " << checked << " coord " << i;
    }
    ++checked;
  }
}

}  // namespace

TEST(ltr, global_pair_count) {
  std::vector<AnnotatedSample> s = {sample("a", 0.1, {0}), sample("b", 0.2, {0}),
                                    sample("c", 0.3, {0}), sample("d", 0.4, {0})};
  auto pairs = generate_pairs(s, PairStrategy::parse("global", 2), 1);
  EXPECT_EQ(pairs.size(), 8u);
  for (const auto& p : pairs) {
    EXPECT_NE(p.higher, p.lower);
    EXPECT_GT(s[p.higher].score, s[p.lower].score);
  }
  EXPECT_THROW(generate_pairs(s, PairStrategy::parse("global", 4), 1), TrainingError);
  EXPECT_THROW(generate_pairs(s, PairStrategy::parse("global", 0), 1), TrainingError);
}

TEST(ltr, global_partners_distinct_per_anchor) {
  std::vector<AnnotatedSample> s;
  for (int i = 0; i < 30; ++i) s.push_back(sample("i" + std::to_string(i), i / 30.0, {0}));
  auto pairs = generate_pairs(s, PairStrategy::parse("global", 29), 4);
  // k = n - 1 pairs every anchor with everybody else exactly once
  EXPECT_EQ(pairs.size(), 30u * 29u);
  std::map<std::pair<std::size_t, std::size_t>, int> seen;
  for (const auto& p : pairs) ++seen[{p.higher, p.lower}];
  EXPECT_EQ(seen.size(), 30u * 29u / 2);
  for (const auto& [k, c] : seen) EXPECT_EQ(c, 2);
}

TEST(ltr, per_hit_pairs_stay_in_hit) {
  std::vector<AnnotatedSample> s;
  for (int h = 0; h < 2; ++h) {
    for (int i = 0; i < 5; ++i) {
      s.push_back(sample("h" + std::to_string(h) + "i" + std::to_string(i), (i + 1) / 10.0 + h * 0.01,
                         {0}, "w", "hit" + std::to_string(h)));
    }
  }
  auto pairs = generate_pairs(s, PairStrategy::parse("per_hit"), 0);
  EXPECT_EQ(pairs.size(), 20u);
  for (const auto& p : pairs) {
    EXPECT_EQ(s[p.higher].hit_id, s[p.lower].hit_id);
    EXPECT_GT(s[p.higher].score, s[p.lower].score);
  }
  s[3].hit_id.reset();
  EXPECT_THROW(generate_pairs(s, PairStrategy::parse("per_hit"), 0), TrainingError);
  EXPECT_THROW(generate_pairs(s, PairStrategy::parse("per_context"), 0), TrainingError);
  EXPECT_THROW(PairStrategy::parse("per_item"), TrainingError);
}

TEST(ltr, equal_scores_emit_nothing) {
  std::vector<AnnotatedSample> s = {sample("a", 0.5, {0}, "w", "h"), sample("b", 0.5, {1}, "w", "h")};
  EXPECT_TRUE(generate_pairs(s, PairStrategy::parse("per_hit"), 0).empty());
  EXPECT_TRUE(generate_pairs(s, PairStrategy::parse("global", 1), 0).empty());
}

TEST(ltr, grouped_strategies_permutation_invariant) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<AnnotatedSample> s;
  for (int i = 0; i < 40; ++i) {
    auto x = sample("i" + std::to_string(i), u(rng), {0}, "w" + std::to_string(i % 4),
                    "h" + std::to_string(i % 7));
    x.context_id = "c" + std::to_string(i % 3);
    s.push_back(x);
  }
  for (const char* name : {"per_hit", "per_worker", "per_context"}) {
    auto base = by_id(s, generate_pairs(s, PairStrategy::parse(name), 0));
    auto shuffled = s;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    EXPECT_EQ(by_id(shuffled, generate_pairs(shuffled, PairStrategy::parse(name), 0)), base) << name;
  }
}

TEST(ltr, hinge_examples) {
  EXPECT_NEAR(hinge_loss(0.8, 0.3, 0.6, 0.6, 1.0, LossForm::corrected), 0.5, 1e-15);
  EXPECT_EQ(hinge_loss(0.8, 0.3, 0.75, 0.5, 2.0, LossForm::corrected), 0.0);
  EXPECT_EQ(hinge_loss(0.8, 0.3, 0.6, 0.6, 1.0, LossForm::literal), 0.0);
  EXPECT_NEAR(hinge_loss(0.8, 0.3, 0.9, 0.1, 1.0, LossForm::literal), 0.3, 1e-15);
}

TEST(ltr, loss_monotone_in_model_gap) {
  for (double gap = -1.0; gap < 1.0; gap += 0.01) {
    double f1 = 0.5 + gap / 2, f2 = 0.5 - gap / 2;
    double g1 = 0.5 + (gap + 0.01) / 2, g2 = 0.5 - (gap + 0.01) / 2;
    EXPECT_LE(hinge_loss(0.7, 0.2, g1, g2, 1.5, LossForm::corrected),
              hinge_loss(0.7, 0.2, f1, f2, 1.5, LossForm::corrected));
    EXPECT_GE(hinge_loss(0.7, 0.2, g1, g2, 1.5, LossForm::literal),
              hinge_loss(0.7, 0.2, f1, f2, 1.5, LossForm::literal));
  }
}

TEST(ltr, subgradient_matches_finite_differences) {
  check_subgradient(LossForm::corrected, 1);
  check_subgradient(LossForm::literal, 2);
}

TEST(ltr, zero_epochs_returns_initial) {
  std::vector<AnnotatedSample> s = {sample("a", 0.9, {1, 2}), sample("b", 0.1, {3, 4})};
  std::vector<TrainingPair> pairs{{0, 1}};
  HingeConfig cfg;
  cfg.epochs = 0;
  auto r = train(s, pairs, 2, cfg);
  EXPECT_EQ(r.ranker.weights, (std::vector<double>{0, 0}));
  EXPECT_EQ(r.ranker.offset, 0.0);
  EXPECT_TRUE(r.loss_trace.empty());
}

TEST(ltr, train_errors) {
  std::vector<AnnotatedSample> s = {sample("a", 0.9, {1, 2}), sample("b", 0.1, {3})};
  std::vector<TrainingPair> pairs{{0, 1}};
  HingeConfig cfg;
  EXPECT_THROW(train(s, pairs, 2, cfg), TrainingError);
  s[1].features = {3, 4};
  EXPECT_THROW(train(s, {}, 2, cfg), TrainingError);
  std::vector<TrainingPair> dangling{{0, 5}};
  EXPECT_THROW(train(s, dangling, 2, cfg), TrainingError);
  cfg.margin = 0;
  EXPECT_THROW(train(s, pairs, 2, cfg), TrainingError);
}

TEST(ltr, truth_feature_generalizes) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  std::normal_distribution<double> noise(0, 0.1);
  std::vector<AnnotatedSample> tr;
  for (int i = 0; i < 400; ++i) {
    double t = u(rng);
    tr.push_back(sample("t" + std::to_string(i), std::clamp(t + noise(rng), 0.0, 1.0), {t}));
  }
  auto pairs = generate_pairs(tr, PairStrategy::parse("global", 3), 3);
  HingeConfig cfg;
  cfg.epochs = 5;
  auto r = train(tr, pairs, 1, cfg);
  std::vector<std::vector<double>> held;
  std::vector<double> ref;
  for (int i = 0; i < 200; ++i) {
    double t = u(rng);
    held.push_back({t});
    ref.push_back(t);
  }
  EXPECT_GE(evaluate(r.ranker, held, ref), 0.95);
  EXPECT_GT(r.ranker.weights[0], 0.0);

  HingeConfig lit = cfg;
  lit.form = LossForm::literal;
  auto wrong = train(tr, pairs, 1, lit);
  // literal loss is already zero at the origin, so it never learns the order
  EXPECT_LE(wrong.ranker.weights[0], 0.0);
  EXPECT_EQ(wrong.loss_trace.front(), 0.0);
}

TEST(ltr, loss_trace_non_increasing_on_separable_data) {
  std::vector<AnnotatedSample> s;
  for (int i = 0; i < 50; ++i) s.push_back(sample("i" + std::to_string(i), i / 50.0, {i / 50.0 - 0.5}));
  auto pairs = generate_pairs(s, PairStrategy::parse("global", 5), 0);
  HingeConfig cfg;
  cfg.epochs = 30;
  cfg.learning_rate = 0.05;
  auto r = train(s, pairs, 1, cfg);
  for (std::size_t e = 1; e < r.loss_trace.size(); ++e) {
    EXPECT_LE(r.loss_trace[e], r.loss_trace[e - 1] + 1e-12) << e;
  }
}

TEST(ltr, deterministic_given_seed) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<AnnotatedSample> s;
  for (int i = 0; i < 60; ++i) s.push_back(sample("i" + std::to_string(i), u(rng), {u(rng), u(rng)}));
  auto pairs = generate_pairs(s, PairStrategy::parse("global", 2), 1);
  HingeConfig cfg;
  cfg.seed = 4;
  auto a = train(s, pairs, 2, cfg), b = train(s, pairs, 2, cfg);
  EXPECT_EQ(a.ranker.weights, b.ranker.weights);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
}

TEST(ltr, evaluate_edge_cases) {
  LinearRanker f(1);
  f.weights = {2.0};
  std::vector<std::vector<double>> phi{{0.1}, {0.4}, {0.3}};
  std::vector<double> ref{1, 3, 2};
  EXPECT_DOUBLE_EQ(evaluate(f, phi, ref), 1.0);
  LinearRanker flat(1);
  EXPECT_THROW(evaluate(flat, phi, ref), MetricError);
  std::vector<double> short_ref{1, 2};
  EXPECT_THROW(evaluate(f, phi, short_ref), MetricError);
}

TEST(ltr, ranker_and_features_io) {
  LinearRanker f(3);
  f.weights = {0.1, -2.5, 1.0 / 3};
  f.offset = 0.25;
  auto back = ranker_from_json(nlohmann::json::parse(to_json(f).dump()));
  EXPECT_EQ(back.weights, f.weights);
  EXPECT_EQ(back.offset, f.offset);
  EXPECT_THROW(ranker_from_json(nlohmann::json{{"offset", 1}}), std::runtime_error);

  HingeConfig cfg;
  cfg.margin = 2;
  cfg.form = LossForm::literal;
  auto c = hinge_config_from_json(to_json(cfg));
  EXPECT_EQ(c.form, LossForm::literal);
  EXPECT_EQ(c.margin, 2);

  auto path = std::filesystem::temp_directory_path() / "ibws_features.csv";
  std::map<std::string, std::vector<double>> feats{{"a", {0.1, 0.2}}, {"b", {1e-9, -3}}};
  save_features(path, feats);
  EXPECT_EQ(load_features(path), feats);
  std::filesystem::remove(path);
}
