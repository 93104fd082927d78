#include "ibws/ltr.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ibws/io.hpp"
#include "ibws/metrics.hpp"

namespace ibws {

using nlohmann::json;

std::string PairStrategy::name() const {
  switch (kind) {
    case Kind::global: return "global";
    case Kind::per_hit: return "per_hit";
    case Kind::per_worker: return "per_worker";
    case Kind::per_context: return "per_context";
  }
  return "?";
}

PairStrategy PairStrategy::parse(const std::string& name, int k) {
  if (name == "global") return {Kind::global, k};
  if (name == "per_hit") return {Kind::per_hit, k};
  if (name == "per_worker") return {Kind::per_worker, k};
  if (name == "per_context") return {Kind::per_context, k};
  throw TrainingError("unknown pair strategy '" + name + "'");
}

namespace {

void emit(std::span<const AnnotatedSample> s, std::size_t a, std::size_t b,
          std::vector<TrainingPair>& out) {
  if (s[a].score > s[b].score) {
    out.push_back({a, b});
  } else if (s[b].score > s[a].score) {
    out.push_back({b, a});
  }
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

std::vector<TrainingPair> generate_pairs(std::span<const AnnotatedSample> samples,
                                         const PairStrategy& strategy, std::uint64_t seed) {
  std::vector<TrainingPair> out;
  const std::size_t n = samples.size();
  if (strategy.kind == PairStrategy::Kind::global) {
    if (strategy.k < 1) throw TrainingError("global strategy needs k >= 1");
    if (n < 2) return out;
    const auto k = static_cast<std::size_t>(strategy.k);
    if (k > n - 1) throw TrainingError("k exceeds the number of possible partners");
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> others(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
      // candidates 0..n-1 except i
      std::iota(others.begin(), others.end(), 0);
      for (std::size_t j = i; j < n - 1; ++j) others[j] = j + 1;
      for (std::size_t t = 0; t < k; ++t) {
        std::uniform_int_distribution<std::size_t> d(t, others.size() - 1);
        std::swap(others[t], others[d(rng)]);
        emit(samples, i, others[t], out);
      }
    }
    return out;
  }

  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = samples[i];
    const std::string* key = nullptr;
    switch (strategy.kind) {
      case PairStrategy::Kind::per_hit:
        if (!s.hit_id) throw TrainingError("sample '" + s.item_id + "' has no hit id");
        key = &*s.hit_id;
        break;
      case PairStrategy::Kind::per_worker:
        if (s.worker_id.empty()) throw TrainingError("sample '" + s.item_id + "' has no worker id");
        key = &s.worker_id;
        break;
      case PairStrategy::Kind::per_context:
        if (!s.context_id) throw TrainingError("sample '" + s.item_id + "' has no context id");
        key = &*s.context_id;
        break;
      case PairStrategy::Kind::global: break;
    }
    groups[*key].push_back(i);
  }
  for (const auto& [key, members] : groups) {
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) emit(samples, members[a], members[b], out);
    }
  }
  return out;
}

double LinearRanker::logit(std::span<const double> features) const {
  if (features.size() != weights.size()) throw TrainingError("feature dimension mismatch");
  double z = offset;
  for (std::size_t i = 0; i < weights.size(); ++i) z += weights[i] * features[i];
  return z;
}

double LinearRanker::score(std::span<const double> features) const {
  return sigmoid(logit(features));
}

void validate(const HingeConfig& cfg) {
  if (!(cfg.margin > 0.0)) throw TrainingError("margin must be > 0");
  if (!(cfg.learning_rate > 0.0)) throw TrainingError("learning rate must be > 0");
  if (cfg.epochs < 0) throw TrainingError("epochs must be >= 0");
}

std::string to_string(LossForm f) { return f == LossForm::corrected ? "corrected" : "literal"; }

LossForm loss_form_from_string(const std::string& s) {
  if (s == "corrected") return LossForm::corrected;
  if (s == "literal") return LossForm::literal;
  throw TrainingError("unknown loss form '" + s + "'");
}

double hinge_loss(double s1, double s2, double f1, double f2, double margin, LossForm form) {
  const double gap = margin * (f1 - f2);
  if (form == LossForm::corrected) return std::max(0.0, (s1 - s2) - gap);
  return std::max(0.0, s2 - s1 + gap);
}

double hinge_loss(const AnnotatedSample& r1, const AnnotatedSample& r2, const LinearRanker& f,
                  const HingeConfig& cfg) {
  return hinge_loss(r1.score, r2.score, f.score(r1.features), f.score(r2.features), cfg.margin,
                    cfg.form);
}

double hinge_subgradient(const AnnotatedSample& r1, const AnnotatedSample& r2,
                         const LinearRanker& f, const HingeConfig& cfg,
                         std::span<double> grad_weights, double& grad_offset) {
  const double f1 = f.score(r1.features);
  const double f2 = f.score(r2.features);
  const double loss = hinge_loss(r1.score, r2.score, f1, f2, cfg.margin, cfg.form);
  std::fill(grad_weights.begin(), grad_weights.end(), 0.0);
  grad_offset = 0.0;
  if (loss <= 0.0) return loss;
  // d loss / d (f1 - f2)
  const double outer = cfg.form == LossForm::corrected ? -cfg.margin : cfg.margin;
  const double d1 = f1 * (1.0 - f1);
  const double d2 = f2 * (1.0 - f2);
  for (std::size_t i = 0; i < grad_weights.size(); ++i) {
    grad_weights[i] = outer * (d1 * r1.features[i] - d2 * r2.features[i]);
  }
  grad_offset = outer * (d1 - d2);
  return loss;
}

double mean_loss(std::span<const AnnotatedSample> samples, std::span<const TrainingPair> pairs,
                 const LinearRanker& f, const HingeConfig& cfg) {
  if (pairs.empty()) return 0.0;
  double total = 0;
  for (const auto& p : pairs) total += hinge_loss(samples[p.higher], samples[p.lower], f, cfg);
  return total / static_cast<double>(pairs.size());
}

TrainResult train(std::span<const AnnotatedSample> samples, std::span<const TrainingPair> pairs,
                  std::size_t dim, const HingeConfig& cfg) {
  validate(cfg);
  if (pairs.empty()) throw TrainingError("no training pairs");
  for (const auto& s : samples) {
    if (s.features.size() != dim) {
      throw TrainingError("sample '" + s.item_id + "' has " + std::to_string(s.features.size()) +
                          " features, expected " + std::to_string(dim));
    }
  }
  for (const auto& p : pairs) {
    if (p.higher >= samples.size() || p.lower >= samples.size()) {
      throw TrainingError("pair references a missing sample");
    }
  }
  TrainResult res{LinearRanker(dim), {}};
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> gw(dim);
  double gb = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      const auto& p = pairs[idx];
      hinge_subgradient(samples[p.higher], samples[p.lower], res.ranker, cfg, gw, gb);
      for (std::size_t i = 0; i < dim; ++i) res.ranker.weights[i] -= cfg.learning_rate * gw[i];
      res.ranker.offset -= cfg.learning_rate * gb;
    }
    double loss = mean_loss(samples, pairs, res.ranker, cfg);
    if (!std::isfinite(loss)) throw TrainingError("non-finite loss at epoch " + std::to_string(epoch));
    res.loss_trace.push_back(loss);
  }
  return res;
}

double evaluate(const LinearRanker& f, std::span<const std::vector<double>> features,
                std::span<const double> reference) {
  if (features.size() != reference.size()) throw MetricError("reference length mismatch");
  std::vector<double> scores;
  scores.reserve(features.size());
  // Spearman only needs the order, and the logit avoids saturation ties.
  for (const auto& phi : features) scores.push_back(f.logit(phi));
  return spearman_rho(scores, reference);
}

double evaluate(const LinearRanker& f, std::span<const AnnotatedSample> samples,
                std::span<const double> reference) {
  std::vector<std::vector<double>> features;
  features.reserve(samples.size());
  for (const auto& s : samples) features.push_back(s.features);
  return evaluate(f, features, reference);
}

std::map<std::string, std::vector<double>> load_features(const std::filesystem::path& path) {
  Table t = read_table(path);
  int id = t.require_column("item_id");
  std::map<std::string, std::vector<double>> out;
  for (const auto& r : t.rows) {
    std::vector<double> phi;
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (static_cast<int>(j) != id) phi.push_back(parse_double(r[j]));
    }
    if (!out.emplace(r[id], std::move(phi)).second) {
      throw FormatError("duplicate feature row for '" + r[id] + "'");
    }
  }
  return out;
}

void save_features(const std::filesystem::path& path,
                   const std::map<std::string, std::vector<double>>& features) {
  Table t;
  t.header = {"item_id"};
  std::size_t dim = features.empty() ? 0 : features.begin()->second.size();
  for (std::size_t j = 0; j < dim; ++j) t.header.push_back("f" + std::to_string(j + 1));
  for (const auto& [id, phi] : features) {
    CsvRow row{id};
    for (double v : phi) row.push_back(format_double(v));
    t.rows.push_back(std::move(row));
  }
  write_table(path, t);
}

json to_json(const LinearRanker& f) {
  return {{"schema", "ibws.ranker/v1"}, {"weights", f.weights}, {"offset", f.offset},
          {"output", "logistic"}};
}

LinearRanker ranker_from_json(const json& j) {
  try {
    LinearRanker f;
    f.weights = j.at("weights").get<std::vector<double>>();
    f.offset = j.at("offset").get<double>();
    return f;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed ranker: ") + e.what());
  }
}

json to_json(const HingeConfig& cfg) {
  return {{"margin", cfg.margin},
          {"loss_form", to_string(cfg.form)},
          {"epochs", cfg.epochs},
          {"learning_rate", cfg.learning_rate},
          {"seed", cfg.seed}};
}

HingeConfig hinge_config_from_json(const json& j) {
  HingeConfig cfg;
  cfg.margin = j.value("margin", cfg.margin);
  cfg.form = loss_form_from_string(j.value("loss_form", std::string("corrected")));
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.seed = j.value("seed", cfg.seed);
  validate(cfg);
  return cfg;
}

}  // namespace ibws
