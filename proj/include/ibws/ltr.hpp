#pragma once

// Pairwise learning-to-rank over externally supplied item features.
//
// The model is f(r) = sigmoid(w . phi(r) + offset). For a pair where r1 was
// annotated above r2 (s1 > s2) the default "corrected" hinge loss is
//
//   max(0, (s1 - s2) - alpha * (f(r1) - f(r2)))
//
// which vanishes once the model gap reaches the score gap divided by alpha.
// The "literal" form max(0, s2 - s1 + alpha * (f(r1) - f(r2))) is kept for
// comparison; it rewards ranking r2 above r1.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace ibws {

class TrainingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct AnnotatedSample {
  std::string item_id;
  double score = 0;  // annotated value in [0,1]
  std::string worker_id;
  std::optional<std::string> hit_id;
  std::optional<std::string> context_id;
  std::vector<double> features;
};

// Indices into the sample list; samples[higher].score > samples[lower].score.
struct TrainingPair {
  std::size_t higher = 0;
  std::size_t lower = 0;

  bool operator==(const TrainingPair&) const = default;
  auto operator<=>(const TrainingPair&) const = default;
};

struct PairStrategy {
  enum class Kind { global, per_hit, per_worker, per_context };
  Kind kind = Kind::global;
  int k = 1;  // partners per sample, global only

  std::string name() const;
  static PairStrategy parse(const std::string& name, int k = 1);
};

// global: every sample is paired with k distinct random partners (never
// itself), k*n candidates before equal-score pairs are dropped. Grouped
// strategies emit every within-group pair with distinct scores. All pairs are
// oriented so the first sample has the higher score.
std::vector<TrainingPair> generate_pairs(std::span<const AnnotatedSample> samples,
                                         const PairStrategy& strategy, std::uint64_t seed);

struct LinearRanker {
  std::vector<double> weights;
  double offset = 0;

  explicit LinearRanker(std::size_t dim = 0) : weights(dim, 0.0) {}

  double logit(std::span<const double> features) const;
  double score(std::span<const double> features) const;  // in (0,1)
};

enum class LossForm { corrected, literal };

struct HingeConfig {
  double margin = 1.0;  // alpha
  LossForm form = LossForm::corrected;
  int epochs = 20;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
};

void validate(const HingeConfig& cfg);

std::string to_string(LossForm f);
LossForm loss_form_from_string(const std::string& s);

// Loss from scores and model outputs directly.
double hinge_loss(double s1, double s2, double f1, double f2, double margin, LossForm form);

double hinge_loss(const AnnotatedSample& r1, const AnnotatedSample& r2, const LinearRanker& f,
                  const HingeConfig& cfg);

// Returns the loss and writes a subgradient with respect to (weights, offset).
// At the kink the zero subgradient is used.
double hinge_subgradient(const AnnotatedSample& r1, const AnnotatedSample& r2,
                         const LinearRanker& f, const HingeConfig& cfg,
                         std::span<double> grad_weights, double& grad_offset);

struct TrainResult {
  LinearRanker ranker;
  std::vector<double> loss_trace;  // mean pair loss after each epoch
};

// Stochastic subgradient descent over shuffled pairs, starting from zeros.
TrainResult train(std::span<const AnnotatedSample> samples, std::span<const TrainingPair> pairs,
                  std::size_t dim, const HingeConfig& cfg);

double mean_loss(std::span<const AnnotatedSample> samples, std::span<const TrainingPair> pairs,
                 const LinearRanker& f, const HingeConfig& cfg);

// Spearman between model scores and the aligned reference values.
double evaluate(const LinearRanker& f, std::span<const AnnotatedSample> samples,
                std::span<const double> reference);
double evaluate(const LinearRanker& f, std::span<const std::vector<double>> features,
                std::span<const double> reference);

// Rows {item_id, f1, ..., fd}.
std::map<std::string, std::vector<double>> load_features(const std::filesystem::path& path);
void save_features(const std::filesystem::path& path,
                   const std::map<std::string, std::vector<double>>& features);

nlohmann::json to_json(const LinearRanker& f);
LinearRanker ranker_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HingeConfig& cfg);
HingeConfig hinge_config_from_json(const nlohmann::json& j);

}  // namespace ibws
