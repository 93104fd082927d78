#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ibws/partition.hpp"
#include "ibws/protocols.hpp"

namespace ibws {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// 1-based ranks; tied values share the mean of the ranks they span.
std::vector<double> midranks(std::span<const double> values);

// Throws MetricError on length mismatch, fewer than 2 points, or zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

// Pearson correlation of midranks.
double spearman_rho(std::span<const double> x, std::span<const double> y);

struct Distribution {
  std::vector<double> values;
  double mean = 0, median = 0, q05 = 0, q25 = 0, q75 = 0, q95 = 0;
};

// Linear-interpolated quantiles of the values.
Distribution summarize(std::vector<double> values);

// Tie-break jitter added before ranking in split-half trials.
inline constexpr double kTieBreakAmplitude = 1e-6;

// Per trial: two distinct annotations per item form lists A and B; each list
// is jittered by U(-1e-6, 1e-6) and the trial value is Spearman(A, B).
Distribution split_half(const RatingsMatrix& matrix, int trials, std::uint64_t seed);

enum class IccVariant { icc1, icc3, icc1k, icc3k };

std::string to_string(IccVariant v);
IccVariant icc_variant_from_string(const std::string& s);

// One-way and two-way ANOVA mean squares of a complete n x k matrix.
struct AnovaMeanSquares {
  double between_rows = 0;     // MSR
  double within_rows = 0;      // MSW, one-way residual
  double between_columns = 0;  // MSC
  double residual = 0;         // MSE, two-way residual
  std::size_t n = 0, k = 0;
};

AnovaMeanSquares anova_mean_squares(const RatingsMatrix& matrix);

// Shrout-Fleiss ICC(1,1), ICC(3,1), ICC(1,k), ICC(3,k). The matrix must be
// complete; a zero denominator is an error, otherwise the signed value is
// returned.
double icc(const RatingsMatrix& matrix, IccVariant variant);

struct BucketMean {
  std::uint64_t bucket_index = 0;
  std::string bucket_path;
  std::size_t count = 0;
  double mean_truth = 0;
};

// Mean truth of each non-empty bucket, ordered by bucket index.
std::vector<BucketMean> bucket_mean_truth(std::span<const BucketRow> rows,
                                          const std::map<std::string, double>& truth);

struct SweepLevel {
  int level = 0;
  double mean = 0;
  double median = 0;
  std::vector<double> trials;
};

// For each level r: Spearman between the reference and the per-item mean of
// r distinct sampled annotations, repeated over trials.
std::vector<SweepLevel> redundancy_sweep(const RatingsMatrix& matrix,
                                         std::span<const double> reference,
                                         std::span<const int> levels, int trials,
                                         std::uint64_t seed);

struct Annotation {
  std::string item_id;
  std::string worker_id;
  double value = 0;
};

std::vector<Annotation> annotations_from(std::span<const ScalarResponse> responses);

struct WorkerQuality {
  std::string worker_id;
  std::optional<double> score;  // undefined with < 2 scorable items
  std::size_t n_items = 0;      // scorable items
};

// Leave-one-out agreement: on every item with >= 3 annotations, a worker's
// value is paired with the mean of the other annotators' values, and the
// worker's score is the Spearman correlation over those pairs. Sorted with
// the worst defined score first; undefined scores trail.
std::vector<WorkerQuality> worker_quality(std::span<const Annotation> annotations);

struct FilterResult {
  std::vector<std::string> item_ids;  // every item of the input, annotated or not
  std::vector<ScalarResponse> kept;
  std::vector<std::string> removed_workers;
};

// Drops every annotation of the lowest ceil(bottom_fraction * W) ranked
// workers, W = number of workers with a defined score.
FilterResult filter_workers(std::span<const ScalarResponse> responses, double bottom_fraction);

}  // namespace ibws
