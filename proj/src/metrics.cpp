#include "ibws/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace ibws {

std::vector<double> midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // positions i..j-1 hold ranks i+1..j
    double r = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = r;
    i = j;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw MetricError("length mismatch");
  if (x.size() < 2) throw MetricError("need at least two observations");
  const double n = static_cast<double>(x.size());
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw MetricError("zero variance");
  double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

double spearman_rho(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw MetricError("length mismatch");
  auto rx = midranks(x);
  auto ry = midranks(y);
  return pearson(rx, ry);
}

namespace {

double quantile_sorted(const std::vector<double>& s, double p) {
  if (s.size() == 1) return s[0];
  double h = p * static_cast<double>(s.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(h));
  std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

// k distinct indices from [0, n), in sampling order.
std::vector<std::size_t> pick_distinct(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, n - 1);
    std::swap(idx[i], idx[d(rng)]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace

Distribution summarize(std::vector<double> values) {
  if (values.empty()) throw MetricError("empty distribution");
  Distribution d;
  d.values = values;
  std::sort(values.begin(), values.end());
  d.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  d.median = quantile_sorted(values, 0.5);
  d.q05 = quantile_sorted(values, 0.05);
  d.q25 = quantile_sorted(values, 0.25);
  d.q75 = quantile_sorted(values, 0.75);
  d.q95 = quantile_sorted(values, 0.95);
  return d;
}

Distribution split_half(const RatingsMatrix& matrix, int trials, std::uint64_t seed) {
  if (trials < 1) throw MetricError("trials must be >= 1");
  if (matrix.rows() < 2) throw MetricError("split-half needs at least two items");
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    rows.push_back(matrix.present(i));
    if (rows.back().size() < 2) {
      throw MetricError("item '" + matrix.row_ids[i] + "' has fewer than 2 annotations");
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-kTieBreakAmplitude, kTieBreakAmplitude);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(trials));
  std::vector<double> a(rows.size()), b(rows.size());
  for (int t = 0; t < trials; ++t) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto pick = pick_distinct(rows[i].size(), 2, rng);
      a[i] = rows[i][pick[0]] + jitter(rng);
      b[i] = rows[i][pick[1]] + jitter(rng);
    }
    out.push_back(spearman_rho(a, b));
  }
  return summarize(std::move(out));
}

std::string to_string(IccVariant v) {
  switch (v) {
    case IccVariant::icc1: return "icc1";
    case IccVariant::icc3: return "icc3";
    case IccVariant::icc1k: return "icc1k";
    case IccVariant::icc3k: return "icc3k";
  }
  return "?";
}

IccVariant icc_variant_from_string(const std::string& s) {
  for (auto v : {IccVariant::icc1, IccVariant::icc3, IccVariant::icc1k, IccVariant::icc3k}) {
    if (to_string(v) == s) return v;
  }
  throw MetricError("unknown ICC variant '" + s + "'");
}

AnovaMeanSquares anova_mean_squares(const RatingsMatrix& matrix) {
  if (!matrix.is_complete()) throw MetricError("ICC needs a complete matrix; drop missing rows first");
  const std::size_t n = matrix.rows(), k = matrix.cols();
  if (n < 2 || k < 2) throw MetricError("ICC needs at least 2 items and 2 raters");
  std::vector<double> row_mean(n, 0.0), col_mean(k, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double v = *matrix.cells[i][j];
      row_mean[i] += v;
      col_mean[j] += v;
      grand += v;
    }
  }
  for (auto& m : row_mean) m /= static_cast<double>(k);
  for (auto& m : col_mean) m /= static_cast<double>(n);
  grand /= static_cast<double>(n * k);

  double ss_rows = 0, ss_cols = 0, ss_within = 0, ss_resid = 0;
  for (std::size_t i = 0; i < n; ++i) ss_rows += (row_mean[i] - grand) * (row_mean[i] - grand);
  ss_rows *= static_cast<double>(k);
  for (std::size_t j = 0; j < k; ++j) ss_cols += (col_mean[j] - grand) * (col_mean[j] - grand);
  ss_cols *= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double v = *matrix.cells[i][j];
      ss_within += (v - row_mean[i]) * (v - row_mean[i]);
      double e = v - row_mean[i] - col_mean[j] + grand;
      ss_resid += e * e;
    }
  }
  const double dn = static_cast<double>(n), dk = static_cast<double>(k);
  AnovaMeanSquares ms;
  ms.n = n;
  ms.k = k;
  ms.between_rows = ss_rows / (dn - 1);
  ms.between_columns = ss_cols / (dk - 1);
  ms.within_rows = ss_within / (dn * (dk - 1));
  ms.residual = ss_resid / ((dn - 1) * (dk - 1));
  return ms;
}

double icc(const RatingsMatrix& matrix, IccVariant variant) {
  auto ms = anova_mean_squares(matrix);
  const double k = static_cast<double>(ms.k);
  double num = 0, den = 0;
  switch (variant) {
    case IccVariant::icc1:
      num = ms.between_rows - ms.within_rows;
      den = ms.between_rows + (k - 1) * ms.within_rows;
      break;
    case IccVariant::icc3:
      num = ms.between_rows - ms.residual;
      den = ms.between_rows + (k - 1) * ms.residual;
      break;
    case IccVariant::icc1k:
      num = ms.between_rows - ms.within_rows;
      den = ms.between_rows;
      break;
    case IccVariant::icc3k:
      num = ms.between_rows - ms.residual;
      den = ms.between_rows;
      break;
  }
  if (den == 0.0) throw MetricError("ICC undefined: zero between-item variance");
  return num / den;
}

std::vector<BucketMean> bucket_mean_truth(std::span<const BucketRow> rows,
                                          const std::map<std::string, double>& truth) {
  std::map<std::uint64_t, BucketMean> acc;
  for (const auto& r : rows) {
    auto t = truth.find(r.item_id);
    if (t == truth.end()) throw MetricError("no truth for item '" + r.item_id + "'");
    auto& b = acc[r.bucket_index];
    b.bucket_index = r.bucket_index;
    b.bucket_path = r.bucket_path;
    b.count += 1;
    b.mean_truth += t->second;
  }
  std::vector<BucketMean> out;
  for (auto& [idx, b] : acc) {
    b.mean_truth /= static_cast<double>(b.count);
    out.push_back(b);
  }
  return out;
}

std::vector<SweepLevel> redundancy_sweep(const RatingsMatrix& matrix,
                                         std::span<const double> reference,
                                         std::span<const int> levels, int trials,
                                         std::uint64_t seed) {
  if (trials < 1) throw MetricError("trials must be >= 1");
  if (reference.size() != matrix.rows()) throw MetricError("reference length mismatch");
  std::vector<std::vector<double>> rows;
  std::size_t available = SIZE_MAX;
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    rows.push_back(matrix.present(i));
    available = std::min(available, rows.back().size());
  }
  for (int r : levels) {
    if (r < 1) throw MetricError("redundancy level must be >= 1");
    if (static_cast<std::size_t>(r) > available) {
      throw MetricError("redundancy level " + std::to_string(r) + " exceeds available " +
                        std::to_string(available));
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<SweepLevel> out;
  std::vector<double> means(rows.size());
  for (int r : levels) {
    SweepLevel lvl;
    lvl.level = r;
    for (int t = 0; t < trials; ++t) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        double s = 0;
        for (auto j : pick_distinct(rows[i].size(), static_cast<std::size_t>(r), rng)) {
          s += rows[i][j];
        }
        means[i] = s / r;
      }
      lvl.trials.push_back(spearman_rho(means, reference));
    }
    auto d = summarize(lvl.trials);
    lvl.mean = d.mean;
    lvl.median = d.median;
    out.push_back(std::move(lvl));
  }
  return out;
}

std::vector<Annotation> annotations_from(std::span<const ScalarResponse> responses) {
  std::vector<Annotation> out;
  out.reserve(responses.size());
  for (const auto& r : responses) out.push_back({r.item_id, r.worker_id, to_unit_scale(r)});
  return out;
}

std::vector<WorkerQuality> worker_quality(std::span<const Annotation> annotations) {
  // item -> worker -> values (a worker rating an item twice contributes its mean)
  std::map<std::string, std::map<std::string, std::vector<double>>> by_item;
  std::set<std::string> workers;
  for (const auto& a : annotations) {
    by_item[a.item_id][a.worker_id].push_back(a.value);
    workers.insert(a.worker_id);
  }
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> pairs;
  for (const auto& [item, raters] : by_item) {
    if (raters.size() < 3) continue;
    std::map<std::string, double> own;
    double total = 0;
    for (const auto& [w, vals] : raters) {
      own[w] = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
      total += own[w];
    }
    const double others = static_cast<double>(raters.size() - 1);
    for (const auto& [w, v] : own) {
      pairs[w].first.push_back(v);
      pairs[w].second.push_back((total - v) / others);
    }
  }
  std::vector<WorkerQuality> out;
  for (const auto& w : workers) {
    WorkerQuality q;
    q.worker_id = w;
    auto it = pairs.find(w);
    if (it != pairs.end()) {
      q.n_items = it->second.first.size();
      if (q.n_items >= 2) {
        try {
          q.score = spearman_rho(it->second.first, it->second.second);
        } catch (const MetricError&) {
          // constant values: no defined correlation
        }
      }
    }
    out.push_back(std::move(q));
  }
  std::stable_sort(out.begin(), out.end(), [](const WorkerQuality& a, const WorkerQuality& b) {
    if (a.score.has_value() != b.score.has_value()) return a.score.has_value();
    if (!a.score) return false;
    return *a.score < *b.score;
  });
  return out;
}

FilterResult filter_workers(std::span<const ScalarResponse> responses, double bottom_fraction) {
  if (!(bottom_fraction >= 0.0 && bottom_fraction <= 1.0)) {
    throw MetricError("bottom_fraction must be in [0,1]");
  }
  auto annotations = annotations_from(responses);
  auto quality = worker_quality(annotations);
  std::size_t ranked = 0;
  for (const auto& q : quality) ranked += q.score.has_value();
  // guard against 0.1 * 30 = 3.0000000000000004 style rounding
  auto drop = static_cast<std::size_t>(
      std::ceil(bottom_fraction * static_cast<double>(ranked) - 1e-9));
  FilterResult res;
  std::set<std::string> removed;
  for (std::size_t i = 0; i < drop && i < ranked; ++i) {
    removed.insert(quality[i].worker_id);
    res.removed_workers.push_back(quality[i].worker_id);
  }
  std::set<std::string> seen;
  for (const auto& r : responses) {
    if (seen.insert(r.item_id).second) res.item_ids.push_back(r.item_id);
    if (!removed.count(r.worker_id)) res.kept.push_back(r);
  }
  return res;
}

}  // namespace ibws
