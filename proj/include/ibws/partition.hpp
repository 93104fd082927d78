#pragma once

// Iterated best-worst scaling as an incremental state machine.
//
// A bucket below the target depth is split three ways around a pivot pair:
// the best and worst of a 4-item seed query become (s_max, s_min), and every
// remaining item is compared against both pivots two at a time. Items that
// beat s_max go up, items that lose to s_min go down, everything else stays
// in the middle. Pivots join the lower/upper children when the pool drains.
// After `depth` rounds each item sits in one of 3^depth ordered leaves.
//
// Bucket paths are strings over {'L','M','U'}; the empty path is the root.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace ibws {

struct Item {
  std::string id;
  std::string payload;
  std::optional<double> truth;  // latent score in [0,1], simulation only
};

enum class QueryKind { pivot_seed, pivot_compare, small_bucket };

struct BwsQuery {
  std::string query_id;
  std::vector<std::string> item_ids;
  std::optional<std::string> pivot_max;
  std::optional<std::string> pivot_min;
  std::string bucket_path;
  QueryKind kind = QueryKind::pivot_seed;

  bool operator==(const BwsQuery&) const = default;
};

struct BwsResponse {
  std::string query_id;
  std::string best;
  std::string worst;
  std::optional<std::vector<std::string>> full_order;  // best first
  std::string worker_id;
  double duration = 0.0;  // seconds

  bool operator==(const BwsResponse&) const = default;
};

enum class DispatchMode {
  sequential,  // at most one outstanding query per bucket
  parallel,    // compare queries against fixed pivots may overlap
};

// Any rejected operation on a PartitionState: bad construction arguments,
// a response that does not match its query, or reading results too early.
class PartitionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// One row of the bucket export.
struct BucketRow {
  std::string item_id;
  std::string bucket_path;
  std::uint64_t bucket_index = 0;
  double normalized_score = 0.0;
};

class PartitionState {
 public:
  static constexpr const char* kSchema = "ibws.partition/v1";

  PartitionState(std::vector<Item> items, int depth, std::uint64_t seed,
                 DispatchMode mode = DispatchMode::sequential);

  // Next dispatchable query, or nullopt when every active bucket is either
  // waiting on a response or finished.
  std::optional<BwsQuery> next_query();

  // Throws PartitionError when the response does not fit a pending query.
  void validate(const BwsResponse& resp) const;
  void ingest_response(const BwsResponse& resp);

  bool complete() const { return active_.empty(); }
  int depth() const { return depth_; }
  DispatchMode mode() const { return mode_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t queries_issued() const { return queries_issued_; }
  std::size_t responses_ingested() const { return responses_ingested_; }
  const std::vector<Item>& items() const { return items_; }

  std::vector<BwsQuery> pending() const;
  std::optional<BwsQuery> pending_query(const std::string& query_id) const;

  // Finished leaves keyed by path (only non-empty leaves are present).
  const std::map<std::string, std::vector<std::string>>& leaves() const { return leaves_; }

  // Items per bucket for every bucket currently alive (leaves and active),
  // used for progress reporting.
  std::map<std::string, std::size_t> occupancy() const;

  // Leaf index / (3^depth - 1). Throws before completion.
  std::map<std::string, double> bucket_scores() const;
  std::vector<BucketRow> export_rows() const;

  // Every item is accounted for exactly once.
  bool conserves_items() const;

  nlohmann::json to_json() const;
  static PartitionState from_json(const nlohmann::json& doc);

  static std::uint64_t bucket_index(const std::string& path);
  static double normalized_score(const std::string& path, int depth);

 private:
  struct Phase {
    std::vector<std::string> pool;  // undispatched items
    std::optional<std::string> s_max;
    std::optional<std::string> s_min;
    std::vector<std::string> lower, middle, upper;
    std::map<std::string, BwsQuery> in_flight;
  };

  PartitionState() = default;

  void place(const std::string& path, std::vector<std::string> members);
  void maybe_finish(const std::string& path);
  std::vector<std::string> sample(std::vector<std::string>& pool, std::size_t count);
  std::optional<BwsQuery> dispatch(const std::string& path, Phase& phase);
  std::string mint_query_id();

  std::vector<Item> items_;
  int depth_ = 1;
  std::uint64_t seed_ = 0;
  DispatchMode mode_ = DispatchMode::sequential;
  std::mt19937_64 rng_;
  std::uint64_t next_query_seq_ = 0;
  std::size_t queries_issued_ = 0;
  std::size_t responses_ingested_ = 0;
  std::map<std::string, std::vector<std::string>> leaves_;
  std::map<std::string, Phase> active_;
  std::map<std::string, std::string> pending_path_;  // query id -> bucket path
};

// Exact number of queries a sequential run with a noiseless full-order
// oracle issues for n items at the given depth. Items are the canonical
// instance: ids item-0..item-(n-1) with truth increasing in the index.
std::size_t query_count(int n, int depth, std::uint64_t seed = 0);

// Same dry run over caller-supplied items (all must carry truth).
std::size_t query_count(const std::vector<Item>& items, int depth, std::uint64_t seed);

// Noiseless full-order answer to a query given truths.
BwsResponse oracle_response(const BwsQuery& q, const std::map<std::string, double>& truth);

std::string to_string(QueryKind k);
QueryKind query_kind_from_string(const std::string& s);
std::string to_string(DispatchMode m);
DispatchMode dispatch_mode_from_string(const std::string& s);

nlohmann::json to_json(const BwsQuery& q);
BwsQuery query_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BwsResponse& r);
BwsResponse response_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Item& item);
Item item_from_json(const nlohmann::json& j);

// Items from .jsonl ({id, text, truth?} per line) or a delimited table with
// columns id, text and optional truth.
std::vector<Item> load_items(const std::filesystem::path& path);
void save_items(const std::filesystem::path& path, const std::vector<Item>& items);

}  // namespace ibws
