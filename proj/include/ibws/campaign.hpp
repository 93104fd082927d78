#pragma once

// Event-sourced annotation campaigns.
//
// Every state change is recorded as an Event; replaying the events of a
// campaign in order reconstructs its state exactly. Task issuance events are
// re-executed on replay (the recorded task is checked against the recomputed
// one), so the log is both the audit trail and the test oracle.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "ibws/partition.hpp"
#include "ibws/protocols.hpp"

namespace ibws {

class CampaignError : public std::runtime_error {
 public:
  enum class Code { invalid, not_found, expired, incomplete, conflict };
  CampaignError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

struct CampaignConfig {
  enum class Mode { ibws, scalar };

  Mode mode = Mode::ibws;
  std::vector<Item> items;
  // ibws
  int depth = 3;
  std::uint64_t seed = 0;
  DispatchMode dispatch = DispatchMode::sequential;
  // scalar
  ProtocolKind protocol{Arity::single, Scale::slider};
  int redundancy = 3;
  int batch_size = 5;

  double lease_timeout_sec = 30 * 60;
};

void validate(const CampaignConfig& cfg);
nlohmann::json to_json(const CampaignConfig& cfg);
CampaignConfig campaign_config_from_json(const nlohmann::json& j);

enum class EventKind { created, task_issued, response, completed };

std::string to_string(EventKind k);
EventKind event_kind_from_string(const std::string& s);

struct Event {
  std::uint64_t seq = 0;
  double timestamp = 0;
  EventKind kind = EventKind::created;
  nlohmann::json payload;

  bool operator==(const Event&) const = default;
};

nlohmann::json to_json(const Event& e);
Event event_from_json(const nlohmann::json& j);

struct Task {
  std::string lease_id;
  std::string worker_id;
  double issued_at = 0;
  double expires_at = 0;
  std::optional<BwsQuery> query;   // ibws
  std::vector<std::string> items;  // scalar batch

  bool operator==(const Task&) const = default;
};

nlohmann::json to_json(const Task& t);
Task task_from_json(const nlohmann::json& j);

struct ScalarAnswer {
  std::string item_id;
  RawAnswer raw;
  double duration = 0;
};

struct Submission {
  std::string lease_id;
  std::string worker_id;
  std::optional<BwsResponse> bws;
  std::vector<ScalarAnswer> answers;
};

nlohmann::json to_json(const Submission& s);
// Scalar raw values are decoded with the campaign protocol.
Submission submission_from_json(const nlohmann::json& j, const ProtocolKind& protocol);

struct Ack {
  bool duplicate = false;
  bool completed = false;
};

class Campaign {
 public:
  static Campaign create(std::string id, CampaignConfig cfg);

  const std::string& id() const { return id_; }
  const CampaignConfig& config() const { return config_; }
  bool complete() const;
  std::uint64_t last_seq() const { return last_seq_; }

  // Issues a task at time `now`, or nullopt when nothing is leasable.
  // Returns the task_issued event describing the change.
  std::optional<Event> issue(const std::string& worker_id, double now, std::uint64_t seq);

  enum class Check { fresh, duplicate };
  // Validates without mutating; throws CampaignError.
  Check check(const Submission& sub, double now) const;
  void accept(const Submission& sub, double now);

  // Re-applies a recorded event; throws CampaignError on divergence.
  void apply(const Event& e);
  static Campaign replay(std::span<const Event> events);

  nlohmann::json progress() const;
  nlohmann::json results() const;  // throws CampaignError::incomplete

  const PartitionState* engine() const { return engine_ ? &*engine_ : nullptr; }
  const std::vector<ScalarResponse>& scalar_responses() const { return scalar_; }
  std::size_t answered() const { return tasks_answered_; }
  std::size_t issued() const { return tasks_issued_; }
  const std::map<std::string, Task>& leases() const { return leases_; }

  // Full state document, used for snapshots.
  nlohmann::json to_json() const;
  static Campaign from_json(const nlohmann::json& doc);

 private:
  Campaign() = default;
  void expire(double now);
  std::optional<Task> lease_ibws(const std::string& worker, double now);
  std::optional<Task> lease_scalar(const std::string& worker, double now);

  std::string id_;
  CampaignConfig config_;
  std::optional<PartitionState> engine_;
  std::vector<ScalarResponse> scalar_;
  std::map<std::string, std::size_t> answered_count_;             // scalar, per item
  std::map<std::string, std::set<std::string>> annotated_by_;     // scalar, item -> workers
  std::map<std::string, Task> leases_;                            // open leases
  std::map<std::string, std::string> leased_query_;               // ibws query id -> lease id
  std::set<std::string> closed_leases_;
  std::set<std::string> expired_leases_;
  std::uint64_t next_lease_ = 0;
  std::size_t tasks_issued_ = 0;
  std::size_t tasks_answered_ = 0;
  std::uint64_t last_seq_ = 0;
  bool completed_event_ = false;
};

// Append-only event log with optional file persistence and snapshots.
class EventLog {
 public:
  EventLog() = default;
  // Events go to <dir>/<id>.events.jsonl, snapshots to <dir>/<id>.snapshot.json.
  EventLog(std::filesystem::path dir, std::string campaign_id, std::size_t snapshot_every);

  void append(const Event& e);  // durable before returning
  void snapshot(const Campaign& c);
  bool snapshot_due() const;
  const std::vector<Event>& events() const { return events_; }
  bool persistent() const { return !dir_.empty(); }

  // Rebuilds a campaign from disk: latest snapshot plus the events after it.
  // A torn final line (crash mid-write) is ignored.
  static std::pair<Campaign, EventLog> recover(const std::filesystem::path& dir,
                                               const std::string& campaign_id,
                                               std::size_t snapshot_every);

 private:
  std::filesystem::path dir_;
  std::string id_;
  std::size_t snapshot_every_ = 0;
  std::vector<Event> events_;
};

// A campaign plus its log, with mutations serialized by a mutex.
class CampaignHost {
 public:
  CampaignHost(Campaign c, EventLog log) : campaign_(std::move(c)), log_(std::move(log)) {}

  static std::unique_ptr<CampaignHost> create(std::string id, CampaignConfig cfg, double now,
                                              EventLog log);

  std::optional<Task> next_task(const std::string& worker_id, double now);
  Ack submit(const Submission& sub, double now);

  nlohmann::json describe() const;
  nlohmann::json progress() const;
  nlohmann::json results() const;
  std::vector<Event> events() const;
  std::string export_log() const;  // JSON lines
  nlohmann::json state() const;     // full campaign state document
  ProtocolKind protocol() const;

 private:
  void record(Event e);

  mutable std::mutex mu_;
  Campaign campaign_;
  EventLog log_;
};

class CampaignService {
 public:
  using Clock = std::function<double()>;

  // In-memory service.
  explicit CampaignService(Clock clock = system_clock());
  // Persistent service; existing campaigns under `dir` are recovered.
  CampaignService(std::filesystem::path dir, Clock clock = system_clock(),
                  std::size_t snapshot_every = 100);

  std::string create(const CampaignConfig& cfg);
  CampaignHost& get(const std::string& id);
  std::vector<std::string> ids() const;
  double now() const { return clock_(); }

  static Clock system_clock();

 private:
  mutable std::shared_mutex mu_;
  Clock clock_;
  std::filesystem::path dir_;
  std::size_t snapshot_every_ = 100;
  std::uint64_t next_id_ = 1;
  std::map<std::string, std::unique_ptr<CampaignHost>> campaigns_;
};

}  // namespace ibws
