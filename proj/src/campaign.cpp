#include "ibws/campaign.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "ibws/io.hpp"

namespace ibws {

using nlohmann::json;

namespace {

[[noreturn]] void invalid(const std::string& what) {
  throw CampaignError(CampaignError::Code::invalid, what);
}

std::string mode_name(CampaignConfig::Mode m) {
  return m == CampaignConfig::Mode::ibws ? "ibws" : "scalar";
}

}  // namespace

void validate(const CampaignConfig& cfg) {
  if (cfg.items.empty()) invalid("campaign has no items");
  std::set<std::string> seen;
  for (const auto& it : cfg.items) {
    if (it.id.empty()) invalid("item with empty id");
    if (!seen.insert(it.id).second) invalid("duplicate item id '" + it.id + "'");
  }
  if (!(cfg.lease_timeout_sec > 0)) invalid("lease_timeout_sec must be > 0");
  if (cfg.mode == CampaignConfig::Mode::ibws) {
    if (cfg.depth < 1) invalid("depth must be >= 1");
  } else {
    if (cfg.redundancy < 1) invalid("redundancy must be >= 1");
    if (cfg.batch_size < 1) invalid("batch_size must be >= 1");
  }
}

json to_json(const CampaignConfig& cfg) {
  json j;
  j["mode"] = mode_name(cfg.mode);
  j["items"] = json::array();
  for (const auto& it : cfg.items) j["items"].push_back(to_json(it));
  if (cfg.mode == CampaignConfig::Mode::ibws) {
    j["depth"] = cfg.depth;
    j["seed"] = cfg.seed;
    j["dispatch"] = to_string(cfg.dispatch);
  } else {
    j["protocol"] = cfg.protocol.name();
    j["redundancy"] = cfg.redundancy;
    j["batch_size"] = cfg.batch_size;
  }
  j["lease_timeout_sec"] = cfg.lease_timeout_sec;
  return j;
}

CampaignConfig campaign_config_from_json(const json& j) {
  CampaignConfig cfg;
  try {
    if (!j.is_object()) invalid("campaign config must be an object");
    std::string mode = j.value("mode", std::string("ibws"));
    if (mode == "ibws") {
      cfg.mode = CampaignConfig::Mode::ibws;
    } else if (mode == "scalar") {
      cfg.mode = CampaignConfig::Mode::scalar;
    } else {
      invalid("unknown mode '" + mode + "'");
    }
    if (!j.contains("items") || !j.at("items").is_array()) invalid("items must be an array");
    for (const auto& it : j.at("items")) cfg.items.push_back(item_from_json(it));
    cfg.depth = j.value("depth", cfg.depth);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.dispatch = dispatch_mode_from_string(j.value("dispatch", std::string("sequential")));
    if (cfg.mode == CampaignConfig::Mode::scalar) {
      if (!j.contains("protocol")) invalid("scalar campaigns need a protocol");
      cfg.protocol = ProtocolKind::parse(j.at("protocol").get<std::string>());
    }
    cfg.redundancy = j.value("redundancy", cfg.redundancy);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.lease_timeout_sec = j.value("lease_timeout_sec", cfg.lease_timeout_sec);
  } catch (const json::exception& e) {
    invalid(std::string("malformed campaign config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    invalid(e.what());
  }
  validate(cfg);
  return cfg;
}

std::string to_string(EventKind k) {
  switch (k) {
    case EventKind::created: return "created";
    case EventKind::task_issued: return "task_issued";
    case EventKind::response: return "response";
    case EventKind::completed: return "completed";
  }
  return "?";
}

EventKind event_kind_from_string(const std::string& s) {
  if (s == "created") return EventKind::created;
  if (s == "task_issued") return EventKind::task_issued;
  if (s == "response") return EventKind::response;
  if (s == "completed") return EventKind::completed;
  invalid("unknown event kind '" + s + "'");
}

json to_json(const Event& e) {
  return {{"seq", e.seq}, {"timestamp", e.timestamp}, {"kind", to_string(e.kind)},
          {"payload", e.payload}};
}

Event event_from_json(const json& j) {
  try {
    Event e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.timestamp = j.at("timestamp").get<double>();
    e.kind = event_kind_from_string(j.at("kind").get<std::string>());
    e.payload = j.at("payload");
    return e;
  } catch (const json::exception& ex) {
    invalid(std::string("malformed event: ") + ex.what());
  }
}

json to_json(const Task& t) {
  json j{{"lease_id", t.lease_id},
         {"worker_id", t.worker_id},
         {"issued_at", t.issued_at},
         {"expires_at", t.expires_at}};
  if (t.query) {
    j["kind"] = "bws";
    j["query"] = to_json(*t.query);
  } else {
    j["kind"] = "scalar";
    j["items"] = t.items;
  }
  return j;
}

Task task_from_json(const json& j) {
  try {
    Task t;
    t.lease_id = j.at("lease_id").get<std::string>();
    t.worker_id = j.at("worker_id").get<std::string>();
    t.issued_at = j.at("issued_at").get<double>();
    t.expires_at = j.at("expires_at").get<double>();
    if (j.at("kind") == "bws") {
      t.query = query_from_json(j.at("query"));
    } else {
      t.items = j.at("items").get<std::vector<std::string>>();
    }
    return t;
  } catch (const json::exception& e) {
    invalid(std::string("malformed task: ") + e.what());
  }
}

json to_json(const Submission& s) {
  json j{{"lease_id", s.lease_id}, {"worker_id", s.worker_id}};
  if (s.bws) {
    j["bws"] = to_json(*s.bws);
  } else {
    j["answers"] = json::array();
    for (const auto& a : s.answers) {
      j["answers"].push_back(
          {{"item_id", a.item_id}, {"raw", encode_raw(a.raw)}, {"duration_sec", a.duration}});
    }
  }
  return j;
}

Submission submission_from_json(const json& j, const ProtocolKind& protocol) {
  try {
    Submission s;
    s.lease_id = j.at("lease_id").get<std::string>();
    s.worker_id = j.at("worker_id").get<std::string>();
    if (j.contains("bws")) {
      json b = j.at("bws");
      if (!b.contains("query_id")) b["query_id"] = "";
      s.bws = response_from_json(b);
      if (s.bws->worker_id.empty()) s.bws->worker_id = s.worker_id;
    } else if (j.contains("answers")) {
      for (const auto& a : j.at("answers")) {
        const auto& raw = a.at("raw");
        std::string text = raw.is_string() ? raw.get<std::string>() : raw.dump();
        s.answers.push_back({a.at("item_id").get<std::string>(), decode_raw(protocol, text),
                             a.value("duration_sec", 0.0)});
      }
    } else {
      invalid("submission needs either 'bws' or 'answers'");
    }
    return s;
  } catch (const json::exception& e) {
    invalid(std::string("malformed submission: ") + e.what());
  } catch (const CampaignError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    invalid(e.what());
  }
}

// ---------------------------------------------------------------------------

Campaign Campaign::create(std::string id, CampaignConfig cfg) {
  validate(cfg);
  Campaign c;
  c.id_ = std::move(id);
  c.config_ = std::move(cfg);
  if (c.config_.mode == CampaignConfig::Mode::ibws) {
    try {
      c.engine_.emplace(c.config_.items, c.config_.depth, c.config_.seed, c.config_.dispatch);
    } catch (const PartitionError& e) {
      invalid(e.what());
    }
  } else {
    for (const auto& it : c.config_.items) c.answered_count_[it.id] = 0;
  }
  return c;
}

bool Campaign::complete() const {
  if (engine_) return engine_->complete();
  for (const auto& [id, n] : answered_count_) {
    if (n < static_cast<std::size_t>(config_.redundancy)) return false;
  }
  return true;
}

void Campaign::expire(double now) {
  for (auto it = leases_.begin(); it != leases_.end();) {
    if (it->second.expires_at <= now) {
      if (it->second.query) leased_query_.erase(it->second.query->query_id);
      expired_leases_.insert(it->first);
      it = leases_.erase(it);
    } else {
      ++it;
    }
  }
}

std::optional<Task> Campaign::lease_ibws(const std::string& worker, double now) {
  std::optional<BwsQuery> q;
  // queries whose lease lapsed are offered again before new ones
  for (auto& p : engine_->pending()) {
    if (!leased_query_.count(p.query_id)) {
      q = std::move(p);
      break;
    }
  }
  if (!q) q = engine_->next_query();
  if (!q) return std::nullopt;
  Task t;
  t.lease_id = "l" + std::to_string(++next_lease_);
  t.worker_id = worker;
  t.issued_at = now;
  t.expires_at = now + config_.lease_timeout_sec;
  t.query = std::move(q);
  leased_query_[t.query->query_id] = t.lease_id;
  return t;
}

std::optional<Task> Campaign::lease_scalar(const std::string& worker, double now) {
  std::map<std::string, std::size_t> in_flight;
  std::set<std::string> held;
  for (const auto& [id, lease] : leases_) {
    for (const auto& item : lease.items) {
      ++in_flight[item];
      if (lease.worker_id == worker) held.insert(item);
    }
  }
  struct Candidate {
    std::size_t load;
    std::size_t index;
  };
  std::vector<Candidate> cands;
  const auto need = static_cast<std::size_t>(config_.redundancy);
  for (std::size_t i = 0; i < config_.items.size(); ++i) {
    const auto& id = config_.items[i].id;
    std::size_t load = answered_count_.at(id) + in_flight[id];
    if (load >= need || held.count(id)) continue;
    if (auto a = annotated_by_.find(id); a != annotated_by_.end() && a->second.count(worker)) continue;
    cands.push_back({load, i});
  }
  if (cands.empty()) return std::nullopt;
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Candidate& a, const Candidate& b) { return a.load < b.load; });
  Task t;
  t.lease_id = "l" + std::to_string(++next_lease_);
  t.worker_id = worker;
  t.issued_at = now;
  t.expires_at = now + config_.lease_timeout_sec;
  const auto batch = std::min(cands.size(), static_cast<std::size_t>(config_.batch_size));
  for (std::size_t i = 0; i < batch; ++i) t.items.push_back(config_.items[cands[i].index].id);
  return t;
}

std::optional<Event> Campaign::issue(const std::string& worker_id, double now, std::uint64_t seq) {
  if (worker_id.empty()) invalid("worker id is required");
  expire(now);
  auto task = engine_ ? lease_ibws(worker_id, now) : lease_scalar(worker_id, now);
  if (!task) return std::nullopt;
  leases_[task->lease_id] = *task;
  ++tasks_issued_;
  last_seq_ = seq;
  return Event{seq, now, EventKind::task_issued,
               json{{"worker_id", worker_id}, {"task", ibws::to_json(*task)}}};
}

Campaign::Check Campaign::check(const Submission& sub, double now) const {
  if (closed_leases_.count(sub.lease_id)) return Check::duplicate;
  if (expired_leases_.count(sub.lease_id)) {
    throw CampaignError(CampaignError::Code::expired, "lease '" + sub.lease_id + "' has expired");
  }
  auto it = leases_.find(sub.lease_id);
  if (it == leases_.end()) invalid("unknown lease '" + sub.lease_id + "'");
  const Task& lease = it->second;
  if (sub.worker_id != lease.worker_id) {
    invalid("lease '" + sub.lease_id + "' belongs to another worker");
  }
  if (now >= lease.expires_at) {
    throw CampaignError(CampaignError::Code::expired, "lease '" + sub.lease_id + "' has expired");
  }
  if (engine_) {
    if (!sub.bws) invalid("a best-worst answer is required");
    if (!sub.bws->query_id.empty() && sub.bws->query_id != lease.query->query_id) {
      invalid("answer is for query '" + sub.bws->query_id + "', lease holds '" +
              lease.query->query_id + "'");
    }
    BwsResponse r = *sub.bws;
    r.query_id = lease.query->query_id;
    try {
      engine_->validate(r);
    } catch (const PartitionError& e) {
      invalid(e.what());
    }
  } else {
    if (sub.bws || sub.answers.size() != lease.items.size()) {
      invalid("expected one answer for each of the " + std::to_string(lease.items.size()) +
              " leased items");
    }
    std::set<std::string> want(lease.items.begin(), lease.items.end());
    for (const auto& a : sub.answers) {
      if (!want.erase(a.item_id)) invalid("unexpected or repeated item '" + a.item_id + "'");
      ScalarResponse r{a.item_id, sub.worker_id, config_.protocol, a.raw, a.duration, sub.lease_id};
      try {
        ibws::validate(r);
      } catch (const ProtocolError& e) {
        invalid(e.what());
      }
      if (!(a.duration >= 0)) invalid("duration must be >= 0");
    }
  }
  return Check::fresh;
}

void Campaign::accept(const Submission& sub, double /*now*/) {
  const Task lease = leases_.at(sub.lease_id);
  if (engine_) {
    BwsResponse r = *sub.bws;
    r.query_id = lease.query->query_id;
    r.worker_id = sub.worker_id;
    engine_->ingest_response(r);
    leased_query_.erase(r.query_id);
  } else {
    for (const auto& a : sub.answers) {
      scalar_.push_back({a.item_id, sub.worker_id, config_.protocol, a.raw, a.duration, sub.lease_id});
      ++answered_count_[a.item_id];
      annotated_by_[a.item_id].insert(sub.worker_id);
    }
  }
  leases_.erase(sub.lease_id);
  closed_leases_.insert(sub.lease_id);
  ++tasks_answered_;
}

void Campaign::apply(const Event& e) {
  if (e.seq != last_seq_ + 1) {
    throw CampaignError(CampaignError::Code::conflict,
                        "event " + std::to_string(e.seq) + " follows " + std::to_string(last_seq_));
  }
  switch (e.kind) {
    case EventKind::created:
      throw CampaignError(CampaignError::Code::conflict, "created event after start");
    case EventKind::task_issued: {
      auto got = issue(e.payload.at("worker_id").get<std::string>(), e.timestamp, e.seq);
      if (!got || got->payload != e.payload) {
        throw CampaignError(CampaignError::Code::conflict,
                            "event " + std::to_string(e.seq) + " does not replay");
      }
      break;
    }
    case EventKind::response: {
      Submission sub = submission_from_json(e.payload, config_.protocol);
      if (check(sub, e.timestamp) != Check::fresh) {
        throw CampaignError(CampaignError::Code::conflict,
                            "event " + std::to_string(e.seq) + " repeats a closed lease");
      }
      accept(sub, e.timestamp);
      break;
    }
    case EventKind::completed:
      if (!complete()) {
        throw CampaignError(CampaignError::Code::conflict, "completed event on an open campaign");
      }
      completed_event_ = true;
      break;
  }
  last_seq_ = e.seq;
}

Campaign Campaign::replay(std::span<const Event> events) {
  if (events.empty() || events.front().kind != EventKind::created || events.front().seq != 1) {
    throw CampaignError(CampaignError::Code::conflict, "log must start with a created event");
  }
  const auto& p = events.front().payload;
  Campaign c = create(p.at("campaign_id").get<std::string>(),
                      campaign_config_from_json(p.at("config")));
  c.last_seq_ = 1;
  for (std::size_t i = 1; i < events.size(); ++i) c.apply(events[i]);
  return c;
}

json Campaign::progress() const {
  json j;
  j["campaign_id"] = id_;
  j["mode"] = mode_name(config_.mode);
  j["status"] = complete() ? "complete" : "open";
  j["n_items"] = config_.items.size();
  j["tasks_issued"] = tasks_issued_;
  j["tasks_answered"] = tasks_answered_;
  j["outstanding_leases"] = leases_.size();
  if (engine_) {
    std::size_t placed = 0;
    for (const auto& [path, members] : engine_->leaves()) placed += members.size();
    j["completion"] = static_cast<double>(placed) / static_cast<double>(config_.items.size());
    json occ = json::object();
    for (const auto& [path, n] : engine_->occupancy()) occ[path.empty() ? "root" : path] = n;
    j["buckets"] = occ;
    j["depth"] = config_.depth;
  } else {
    const auto need = static_cast<std::size_t>(config_.redundancy);
    std::size_t done = 0;
    for (const auto& [id, n] : answered_count_) done += std::min(n, need);
    j["responses_collected"] = scalar_.size();
    j["responses_target"] = need * config_.items.size();
    j["completion"] = static_cast<double>(done) / static_cast<double>(need * config_.items.size());
  }
  return j;
}

json Campaign::results() const {
  if (!complete()) {
    throw CampaignError(CampaignError::Code::incomplete, "campaign '" + id_ + "' is not complete");
  }
  json j;
  j["campaign_id"] = id_;
  j["mode"] = mode_name(config_.mode);
  j["results"] = json::array();
  if (engine_) {
    j["depth"] = config_.depth;
    for (const auto& r : engine_->export_rows()) {
      j["results"].push_back({{"item_id", r.item_id},
                              {"bucket_path", r.bucket_path},
                              {"bucket_index", r.bucket_index},
                              {"normalized_score", r.normalized_score}});
    }
  } else {
    j["protocol"] = config_.protocol.name();
    std::map<std::string, std::vector<double>> values;
    for (const auto& r : scalar_) values[r.item_id].push_back(to_unit_scale(r));
    for (const auto& it : config_.items) {
      const auto& v = values.at(it.id);
      j["results"].push_back(
          {{"item_id", it.id}, {"normalized_score", aggregate(v)}, {"n_responses", v.size()}});
    }
  }
  return j;
}

json Campaign::to_json() const {
  json j;
  j["campaign_id"] = id_;
  j["config"] = ibws::to_json(config_);
  if (engine_) j["engine"] = engine_->to_json();
  j["scalar_responses"] = json::array();
  for (const auto& r : scalar_) {
    j["scalar_responses"].push_back({{"item_id", r.item_id},
                                     {"worker_id", r.worker_id},
                                     {"raw", encode_raw(r.raw)},
                                     {"duration_sec", r.duration},
                                     {"hit_id", r.hit_id}});
  }
  j["leases"] = json::array();
  for (const auto& [id, t] : leases_) j["leases"].push_back(ibws::to_json(t));
  j["closed_leases"] = closed_leases_;
  j["expired_leases"] = expired_leases_;
  j["next_lease"] = next_lease_;
  j["tasks_issued"] = tasks_issued_;
  j["tasks_answered"] = tasks_answered_;
  j["last_seq"] = last_seq_;
  j["completed_event"] = completed_event_;
  return j;
}

Campaign Campaign::from_json(const json& doc) {
  try {
    Campaign c = create(doc.at("campaign_id").get<std::string>(),
                        campaign_config_from_json(doc.at("config")));
    if (c.engine_) c.engine_ = PartitionState::from_json(doc.at("engine"));
    for (const auto& r : doc.at("scalar_responses")) {
      ScalarResponse s{r.at("item_id").get<std::string>(),
                       r.at("worker_id").get<std::string>(),
                       c.config_.protocol,
                       decode_raw(c.config_.protocol, r.at("raw").get<std::string>()),
                       r.at("duration_sec").get<double>(),
                       r.at("hit_id").get<std::string>()};
      ++c.answered_count_.at(s.item_id);
      c.annotated_by_[s.item_id].insert(s.worker_id);
      c.scalar_.push_back(std::move(s));
    }
    for (const auto& lj : doc.at("leases")) {
      Task t = task_from_json(lj);
      if (t.query) c.leased_query_[t.query->query_id] = t.lease_id;
      c.leases_[t.lease_id] = std::move(t);
    }
    c.closed_leases_ = doc.at("closed_leases").get<std::set<std::string>>();
    c.expired_leases_ = doc.at("expired_leases").get<std::set<std::string>>();
    c.next_lease_ = doc.at("next_lease").get<std::uint64_t>();
    c.tasks_issued_ = doc.at("tasks_issued").get<std::size_t>();
    c.tasks_answered_ = doc.at("tasks_answered").get<std::size_t>();
    c.last_seq_ = doc.at("last_seq").get<std::uint64_t>();
    c.completed_event_ = doc.at("completed_event").get<bool>();
    return c;
  } catch (const json::exception& e) {
    invalid(std::string("malformed campaign snapshot: ") + e.what());
  } catch (const std::out_of_range& e) {
    invalid(std::string("inconsistent campaign snapshot: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

EventLog::EventLog(std::filesystem::path dir, std::string campaign_id, std::size_t snapshot_every)
    : dir_(std::move(dir)), id_(std::move(campaign_id)), snapshot_every_(snapshot_every) {}

void EventLog::append(const Event& e) {
  if (persistent()) {
    std::string line = to_json(e).dump() + "\n";
    auto path = dir_ / (id_ + ".events.jsonl");
    std::FILE* f = std::fopen(path.c_str(), "ab");
    if (!f) throw std::runtime_error("cannot open " + path.string());
    bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size();
    ok = std::fflush(f) == 0 && ok;
    ok = ::fsync(fileno(f)) == 0 && ok;
    ok = std::fclose(f) == 0 && ok;
    if (!ok) throw std::runtime_error("failed to append to " + path.string());
  }
  events_.push_back(e);
}

bool EventLog::snapshot_due() const {
  return persistent() && snapshot_every_ > 0 && !events_.empty() &&
         events_.size() % snapshot_every_ == 0;
}

void EventLog::snapshot(const Campaign& c) {
  if (!persistent()) return;
  auto path = dir_ / (id_ + ".snapshot.json");
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp, json{{"seq", c.last_seq()}, {"state", c.to_json()}}.dump());
  std::filesystem::rename(tmp, path);
}

std::pair<Campaign, EventLog> EventLog::recover(const std::filesystem::path& dir,
                                                const std::string& campaign_id,
                                                std::size_t snapshot_every) {
  EventLog log(dir, campaign_id, snapshot_every);
  auto events_path = dir / (campaign_id + ".events.jsonl");
  std::string text = read_file(events_path);
  std::istringstream in(text);
  std::string line;
  std::string clean;
  bool torn = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      log.events_.push_back(event_from_json(json::parse(line)));
      clean += line + "\n";
    } catch (const std::exception&) {
      if (in.peek() != std::char_traits<char>::eof()) {
        invalid("corrupt event log " + events_path.string());
      }
      torn = true;
    }
  }
  if (torn || (!text.empty() && text.back() != '\n')) write_file(events_path, clean);

  std::optional<Campaign> c;
  auto snap_path = dir / (campaign_id + ".snapshot.json");
  if (std::filesystem::exists(snap_path)) {
    json snap = json::parse(read_file(snap_path));
    c = Campaign::from_json(snap.at("state"));
    for (const auto& e : log.events_) {
      if (e.seq > c->last_seq()) c->apply(e);
    }
  } else {
    c = Campaign::replay(log.events_);
  }
  return {std::move(*c), std::move(log)};
}

// ---------------------------------------------------------------------------

std::unique_ptr<CampaignHost> CampaignHost::create(std::string id, CampaignConfig cfg, double now,
                                                   EventLog log) {
  Event e{1, now, EventKind::created, json{{"campaign_id", id}, {"config", to_json(cfg)}}};
  Campaign c = Campaign::replay(std::span<const Event>(&e, 1));
  log.append(e);
  return std::make_unique<CampaignHost>(std::move(c), std::move(log));
}

void CampaignHost::record(Event e) {
  log_.append(e);
  campaign_.apply(e);
}

std::optional<Task> CampaignHost::next_task(const std::string& worker_id, double now) {
  std::lock_guard lock(mu_);
  Campaign trial = campaign_;
  auto e = trial.issue(worker_id, now, campaign_.last_seq() + 1);
  if (!e) return std::nullopt;
  log_.append(*e);
  campaign_ = std::move(trial);
  if (log_.snapshot_due()) log_.snapshot(campaign_);
  return task_from_json(e->payload.at("task"));
}

Ack CampaignHost::submit(const Submission& sub, double now) {
  std::lock_guard lock(mu_);
  if (campaign_.check(sub, now) == Campaign::Check::duplicate) {
    return Ack{true, campaign_.complete()};
  }
  record(Event{campaign_.last_seq() + 1, now, EventKind::response, to_json(sub)});
  if (log_.snapshot_due()) log_.snapshot(campaign_);
  if (campaign_.complete()) {
    record(Event{campaign_.last_seq() + 1, now, EventKind::completed, json::object()});
    if (log_.snapshot_due()) log_.snapshot(campaign_);
  }
  return Ack{false, campaign_.complete()};
}

json CampaignHost::describe() const {
  std::lock_guard lock(mu_);
  return {{"campaign_id", campaign_.id()},
          {"status", campaign_.complete() ? "complete" : "open"},
          {"created_at", log_.events().front().timestamp},
          {"config", to_json(campaign_.config())}};
}

json CampaignHost::progress() const {
  std::lock_guard lock(mu_);
  return campaign_.progress();
}

json CampaignHost::results() const {
  std::lock_guard lock(mu_);
  return campaign_.results();
}

std::vector<Event> CampaignHost::events() const {
  std::lock_guard lock(mu_);
  return log_.events();
}

std::string CampaignHost::export_log() const {
  std::lock_guard lock(mu_);
  std::string out;
  for (const auto& e : log_.events()) out += to_json(e).dump() + "\n";
  return out;
}

json CampaignHost::state() const {
  std::lock_guard lock(mu_);
  return campaign_.to_json();
}

ProtocolKind CampaignHost::protocol() const {
  std::lock_guard lock(mu_);
  return campaign_.config().protocol;
}

// ---------------------------------------------------------------------------

CampaignService::Clock CampaignService::system_clock() {
  return [] {
    using namespace std::chrono;
    return duration<double>(system_clock::now().time_since_epoch()).count();
  };
}

CampaignService::CampaignService(Clock clock) : clock_(std::move(clock)) {}

CampaignService::CampaignService(std::filesystem::path dir, Clock clock, std::size_t snapshot_every)
    : clock_(std::move(clock)), dir_(std::move(dir)), snapshot_every_(snapshot_every) {
  std::filesystem::create_directories(dir_);
  const std::string suffix = ".events.jsonl";
  for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
    std::string name = entry.path().filename().string();
    if (name.size() <= suffix.size() || !name.ends_with(suffix)) continue;
    std::string id = name.substr(0, name.size() - suffix.size());
    auto [campaign, log] = EventLog::recover(dir_, id, snapshot_every_);
    campaigns_[id] = std::make_unique<CampaignHost>(std::move(campaign), std::move(log));
    if (id.size() > 1 && id[0] == 'c') {
      try {
        next_id_ = std::max<std::uint64_t>(next_id_, std::stoull(id.substr(1)) + 1);
      } catch (const std::exception&) {
      }
    }
  }
}

std::string CampaignService::create(const CampaignConfig& cfg) {
  std::unique_lock lock(mu_);
  std::string id = "c" + std::to_string(next_id_);
  EventLog log = dir_.empty() ? EventLog() : EventLog(dir_, id, snapshot_every_);
  campaigns_[id] = CampaignHost::create(id, cfg, clock_(), std::move(log));
  ++next_id_;
  return id;
}

CampaignHost& CampaignService::get(const std::string& id) {
  std::shared_lock lock(mu_);
  auto it = campaigns_.find(id);
  if (it == campaigns_.end()) {
    throw CampaignError(CampaignError::Code::not_found, "no campaign '" + id + "'");
  }
  return *it->second;
}

std::vector<std::string> CampaignService::ids() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, c] : campaigns_) out.push_back(id);
  return out;
}

}  // namespace ibws
