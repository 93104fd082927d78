#include "ibws/partition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ibws/io.hpp"

namespace ibws {

using nlohmann::json;

namespace {

std::uint64_t pow3(int k) {
  std::uint64_t p = 1;
  for (int i = 0; i < k; ++i) p *= 3;
  return p;
}

bool contains(const std::vector<std::string>& v, const std::string& x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

std::ptrdiff_t position(const std::vector<std::string>& v, const std::string& x) {
  return std::find(v.begin(), v.end(), x) - v.begin();
}

std::optional<std::string> opt_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

}  // namespace

PartitionState::PartitionState(std::vector<Item> items, int depth, std::uint64_t seed,
                               DispatchMode mode)
    : items_(std::move(items)), depth_(depth), seed_(seed), mode_(mode), rng_(seed) {
  if (items_.empty()) throw PartitionError("item list is empty");
  if (depth_ < 1) throw PartitionError("depth must be >= 1");
  std::set<std::string> seen;
  std::vector<std::string> ids;
  ids.reserve(items_.size());
  for (const auto& it : items_) {
    if (it.id.empty()) throw PartitionError("item id is empty");
    if (!seen.insert(it.id).second) throw PartitionError("duplicate item id '" + it.id + "'");
    if (it.truth && !(*it.truth >= 0.0 && *it.truth <= 1.0)) {
      throw PartitionError("truth of '" + it.id + "' outside [0,1]");
    }
    ids.push_back(it.id);
  }
  place("", std::move(ids));
}

void PartitionState::place(const std::string& path, std::vector<std::string> members) {
  if (members.empty()) return;
  if (static_cast<int>(path.size()) == depth_) {
    leaves_[path] = std::move(members);
  } else if (members.size() == 1) {
    // A lone item needs no query; it stays central in every finer split.
    place(path + 'M', std::move(members));
  } else {
    Phase p;
    p.pool = std::move(members);
    active_.emplace(path, std::move(p));
  }
}

std::vector<std::string> PartitionState::sample(std::vector<std::string>& pool,
                                                std::size_t count) {
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::size_t j = pick(rng_);
    out.push_back(std::move(pool[j]));
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
  }
  return out;
}

std::string PartitionState::mint_query_id() { return "q" + std::to_string(next_query_seq_++); }

std::optional<BwsQuery> PartitionState::dispatch(const std::string& path, Phase& phase) {
  BwsQuery q;
  q.bucket_path = path;
  if (!phase.s_max) {
    if (!phase.in_flight.empty()) return std::nullopt;
    if (phase.pool.size() >= 4) {
      q.kind = QueryKind::pivot_seed;
      q.item_ids = sample(phase.pool, 4);
    } else {
      q.kind = QueryKind::small_bucket;
      q.item_ids = sample(phase.pool, phase.pool.size());
    }
  } else {
    if (phase.pool.empty()) return std::nullopt;
    if (mode_ == DispatchMode::sequential && !phase.in_flight.empty()) return std::nullopt;
    q.kind = QueryKind::pivot_compare;
    q.pivot_max = phase.s_max;
    q.pivot_min = phase.s_min;
    q.item_ids = {*phase.s_max, *phase.s_min};
    for (auto& e : sample(phase.pool, std::min<std::size_t>(2, phase.pool.size()))) {
      q.item_ids.push_back(std::move(e));
    }
  }
  q.query_id = mint_query_id();
  phase.in_flight.emplace(q.query_id, q);
  pending_path_[q.query_id] = path;
  ++queries_issued_;
  return q;
}

std::optional<BwsQuery> PartitionState::next_query() {
  for (auto& [path, phase] : active_) {
    if (auto q = dispatch(path, phase)) return q;
  }
  return std::nullopt;
}

std::vector<BwsQuery> PartitionState::pending() const {
  std::vector<BwsQuery> out;
  for (const auto& [id, path] : pending_path_) {
    out.push_back(active_.at(path).in_flight.at(id));
  }
  return out;
}

std::optional<BwsQuery> PartitionState::pending_query(const std::string& query_id) const {
  auto it = pending_path_.find(query_id);
  if (it == pending_path_.end()) return std::nullopt;
  return active_.at(it->second).in_flight.at(query_id);
}

void PartitionState::validate(const BwsResponse& resp) const {
  auto q = pending_query(resp.query_id);
  if (!q) throw PartitionError("unknown or already answered query '" + resp.query_id + "'");
  if (resp.best == resp.worst) throw PartitionError("best and worst must differ");
  if (!contains(q->item_ids, resp.best)) throw PartitionError("best item not in query");
  if (!contains(q->item_ids, resp.worst)) throw PartitionError("worst item not in query");
  if (!(resp.duration >= 0.0) || !std::isfinite(resp.duration)) {
    throw PartitionError("duration must be a finite non-negative number");
  }
  if (resp.full_order) {
    const auto& order = *resp.full_order;
    if (order.size() != q->item_ids.size()) {
      throw PartitionError("full_order must list every query item once");
    }
    std::set<std::string> a(order.begin(), order.end());
    std::set<std::string> b(q->item_ids.begin(), q->item_ids.end());
    if (a != b) throw PartitionError("full_order is not a permutation of the query items");
    if (order.front() != resp.best || order.back() != resp.worst) {
      throw PartitionError("full_order must start with best and end with worst");
    }
  }
}

void PartitionState::ingest_response(const BwsResponse& resp) {
  validate(resp);
  const std::string path = pending_path_.at(resp.query_id);
  Phase& phase = active_.at(path);
  BwsQuery q = std::move(phase.in_flight.at(resp.query_id));
  phase.in_flight.erase(resp.query_id);
  pending_path_.erase(resp.query_id);
  ++responses_ingested_;

  switch (q.kind) {
    case QueryKind::pivot_seed: {
      phase.s_max = resp.best;
      phase.s_min = resp.worst;
      for (const auto& id : q.item_ids) {
        if (id != resp.best && id != resp.worst) phase.middle.push_back(id);
      }
      break;
    }
    case QueryKind::small_bucket: {
      std::vector<std::string> order;
      if (resp.full_order) {
        order = *resp.full_order;
      } else {
        order.push_back(resp.best);
        for (const auto& id : q.item_ids) {
          if (id != resp.best && id != resp.worst) order.push_back(id);
        }
        order.push_back(resp.worst);
      }
      phase.upper.push_back(order.front());
      phase.lower.push_back(order.back());
      for (std::size_t i = 1; i + 1 < order.size(); ++i) phase.middle.push_back(order[i]);
      break;
    }
    case QueryKind::pivot_compare: {
      const std::string& s_max = *phase.s_max;
      const std::string& s_min = *phase.s_min;
      std::vector<std::string> fresh;
      for (const auto& id : q.item_ids) {
        if (id != s_max && id != s_min) fresh.push_back(id);
      }
      if (fresh.size() == 1) {
        const auto& e = fresh.front();
        if (resp.best == e) {
          phase.upper.push_back(e);
        } else if (resp.worst == e) {
          phase.lower.push_back(e);
        } else {
          phase.middle.push_back(e);
        }
        break;
      }
      const bool best_fresh = contains(fresh, resp.best);
      const bool worst_fresh = contains(fresh, resp.worst);
      if (best_fresh && worst_fresh) {
        phase.upper.push_back(resp.best);
        phase.lower.push_back(resp.worst);
      } else if (best_fresh) {
        phase.upper.push_back(resp.best);
        const auto& other = fresh[0] == resp.best ? fresh[1] : fresh[0];
        // Without a full order we cannot tell whether `other` beat s_max.
        if (resp.full_order &&
            position(*resp.full_order, other) < position(*resp.full_order, s_max)) {
          phase.upper.push_back(other);
        } else {
          phase.middle.push_back(other);
        }
      } else if (worst_fresh) {
        phase.lower.push_back(resp.worst);
        const auto& other = fresh[0] == resp.worst ? fresh[1] : fresh[0];
        if (resp.full_order &&
            position(*resp.full_order, other) > position(*resp.full_order, s_min)) {
          phase.lower.push_back(other);
        } else {
          phase.middle.push_back(other);
        }
      } else {
        // Both extremes are pivots (in either orientation).
        phase.middle.push_back(fresh[0]);
        phase.middle.push_back(fresh[1]);
      }
      break;
    }
  }
  maybe_finish(path);
}

void PartitionState::maybe_finish(const std::string& path) {
  auto it = active_.find(path);
  Phase& phase = it->second;
  if (!phase.pool.empty() || !phase.in_flight.empty()) return;
  const bool small_done = !phase.s_max && (!phase.upper.empty() || !phase.lower.empty());
  if (!phase.s_max && !small_done) return;
  Phase done = std::move(phase);
  active_.erase(it);
  if (done.s_max) {
    done.lower.push_back(*done.s_min);
    done.upper.push_back(*done.s_max);
  }
  place(path + 'L', std::move(done.lower));
  place(path + 'M', std::move(done.middle));
  place(path + 'U', std::move(done.upper));
}

std::map<std::string, std::size_t> PartitionState::occupancy() const {
  std::map<std::string, std::size_t> out;
  for (const auto& [path, ids] : leaves_) out[path] = ids.size();
  for (const auto& [path, p] : active_) {
    std::size_t n = p.pool.size() + p.lower.size() + p.middle.size() + p.upper.size();
    if (p.s_max) n += 2;
    for (const auto& [id, q] : p.in_flight) {
      n += q.item_ids.size() - (q.kind == QueryKind::pivot_compare ? 2 : 0);
    }
    out[path] = n;
  }
  return out;
}

bool PartitionState::conserves_items() const {
  std::map<std::string, int> seen;
  for (const auto& [path, ids] : leaves_) {
    for (const auto& id : ids) ++seen[id];
  }
  for (const auto& [path, p] : active_) {
    for (const auto* v : {&p.pool, &p.lower, &p.middle, &p.upper}) {
      for (const auto& id : *v) ++seen[id];
    }
    if (p.s_max) ++seen[*p.s_max];
    if (p.s_min) ++seen[*p.s_min];
    for (const auto& [qid, q] : p.in_flight) {
      for (const auto& id : q.item_ids) {
        if (q.kind == QueryKind::pivot_compare && (id == *p.s_max || id == *p.s_min)) continue;
        ++seen[id];
      }
    }
  }
  if (seen.size() != items_.size()) return false;
  for (const auto& it : items_) {
    auto f = seen.find(it.id);
    if (f == seen.end() || f->second != 1) return false;
  }
  return true;
}

std::uint64_t PartitionState::bucket_index(const std::string& path) {
  std::uint64_t idx = 0;
  for (char c : path) {
    idx *= 3;
    switch (c) {
      case 'L': break;
      case 'M': idx += 1; break;
      case 'U': idx += 2; break;
      default: throw PartitionError("bad bucket path '" + path + "'");
    }
  }
  return idx;
}

double PartitionState::normalized_score(const std::string& path, int depth) {
  if (static_cast<int>(path.size()) != depth) {
    throw PartitionError("bucket path '" + path + "' is not a leaf at depth " +
                         std::to_string(depth));
  }
  return static_cast<double>(bucket_index(path)) / static_cast<double>(pow3(depth) - 1);
}

std::map<std::string, double> PartitionState::bucket_scores() const {
  if (!complete()) throw PartitionError("partition is not complete");
  std::map<std::string, double> out;
  for (const auto& [path, ids] : leaves_) {
    double s = normalized_score(path, depth_);
    for (const auto& id : ids) out[id] = s;
  }
  return out;
}

std::vector<BucketRow> PartitionState::export_rows() const {
  if (!complete()) throw PartitionError("partition is not complete");
  std::vector<BucketRow> rows;
  for (const auto& [path, ids] : leaves_) {
    for (const auto& id : ids) {
      rows.push_back({id, path, bucket_index(path), normalized_score(path, depth_)});
    }
  }
  return rows;
}

json PartitionState::to_json() const {
  json doc;
  doc["schema"] = kSchema;
  doc["depth"] = depth_;
  doc["seed"] = seed_;
  doc["mode"] = ibws::to_string(mode_);
  std::ostringstream rng;
  rng << rng_;
  doc["rng_state"] = rng.str();
  doc["next_query_seq"] = next_query_seq_;
  doc["queries_issued"] = queries_issued_;
  doc["responses_ingested"] = responses_ingested_;
  json items = json::array();
  for (const auto& it : items_) items.push_back(ibws::to_json(it));
  doc["items"] = std::move(items);
  doc["leaves"] = leaves_;
  json active = json::object();
  for (const auto& [path, p] : active_) {
    json a;
    a["pool"] = p.pool;
    a["s_max"] = p.s_max ? json(*p.s_max) : json(nullptr);
    a["s_min"] = p.s_min ? json(*p.s_min) : json(nullptr);
    a["lower"] = p.lower;
    a["middle"] = p.middle;
    a["upper"] = p.upper;
    json inflight = json::array();
    for (const auto& [id, q] : p.in_flight) inflight.push_back(ibws::to_json(q));
    a["in_flight"] = std::move(inflight);
    active[path] = std::move(a);
  }
  doc["active"] = std::move(active);
  return doc;
}

PartitionState PartitionState::from_json(const json& doc) {
  try {
    if (doc.at("schema").get<std::string>() != kSchema) {
      throw FormatError("unsupported partition schema '" + doc.at("schema").get<std::string>() +
                        "'");
    }
    PartitionState st;
    st.depth_ = doc.at("depth").get<int>();
    st.seed_ = doc.at("seed").get<std::uint64_t>();
    st.mode_ = dispatch_mode_from_string(doc.at("mode").get<std::string>());
    std::istringstream rng(doc.at("rng_state").get<std::string>());
    rng >> st.rng_;
    if (!rng) throw FormatError("corrupt rng_state");
    st.next_query_seq_ = doc.at("next_query_seq").get<std::uint64_t>();
    st.queries_issued_ = doc.at("queries_issued").get<std::size_t>();
    st.responses_ingested_ = doc.at("responses_ingested").get<std::size_t>();
    for (const auto& it : doc.at("items")) st.items_.push_back(item_from_json(it));
    st.leaves_ = doc.at("leaves").get<std::map<std::string, std::vector<std::string>>>();
    for (const auto& [path, a] : doc.at("active").items()) {
      Phase p;
      p.pool = a.at("pool").get<std::vector<std::string>>();
      p.s_max = opt_string(a, "s_max");
      p.s_min = opt_string(a, "s_min");
      p.lower = a.at("lower").get<std::vector<std::string>>();
      p.middle = a.at("middle").get<std::vector<std::string>>();
      p.upper = a.at("upper").get<std::vector<std::string>>();
      for (const auto& qj : a.at("in_flight")) {
        BwsQuery q = query_from_json(qj);
        st.pending_path_[q.query_id] = path;
        p.in_flight.emplace(q.query_id, std::move(q));
      }
      st.active_.emplace(path, std::move(p));
    }
    if (!st.conserves_items()) throw FormatError("partition document loses or duplicates items");
    return st;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed partition document: ") + e.what());
  }
}

BwsResponse oracle_response(const BwsQuery& q, const std::map<std::string, double>& truth) {
  std::vector<std::string> order = q.item_ids;
  std::stable_sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
    return truth.at(a) > truth.at(b);
  });
  BwsResponse r;
  r.query_id = q.query_id;
  r.best = order.front();
  r.worst = order.back();
  r.full_order = std::move(order);
  r.worker_id = "oracle";
  return r;
}

std::size_t query_count(const std::vector<Item>& items, int depth, std::uint64_t seed) {
  std::map<std::string, double> truth;
  for (const auto& it : items) {
    if (!it.truth) throw PartitionError("query_count needs truth on every item");
    truth[it.id] = *it.truth;
  }
  PartitionState st(items, depth, seed);
  while (!st.complete()) {
    auto q = st.next_query();
    if (!q) throw std::logic_error("dispatch stalled with no pending query");
    st.ingest_response(oracle_response(*q, truth));
  }
  return st.queries_issued();
}

std::size_t query_count(int n, int depth, std::uint64_t seed) {
  if (n < 1) throw PartitionError("n must be >= 1");
  std::vector<Item> items;
  items.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    items.push_back({"item-" + std::to_string(i), "", (i + 1.0) / (n + 1.0)});
  }
  return query_count(items, depth, seed);
}

std::string to_string(QueryKind k) {
  switch (k) {
    case QueryKind::pivot_seed: return "pivot_seed";
    case QueryKind::pivot_compare: return "pivot_compare";
    case QueryKind::small_bucket: return "small_bucket";
  }
  return "?";
}

QueryKind query_kind_from_string(const std::string& s) {
  if (s == "pivot_seed") return QueryKind::pivot_seed;
  if (s == "pivot_compare") return QueryKind::pivot_compare;
  if (s == "small_bucket") return QueryKind::small_bucket;
  throw FormatError("unknown query kind '" + s + "'");
}

std::string to_string(DispatchMode m) {
  return m == DispatchMode::sequential ? "sequential" : "parallel";
}

DispatchMode dispatch_mode_from_string(const std::string& s) {
  if (s == "sequential") return DispatchMode::sequential;
  if (s == "parallel") return DispatchMode::parallel;
  throw FormatError("unknown dispatch mode '" + s + "'");
}

json to_json(const BwsQuery& q) {
  json j;
  j["query_id"] = q.query_id;
  j["item_ids"] = q.item_ids;
  j["pivot_max"] = q.pivot_max ? json(*q.pivot_max) : json(nullptr);
  j["pivot_min"] = q.pivot_min ? json(*q.pivot_min) : json(nullptr);
  j["bucket_path"] = q.bucket_path;
  j["kind"] = to_string(q.kind);
  return j;
}

BwsQuery query_from_json(const json& j) {
  BwsQuery q;
  q.query_id = j.at("query_id").get<std::string>();
  q.item_ids = j.at("item_ids").get<std::vector<std::string>>();
  q.pivot_max = opt_string(j, "pivot_max");
  q.pivot_min = opt_string(j, "pivot_min");
  q.bucket_path = j.at("bucket_path").get<std::string>();
  q.kind = query_kind_from_string(j.at("kind").get<std::string>());
  return q;
}

json to_json(const BwsResponse& r) {
  json j;
  j["query_id"] = r.query_id;
  j["best"] = r.best;
  j["worst"] = r.worst;
  j["full_order"] = r.full_order ? json(*r.full_order) : json(nullptr);
  j["worker_id"] = r.worker_id;
  j["duration_sec"] = r.duration;
  return j;
}

BwsResponse response_from_json(const json& j) {
  BwsResponse r;
  r.query_id = j.at("query_id").get<std::string>();
  r.best = j.at("best").get<std::string>();
  r.worst = j.at("worst").get<std::string>();
  if (auto it = j.find("full_order"); it != j.end() && !it->is_null()) {
    r.full_order = it->get<std::vector<std::string>>();
  }
  r.worker_id = j.value("worker_id", std::string{});
  r.duration = j.value("duration_sec", 0.0);
  return r;
}

json to_json(const Item& item) {
  json j;
  j["id"] = item.id;
  j["text"] = item.payload;
  if (item.truth) j["truth"] = *item.truth;
  return j;
}

Item item_from_json(const json& j) {
  Item it;
  it.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
  it.payload = j.value("text", std::string{});
  if (auto t = j.find("truth"); t != j.end() && !t->is_null()) it.truth = t->get<double>();
  return it;
}

std::vector<Item> load_items(const std::filesystem::path& path) {
  std::vector<Item> items;
  if (path.extension() == ".jsonl") {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        items.push_back(item_from_json(json::parse(line)));
      } catch (const json::exception& e) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    return items;
  }
  Table t = read_table(path);
  int id = t.require_column("id");
  int text = t.column("text");
  int truth = t.column("truth");
  for (const auto& r : t.rows) {
    Item it{r[id], text >= 0 ? r[text] : std::string{}, std::nullopt};
    if (truth >= 0 && !r[truth].empty()) it.truth = parse_double(r[truth]);
    items.push_back(std::move(it));
  }
  return items;
}

void save_items(const std::filesystem::path& path, const std::vector<Item>& items) {
  if (path.extension() == ".jsonl") {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    for (const auto& it : items) out << to_json(it).dump() << '\n';
    return;
  }
  Table t;
  t.header = {"id", "text", "truth"};
  for (const auto& it : items) {
    t.rows.push_back({it.id, it.payload, it.truth ? format_double(*it.truth) : ""});
  }
  write_table(path, t);
}

}  // namespace ibws
