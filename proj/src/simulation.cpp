#include "ibws/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "ibws/io.hpp"

namespace ibws {

using nlohmann::json;

void validate(const WorkerProfile& p) {
  if (!(p.scale_a > 0.0)) throw std::invalid_argument("worker " + p.id + ": scale_a must be > 0");
  if (!(p.noise_sigma >= 0.0)) throw std::invalid_argument("worker " + p.id + ": noise_sigma < 0");
  if (!(p.inversion_rate >= 0.0 && p.inversion_rate <= 1.0)) {
    throw std::invalid_argument("worker " + p.id + ": inversion_rate outside [0,1]");
  }
}

double perceive(double truth, const WorkerProfile& profile, std::mt19937_64& rng) {
  double v = profile.scale_a * truth + profile.bias_b;
  if (profile.noise_sigma > 0.0) {
    std::normal_distribution<double> eps(0.0, profile.noise_sigma);
    v += eps(rng);
  }
  v = std::clamp(v, 0.0, 1.0);
  if (profile.inversion_rate > 0.0) {
    std::bernoulli_distribution flip(profile.inversion_rate);
    if (flip(rng)) v = 1.0 - v;
  }
  return v;
}

std::string to_string(BwsInterface i) {
  return i == BwsInterface::two_column ? "two_column" : "vertical_drag";
}

BwsInterface bws_interface_from_string(const std::string& s) {
  if (s == "two_column") return BwsInterface::two_column;
  if (s == "vertical_drag") return BwsInterface::vertical_drag;
  throw std::invalid_argument("unknown BWS interface '" + s + "'");
}

BwsResponse simulate_bws(const BwsQuery& query, const std::map<std::string, double>& truth,
                         const WorkerProfile& profile, std::mt19937_64& rng,
                         BwsInterface interface) {
  std::vector<std::pair<std::string, double>> seen;
  for (const auto& id : query.item_ids) {
    auto t = truth.find(id);
    if (t == truth.end()) throw std::invalid_argument("no truth for item '" + id + "'");
    seen.emplace_back(id, perceive(t->second, profile, rng));
  }
  std::shuffle(seen.begin(), seen.end(), rng);
  std::stable_sort(seen.begin(), seen.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  BwsResponse r;
  r.query_id = query.query_id;
  r.best = seen.front().first;
  r.worst = seen.back().first;
  if (interface == BwsInterface::vertical_drag) {
    std::vector<std::string> order;
    for (const auto& [id, v] : seen) order.push_back(id);
    r.full_order = std::move(order);
  }
  r.worker_id = profile.id;
  r.duration = simulated_duration(interface, rng);
  return r;
}

namespace {

double quantize_magnitude(double m, Scale scale) {
  switch (scale) {
    case Scale::ordinal7: return std::round(m * 3.0) / 3.0;  // slightly/moderately/strongly
    case Scale::slider: return std::round(m * 100.0) / 100.0;
    case Scale::vas: return m;
  }
  return m;
}

double lognormal_factor(std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 0.3);
  return std::exp(z(rng));
}

}  // namespace

RawAnswer quantize(double perceived, const ProtocolKind& protocol) {
  const double p = std::clamp(perceived, 0.0, 1.0);
  if (protocol.arity == Arity::single) {
    switch (protocol.scale) {
      case Scale::ordinal7: return OrdinalLabel{1 + static_cast<int>(std::lround(p * 6.0))};
      case Scale::slider: return SliderPosition{static_cast<int>(std::lround(p * 100.0))};
      case Scale::vas: return VasPosition{p};
    }
  }
  const double d = p - 0.5;
  const double m = std::min(1.0, quantize_magnitude(std::abs(d) * 2.0, protocol.scale));
  if (m == 0.0) return DualRating{Polarity::neutral, std::nullopt};
  return DualRating{d > 0 ? Polarity::positive : Polarity::negative, m};
}

double simulated_duration(const ProtocolKind& protocol, std::mt19937_64& rng) {
  double base = 0;
  switch (protocol.scale) {
    case Scale::ordinal7: base = 7.0; break;
    case Scale::slider: base = 6.0; break;
    case Scale::vas: base = 8.0; break;
  }
  if (protocol.arity == Arity::dual) base *= 1.4;
  return base * lognormal_factor(rng);
}

double simulated_duration(BwsInterface interface, std::mt19937_64& rng) {
  double base = interface == BwsInterface::two_column ? 15.0 : 20.0;
  return base * lognormal_factor(rng);
}

void validate(const SimConfig& cfg) {
  if (cfg.items.empty()) throw std::invalid_argument("simulation needs items");
  for (const auto& it : cfg.items) {
    if (!it.truth) throw std::invalid_argument("item '" + it.id + "' has no truth");
  }
  if (cfg.workers.empty()) throw std::invalid_argument("simulation needs at least one worker");
  std::set<std::string> ids;
  for (const auto& w : cfg.workers) {
    validate(w);
    if (!ids.insert(w.id).second) throw std::invalid_argument("duplicate worker id '" + w.id + "'");
  }
  if (const auto* s = std::get_if<ScalarSimMode>(&cfg.mode)) {
    if (s->redundancy < 1) throw std::invalid_argument("redundancy must be >= 1");
    if (s->batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (static_cast<std::size_t>(s->redundancy) > cfg.workers.size()) {
      throw std::invalid_argument("redundancy exceeds the number of workers");
    }
  } else if (std::get<IbwsSimMode>(cfg.mode).depth < 1) {
    throw std::invalid_argument("depth must be >= 1");
  }
}

namespace {

Dataset run_ibws(const SimConfig& cfg, const IbwsSimMode& mode, std::mt19937_64& rng) {
  Dataset ds;
  auto truth = truth_map(cfg.items);
  PartitionState st(cfg.items, mode.depth, cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, cfg.workers.size() - 1);
  while (!st.complete()) {
    auto q = st.next_query();
    if (!q) throw std::logic_error("engine stalled");
    const auto& worker = cfg.workers[pick(rng)];
    auto resp = simulate_bws(*q, truth, worker, rng, mode.interface);
    st.ingest_response(resp);
    ds.queries.push_back(std::move(*q));
    ds.bws_responses.push_back(std::move(resp));
  }
  ds.buckets = st.export_rows();
  ds.scores = st.bucket_scores();
  return ds;
}

Dataset run_scalar(const SimConfig& cfg, const ScalarSimMode& mode, std::mt19937_64& rng) {
  Dataset ds;
  const std::size_t n = cfg.items.size();
  std::vector<std::set<std::size_t>> done(cfg.workers.size());  // items per worker
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t hit = 0;
  const auto batch_size = static_cast<std::size_t>(mode.batch_size);
  for (int round = 0; round < mode.redundancy; ++round) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> remaining = order;
    while (!remaining.empty()) {
      // The worker is drawn first, then the HIT is filled with items it has
      // not rated yet. Some worker always qualifies while redundancy <= pool.
      std::vector<std::size_t> eligible;
      for (std::size_t w = 0; w < cfg.workers.size(); ++w) {
        for (std::size_t i : remaining) {
          if (!done[w].count(i)) {
            eligible.push_back(w);
            break;
          }
        }
      }
      if (eligible.empty()) throw std::logic_error("no worker can take the remaining items");
      std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
      std::size_t w = eligible[pick(rng)];
      std::vector<std::size_t> batch, rest;
      for (std::size_t i : remaining) {
        (batch.size() < batch_size && !done[w].count(i) ? batch : rest).push_back(i);
      }
      remaining = std::move(rest);
      const auto& worker = cfg.workers[w];
      std::string hit_id = "hit-" + std::to_string(hit++);
      for (std::size_t i : batch) {
        const Item& item = cfg.items[i];
        done[w].insert(i);
        ScalarResponse r;
        r.item_id = item.id;
        r.worker_id = worker.id;
        r.protocol = mode.protocol;
        r.raw = quantize(perceive(*item.truth, worker, rng), mode.protocol);
        r.duration = simulated_duration(mode.protocol, rng);
        r.hit_id = hit_id;
        ds.scalar_responses.push_back(std::move(r));
      }
    }
  }
  std::map<std::string, std::vector<double>> per_item;
  for (const auto& r : ds.scalar_responses) per_item[r.item_id].push_back(to_unit_scale(r));
  for (const auto& [id, vals] : per_item) ds.scores[id] = aggregate(vals);
  return ds;
}

}  // namespace

Dataset run_campaign(const SimConfig& cfg) {
  validate(cfg);
  // Separate stream from the engine's sampler, which is seeded with cfg.seed.
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    0x5157u};
  std::mt19937_64 rng(seq);
  if (const auto* m = std::get_if<IbwsSimMode>(&cfg.mode)) return run_ibws(cfg, *m, rng);
  return run_scalar(cfg, std::get<ScalarSimMode>(cfg.mode), rng);
}

std::vector<WorkerProfile> uniform_pool(int count, double sigma) {
  std::vector<WorkerProfile> out;
  for (int i = 0; i < count; ++i) out.push_back({"w" + std::to_string(i), 1.0, 0.0, sigma, 0.0});
  return out;
}

std::vector<Item> synthetic_items(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Item> items;
  for (int i = 0; i < n; ++i) {
    items.push_back({"item-" + std::to_string(i), "synthetic item " + std::to_string(i), u(rng)});
  }
  return items;
}

std::map<std::string, double> truth_map(const std::vector<Item>& items) {
  std::map<std::string, double> m;
  for (const auto& it : items) {
    if (it.truth) m[it.id] = *it.truth;
  }
  return m;
}

json to_json(const WorkerProfile& p) {
  return {{"id", p.id},
          {"scale_a", p.scale_a},
          {"bias_b", p.bias_b},
          {"noise_sigma", p.noise_sigma},
          {"inversion_rate", p.inversion_rate}};
}

WorkerProfile worker_from_json(const json& j) {
  WorkerProfile p;
  p.id = j.at("id").get<std::string>();
  p.scale_a = j.value("scale_a", 1.0);
  p.bias_b = j.value("bias_b", 0.0);
  p.noise_sigma = j.value("noise_sigma", 0.0);
  p.inversion_rate = j.value("inversion_rate", 0.0);
  return p;
}

json to_json(const SimConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  json items = json::array();
  for (const auto& it : cfg.items) items.push_back(to_json(it));
  j["items"] = std::move(items);
  json workers = json::array();
  for (const auto& w : cfg.workers) workers.push_back(to_json(w));
  j["workers"] = std::move(workers);
  if (const auto* m = std::get_if<IbwsSimMode>(&cfg.mode)) {
    j["mode"] = {{"kind", "ibws"}, {"depth", m->depth}, {"interface", to_string(m->interface)}};
  } else {
    const auto& s = std::get<ScalarSimMode>(cfg.mode);
    j["mode"] = {{"kind", "scalar"},
                 {"protocol", s.protocol.name()},
                 {"redundancy", s.redundancy},
                 {"batch_size", s.batch_size}};
  }
  return j;
}

SimConfig sim_config_from_json(const json& j) {
  try {
    SimConfig cfg;
    cfg.seed = j.value("seed", std::uint64_t{0});
    if (auto it = j.find("items"); it != j.end()) {
      for (const auto& x : *it) cfg.items.push_back(item_from_json(x));
    }
    for (const auto& w : j.at("workers")) cfg.workers.push_back(worker_from_json(w));
    const auto& m = j.at("mode");
    const auto kind = m.at("kind").get<std::string>();
    if (kind == "ibws") {
      cfg.mode = IbwsSimMode{m.value("depth", 3),
                             bws_interface_from_string(m.value("interface", std::string("vertical_drag")))};
    } else if (kind == "scalar") {
      cfg.mode = ScalarSimMode{ProtocolKind::parse(m.at("protocol").get<std::string>()),
                               m.value("redundancy", 1), m.value("batch_size", 5)};
    } else {
      throw FormatError("unknown simulation mode '" + kind + "'");
    }
    return cfg;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed simulation config: ") + e.what());
  }
}

}  // namespace ibws
