// ibws: simulate campaigns, compute reliability metrics, train rankers, and
// run the campaign service.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "ibws/campaign.hpp"
#include "ibws/io.hpp"
#include "ibws/ltr.hpp"
#include "ibws/metrics.hpp"
#include "ibws/partition.hpp"
#include "ibws/protocols.hpp"
#include "ibws/server.hpp"
#include "ibws/simulation.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ibws;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string out;
};

void emit(const Globals& g, const std::string& text) {
  if (g.out.empty() || g.out == "-") {
    std::cout << text;
  } else {
    write_file(g.out, text);
  }
}

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw FormatError("no such file: " + path);
}

// Rows {item_id, score}.
std::map<std::string, double> load_scores(const std::string& path) {
  require_file(path);
  Table t = read_table(path);
  int id = t.require_column("item_id");
  int sc = t.column("score");
  if (sc < 0) sc = t.require_column("normalized_score");
  std::map<std::string, double> out;
  for (const auto& r : t.rows) out[r[id]] = parse_double(r[sc]);
  return out;
}

void save_scores(const fs::path& path, const std::vector<Item>& items,
                 const std::map<std::string, double>& scores) {
  Table t;
  t.header = {"item_id", "score"};
  for (const auto& it : items) {
    if (auto s = scores.find(it.id); s != scores.end()) {
      t.rows.push_back({it.id, format_double(s->second)});
    }
  }
  write_table(path, t);
}

std::map<std::string, double> reference_from(const std::string& path) {
  require_file(path);
  if (fs::path(path).extension() == ".jsonl") {
    auto m = truth_map(load_items(path));
    if (m.empty()) throw FormatError(path + " has no truth values");
    return m;
  }
  Table t = read_table(path);
  if (t.column("truth") >= 0) return truth_map(load_items(path));
  return load_scores(path);
}

json distribution_json(const Distribution& d) {
  return {{"n", d.values.size()}, {"mean", d.mean}, {"median", d.median}, {"q05", d.q05},
          {"q25", d.q25},         {"q75", d.q75},   {"q95", d.q95}};
}

std::vector<int> parse_levels(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(static_cast<int>(parse_int(tok)));
  }
  if (out.empty()) throw FormatError("no levels given");
  return out;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string mode = "ibws";
  std::string items;
  int n = 0;
  int depth = 3;
  std::string interface = "vertical_drag";
  std::string protocol = "single_slider";
  int redundancy = 3;
  int batch_size = 5;
  int workers = 20;
  double sigma = 0.1;
  std::string workers_file;
  std::string config;
};

int cmd_simulate(const Globals& g, const SimulateArgs& a) {
  SimConfig cfg;
  if (!a.config.empty()) {
    require_file(a.config);
    cfg = sim_config_from_json(json::parse(read_file(a.config)));
  } else {
    if (!a.items.empty()) {
      require_file(a.items);
      cfg.items = load_items(a.items);
    } else if (a.n > 0) {
      cfg.items = synthetic_items(a.n, g.seed);
    } else {
      throw CLI::ValidationError("simulate", "either --items, --n or --config is required");
    }
    if (!a.workers_file.empty()) {
      require_file(a.workers_file);
      for (const auto& w : json::parse(read_file(a.workers_file))) cfg.workers.push_back(worker_from_json(w));
    } else {
      cfg.workers = uniform_pool(a.workers, a.sigma);
    }
    if (a.mode == "ibws") {
      cfg.mode = IbwsSimMode{a.depth, bws_interface_from_string(a.interface)};
    } else {
      cfg.mode = ScalarSimMode{ProtocolKind::parse(a.protocol), a.redundancy, a.batch_size};
    }
    cfg.seed = g.seed;
  }
  validate(cfg);
  if (g.out.empty()) throw CLI::ValidationError("--out", "simulate needs an output directory");
  fs::path dir(g.out);
  fs::create_directories(dir);

  Dataset d = run_campaign(cfg);
  json summary;
  summary["n_items"] = cfg.items.size();
  summary["seed"] = cfg.seed;
  if (std::holds_alternative<IbwsSimMode>(cfg.mode)) {
    const auto& m = std::get<IbwsSimMode>(cfg.mode);
    summary["mode"] = "ibws";
    summary["depth"] = m.depth;
    summary["queries"] = d.queries.size();
    std::string lines;
    for (const auto& r : d.bws_responses) lines += to_json(r).dump() + "\n";
    write_file(dir / "bws_responses.jsonl", lines);
    Table t;
    t.header = {"item_id", "bucket_path", "bucket_index", "normalized_score"};
    for (const auto& r : d.buckets) {
      t.rows.push_back({r.item_id, r.bucket_path, std::to_string(r.bucket_index),
                        format_double(r.normalized_score)});
    }
    write_table(dir / "buckets.csv", t);
  } else {
    const auto& m = std::get<ScalarSimMode>(cfg.mode);
    summary["mode"] = "scalar";
    summary["protocol"] = m.protocol.name();
    summary["redundancy"] = m.redundancy;
    save_responses(dir / "responses.csv", d.scalar_responses);
    RatingsMatrix slots = matrix_by_slot(d.scalar_responses);
    if (slots.cols() >= 2 && slots.is_complete()) {
      summary["icc3k"] = icc(slots, IccVariant::icc3k);
    }
  }
  std::vector<double> durations;
  for (const auto& r : d.bws_responses) durations.push_back(r.duration);
  for (const auto& r : d.scalar_responses) durations.push_back(r.duration);
  summary["total_duration_sec"] = std::accumulate(durations.begin(), durations.end(), 0.0);
  save_scores(dir / "scores.csv", cfg.items, d.scores);
  save_items(dir / "items.csv", cfg.items);

  auto truth = truth_map(cfg.items);
  if (truth.size() == cfg.items.size() && cfg.items.size() >= 2) {
    std::vector<double> x, y;
    for (const auto& it : cfg.items) {
      x.push_back(d.scores.at(it.id));
      y.push_back(truth.at(it.id));
    }
    try {
      summary["spearman_vs_truth"] = spearman_rho(x, y);
    } catch (const MetricError&) {
      summary["spearman_vs_truth"] = nullptr;
    }
  }
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------

struct MetricsArgs {
  std::string metric;
  std::string responses;
  std::string matrix;
  std::string scores;
  std::string reference;
  std::string buckets;
  std::string by = "slot";
  int trials = 200;
  std::string levels = "1,2,3";
  double fraction = 0.2;
};

RatingsMatrix matrix_input(const MetricsArgs& a) {
  if (!a.matrix.empty()) {
    require_file(a.matrix);
    return load_matrix(a.matrix);
  }
  if (!a.responses.empty()) {
    require_file(a.responses);
    auto rows = load_responses(a.responses);
    return a.by == "worker" ? matrix_by_worker(rows) : matrix_by_slot(rows);
  }
  throw CLI::ValidationError("metrics", "--matrix or --responses is required");
}

std::vector<ScalarResponse> responses_input(const MetricsArgs& a) {
  if (a.responses.empty()) throw CLI::ValidationError("metrics", "--responses is required");
  require_file(a.responses);
  return load_responses(a.responses);
}

int cmd_metrics(const Globals& g, const MetricsArgs& a) {
  json report;
  report["metric"] = a.metric;
  json params = json::object();
  json values;
  const std::string& m = a.metric;

  if (m == "spearman") {
    if (a.scores.empty() || a.reference.empty()) {
      throw CLI::ValidationError("metrics", "spearman needs --scores and --reference");
    }
    auto s = load_scores(a.scores);
    auto ref = reference_from(a.reference);
    std::vector<double> x, y;
    for (const auto& [id, v] : s) {
      if (auto r = ref.find(id); r != ref.end()) {
        x.push_back(v);
        y.push_back(r->second);
      }
    }
    params["n"] = x.size();
    values = {{"rho", spearman_rho(x, y)}};
  } else if (m == "split-half") {
    RatingsMatrix mat = matrix_input(a);
    params = {{"trials", a.trials}, {"seed", g.seed}, {"by", a.by}};
    values = distribution_json(split_half(mat, a.trials, g.seed));
  } else if (m == "icc1" || m == "icc3" || m == "icc1k" || m == "icc3k") {
    RatingsMatrix mat = matrix_input(a);
    params = {{"rows", mat.rows()}, {"cols", mat.cols()}, {"by", a.by}};
    values = {{"icc", icc(mat, icc_variant_from_string(m))}};
  } else if (m == "redundancy-sweep") {
    RatingsMatrix mat = matrix_input(a);
    if (a.reference.empty()) throw CLI::ValidationError("metrics", "redundancy-sweep needs --reference");
    auto ref = reference_from(a.reference);
    std::vector<double> r;
    for (const auto& id : mat.row_ids) {
      auto it = ref.find(id);
      if (it == ref.end()) throw FormatError("no reference value for '" + id + "'");
      r.push_back(it->second);
    }
    auto levels = parse_levels(a.levels);
    params = {{"levels", levels}, {"trials", a.trials}, {"seed", g.seed}, {"by", a.by}};
    values = json::array();
    for (const auto& lv : redundancy_sweep(mat, r, levels, a.trials, g.seed)) {
      values.push_back({{"level", lv.level}, {"mean", lv.mean}, {"median", lv.median}});
    }
  } else if (m == "bucket-means") {
    if (a.buckets.empty() || a.reference.empty()) {
      throw CLI::ValidationError("metrics", "bucket-means needs --buckets and --reference");
    }
    require_file(a.buckets);
    Table t = read_table(a.buckets);
    int id = t.require_column("item_id");
    int path = t.require_column("bucket_path");
    int idx = t.require_column("bucket_index");
    int score = t.require_column("normalized_score");
    std::vector<BucketRow> rows;
    for (const auto& r : t.rows) {
      rows.push_back({r[id], r[path], static_cast<std::uint64_t>(parse_int(r[idx])),
                      parse_double(r[score])});
    }
    values = json::array();
    for (const auto& b : bucket_mean_truth(rows, reference_from(a.reference))) {
      values.push_back({{"bucket_index", b.bucket_index},
                        {"bucket_path", b.bucket_path},
                        {"count", b.count},
                        {"mean_truth", b.mean_truth}});
    }
  } else if (m == "worker-quality") {
    auto rows = responses_input(a);
    values = json::array();
    for (const auto& w : worker_quality(annotations_from(rows))) {
      values.push_back({{"worker_id", w.worker_id},
                        {"score", w.score ? json(*w.score) : json(nullptr)},
                        {"n_items", w.n_items}});
    }
  } else if (m == "filter") {
    auto rows = responses_input(a);
    auto f = filter_workers(rows, a.fraction);
    params = {{"fraction", a.fraction}};
    values = {{"removed_workers", f.removed_workers}, {"kept", f.kept.size()}};
  } else if (m == "durations") {
    auto rows = responses_input(a);
    std::map<std::string, std::vector<double>> by_protocol;
    for (const auto& r : rows) by_protocol[r.protocol.name()].push_back(r.duration);
    values = json::object();
    for (auto& [name, d] : by_protocol) values[name] = distribution_json(summarize(std::move(d)));
  } else {
    throw CLI::ValidationError("--metric", "unknown metric '" + m + "'");
  }
  report["params"] = params;
  report["values"] = values;
  emit(g, report.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string responses;
  std::string scores;
  std::string features;
  std::string strategy = "global";
  int k = 2;
  double margin = 1.0;
  int epochs = 20;
  double learning_rate = 0.5;
  std::string loss_form = "corrected";
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  if (a.features.empty()) throw CLI::ValidationError("train", "--features is required");
  require_file(a.features);
  auto features = load_features(a.features);
  std::vector<AnnotatedSample> samples;
  auto feature_of = [&](const std::string& id) {
    auto it = features.find(id);
    if (it == features.end()) throw FormatError("no features for item '" + id + "'");
    return it->second;
  };
  if (!a.responses.empty()) {
    require_file(a.responses);
    for (const auto& r : load_responses(a.responses)) {
      samples.push_back({r.item_id, to_unit_scale(r), r.worker_id,
                         r.hit_id.empty() ? std::nullopt : std::optional<std::string>(r.hit_id),
                         std::nullopt, feature_of(r.item_id)});
    }
  } else if (!a.scores.empty()) {
    for (const auto& [id, s] : load_scores(a.scores)) {
      samples.push_back({id, s, "", std::nullopt, std::nullopt, feature_of(id)});
    }
  } else {
    throw CLI::ValidationError("train", "--responses or --scores is required");
  }
  if (samples.empty()) throw TrainingError("no training samples");
  const std::size_t dim = samples.front().features.size();

  HingeConfig hc;
  hc.margin = a.margin;
  hc.epochs = a.epochs;
  hc.learning_rate = a.learning_rate;
  hc.form = loss_form_from_string(a.loss_form);
  hc.seed = g.seed;
  auto pairs = generate_pairs(samples, PairStrategy::parse(a.strategy, a.k), g.seed);
  auto res = train(samples, pairs, dim, hc);

  if (g.out.empty()) throw CLI::ValidationError("--out", "train needs an output directory");
  fs::create_directories(g.out);
  json ranker = to_json(res.ranker);
  ranker["training"] = to_json(hc);
  ranker["training"]["strategy"] = a.strategy;
  ranker["training"]["k"] = a.k;
  ranker["training"]["pairs"] = pairs.size();
  write_file(fs::path(g.out) / "ranker.json", ranker.dump(2) + "\n");
  Table trace;
  trace.header = {"epoch", "loss"};
  for (std::size_t e = 0; e < res.loss_trace.size(); ++e) {
    trace.rows.push_back({std::to_string(e + 1), format_double(res.loss_trace[e])});
  }
  write_table(fs::path(g.out) / "loss_trace.csv", trace);
  return 0;
}

// ---------------------------------------------------------------------------

std::atomic<HttpServer*> g_server{nullptr};

void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

int cmd_serve(const std::string& host, int port, const std::string& data_dir, int snapshot_every) {
  std::unique_ptr<CampaignService> service;
  if (data_dir.empty()) {
    service = std::make_unique<CampaignService>();
  } else {
    service = std::make_unique<CampaignService>(data_dir, CampaignService::system_clock(),
                                                static_cast<std::size_t>(snapshot_every));
  }
  HttpServer server(*service);
  int bound = port;
  if (port == 0) {
    bound = server.bind_any(host);
    if (bound < 0) throw std::runtime_error("cannot bind " + host);
  } else if (!server.bind(host, port)) {
    throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  }
  std::cerr << "listening on http://" << host << ":" << bound << "/v1\n";
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.serve();
  g_server = nullptr;
  return 0;
}

int cmd_export(const Globals& g, const std::string& data_dir, const std::string& campaign) {
  if (!fs::exists(fs::path(data_dir) / (campaign + ".events.jsonl"))) {
    throw CampaignError(CampaignError::Code::not_found, "no event log for campaign '" + campaign + "'");
  }
  // recovery replays the log, so a successful export is a replayable one
  auto [c, log] = EventLog::recover(data_dir, campaign, 0);
  std::string out;
  for (const auto& e : log.events()) out += to_json(e).dump() + "\n";
  emit(g, out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iterated best-worst scaling toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--out", g.out, "Output file or directory");

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Run a simulated annotation campaign");
  sim->add_option("--mode", sa.mode)->check(CLI::IsMember({"ibws", "scalar"}))->capture_default_str();
  sim->add_option("--items", sa.items, "Items (.jsonl or table with id,text,truth)");
  sim->add_option("--n", sa.n, "Synthetic item count")->check(CLI::PositiveNumber);
  sim->add_option("--depth", sa.depth)->check(CLI::Range(1, 20))->capture_default_str();
  sim->add_option("--interface", sa.interface)
      ->check(CLI::IsMember({"two_column", "vertical_drag"}))
      ->capture_default_str();
  sim->add_option("--protocol", sa.protocol)->capture_default_str();
  sim->add_option("--redundancy", sa.redundancy)->check(CLI::PositiveNumber)->capture_default_str();
  sim->add_option("--batch-size", sa.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
  sim->add_option("--workers", sa.workers)->check(CLI::PositiveNumber)->capture_default_str();
  sim->add_option("--sigma", sa.sigma)->check(CLI::NonNegativeNumber)->capture_default_str();
  sim->add_option("--workers-file", sa.workers_file, "JSON array of worker profiles");
  sim->add_option("--config", sa.config, "Simulation config JSON (overrides other flags)");

  MetricsArgs ma;
  auto* met = app.add_subcommand("metrics", "Compute reliability metrics");
  met->add_option("--metric", ma.metric)
      ->required()
      ->check(CLI::IsMember({"spearman", "split-half", "icc1", "icc3", "icc1k", "icc3k",
                             "redundancy-sweep", "bucket-means", "worker-quality", "filter",
                             "durations"}));
  met->add_option("--responses", ma.responses, "Scalar response table");
  met->add_option("--matrix", ma.matrix, "Items x raters matrix");
  met->add_option("--scores", ma.scores, "Table item_id,score");
  met->add_option("--reference", ma.reference, "Reference scores or items with truth");
  met->add_option("--buckets", ma.buckets, "Bucket table from simulate");
  met->add_option("--by", ma.by)->check(CLI::IsMember({"slot", "worker"}))->capture_default_str();
  met->add_option("--trials", ma.trials)->check(CLI::PositiveNumber)->capture_default_str();
  met->add_option("--levels", ma.levels)->capture_default_str();
  met->add_option("--fraction", ma.fraction)->check(CLI::Range(0.0, 1.0))->capture_default_str();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a pairwise linear ranker");
  tr->add_option("--responses", ta.responses, "Scalar response table");
  tr->add_option("--scores", ta.scores, "Table item_id,score");
  tr->add_option("--features", ta.features, "Table item_id,f1..fd")->required();
  tr->add_option("--strategy", ta.strategy)
      ->check(CLI::IsMember({"global", "per_hit", "per_worker", "per_context"}))
      ->capture_default_str();
  tr->add_option("--k", ta.k)->check(CLI::PositiveNumber)->capture_default_str();
  tr->add_option("--margin", ta.margin)->capture_default_str();
  tr->add_option("--epochs", ta.epochs)->check(CLI::NonNegativeNumber)->capture_default_str();
  tr->add_option("--lr", ta.learning_rate)->capture_default_str();
  tr->add_option("--loss-form", ta.loss_form)
      ->check(CLI::IsMember({"corrected", "literal"}))
      ->capture_default_str();

  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir;
  int snapshot_every = 100;
  auto* srv = app.add_subcommand("serve", "Run the campaign HTTP service");
  srv->add_option("--host", host)->capture_default_str();
  srv->add_option("--port", port)->check(CLI::Range(0, 65535))->capture_default_str();
  srv->add_option("--data-dir", data_dir, "Persist campaigns here");
  srv->add_option("--snapshot-every", snapshot_every)->check(CLI::NonNegativeNumber)->capture_default_str();

  std::string campaign;
  std::string export_dir;
  auto* ex = app.add_subcommand("export", "Write a campaign's event log");
  ex->add_option("--data-dir", export_dir)->required();
  ex->add_option("--campaign", campaign)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, std::cerr, std::cerr);
  }

  try {
    if (*sim) return cmd_simulate(g, sa);
    if (*met) return cmd_metrics(g, ma);
    if (*tr) return cmd_train(g, ta);
    if (*srv) return cmd_serve(host, port, data_dir, snapshot_every);
    if (*ex) return cmd_export(g, export_dir, campaign);
  } catch (const CLI::Error& e) {
    std::cerr << "ibws: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "ibws: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
