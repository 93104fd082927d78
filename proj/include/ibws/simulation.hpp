#pragma once

// Synthetic annotators over items with latent truth. A worker perceives
// clamp(a * truth + b + eps), eps ~ N(0, sigma^2), and with probability
// `inversion_rate` reports the reflection 1 - v instead.

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "ibws/partition.hpp"
#include "ibws/protocols.hpp"

namespace ibws {

struct WorkerProfile {
  std::string id;
  double scale_a = 1.0;
  double bias_b = 0.0;
  double noise_sigma = 0.0;
  double inversion_rate = 0.0;
};

void validate(const WorkerProfile& p);

double perceive(double truth, const WorkerProfile& profile, std::mt19937_64& rng);

enum class BwsInterface {
  two_column,     // best/worst only
  vertical_drag,  // also reports the full order
};

std::string to_string(BwsInterface i);
BwsInterface bws_interface_from_string(const std::string& s);

// Perception is drawn once per item per query; ties (e.g. from clamping)
// are broken uniformly at random.
BwsResponse simulate_bws(const BwsQuery& query, const std::map<std::string, double>& truth,
                         const WorkerProfile& profile, std::mt19937_64& rng,
                         BwsInterface interface = BwsInterface::vertical_drag);

// Quantizes a perceived value to the protocol's raw answer.
RawAnswer quantize(double perceived, const ProtocolKind& protocol);

// Seconds spent on one answer.
double simulated_duration(const ProtocolKind& protocol, std::mt19937_64& rng);
double simulated_duration(BwsInterface interface, std::mt19937_64& rng);

struct IbwsSimMode {
  int depth = 3;
  BwsInterface interface = BwsInterface::vertical_drag;
};

struct ScalarSimMode {
  ProtocolKind protocol;
  int redundancy = 1;
  int batch_size = 5;
};

struct SimConfig {
  std::vector<Item> items;
  std::vector<WorkerProfile> workers;
  std::variant<IbwsSimMode, ScalarSimMode> mode;
  std::uint64_t seed = 0;
};

void validate(const SimConfig& cfg);

struct Dataset {
  std::vector<BwsQuery> queries;
  std::vector<BwsResponse> bws_responses;
  std::vector<ScalarResponse> scalar_responses;
  std::vector<BucketRow> buckets;        // ibws mode only
  std::map<std::string, double> scores;  // bucket scores or scalar means
};

Dataset run_campaign(const SimConfig& cfg);

// `count` workers sharing one noise level, ids w0..w(count-1).
std::vector<WorkerProfile> uniform_pool(int count, double sigma);

// Items item-0.. with truth ~ U(0,1).
std::vector<Item> synthetic_items(int n, std::uint64_t seed);

std::map<std::string, double> truth_map(const std::vector<Item>& items);

nlohmann::json to_json(const WorkerProfile& p);
WorkerProfile worker_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SimConfig& cfg);
SimConfig sim_config_from_json(const nlohmann::json& j);

}  // namespace ibws
