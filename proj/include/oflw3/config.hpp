#pragma once

// One JSON file configures the ledger, the contract, the blob store, the
// timing model and the demo scenario:
//
// {
//   "gas_schedule": {...},                 ledger::GasSchedule fields
//   "contract": {"code_size": 4096},
//   "genesis": [{"label": "buyer", "balance_wei": "..."},
//               {"address": "0x..", "balance_wei": "..."}],
//   "cas_root": "cas",
//   "timing": {"mode": "simulated", "block_time_s": 12, ...},
//   "threads": 0,
//   "demo": {"owners": 10, "budget_wei": "10000000000000000", ...}
// }

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oflw3/aggregator.hpp"
#include "oflw3/contract.hpp"
#include "oflw3/ledger.hpp"
#include "oflw3/scenario.hpp"
#include "oflw3/wei.hpp"

namespace oflw3::config {

struct TimingConfig {
  enum class Mode { kSimulated, kWallClock };
  Mode mode = Mode::kSimulated;
  double block_time_s = 12.0;       // one mined transaction
  double view_latency_s = 0.05;     // one zero-gas view call
  double cas_latency_s = 0.2;       // per blob request
  double cas_bytes_per_s = 1.25e6;  // 10 Mbit/s
  double flops_per_s = 1e9;
};

struct ServiceConfig {
  ledger::GasSchedule gas_schedule;
  contract::CidStorageConfig contract;
  std::vector<ledger::GenesisAccount> genesis;
  std::filesystem::path cas_root = "cas";
  TimingConfig timing;
  unsigned threads = 0;  // LOO workers; 0 = hardware concurrency
};

struct DemoConfig {
  scenario::ScenarioSpec scenario;
  Wei budget = 10'000'000'000'000'000ULL;  // 0.01 ETH
  aggregator::Method aggregator = aggregator::Method::kMatched;
  aggregator::MatchConfig match_config;
  std::size_t min_owners = 2;
  std::string buyer_label = "buyer";
  std::string owner_label_prefix = "owner-";

  ledger::Address buyer() const { return ledger::Address::from_label(buyer_label); }
  ledger::Address owner(std::size_t i) const {
    return ledger::Address::from_label(owner_label_prefix + std::to_string(i));
  }
};

struct Config {
  ServiceConfig service;
  DemoConfig demo;
};

// Throws kInvalidConfig with the offending key in the message.
Config parse(const nlohmann::json& doc);
Config load(const std::filesystem::path& path);
// Built-in defaults: genesis funds the buyer with 1 ETH and ten owners with
// 0.1 ETH each.
Config defaults();
nlohmann::json to_json(const Config& c);

std::string to_string(TimingConfig::Mode m);

}  // namespace oflw3::config
