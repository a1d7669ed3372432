#include "oflw3/config.hpp"

#include <fstream>

#include "oflw3/error.hpp"

namespace oflw3::config {

std::string to_string(TimingConfig::Mode m) {
  return m == TimingConfig::Mode::kSimulated ? "simulated" : "wall_clock";
}

namespace {

TimingConfig parse_timing(const nlohmann::json& j) {
  TimingConfig t;
  const auto mode = j.value("mode", std::string("simulated"));
  if (mode == "simulated") {
    t.mode = TimingConfig::Mode::kSimulated;
  } else if (mode == "wall_clock") {
    t.mode = TimingConfig::Mode::kWallClock;
  } else {
    throw Error(Errc::kInvalidConfig, "timing.mode must be simulated or wall_clock");
  }
  t.block_time_s = j.value("block_time_s", t.block_time_s);
  t.view_latency_s = j.value("view_latency_s", t.view_latency_s);
  t.cas_latency_s = j.value("cas_latency_s", t.cas_latency_s);
  t.cas_bytes_per_s = j.value("cas_bytes_per_s", t.cas_bytes_per_s);
  t.flops_per_s = j.value("flops_per_s", t.flops_per_s);
  for (double v : {t.block_time_s, t.view_latency_s, t.cas_latency_s}) {
    if (!(v >= 0.0)) throw Error(Errc::kInvalidConfig, "timing latencies must be >= 0");
  }
  if (!(t.cas_bytes_per_s > 0.0) || !(t.flops_per_s > 0.0)) {
    throw Error(Errc::kInvalidConfig, "timing rates must be > 0");
  }
  return t;
}

ledger::GenesisAccount parse_genesis(const nlohmann::json& j) {
  ledger::GenesisAccount g;
  if (j.contains("label")) {
    g.address = ledger::Address::from_label(j.at("label").get<std::string>());
  } else if (j.contains("address")) {
    g.address = ledger::Address::from_hex(j.at("address").get<std::string>());
  } else {
    throw Error(Errc::kInvalidConfig, "genesis entry needs label or address");
  }
  g.balance = parse_wei(j.at("balance_wei").get<std::string>());
  return g;
}

DemoConfig parse_demo(const nlohmann::json& j) {
  DemoConfig d;
  d.scenario = j.get<scenario::ScenarioSpec>();
  if (j.contains("budget_wei")) d.budget = parse_wei(j.at("budget_wei").get<std::string>());
  if (j.contains("aggregator")) {
    d.aggregator = aggregator::method_from_string(j.at("aggregator").get<std::string>());
  }
  if (j.contains("match_config")) d.match_config = j.at("match_config").get<aggregator::MatchConfig>();
  d.min_owners = j.value("min_owners", d.min_owners);
  d.buyer_label = j.value("buyer_label", d.buyer_label);
  d.owner_label_prefix = j.value("owner_label_prefix", d.owner_label_prefix);
  if (d.scenario.owners < 1) throw Error(Errc::kInvalidConfig, "demo.owners must be >= 1");
  if (d.min_owners < 2) throw Error(Errc::kInvalidConfig, "demo.min_owners must be >= 2");
  if (d.budget == 0) throw Error(Errc::kInvalidConfig, "demo.budget_wei must be > 0");
  d.scenario.hyperparams.validate();
  d.scenario.arch.validate();
  return d;
}

std::vector<ledger::GenesisAccount> default_genesis(const DemoConfig& demo) {
  std::vector<ledger::GenesisAccount> g{{demo.buyer(), kWeiPerEth}};
  for (std::size_t i = 0; i < demo.scenario.owners; ++i) g.push_back({demo.owner(i), kWeiPerEth / 10});
  return g;
}

}  // namespace

Config defaults() {
  Config c;
  c.service.genesis = default_genesis(c.demo);
  return c;
}

Config parse(const nlohmann::json& doc) {
  try {
    Config c;
    if (doc.contains("demo")) c.demo = parse_demo(doc.at("demo"));
    if (doc.contains("gas_schedule")) {
      c.service.gas_schedule = doc.at("gas_schedule").get<ledger::GasSchedule>();
    }
    if (doc.contains("contract")) {
      c.service.contract.code_size =
          doc.at("contract").value("code_size", c.service.contract.code_size);
    }
    if (doc.contains("genesis")) {
      for (const auto& g : doc.at("genesis")) c.service.genesis.push_back(parse_genesis(g));
    } else {
      c.service.genesis = default_genesis(c.demo);
    }
    c.service.cas_root = doc.value("cas_root", c.service.cas_root.string());
    if (doc.contains("timing")) c.service.timing = parse_timing(doc.at("timing"));
    c.service.threads = doc.value("threads", c.service.threads);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kInvalidConfig, std::string("config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::kInvalidConfig) throw;
    throw Error(Errc::kInvalidConfig, std::string("config: ") + e.what());
  }
}

Config load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kInvalidConfig, "cannot read config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kInvalidConfig, path.string() + ": " + e.what());
  }
  return parse(doc);
}

nlohmann::json to_json(const Config& c) {
  nlohmann::json genesis = nlohmann::json::array();
  for (const auto& g : c.service.genesis) {
    genesis.push_back({{"address", g.address.hex()}, {"balance_wei", wei_to_string(g.balance)}});
  }
  const auto& t = c.service.timing;
  nlohmann::json demo = c.demo.scenario;
  demo["budget_wei"] = wei_to_string(c.demo.budget);
  demo["aggregator"] = aggregator::to_string(c.demo.aggregator);
  demo["match_config"] = c.demo.match_config;
  demo["min_owners"] = c.demo.min_owners;
  demo["buyer_label"] = c.demo.buyer_label;
  demo["owner_label_prefix"] = c.demo.owner_label_prefix;
  return {{"gas_schedule", c.service.gas_schedule},
          {"contract", {{"code_size", c.service.contract.code_size}}},
          {"genesis", std::move(genesis)},
          {"cas_root", c.service.cas_root.string()},
          {"timing",
           {{"mode", to_string(t.mode)},
            {"block_time_s", t.block_time_s},
            {"view_latency_s", t.view_latency_s},
            {"cas_latency_s", t.cas_latency_s},
            {"cas_bytes_per_s", t.cas_bytes_per_s},
            {"flops_per_s", t.flops_per_s}}},
          {"threads", c.service.threads},
          {"demo", std::move(demo)}};
}

}  // namespace oflw3::config
