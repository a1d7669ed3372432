// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// fails. Oracles here are written independently of the library code they
// check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "oflw3/aggregator.hpp"
#include "oflw3/cidstore.hpp"
#include "oflw3/cli.hpp"
#include "oflw3/contract.hpp"
#include "oflw3/error.hpp"
#include "oflw3/learner.hpp"
#include "oflw3/random.hpp"
#include "oflw3/scenario.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace oflw3;
using ledger::Address;
using learner::ModelWeights;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const std::function<Verdict()>& check) {
  const auto start = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = check();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!v.pass) ++failures;
  char timing[32];
  std::snprintf(timing, sizeof timing, "%.1fs", secs);
  std::cout << (v.pass ? "PASS" : "FAIL") << "  " << (id < 10 ? " " : "") << id << "  " << title
            << ": " << v.detail << " (" << timing << ")" << std::endl;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << std::fixed << v;
  return s.str();
}

// Two seeded demo runs from the shipped config, shared by several criteria.
struct DemoRuns {
  test::TempDir dir;
  cli::DemoResult first;
  double first_seconds = 0.0;
  fs::path out_a, out_b;

  DemoRuns() {
    const config::Config cfg = config::load(fs::path(OFLW3_SOURCE_DIR) / "config" / "default.json");
    out_a = dir.path() / "a";
    out_b = dir.path() / "b";
    auto once = [&](const fs::path& out) {
      config::ServiceConfig sc = cfg.service;
      sc.cas_root = out / "cas";
      marketplace::Service service(sc);
      cli::InProcessClient client(service);
      std::ostringstream log;
      return cli::run_demo(cfg, client, out, log);
    };
    const auto start = std::chrono::steady_clock::now();
    first = once(out_a);
    first_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    once(out_b);
  }
};

DemoRuns& demo() {
  static DemoRuns runs;
  return runs;
}

Wei wei(const json& j) { return parse_wei(j.get<std::string>()); }

// Double-precision loss for the gradient check.
double oracle_loss(const ModelWeights& w, const std::vector<std::vector<double>>& wd,
                   const std::vector<std::vector<double>>& bd, const learner::Dataset& data) {
  double total = 0.0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    std::vector<double> a(data.row(r).begin(), data.row(r).end());
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
      const auto& layer = w.layers[l];
      std::vector<double> z(layer.outputs);
      for (std::size_t o = 0; o < layer.outputs; ++o) {
        double s = bd[l][o];
        for (std::size_t i = 0; i < layer.inputs; ++i) s += wd[l][o * layer.inputs + i] * a[i];
        z[o] = l + 1 < w.layers.size() ? std::max(0.0, s) : s;
      }
      a = std::move(z);
    }
    const double m = *std::max_element(a.begin(), a.end());
    double denom = 0.0;
    for (double v : a) denom += std::exp(v - m);
    total += std::log(denom) + m - a[data.labels[r]];
  }
  return total / double(data.size());
}

std::vector<double> oracle_forward(const ModelWeights& w, std::span<const float> x) {
  std::vector<double> a(x.begin(), x.end());
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& layer = w.layers[l];
    std::vector<double> z(layer.outputs);
    for (std::size_t o = 0; o < layer.outputs; ++o) {
      double s = layer.bias[o];
      for (std::size_t i = 0; i < layer.inputs; ++i) s += double{layer.row(o)[i]} * a[i];
      z[o] = l + 1 < w.layers.size() ? std::max(0.0, s) : s;
    }
    a = std::move(z);
  }
  return a;
}

}  // namespace

int main() {
  report(1, "budget exhaustion", [] {
    const auto& d = demo();
    Wei sum = 0;
    for (const auto& row : d.first.payments.at("entries")) sum += wei(row.at("amount_wei"));
    const Wei budget = wei(d.first.payments.at("budget_wei"));
    const bool ok = sum == budget && budget == Wei{10'000'000'000'000'000ULL} &&
                    d.first.job.at("state") == "Paid" && d.first_seconds < 120.0;
    return Verdict{ok, "sum " + wei_to_string(sum) + " wei, budget " + wei_to_string(budget) +
                           " wei, demo " + fmt(d.first_seconds, 1) + "s"};
  });

  report(2, "max leave-one-out owner gets the minimum payment", [] {
    const auto& d = demo();
    const auto& owners = d.first.job.at("report").at("owners");
    const auto& entries = d.first.payments.at("entries");
    std::uint64_t best_loo = 0;
    Wei min_pay = ~Wei{0};
    for (std::size_t i = 0; i < owners.size(); ++i) {
      best_loo = std::max(best_loo, owners[i].at("loo_ppm").get<std::uint64_t>());
      min_pay = std::min(min_pay, wei(entries[i].at("amount_wei")));
    }
    bool ok = true;
    std::string who;
    for (std::size_t i = 0; i < owners.size(); ++i) {
      if (owners[i].at("loo_ppm").get<std::uint64_t>() != best_loo) continue;
      who += (who.empty() ? "" : ",") + std::to_string(i);
      ok = ok && wei(entries[i].at("amount_wei")) == min_pay;
    }
    return Verdict{ok, "argmax loo {" + who + "} at " + fmt(best_loo / 1e6) + ", min payment " +
                           wei_to_string(min_pay) + " wei"};
  });

  report(3, "matched averaging quality over 3 seeds", [] {
    bool ok = true;
    std::string detail;
    for (std::uint64_t seed : {1, 2, 3}) {
      scenario::ScenarioSpec spec = config::defaults().demo.scenario;
      spec.seed = seed;
      const auto sc = scenario::build(spec);
      const auto local = scenario::train_all(sc, spec);
      double best = 0.0, worst = 1.0;
      for (const auto& m : local) {
        const double a = learner::evaluate(m, sc.test);
        best = std::max(best, a);
        worst = std::min(worst, a);
      }
      const double matched =
          aggregator::aggregate_accuracy(local, aggregator::Method::kMatched, {}, sc.test);
      const bool seed_ok = matched >= best - 0.02 && matched >= worst + 0.20;
      ok = ok && seed_ok;
      detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) +
                " matched " + fmt(matched, 3) + " best " + fmt(best, 3) + " worst " + fmt(worst, 3);
    }
    return Verdict{ok, detail};
  });

  report(4, "serialized (784,100,10) model size", [] {
    const auto bytes = learner::serialize(learner::init_weights({{784, 100, 10}}, 1));
    // float32 parameters; the header carries magic, version, depth, dims, count.
    const std::size_t payload = 4 * (784 * 100 + 100 + 100 * 10 + 10);
    const double rel = std::abs(double(bytes.size()) - 317'000.0) / 317'000.0;
    const bool ok = bytes.size() == 318'064 && payload == 318'040 && payload + 24 == bytes.size() && rel <= 0.01;
    return Verdict{ok, std::to_string(bytes.size()) + " bytes, " + fmt(100 * rel, 2) +
                           "% from 317 kB"};
  });

  report(5, "gas ordering and deploy fee bracket", [] {
    const json& s = demo().first.gas.at("summary");
    const Wei deploy = wei(s.at("deploy_fee_wei"));
    const Wei upload = wei(s.at("upload_fee_mean_wei"));
    const Wei payout = wei(s.at("payout_fee_mean_wei"));
    const Wei milli = kWeiPerEth / 1000;
    const bool ok = deploy > upload && upload <= 2 * payout && payout <= 2 * upload &&
                    deploy >= milli && deploy <= 4 * milli;
    return Verdict{ok, "deploy " + format_eth(deploy) + " ETH, upload " + format_eth(upload) +
                           ", payout " + format_eth(payout) + " (upload/payout " +
                           fmt(double(upload) / double(payout), 2) + ")"};
  });

  report(6, "contract CID semantics", [] {
    const Address buyer = Address::from_label("buyer");
    const Address owner = Address::from_label("owner");
    const std::vector<ledger::GenesisAccount> genesis{{buyer, kWeiPerEth}, {owner, kWeiPerEth}};
    auto chain = ledger::Ledger::genesis(genesis, {}, contract::make_registry());
    const Address c = contract::deploy(chain, buyer, 1000, as_bytes("{}")).address;
    auto message_for = [&](std::uint64_t index) -> std::string {
      try {
        contract::get_cid(chain, c, index);
      } catch (const Error& e) {
        return e.what();
      }
      return "<no error>";
    };
    const std::string fresh = message_for(0);
    Rng rng(2024);
    std::vector<cidstore::Cid> sent;
    bool identity = true;
    for (int i = 0; i < 1000; ++i) {
      cidstore::Cid cid;
      for (auto& b : cid.digest.bytes) b = static_cast<std::uint8_t>(rng.next());
      contract::require_success(contract::upload_cid(chain, c, owner, cid));
      sent.push_back(cid);
    }
    for (std::size_t i = 0; i < sent.size(); ++i) identity &= contract::get_cid(chain, c, i) == sent[i];
    const std::string past_end = message_for(1000);
    const std::string far = message_for(5000);
    const bool ok = identity && fresh == "Invalid CID index" && past_end == fresh && far == fresh &&
                    contract::cid_count(chain, c) == 1000;
    return Verdict{ok, "1000 round-trips " + std::string(identity ? "identical" : "DIFFER") +
                           ", out-of-range message \"" + past_end + "\""};
  });

  report(7, "ledger conservation over 10,000 random transactions", [] {
    Rng rng(77);
    std::vector<Address> users;
    std::vector<ledger::GenesisAccount> genesis;
    Wei supply = 0;
    for (int i = 0; i < 8; ++i) {
      users.push_back(Address::from_label("user-" + std::to_string(i)));
      const Wei b = kWeiPerEth / 4 + Wei{rng.below(1'000'000)} * 1'000'000'000ULL;
      genesis.push_back({users.back(), b});
      supply += b;
    }
    auto chain = ledger::Ledger::genesis(genesis, {}, contract::make_registry());
    std::vector<Address> contracts;
    std::map<Address, Address> owner_of;
    std::map<Address, Wei> escrow;
    std::size_t accepted = 0, reverted = 0, rejected = 0, violations = 0;
    auto random_wei = [&] {
      switch (rng.below(4)) {
        case 0: return Wei{rng.below(1000)};
        case 1: return Wei{rng.below(1'000'000'000)} * 1'000'000ULL;
        case 2: return Wei{rng.below(100)} * (kWeiPerEth / 100);
        default: return kWeiPerEth;  // usually too much
      }
    };
    for (int t = 0; t < 10'000; ++t) {
      const Address from = users[rng.below(users.size())];
      try {
        const auto kind = rng.below(100);
        ledger::Receipt r;
        if (kind < 40) {
          r = chain.submit(from, users[rng.below(users.size())], random_wei(), {});
        } else if (kind < 50 || contracts.empty()) {
          const Wei budget = random_wei() / 4;
          const auto d = contract::deploy(chain, from, budget, as_bytes("{\"k\":1}"));
          r = d.receipt;
          contracts.push_back(d.address);
          owner_of[d.address] = from;
          escrow[d.address] = budget;
        } else if (kind < 75) {
          cidstore::Cid cid;
          for (auto& b : cid.digest.bytes) b = static_cast<std::uint8_t>(rng.next());
          r = contract::upload_cid(chain, contracts[rng.below(contracts.size())], from, cid);
        } else {
          const Address c = contracts[rng.below(contracts.size())];
          const Address caller = rng.below(4) == 0 ? from : owner_of[c];
          std::vector<std::pair<Address, Wei>> pay;
          Wei total = 0;
          for (std::uint64_t k = 0, n = 1 + rng.below(3); k < n; ++k) {
            const Wei a = escrow[c] == 0 ? Wei{rng.below(5)} : Wei{rng.next()} % (escrow[c] / 2 + 1);
            pay.push_back({users[rng.below(users.size())], a});
            total += a;
          }
          r = contract::payout(chain, c, caller, pay);
          if (r.ok()) escrow[c] -= total;
        }
        r.ok() ? ++accepted : ++reverted;
      } catch (const Error& e) {
        if (e.code() != Errc::kInsufficientFunds) throw;
        ++rejected;
      }
      // Oracle: every known account plus the fee sink, summed here.
      Wei sum = chain.balance(ledger::kFeeSink);
      for (const auto& u : users) sum += chain.balance(u);
      for (const auto& c : contracts) {
        sum += chain.balance(c);
        if (chain.balance(c) != escrow[c]) ++violations;
      }
      if (sum != supply || chain.total_supply() != supply) ++violations;
    }
    return Verdict{violations == 0 && accepted > 1000 && reverted > 0,
                   std::to_string(accepted) + " accepted, " + std::to_string(reverted) +
                       " reverted, " + std::to_string(rejected) + " rejected, " +
                       std::to_string(contracts.size()) + " contracts, " +
                       std::to_string(violations) + " violations"};
  });

  report(8, "content-addressed store properties", [] {
    test::TempDir dir;
    cidstore::CidStore store(dir.path());
    Rng rng(8);
    std::vector<Bytes> payloads;
    payloads.emplace_back();
    for (int i = 1; i < 1000; ++i) {
      Bytes p(rng.below(i % 10 == 0 ? 70'000 : 600) + 1);
      for (auto& b : p) b = static_cast<std::uint8_t>(rng.next());
      payloads.push_back(std::move(p));
    }
    std::size_t roundtrips = 0, detected = 0, corrupted = 0;
    std::vector<cidstore::Cid> cids;
    for (const auto& p : payloads) {
      const auto cid = store.put(p);
      cids.push_back(cid);
      if (store.get(cid) == p && cid.digest == sha256(p)) ++roundtrips;
    }
    for (std::size_t i = 0; i < payloads.size(); ++i) {
      const auto path = store.path_for(cids[i]);
      if (payloads[i].empty()) {
        std::ofstream(path, std::ios::binary | std::ios::app).put('\x01');
      } else {
        std::fstream io(path, std::ios::in | std::ios::out | std::ios::binary);
        const auto at = static_cast<std::streamoff>(rng.below(payloads[i].size()));
        const auto flip = static_cast<std::uint8_t>(1 + rng.below(255));
        io.seekp(at);
        io.put(static_cast<char>(payloads[i][at] ^ flip));
      }
      ++corrupted;
      try {
        store.get(cids[i]);
      } catch (const Error& e) {
        if (e.code() == Errc::kIntegrityViolation) ++detected;
      }
    }
    return Verdict{roundtrips == 1000 && detected == corrupted,
                   std::to_string(roundtrips) + "/1000 round-trips (empty included), " +
                       std::to_string(detected) + "/" + std::to_string(corrupted) +
                       " corruptions detected"};
  });

  report(9, "gradient check on the [4,3,2] network", [] {
    const ModelWeights w = learner::init_weights({{4, 3, 2}}, 5);
    Rng rng(9);
    learner::Dataset data;
    data.dim = 4;
    for (int i = 0; i < 8; ++i) {
      for (int j = 0; j < 4; ++j) data.features.push_back(static_cast<float>(rng.uniform(-1, 1)));
      data.labels.push_back(static_cast<std::uint32_t>(i % 2));
    }
    const auto analytic = learner::loss_gradient(w, data);
    std::vector<std::vector<double>> wd, bd;
    for (const auto& l : w.layers) {
      wd.emplace_back(l.weights.begin(), l.weights.end());
      bd.emplace_back(l.bias.begin(), l.bias.end());
    }
    constexpr double h = 1e-5;
    double worst = 0.0;
    std::size_t checked = 0;
    auto check = [&](double& param, float a) {
      const double saved = param;
      param = saved + h;
      const double up = oracle_loss(w, wd, bd, data);
      param = saved - h;
      const double down = oracle_loss(w, wd, bd, data);
      param = saved;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(numeric - a) / std::max({std::abs(numeric), std::abs(double{a}), 1e-4}));
      ++checked;
    };
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
      for (std::size_t k = 0; k < wd[l].size(); ++k) check(wd[l][k], analytic.gradient.layers[l].weights[k]);
      for (std::size_t k = 0; k < bd[l].size(); ++k) check(bd[l][k], analytic.gradient.layers[l].bias[k]);
    }
    return Verdict{worst <= 1e-3 && checked == 23,
                   std::to_string(checked) + " parameters, worst relative error " + fmt(worst * 1e6, 2) + "e-6"};
  });

  report(10, "matched averaging permutation robustness", [] {
    scenario::ScenarioSpec spec = config::defaults().demo.scenario;
    spec.owners = 2;
    spec.train_samples = 600;
    const auto sc = scenario::build(spec);
    const ModelWeights m = scenario::train_all(sc, spec)[0];
    std::vector<std::size_t> perm(100);
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    Rng rng(10);
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    ModelWeights p = m;
    for (std::size_t k = 0; k < perm.size(); ++k) {
      std::copy_n(m.layers[0].row(perm[k]), 784, p.layers[0].row(k));
      p.layers[0].bias[k] = m.layers[0].bias[perm[k]];
      for (std::size_t c = 0; c < 10; ++c) p.layers[1].row(c)[k] = m.layers[1].row(c)[perm[k]];
    }
    const std::vector<ModelWeights> pair{m, p};
    const ModelWeights g = aggregator::aggregate_matched(pair, aggregator::resolve({}, pair));
    double worst = 0.0;
    for (std::size_t r = 0; r < 100; ++r) {
      const auto a = oracle_forward(m, sc.test.row(r));
      const auto b = oracle_forward(g, sc.test.row(r));
      for (std::size_t c = 0; c < a.size(); ++c) worst = std::max(worst, std::abs(a[c] - b[c]));
    }
    return Verdict{worst <= 1e-4, "global width " + std::to_string(g.arch.dims[1]) +
                                      ", max output deviation " + fmt(worst, 8) + " over 100 probes"};
  });

  report(11, "two seeded demo runs are byte-identical", [] {
    const auto& d = demo();
    std::string diff;
    for (const char* name : cli::kBundleFiles) {
      if (slurp(d.out_a / name) != slurp(d.out_b / name) || slurp(d.out_a / name).empty()) {
        diff += std::string(" ") + name;
      }
    }
    return Verdict{diff.empty(), diff.empty() ? "all 5 bundle files identical" : "differ:" + diff};
  });

  report(12, "timing report completeness", [] {
    const json t = json::parse(slurp(demo().out_a / "timings.json"));
    std::string missing;
    for (const char* k : marketplace::kBuyerSteps) {
      if (!t.at("buyer").contains(k)) missing += std::string(" buyer.") + k;
    }
    for (const auto& o : t.at("owners")) {
      for (const char* k : marketplace::kOwnerSteps) {
        if (!o.contains(k)) missing += " owner" + o.at("index").dump() + "." + k;
      }
    }
    const bool ok = missing.empty() && t.at("owners").size() == 10;
    return Verdict{ok, ok ? "6 buyer steps, 3 steps for each of " + std::to_string(t.at("owners").size()) + " owners"
                          : "missing" + missing};
  });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
