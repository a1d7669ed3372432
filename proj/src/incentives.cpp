#include "oflw3/incentives.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <sstream>
#include <thread>

#include "oflw3/error.hpp"

namespace oflw3::incentives {

Ppm to_ppm(double accuracy) {
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) {
    throw Error(Errc::kInvalidArgument, "accuracy outside [0, 1]");
  }
  return static_cast<Ppm>(std::llround(accuracy * kPpmScale));
}

std::string format_ppm(Ppm value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%u.%06u", value / kPpmScale, value % kPpmScale);
  return buf;
}

ContributionReport make_report(Ppm acc_full, std::vector<Ppm> loo) {
  ContributionReport r;
  r.acc_full = acc_full;
  r.marginal.reserve(loo.size());
  for (Ppm l : loo) r.marginal.push_back(acc_full > l ? acc_full - l : 0);
  r.loo = std::move(loo);
  return r;
}

ContributionReport compute_loo(std::span<const learner::ModelWeights> models,
                               const learner::Dataset& test, aggregator::Method method,
                               const aggregator::MatchConfig& cfg, unsigned threads) {
  const std::size_t n = models.size();
  if (n < 2) throw Error(Errc::kTooFewOwners, "leave-one-out needs at least two owners");
  const aggregator::MatchConfig resolved = aggregator::resolve(cfg, models);

  // Task 0 is the full set; task i + 1 drops owner i.
  std::vector<Ppm> acc(n + 1, 0);
  std::vector<std::exception_ptr> errors(n + 1);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t <= n; t = next++) {
      try {
        std::vector<learner::ModelWeights> subset;
        subset.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
          if (t == 0 || i != t - 1) subset.push_back(models[i]);
        }
        acc[t] = to_ppm(aggregator::aggregate_accuracy(subset, method, resolved, test));
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min<std::size_t>(threads, n + 1); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ContributionReport r = make_report(acc[0], std::vector<Ppm>(acc.begin() + 1, acc.end()));
  r.method = method;
  r.config = resolved;
  return r;
}

Wei PaymentTable::total() const {
  Wei s = 0;
  for (const auto& e : entries) s += e.amount;
  return s;
}

std::vector<Wei> allocate(std::span<const Ppm> marginal, Wei budget) {
  const std::size_t n = marginal.size();
  std::vector<Wei> out(n, 0);
  if (n == 0) return out;
  Wei sum = 0;
  for (Ppm m : marginal) sum += m;
  Wei paid = 0;
  std::size_t sink = 0;
  if (sum == 0) {
    for (auto& p : out) p = budget / n;
    paid = budget / n * n;
  } else {
    // floor(B * m / S) = (B / S) * m + ((B % S) * m) / S, which cannot
    // overflow because B % S < S.
    const Wei q = budget / sum;
    const Wei r = budget % sum;
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = q * marginal[i] + r * marginal[i] / sum;
      paid += out[i];
      if (marginal[i] > marginal[sink]) sink = i;
    }
  }
  out[sink] += budget - paid;
  return out;
}

PaymentTable payment_table(const ContributionReport& report,
                           std::span<const ledger::Address> owners, Wei budget) {
  if (owners.size() != report.marginal.size()) {
    throw Error(Errc::kLengthMismatch, "owners and report lengths differ");
  }
  const auto amounts = allocate(report.marginal, budget);
  PaymentTable t;
  t.budget = budget;
  for (std::size_t i = 0; i < owners.size(); ++i) t.entries.push_back({owners[i], amounts[i]});
  return t;
}

nlohmann::json to_json(const ContributionReport& r, std::span<const ledger::Address> owners) {
  if (!owners.empty() && owners.size() != r.size()) {
    throw Error(Errc::kLengthMismatch, "owners and report lengths differ");
  }
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < r.size(); ++i) {
    nlohmann::json row{{"index", i},
                       {"loo_accuracy", format_ppm(r.loo[i])},
                       {"loo_ppm", r.loo[i]},
                       {"marginal_ppm", r.marginal[i]}};
    if (!owners.empty()) row["owner"] = owners[i].hex();
    rows.push_back(std::move(row));
  }
  return {{"aggregator", aggregator::to_string(r.method)},
          {"match_config", r.config},
          {"acc_full", format_ppm(r.acc_full)},
          {"acc_full_ppm", r.acc_full},
          {"owners", std::move(rows)}};
}

nlohmann::json to_json(const PaymentTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < t.entries.size(); ++i) {
    rows.push_back({{"index", i},
                    {"owner", t.entries[i].owner.hex()},
                    {"amount_wei", wei_to_string(t.entries[i].amount)},
                    {"amount_eth", format_eth(t.entries[i].amount)}});
  }
  return {{"budget_wei", wei_to_string(t.budget)},
          {"total_wei", wei_to_string(t.total())},
          {"total_eth", format_eth(t.total())},
          {"entries", std::move(rows)}};
}

std::string loo_csv(const ContributionReport& r, std::span<const ledger::Address> owners) {
  if (owners.size() != r.size()) throw Error(Errc::kLengthMismatch, "owners and report lengths differ");
  std::ostringstream out;
  out << "index,owner,loo_accuracy,marginal\n";
  out << "full,," << format_ppm(r.acc_full) << ",\n";
  for (std::size_t i = 0; i < r.size(); ++i) {
    out << i << ',' << owners[i].hex() << ',' << format_ppm(r.loo[i]) << ','
        << format_ppm(r.marginal[i]) << '\n';
  }
  return out.str();
}

std::string payments_csv(const PaymentTable& t) {
  std::ostringstream out;
  out << "index,owner,amount_wei,amount_eth\n";
  for (std::size_t i = 0; i < t.entries.size(); ++i) {
    out << i << ',' << t.entries[i].owner.hex() << ',' << wei_to_string(t.entries[i].amount) << ','
        << format_eth(t.entries[i].amount) << '\n';
  }
  return out.str();
}

}  // namespace oflw3::incentives
