#pragma once

// Leave-one-out contribution scoring and the wei payment table.
//
// Accuracies are carried as integer parts-per-million so that everything
// downstream of evaluation (marginals, ratios, money) is integer arithmetic.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oflw3/aggregator.hpp"
#include "oflw3/ledger.hpp"
#include "oflw3/wei.hpp"

namespace oflw3::incentives {

using Ppm = std::uint32_t;
inline constexpr Ppm kPpmScale = 1'000'000;

Ppm to_ppm(double accuracy);
std::string format_ppm(Ppm value);  // "0.843000"

struct ContributionReport {
  aggregator::Method method = aggregator::Method::kMatched;
  aggregator::MatchConfig config;  // resolved once over all n models
  Ppm acc_full = 0;
  std::vector<Ppm> loo;       // accuracy without owner i
  std::vector<Ppm> marginal;  // max(0, acc_full - loo[i])

  std::size_t size() const { return loo.size(); }
};

// 1 + n aggregations and evaluations, run on up to `threads` threads
// (0 = hardware concurrency). Throws kTooFewOwners when n < 2.
ContributionReport compute_loo(std::span<const learner::ModelWeights> models,
                               const learner::Dataset& test, aggregator::Method method,
                               const aggregator::MatchConfig& cfg, unsigned threads = 0);

// Marginals from raw accuracies; used by compute_loo and handy for tests.
ContributionReport make_report(Ppm acc_full, std::vector<Ppm> loo);

struct Payment {
  ledger::Address owner;
  Wei amount = 0;
};

struct PaymentTable {
  std::vector<Payment> entries;
  Wei budget = 0;

  Wei total() const;
};

// p_i = floor(budget * m_i / sum m); the rounding remainder goes to the
// largest marginal (lowest index on ties). With every marginal zero the
// budget is split equally and the remainder goes to owner 0.
// Throws kLengthMismatch when owners and report disagree in length.
PaymentTable payment_table(const ContributionReport& report,
                           std::span<const ledger::Address> owners, Wei budget);
// Same rule on bare marginals.
std::vector<Wei> allocate(std::span<const Ppm> marginal, Wei budget);

nlohmann::json to_json(const ContributionReport& r, std::span<const ledger::Address> owners);
nlohmann::json to_json(const PaymentTable& t);

// index,owner,loo_accuracy,marginal (plus a leading "full" row)
std::string loo_csv(const ContributionReport& r, std::span<const ledger::Address> owners);
// index,owner,amount_wei,amount_eth
std::string payments_csv(const PaymentTable& t);

}  // namespace oflw3::incentives
