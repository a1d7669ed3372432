#pragma once

#include <string>
#include <string_view>

namespace oflw3 {

// Token amounts. 128 bits covers any realistic supply (10^18 wei per ETH)
// and the budget x marginal products in payment computation.
using Wei = unsigned __int128;

inline constexpr Wei kWeiPerEth = 1'000'000'000'000'000'000ULL;

std::string wei_to_string(Wei value);
Wei parse_wei(std::string_view decimal);
// Fixed-point ETH rendering, truncated to `decimals` places ("0.01000000").
std::string format_eth(Wei value, int decimals = 8);

}  // namespace oflw3
