#include "oflw3/wei.hpp"

#include <algorithm>

#include "oflw3/error.hpp"

namespace oflw3 {

std::string wei_to_string(Wei value) {
  if (value == 0) return "0";
  std::string out;
  while (value > 0) {
    out.push_back(static_cast<char>('0' + static_cast<int>(value % 10)));
    value /= 10;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

Wei parse_wei(std::string_view decimal) {
  if (decimal.empty() || decimal.size() > 38) {
    throw Error(Errc::kInvalidArgument, "wei amount must be 1..38 decimal digits");
  }
  Wei value = 0;
  for (char c : decimal) {
    if (c < '0' || c > '9') {
      throw Error(Errc::kInvalidArgument, "wei amount must be a decimal integer");
    }
    value = value * 10 + static_cast<Wei>(c - '0');
  }
  return value;
}

std::string format_eth(Wei value, int decimals) {
  std::string out = wei_to_string(value / kWeiPerEth);
  if (decimals <= 0) return out;
  std::string frac = wei_to_string(value % kWeiPerEth);
  frac.insert(0, 18 - frac.size(), '0');
  out += '.';
  out += frac.substr(0, static_cast<std::size_t>(std::min(decimals, 18)));
  return out;
}

}  // namespace oflw3
