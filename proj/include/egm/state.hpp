#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace egm {

using TokenId = uint16_t;

/// A point in S = tokens^{D_disc} x R^{D_cont}. Either part may be empty.
/// Data tokens are 0..V-1; the mask token is V (owned by the task/path).
struct MixedState {
  std::vector<TokenId> disc;
  std::vector<double> cont;

  bool operator==(const MixedState& other) const = default;
};

inline int count_masked(const MixedState& x, TokenId mask) {
  int m = 0;
  for (TokenId t : x.disc) m += (t == mask);
  return m;
}

inline bool has_mask(const MixedState& x, TokenId mask) {
  return count_masked(x, mask) > 0;
}

inline bool all_finite(const MixedState& x) {
  for (double v : x.cont)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace egm
