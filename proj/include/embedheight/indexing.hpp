#pragma once

#include <cmath>
#include <cstdlib>

namespace embedheight {

/// Mirror an out-of-range index back into [0, n) without repeating the edge
/// sample: ..., 2, 1, | 0, 1, ..., n-1, | n-2, n-3, ...  Handles arbitrary
/// overshoot via the reflection period 2n-2.
inline int reflect_index(int t, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    t = std::abs(t) % period;
    return t < n ? t : period - t;
}

}  // namespace embedheight
