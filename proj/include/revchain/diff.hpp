#pragma once

// Character-level diff primitives over code-point strings.

#include <algorithm>
#include <cstddef>
#include <string_view>
#include <vector>

namespace revchain::diff {

struct Trim {
  std::size_t prefix = 0;
  std::size_t suffix = 0;
};

// Longest common prefix, then longest common suffix of what remains, so the
// two never overlap.
inline Trim common_affixes(std::u32string_view a, std::u32string_view b) {
  Trim t;
  const auto n = std::min(a.size(), b.size());
  while (t.prefix < n && a[t.prefix] == b[t.prefix]) ++t.prefix;
  while (t.suffix < n - t.prefix && a[a.size() - 1 - t.suffix] == b[b.size() - 1 - t.suffix]) ++t.suffix;
  return t;
}

inline std::size_t levenshtein(std::u32string_view a, std::u32string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> prev(b.size() + 1);
  std::vector<std::size_t> cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

enum class Op { equal, remove, insert };

struct Run {
  Op op;
  std::size_t a_pos;  // position in `a` where the run starts
  std::size_t b_pos;  // position in `b` where the run starts
  std::size_t length;
};

// Shortest edit script (Myers' greedy O(ND) algorithm). When the edit
// distance exceeds `max_cost` the result degrades to one remove and one
// insert covering everything.
inline std::vector<Run> edit_script(std::u32string_view a, std::u32string_view b, std::size_t max_cost = 3000) {
  const auto n = static_cast<long long>(a.size());
  const auto m = static_cast<long long>(b.size());
  std::vector<Run> runs;
  auto fallback = [&] {
    runs.clear();
    if (n > 0) runs.push_back({Op::remove, 0, 0, a.size()});
    if (m > 0) runs.push_back({Op::insert, a.size(), 0, b.size()});
    return runs;
  };
  const long long max_d = std::min<long long>(n + m, static_cast<long long>(max_cost));
  const long long offset = max_d + 1;
  std::vector<long long> v(static_cast<std::size_t>(2 * max_d + 3), 0);
  std::vector<std::vector<long long>> trace;  // trace[d][k + d] = furthest x on diagonal k
  long long final_d = -1;
  for (long long d = 0; d <= max_d && final_d < 0; ++d) {
    for (long long k = -d; k <= d; k += 2) {
      long long x;
      if (k == -d || (k != d && v[k - 1 + offset] < v[k + 1 + offset])) {
        x = v[k + 1 + offset];
      } else {
        x = v[k - 1 + offset] + 1;
      }
      long long y = x - k;
      while (x < n && y < m && a[x] == b[y]) {
        ++x;
        ++y;
      }
      v[k + offset] = x;
      if (x >= n && y >= m) final_d = d;
    }
    trace.emplace_back(v.begin() + (offset - d), v.begin() + (offset + d + 1));
  }
  if (final_d < 0) return fallback();

  std::vector<Run> reversed;
  auto push = [&](Op op, long long ap, long long bp, long long len) {
    if (len > 0) reversed.push_back({op, static_cast<std::size_t>(ap), static_cast<std::size_t>(bp), static_cast<std::size_t>(len)});
  };
  long long x = n;
  long long y = m;
  for (long long d = final_d; d > 0; --d) {
    const auto& prev = trace[static_cast<std::size_t>(d - 1)];
    auto at = [&](long long k) { return prev[static_cast<std::size_t>(k + (d - 1))]; };
    const long long k = x - y;
    const bool down = k == -d || (k != d && at(k - 1) < at(k + 1));
    const long long prev_k = down ? k + 1 : k - 1;
    const long long prev_x = at(prev_k);
    const long long prev_y = prev_x - prev_k;
    const long long mid_x = down ? prev_x : prev_x + 1;
    const long long mid_y = down ? prev_y + 1 : prev_y;
    push(Op::equal, mid_x, mid_y, x - mid_x);
    if (down) {
      push(Op::insert, prev_x, prev_y, 1);
    } else {
      push(Op::remove, prev_x, prev_y, 1);
    }
    x = prev_x;
    y = prev_y;
  }
  push(Op::equal, 0, 0, x);

  for (auto it = reversed.rbegin(); it != reversed.rend(); ++it) {
    if (!runs.empty() && runs.back().op == it->op) {
      runs.back().length += it->length;
    } else {
      runs.push_back(*it);
    }
  }
  return runs;
}

}  // namespace revchain::diff
