#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "mmx/fusion.hpp"
#include "mmx/rng.hpp"

namespace mmx::testing {

/// Per-prefix distributions over a 4-token vocabulary, drawn from a seed.
struct TableDecoder {
  std::uint64_t seed;
  std::vector<double> operator()(std::span<const int> prefix) const {
    std::uint64_t h = seed;
    for (int t : prefix) h = mix_seed(h, static_cast<std::uint64_t>(t));
    Rng rng(h);
    std::vector<double> w(4);
    double s = 0;
    for (auto& x : w) s += (x = 0.05 + rng.uniform());
    for (auto& x : w) x = std::log(x / s);
    return w;
  }
};

/// bos = 0, eos = 3. Greedy takes 1 then 2 (0.5 * 0.4 = 0.20); the best
/// sequence is 2 then 1 (0.4 * 0.9 = 0.36).
inline NextTokenFn hand_table() {
  static const std::map<std::vector<int>, std::vector<double>> table{
      {{0}, {0.0, 0.5, 0.4, 0.1}},
      {{0, 1}, {0.3, 0.3, 0.4, 0.0}},
      {{0, 2}, {0.05, 0.9, 0.05, 0.0}},
  };
  return [](std::span<const int> prefix) {
    std::vector<double> p = table.at(std::vector<int>(prefix.begin(), prefix.end()));
    for (double& x : p) x = x > 0 ? std::log(x) : -INFINITY;
    return p;
  };
}

struct Scored {
  std::vector<int> tokens;
  double score;
};

/// Best of every sequence BOS t1 [t2] over a 4-token vocabulary with max_len 3.
inline Scored exhaustive_best(const NextTokenFn& next, int bos, int eos) {
  std::vector<Scored> all;
  const auto p1 = next(std::vector<int>{bos});
  for (int a = 0; a < 4; ++a) {
    if (!std::isfinite(p1[static_cast<std::size_t>(a)])) continue;
    if (a == eos) {
      all.push_back({{bos, a}, p1[static_cast<std::size_t>(a)]});
      continue;
    }
    const auto p2 = next(std::vector<int>{bos, a});
    for (int b = 0; b < 4; ++b)
      if (std::isfinite(p2[static_cast<std::size_t>(b)]))
        all.push_back({{bos, a, b}, p1[static_cast<std::size_t>(a)] + p2[static_cast<std::size_t>(b)]});
  }
  return *std::min_element(all.begin(), all.end(), [](const Scored& x, const Scored& y) {
    if (x.score != y.score) return x.score > y.score;
    if (x.tokens.size() != y.tokens.size()) return x.tokens.size() < y.tokens.size();
    return x.tokens < y.tokens;
  });
}

/// Argmax decoding; ties go to the lowest id.
inline Scored greedy_decode(const NextTokenFn& next, int bos, int eos, int max_len) {
  Scored g{{bos}, 0.0};
  while (true) {
    const auto lp = next(g.tokens);
    const auto best = std::max_element(lp.begin(), lp.end()) - lp.begin();
    g.score += lp[static_cast<std::size_t>(best)];
    g.tokens.push_back(static_cast<int>(best));
    if (best == eos || static_cast<int>(g.tokens.size()) >= max_len) return g;
  }
}

}  // namespace mmx::testing
