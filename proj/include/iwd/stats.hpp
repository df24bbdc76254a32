#pragma once

// Small descriptive statistics over contiguous ranges.

#include "iwd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <ranges>
#include <vector>

namespace iwd {

template <std::ranges::random_access_range R>
auto mean(const R& x) {
  using Scalar = std::ranges::range_value_t<R>;
  if (std::ranges::empty(x)) throw ContractError("mean: empty input");
  Scalar s = 0;
  for (Scalar v : x) s += v;
  return s / static_cast<Scalar>(std::ranges::size(x));
}

/// Population standard deviation.
template <std::ranges::random_access_range R>
auto stddev(const R& x) {
  using Scalar = std::ranges::range_value_t<R>;
  const Scalar m = mean(x);
  Scalar s = 0;
  for (Scalar v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<Scalar>(std::ranges::size(x)));
}

/// 1-based ranks; tied values share the average of their ranks.
template <std::ranges::random_access_range R>
std::vector<double> average_ranks(const R& x) {
  std::vector<std::size_t> order(static_cast<std::size_t>(std::ranges::size(x)));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(order.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t k = i;
    while (k + 1 < order.size() && x[order[k + 1]] == x[order[i]]) ++k;
    const double r = 0.5 * static_cast<double>(i + k) + 1.0;
    for (std::size_t m = i; m <= k; ++m) ranks[order[m]] = r;
    i = k + 1;
  }
  return ranks;
}

template <std::ranges::random_access_range R>
auto pearson(const R& x, const R& y) {
  using Scalar = std::ranges::range_value_t<R>;
  const auto n = static_cast<std::size_t>(std::ranges::size(x));
  if (n != static_cast<std::size_t>(std::ranges::size(y)) || n < 2) {
    throw ContractError("pearson: need two equally sized samples of size >= 2");
  }
  const Scalar mx = mean(x), my = mean(y);
  Scalar sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == Scalar(0) || syy == Scalar(0)) throw ContractError("pearson: constant sample");
  return sxy / std::sqrt(sxx * syy);
}

template <std::ranges::random_access_range R>
double spearman(const R& x, const R& y) {
  const std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

}  // namespace iwd
