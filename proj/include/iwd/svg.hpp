#pragma once

// Static SVG plots with a fixed layout, so equal inputs give equal bytes.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace iwd::svg {

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;
};

/// Equal-width bins over [min, max]; the maximum falls in the last bin. A
/// constant sample gets a unit-width range centred on its value.
Histogram histogram(std::span<const double> values, std::size_t bins);

std::string render_histogram(const Histogram& h, const std::string& title,
                             const std::string& xlabel);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// log_x plots log10(x); every x must then be positive.
std::string render_lines(std::span<const Series> series, const std::string& title,
                         const std::string& xlabel, const std::string& ylabel,
                         bool log_x = false);

}  // namespace iwd::svg
