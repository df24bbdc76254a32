#include "iwd/svg.hpp"

#include "iwd/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>

namespace iwd::svg {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 20.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;
constexpr std::array<const char*, 6> kColors{"#1f77b4", "#d62728", "#2ca02c",
                                             "#9467bd", "#ff7f0e", "#17becf"};

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

std::string tick(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  [[nodiscard]] double px(double x) const {
    return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight);
  }
  [[nodiscard]] double py(double y) const {
    return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom);
  }
};

std::string open_doc(const std::string& title) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kWidth) +
                  "\" height=\"" + fmt(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt(kWidth / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" +
       escape(title) + "</text>\n";
  return s;
}

std::string axes(const Frame& f, const std::string& xlabel, const std::string& ylabel,
                 bool log_x) {
  std::string s;
  const double bx = kHeight - kBottom;
  s += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(bx) + "\" x2=\"" + fmt(kWidth - kRight) +
       "\" y2=\"" + fmt(bx) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(kTop) + "\" x2=\"" + fmt(kLeft) +
       "\" y2=\"" + fmt(bx) + "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = f.x0 + (f.x1 - f.x0) * k / 4.0;
    const double yv = f.y0 + (f.y1 - f.y0) * k / 4.0;
    s += "<text x=\"" + fmt(f.px(xv)) + "\" y=\"" + fmt(bx + 16) + "\" text-anchor=\"middle\">" +
         tick(log_x ? std::pow(10.0, xv) : xv) + "</text>\n";
    s += "<text x=\"" + fmt(kLeft - 6) + "\" y=\"" + fmt(f.py(yv) + 4) +
         "\" text-anchor=\"end\">" + tick(yv) + "</text>\n";
  }
  s += "<text x=\"" + fmt((kLeft + kWidth - kRight) / 2) + "\" y=\"" + fmt(kHeight - 16) +
       "\" text-anchor=\"middle\">" + escape(xlabel) + "</text>\n";
  if (!ylabel.empty()) {
    s += "<text x=\"16\" y=\"" + fmt((kTop + bx) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         fmt((kTop + bx) / 2) + ")\">" + escape(ylabel) + "</text>\n";
  }
  return s;
}

}  // namespace

Histogram histogram(std::span<const double> values, std::size_t bins) {
  if (values.empty()) throw ContractError("histogram: no values");
  if (bins < 1) throw ContractError("histogram: bins must be >= 1");
  for (double v : values) {
    if (!std::isfinite(v)) throw ContractError("histogram: non-finite value");
  }
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  Histogram h;
  h.lo = *mn;
  h.hi = *mx;
  if (h.hi == h.lo) {
    h.lo -= 0.5;
    h.hi += 0.5;
  }
  h.counts.assign(bins, 0);
  const double width = (h.hi - h.lo) / static_cast<double>(bins);
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - h.lo) / width);
    ++h.counts[std::min(b, bins - 1)];
  }
  return h;
}

std::string render_histogram(const Histogram& h, const std::string& title,
                             const std::string& xlabel) {
  const std::size_t top = *std::max_element(h.counts.begin(), h.counts.end());
  const Frame f{h.lo, h.hi, 0.0, static_cast<double>(std::max<std::size_t>(top, 1))};
  std::string s = open_doc(title);
  const double width = (h.hi - h.lo) / static_cast<double>(h.counts.size());
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    const double a = h.lo + width * static_cast<double>(b);
    const double x0 = f.px(a), x1 = f.px(a + width);
    const double y = f.py(static_cast<double>(h.counts[b]));
    s += "<rect x=\"" + fmt(x0) + "\" y=\"" + fmt(y) + "\" width=\"" + fmt(x1 - x0) +
         "\" height=\"" + fmt(f.py(0.0) - y) + "\" fill=\"" + kColors[0] +
         "\" stroke=\"white\" data-count=\"" + std::to_string(h.counts[b]) + "\"/>\n";
  }
  s += axes(f, xlabel, "count", false);
  return s + "</svg>\n";
}

std::string render_lines(std::span<const Series> series, const std::string& title,
                         const std::string& xlabel, const std::string& ylabel, bool log_x) {
  if (series.empty()) throw ContractError("render_lines: no series");
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& sr : series) {
    if (sr.x.size() != sr.y.size() || sr.x.empty()) {
      throw ContractError("render_lines: series '" + sr.name + "' is empty or ragged");
    }
    for (std::size_t k = 0; k < sr.x.size(); ++k) {
      if (log_x && !(sr.x[k] > 0.0)) throw ContractError("render_lines: log axis needs x > 0");
      const double x = log_x ? std::log10(sr.x[k]) : sr.x[k];
      if (!std::isfinite(x) || !std::isfinite(sr.y[k])) {
        throw ContractError("render_lines: non-finite point");
      }
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, sr.y[k]);
      y1 = std::max(y1, sr.y[k]);
    }
  }
  if (x1 == x0) { x0 -= 0.5; x1 += 0.5; }
  if (y1 == y0) { y0 -= 0.5; y1 += 0.5; }
  const Frame f{x0, x1, y0, y1};
  std::string s = open_doc(title);
  s += axes(f, xlabel, ylabel, log_x);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& sr = series[i];
    const char* color = kColors[i % kColors.size()];
    std::string pts;
    for (std::size_t k = 0; k < sr.x.size(); ++k) {
      const double x = log_x ? std::log10(sr.x[k]) : sr.x[k];
      if (k) pts += " ";
      pts += fmt(f.px(x)) + "," + fmt(f.py(sr.y[k]));
    }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" +
         pts + "\"/>\n";
    s += "<text x=\"" + fmt(kWidth - kRight - 4) + "\" y=\"" + fmt(kTop + 14.0 * static_cast<double>(i + 1)) +
         "\" text-anchor=\"end\" fill=\"" + color + "\">" + escape(sr.name) + "</text>\n";
  }
  return s + "</svg>\n";
}

}  // namespace iwd::svg
