#pragma once

// Minimal static line plots for run reports. Output depends only on the data,
// so plot files are as reproducible as the numbers behind them.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace lyapan {

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};

struct PlotSpec {
  std::string title, x_label, y_label;
  bool log_y = false;
  int width = 640, height = 400;
};

namespace detail {

inline std::string svg_escape(const std::string& s) {
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

inline std::string num(double v, const char* fmt = "%.2f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

}  // namespace detail

/// Renders the series as polylines with a framed axis box and min/max tick labels.
/// Non-finite points (and non-positive ones on a log axis) are skipped.
inline std::string svg_line_plot(const PlotSpec& spec, const std::vector<PlotSeries>& series) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  auto ty = [&](double v) { return spec.log_y ? std::log10(v) : v; };
  auto usable = [&](double x, double y) { return std::isfinite(x) && std::isfinite(y) && (!spec.log_y || y > 0.0); };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  if (!(x0 <= x1)) x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
  if (x1 - x0 <= 0.0) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 <= 1e-300) {
    const double pad = std::max(1e-12, std::abs(y0) * 1e-6);
    y0 -= pad;
    y1 += pad;
  }
  const double left = 70, right = 20, top = 36, bottom = 50;
  const double pw = spec.width - left - right, ph = spec.height - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (ty(y) - y0) / (y1 - y0)) * ph; };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(spec.width) + "\" height=\"" +
         std::to_string(spec.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out += "<rect x=\"0\" y=\"0\" width=\"" + std::to_string(spec.width) + "\" height=\"" +
         std::to_string(spec.height) + "\" fill=\"white\"/>\n";
  out += "<text x=\"" + detail::num(spec.width / 2.0) + "\" y=\"20\" text-anchor=\"middle\">" +
         detail::svg_escape(spec.title) + "</text>\n";
  out += "<rect x=\"" + detail::num(left) + "\" y=\"" + detail::num(top) + "\" width=\"" + detail::num(pw) +
         "\" height=\"" + detail::num(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  const std::string ylo = spec.log_y ? "1e" + detail::num(y0, "%.1f") : detail::num(y0, "%.4g");
  const std::string yhi = spec.log_y ? "1e" + detail::num(y1, "%.1f") : detail::num(y1, "%.4g");
  out += "<text x=\"" + detail::num(left - 4) + "\" y=\"" + detail::num(top + ph) + "\" text-anchor=\"end\">" + ylo +
         "</text>\n";
  out += "<text x=\"" + detail::num(left - 4) + "\" y=\"" + detail::num(top + 10) + "\" text-anchor=\"end\">" + yhi +
         "</text>\n";
  out += "<text x=\"" + detail::num(left) + "\" y=\"" + detail::num(top + ph + 16) + "\">" + detail::num(x0, "%.4g") +
         "</text>\n";
  out += "<text x=\"" + detail::num(left + pw) + "\" y=\"" + detail::num(top + ph + 16) + "\" text-anchor=\"end\">" +
         detail::num(x1, "%.4g") + "</text>\n";
  out += "<text x=\"" + detail::num(left + pw / 2) + "\" y=\"" + detail::num(spec.height - 12.0) +
         "\" text-anchor=\"middle\">" + detail::svg_escape(spec.x_label) + "</text>\n";
  out += "<text x=\"16\" y=\"" + detail::num(top + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         detail::num(top + ph / 2) + ")\">" + detail::svg_escape(spec.y_label) + "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = colors[k % (sizeof colors / sizeof colors[0])];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      pts += detail::num(px(s.x[i])) + "," + detail::num(py(s.y[i])) + " ";
    }
    if (!pts.empty()) pts.pop_back();
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts +
           "\"/>\n";
    const double ly = top + 14.0 + 14.0 * static_cast<double>(k);
    out += "<line x1=\"" + detail::num(left + pw - 150) + "\" y1=\"" + detail::num(ly - 4) + "\" x2=\"" +
           detail::num(left + pw - 130) + "\" y2=\"" + detail::num(ly - 4) + "\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + detail::num(left + pw - 125) + "\" y=\"" + detail::num(ly) + "\">" +
           detail::svg_escape(s.label) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace lyapan
