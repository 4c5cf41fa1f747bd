#pragma once

// Minimal SVG line plots over sigma (log-x) and run manifests.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dkit/metrics.hpp"

namespace dkit {

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace detail

/// One polyline per series, log-scaled sigma axis, linear value axis.
inline std::string svg_plot(const std::vector<MetricSeries>& series, const std::string& title = "") {
  constexpr double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      if (!(s.sigmas[i] > 0.0)) throw InvalidArgument("svg plot: sigma must be positive on a log axis");
      xlo = std::min(xlo, std::log10(s.sigmas[i]));
      xhi = std::max(xhi, std::log10(s.sigmas[i]));
      ylo = std::min(ylo, s.values[i]);
      yhi = std::max(yhi, s.values[i]);
    }
  }
  if (!std::isfinite(xlo)) xlo = -1, xhi = 1, ylo = 0, yhi = 1;
  if (xhi - xlo < 1e-12) xlo -= 0.5, xhi += 0.5;
  if (yhi - ylo < 1e-12) ylo -= 0.5, yhi += 0.5;
  auto px = [&](double lx) { return L + (lx - xlo) / (xhi - xlo) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ylo) / (yhi - ylo) * (H - T - B); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  if (!title.empty())
    os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" << detail::xml_escape(title)
       << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int e = static_cast<int>(std::ceil(xlo - 1e-9)); e <= static_cast<int>(std::floor(xhi + 1e-9)); ++e) {
    const double x = px(e);
    os << "<line x1=\"" << detail::fmt(x) << "\" y1=\"" << H - B << "\" x2=\"" << detail::fmt(x) << "\" y2=\""
       << H - B + 5 << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << detail::fmt(x) << "\" y=\"" << H - B + 20 << "\" text-anchor=\"middle\" font-size=\"11\">1e"
       << e << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double y = ylo + (yhi - ylo) * k / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << detail::fmt(py(y) + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
       << detail::fmt(y) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\" font-size=\"12\">sigma</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& ser = series[s];
    os << "<polyline fill=\"none\" stroke=\"" << colors[s % 6] << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < ser.values.size(); ++i) {
      if (i) os << ' ';
      os << detail::fmt(px(std::log10(ser.sigmas[i]))) << ',' << detail::fmt(py(ser.values[i]));
    }
    os << "\"/>\n"
       << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 * (s + 1) << "\" text-anchor=\"end\" font-size=\"11\" fill=\""
       << colors[s % 6] << "\">" << detail::xml_escape(ser.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline constexpr const char* kToolVersion = "dkit 0.1.0";

/// Manifest skeleton: command, effective flags, seed, file format versions.
inline nlohmann::json make_manifest(const std::string& command, const nlohmann::json& flags, std::uint64_t seed) {
  return {{"tool", kToolVersion},
          {"command", command},
          {"flags", flags},
          {"seed", seed},
          {"formats",
           {{"raw-f64", "DDL1"}, {"affine", "AFF1"}, {"toy", "TOY1"}, {"plugin", "DNP1"}, {"csv", "comma-separated"}}},
          {"inputs", nlohmann::json::array()},
          {"outputs", nlohmann::json::array()}};
}

}  // namespace dkit
