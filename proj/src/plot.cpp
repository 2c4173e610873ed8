#include "dualseg/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dualseg {

namespace {

constexpr int kW = 720, kH = 440;
constexpr int kL = 70, kR = 30, kT = 50, kB = 55;  // margins

const char* kPalette[] = {"#c03028", "#2860c0", "#2f9e44", "#b8860b",
                          "#7048a8", "#0e8a8a", "#888888"};

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  real lo = 0, hi = 1;
  real map(real v, real a, real b) const {
    if (hi == lo) return (a + b) / 2;
    return a + (v - lo) / (hi - lo) * (b - a);
  }
};

std::string coord(real v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::string format_real(real v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void svg_line_chart(const std::filesystem::path& path, const std::string& title,
                    const std::string& x_label, const std::string& y_label,
                    const std::vector<PlotSeries>& series) {
  Range xr{1e30, -1e30}, yr{1e30, -1e30};
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      xr.lo = std::min(xr.lo, s.x[i]);
      xr.hi = std::max(xr.hi, s.x[i]);
      yr.lo = std::min(yr.lo, s.y[i]);
      yr.hi = std::max(yr.hi, s.y[i]);
    }
  if (xr.lo > xr.hi) xr = {0, 1};
  if (yr.lo > yr.hi) yr = {0, 1};
  const real pad = (yr.hi - yr.lo) * 0.07 + 1e-9;
  yr.lo -= pad;
  yr.hi += pad;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" font-family=\"sans-serif\">\n";
  svg << "<rect width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
      << esc(title) << "</text>\n";

  // axes
  svg << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR << "\" y2=\""
      << kH - kB << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\"" << kH - kB
      << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 14
      << "\" text-anchor=\"middle\" font-size=\"12\">" << esc(x_label) << "</text>\n";
  svg << "<text x=\"18\" y=\"" << (kT + kH - kB) / 2
      << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 18 "
      << (kT + kH - kB) / 2 << ")\">" << esc(y_label) << "</text>\n";

  // ticks
  for (int i = 0; i <= 4; ++i) {
    const real fx = xr.lo + (xr.hi - xr.lo) * i / 4;
    const real fy = yr.lo + (yr.hi - yr.lo) * i / 4;
    const real px = xr.map(fx, kL, kW - kR);
    const real py = yr.map(fy, kH - kB, kT);
    svg << "<line x1=\"" << coord(px) << "\" y1=\"" << kH - kB << "\" x2=\"" << coord(px)
        << "\" y2=\"" << kH - kB + 5 << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << coord(px) << "\" y=\"" << kH - kB + 18
        << "\" text-anchor=\"middle\" font-size=\"10\">" << coord(fx) << "</text>\n";
    svg << "<line x1=\"" << kL - 5 << "\" y1=\"" << coord(py) << "\" x2=\"" << kL << "\" y2=\""
        << coord(py) << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << kL - 8 << "\" y=\"" << coord(py + 3)
        << "\" text-anchor=\"end\" font-size=\"10\">" << coord(fy) << "</text>\n";
  }

  for (size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
    for (size_t i = 0; i < series[s].x.size(); ++i) {
      svg << coord(xr.map(series[s].x[i], kL, kW - kR)) << ","
          << coord(yr.map(series[s].y[i], kH - kB, kT)) << " ";
    }
    svg << "\"/>\n";
    // legend
    const int ly = kT + 16 * static_cast<int>(s);
    svg << "<rect x=\"" << kW - kR - 150 << "\" y=\"" << ly << "\" width=\"10\" height=\"10\" fill=\""
        << color << "\"/>\n";
    svg << "<text x=\"" << kW - kR - 135 << "\" y=\"" << ly + 9 << "\" font-size=\"11\">"
        << esc(series[s].label) << "</text>\n";
  }
  svg << "</svg>\n";

  std::ofstream f(path);
  f << svg.str();
  if (!f) throw std::runtime_error("plot: failed writing " + path.string());
}

void svg_bar_chart(const std::filesystem::path& path, const std::string& title,
                   const std::vector<std::pair<std::string, real>>& bars) {
  real hi = 0;
  for (const auto& [_, v] : bars) hi = std::max(hi, v);
  if (hi <= 0) hi = 1;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" font-family=\"sans-serif\">\n";
  svg << "<rect width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
      << esc(title) << "</text>\n";
  const int n = static_cast<int>(bars.size());
  const real span = static_cast<real>(kW - kL - kR) / std::max(1, n);
  for (int i = 0; i < n; ++i) {
    const real h = (kH - kT - kB) * bars[i].second / (hi * 1.1);
    const real x = kL + span * i + span * 0.15;
    const real y = kH - kB - h;
    const char* color = kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
    svg << "<rect x=\"" << coord(x) << "\" y=\"" << coord(y) << "\" width=\"" << coord(span * 0.7)
        << "\" height=\"" << coord(h) << "\" fill=\"" << color << "\"/>\n";
    svg << "<text x=\"" << coord(x + span * 0.35) << "\" y=\"" << kH - kB + 16
        << "\" text-anchor=\"middle\" font-size=\"10\">" << esc(bars[i].first) << "</text>\n";
    svg << "<text x=\"" << coord(x + span * 0.35) << "\" y=\"" << coord(y - 4)
        << "\" text-anchor=\"middle\" font-size=\"10\">" << format_real(bars[i].second)
        << "</text>\n";
  }
  svg << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR << "\" y2=\""
      << kH - kB << "\" stroke=\"black\"/>\n";
  svg << "</svg>\n";

  std::ofstream f(path);
  f << svg.str();
  if (!f) throw std::runtime_error("plot: failed writing " + path.string());
}

}  // namespace dualseg
