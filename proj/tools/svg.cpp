#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include "app.hpp"
#include "illid/error.hpp"

namespace illid::app {

namespace {

constexpr double kSize = 480.0, kMargin = 48.0;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

// Tick spacing of 1, 2 or 5 times a power of ten giving roughly six ticks.
double tick_step(double span) {
  const double raw = span / 6.0;
  const double p = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0})
    if (m * p >= raw) return m * p;
  return 10.0 * p;
}

}  // namespace

void write_toy_svg(std::ostream& os, const ad::Tensor& xs, const std::vector<std::size_t>& assignment,
                   const std::vector<std::pair<double, double>>& class_means, double sigma, const std::string& title) {
  if (xs.cols() != 2 || assignment.size() != xs.rows()) throw DimensionError("write_toy_svg: need [n x 2] points and n labels");
  double lo = 0.0, hi = 0.0;
  for (const auto& [mx, my] : class_means) {
    lo = std::min({lo, mx - 2 * sigma, my - 2 * sigma});
    hi = std::max({hi, mx + 2 * sigma, my + 2 * sigma});
  }
  for (double v : xs.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const double plot = kSize - 2 * kMargin;
  const auto sx = [&](double v) { return kMargin + (v - lo) / (hi - lo) * plot; };
  const auto sy = [&](double v) { return kSize - kMargin - (v - lo) / (hi - lo) * plot; };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize << "\" height=\"" << kSize
     << "\" viewBox=\"0 0 " << kSize << ' ' << kSize << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kSize / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" << escape(title)
     << "</text>\n";
  os << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << plot << "\" height=\"" << plot
     << "\" fill=\"none\" stroke=\"black\"/>\n";

  const double step = tick_step(hi - lo);
  for (double t = std::ceil(lo / step) * step; t <= hi; t += step) {
    char label[32];
    std::snprintf(label, sizeof label, "%g", std::abs(t) < 1e-9 * step ? 0.0 : t);
    os << "<line x1=\"" << num(sx(t)) << "\" y1=\"" << num(kSize - kMargin) << "\" x2=\"" << num(sx(t)) << "\" y2=\""
       << num(kSize - kMargin + 5) << "\" stroke=\"black\"/>"
       << "<text x=\"" << num(sx(t)) << "\" y=\"" << num(kSize - kMargin + 17) << "\" text-anchor=\"middle\">" << label
       << "</text>\n";
    os << "<line x1=\"" << num(kMargin - 5) << "\" y1=\"" << num(sy(t)) << "\" x2=\"" << num(kMargin) << "\" y2=\""
       << num(sy(t)) << "\" stroke=\"black\"/>"
       << "<text x=\"" << num(kMargin - 8) << "\" y=\"" << num(sy(t) + 4) << "\" text-anchor=\"end\">" << label
       << "</text>\n";
  }

  os << "<g fill-opacity=\"0.6\">\n";
  for (std::size_t i = 0; i < xs.rows(); ++i)
    os << "<circle cx=\"" << num(sx(xs(i, 0))) << "\" cy=\"" << num(sy(xs(i, 1))) << "\" r=\"2.5\" fill=\""
       << kPalette[assignment[i] % std::size(kPalette)] << "\"/>\n";
  os << "</g>\n";

  const double r = 2 * sigma / (hi - lo) * plot;
  for (const auto& [mx, my] : class_means) {
    os << "<circle cx=\"" << num(sx(mx)) << "\" cy=\"" << num(sy(my)) << "\" r=\"" << num(r)
       << "\" fill=\"none\" stroke=\"black\" stroke-dasharray=\"6 4\"/>\n";
    os << "<path d=\"M" << num(sx(mx) - 6) << ' ' << num(sy(my)) << "h12M" << num(sx(mx)) << ' ' << num(sy(my) - 6)
       << "v12\" stroke=\"black\" stroke-width=\"2\"/>\n";
  }
  os << "</svg>\n";
}

}  // namespace illid::app
