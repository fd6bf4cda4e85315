#include "baa/cli/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "baa/common/error.hpp"

namespace baa::cli {
namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 55;
constexpr const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string escape(const std::string& s) {
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

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// Roughly five round tick values covering [lo, hi].
std::vector<double> ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> out;
  for (double v = std::ceil(lo / step - 1e-9) * step; v <= hi + 1e-9 * span; v += step) out.push_back(std::abs(v) < 1e-12 * span ? 0 : v);
  return out;
}

}  // namespace

std::string line_plot_svg(const std::vector<Series>& series, const PlotSpec& spec) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = 0, y1 = -INFINITY;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw InvalidInput("line_plot_svg: series '" + s.label + "' has mismatched x and y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!(x1 > x0)) x0 = std::isfinite(x0) ? x0 - 1 : 0, x1 = std::isfinite(x1) ? x1 + 1 : 1;
  if (!(y1 > y0)) y1 = y0 + 1;
  y1 += 0.05 * (y1 - y0);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + ph - (y - y0) / (y1 - y0) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(spec.title) << "</text>\n";
  for (double t : ticks(x0, x1)) {
    os << "<line x1=\"" << num(px(t)) << "\" y1=\"" << kTop << "\" x2=\"" << num(px(t)) << "\" y2=\"" << kTop + ph
       << "\" stroke=\"#e0e0e0\"/>\n";
    os << "<text x=\"" << num(px(t)) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">" << num(t) << "</text>\n";
  }
  for (double t : ticks(y0, y1)) {
    os << "<line x1=\"" << kLeft << "\" y1=\"" << num(py(t)) << "\" x2=\"" << kLeft + pw << "\" y2=\"" << num(py(t))
       << "\" stroke=\"#e0e0e0\"/>\n";
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(py(t) + 4) << "\" text-anchor=\"end\">" << num(t) << "</text>\n";
  }
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 14 << "\" text-anchor=\"middle\">" << escape(spec.x_label) << "</text>\n";
  os << "<text transform=\"translate(18," << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << escape(spec.y_label)
     << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& d = series[s];
    const char* colour = kColours[s % std::size(kColours)];
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.8\" points=\"";
    for (std::size_t i = 0; i < d.x.size(); ++i) {
      if (!std::isfinite(d.x[i]) || !std::isfinite(d.y[i])) continue;
      if (spec.steps) {
        const double right = i + 1 < d.x.size() ? d.x[i + 1] : d.x[i] + (i > 0 ? d.x[i] - d.x[i - 1] : 1);
        os << num(px(d.x[i])) << ',' << num(py(d.y[i])) << ' ' << num(px(std::min(right, x1))) << ',' << num(py(d.y[i])) << ' ';
      } else {
        os << num(px(d.x[i])) << ',' << num(py(d.y[i])) << ' ';
      }
    }
    os << "\"/>\n";
    const double ly = kTop + 16 + 18 * static_cast<double>(s);
    os << "<line x1=\"" << kLeft + pw - 170 << "\" y1=\"" << ly - 4 << "\" x2=\"" << kLeft + pw - 145 << "\" y2=\"" << ly - 4
       << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << kLeft + pw - 140 << "\" y=\"" << ly << "\">" << escape(d.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string series_csv(const std::vector<Series>& series) {
  std::ostringstream os;
  os.precision(10);
  os << "series,x,y\n";
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) os << s.label << ',' << s.x[i] << ',' << s.y[i] << '\n';
  return os.str();
}

}  // namespace baa::cli
