#pragma once

// Self-contained SVG line plots with a CSV twin for external tooling.

#include <string>
#include <vector>

namespace baa::cli {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct PlotSpec {
  std::string title, x_label, y_label;
  bool steps = false;  // draw as a histogram outline
};

std::string line_plot_svg(const std::vector<Series>& series, const PlotSpec& spec);

// Long format: series,x,y
std::string series_csv(const std::vector<Series>& series);

}  // namespace baa::cli
