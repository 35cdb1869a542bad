#pragma once

#include <string>
#include <vector>

namespace slc {

struct Series {
  std::string label;
  std::vector<double> x, y;
  /// Appended to the legend entry, e.g. "halted at t=34".
  std::string note;
};

struct ReferenceLine {
  std::string label;
  double y = 0.0;
};

struct PlotStyle {
  std::string title;
  std::string x_label = "t";
  std::string y_label;
  bool log_y = false;
  int width = 720;
  int height = 440;
  std::vector<ReferenceLine> reference_lines;
};

/// Self-contained SVG line plot. Non-finite points (and non-positive ones on a
/// log axis) break the polyline. Throws EmptySeries when nothing is plottable.
std::string render_svg(const std::vector<Series>& series, const PlotStyle& style);

}  // namespace slc
