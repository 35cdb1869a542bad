#include "slc/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "slc/error.hpp"

namespace slc {

namespace {

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

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
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  if (v != 0 && (std::abs(v) >= 1e4 || std::abs(v) < 1e-3)) {
    std::snprintf(buf, sizeof buf, "%.0e", v);
  } else {
    std::snprintf(buf, sizeof buf, "%g", v);
  }
  return buf;
}

std::vector<double> linear_ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double f : {1.0, 2.0, 5.0, 10.0}) {
    step = f * mag;
    if (step >= raw) break;
  }
  std::vector<double> t;
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * span; v += step) t.push_back(std::abs(v) < 1e-12 * span ? 0.0 : v);
  return t;
}

}  // namespace

std::string render_svg(const std::vector<Series>& series, const PlotStyle& style) {
  auto usable = [&](double x, double y) {
    return std::isfinite(x) && std::isfinite(y) && (!style.log_y || y > 0);
  };
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      const double y = style.log_y ? std::log10(s.y[i]) : s.y[i];
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!(x0 <= x1)) fail(ErrorCode::kEmptySeries, "no plottable points in '" + style.title + "'");
  for (const auto& r : style.reference_lines) {
    if (style.log_y && r.y <= 0) continue;
    const double y = style.log_y ? std::log10(r.y) : r.y;
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  if (style.log_y) {
    y0 = std::floor(y0);
    y1 = std::ceil(y1);
  } else {
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
  }

  const double left = 70, right = 180, top = 36, bottom = 50;
  const double pw = style.width - left - right, ph = style.height - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << style.width << "\" height=\"" << style.height
    << "\" viewBox=\"0 0 " << style.width << ' ' << style.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << num(left + pw / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
    << escape(style.title) << "</text>\n";

  // axes and ticks
  o << "<g class=\"axes\" stroke=\"black\" fill=\"none\">\n";
  o << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
    << "\"/>\n</g>\n<g class=\"ticks\" fill=\"black\">\n";
  for (double t : linear_ticks(x0, x1)) {
    o << "<line x1=\"" << num(px(t)) << "\" y1=\"" << num(top + ph) << "\" x2=\"" << num(px(t)) << "\" y2=\""
      << num(top + ph + 5) << "\" stroke=\"black\"/>";
    o << "<text x=\"" << num(px(t)) << "\" y=\"" << num(top + ph + 18) << "\" text-anchor=\"middle\">"
      << tick_label(t) << "</text>\n";
  }
  std::vector<double> yt;
  if (style.log_y) {
    const int stride = std::max(1, static_cast<int>(std::ceil((y1 - y0) / 8)));
    for (double v = y0; v <= y1 + 1e-9; v += stride) yt.push_back(v);
  } else {
    yt = linear_ticks(y0, y1);
  }
  for (double t : yt) {
    o << "<line x1=\"" << num(left - 5) << "\" y1=\"" << num(py(t)) << "\" x2=\"" << num(left) << "\" y2=\""
      << num(py(t)) << "\" stroke=\"black\"/>";
    o << "<text x=\"" << num(left - 8) << "\" y=\"" << num(py(t) + 4) << "\" text-anchor=\"end\">"
      << (style.log_y ? "1e" + tick_label(t) : tick_label(t)) << "</text>\n";
  }
  o << "</g>\n";
  o << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(style.height - 12.0) << "\" text-anchor=\"middle\">"
    << escape(style.x_label) << "</text>\n";
  o << "<text transform=\"translate(16 " << num(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(style.y_label) << (style.log_y ? " (log)" : "") << "</text>\n";

  // data
  int legend_row = 0;
  auto legend = [&](const std::string& color, const std::string& label, bool dashed) {
    const double ly = top + 10 + 18 * legend_row++;
    o << "<line x1=\"" << num(left + pw + 12) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(left + pw + 32)
      << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\""
      << (dashed ? " stroke-dasharray=\"6 4\"" : "") << "/>";
    o << "<text x=\"" << num(left + pw + 38) << "\" y=\"" << num(ly + 4) << "\">" << escape(label) << "</text>\n";
  };
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const std::string color = kPalette[k % std::size(kPalette)];
    std::vector<std::string> segments(1);
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!usable(s.x[i], s.y[i])) {
        if (!segments.back().empty()) segments.emplace_back();
        continue;
      }
      const double y = style.log_y ? std::log10(s.y[i]) : s.y[i];
      segments.back() += (segments.back().empty() ? "" : " ") + num(px(s.x[i])) + "," + num(py(y));
    }
    for (const auto& seg : segments) {
      if (seg.empty()) continue;
      o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << seg << "\"/>\n";
    }
    legend(color, s.note.empty() ? s.label : s.label + " (" + s.note + ")", false);
  }
  for (const auto& r : style.reference_lines) {
    if (style.log_y && r.y <= 0) continue;
    const double y = py(style.log_y ? std::log10(r.y) : r.y);
    o << "<line class=\"reference\" x1=\"" << num(left) << "\" y1=\"" << num(y) << "\" x2=\"" << num(left + pw)
      << "\" y2=\"" << num(y) << "\" stroke=\"#555\" stroke-dasharray=\"6 4\"/>\n";
    legend("#555", r.label, true);
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace slc
