#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "caepl/csv.hpp"

namespace caepl {

namespace detail {

struct Series {
  std::string label;
  std::string color;
  std::vector<double> values;
};

// One panel: polylines over epoch on x, value on y, with a light frame.
inline void render_panel(std::ostringstream& out, double ox, double oy, double w, double h,
                         const std::string& title, const std::vector<Series>& series) {
  double lo = 1e300, hi = -1e300;
  std::size_t n = 0;
  for (const auto& s : series) {
    n = std::max(n, s.values.size());
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (n == 0) return;
  if (hi <= lo) hi = lo + 1.0;
  const double pad = 0.06 * (hi - lo);
  lo -= pad;
  hi += pad;

  out << "<rect x='" << ox << "' y='" << oy << "' width='" << w << "' height='" << h
      << "' fill='white' stroke='#888'/>\n";
  out << "<text x='" << ox + w / 2 << "' y='" << oy - 8
      << "' text-anchor='middle' font-size='14' font-family='sans-serif'>" << title
      << "</text>\n";
  // y labels at min/max
  for (double v : {lo + pad, hi - pad}) {
    const double y = oy + h - (v - lo) / (hi - lo) * h;
    out << "<text x='" << ox - 6 << "' y='" << y + 4
        << "' text-anchor='end' font-size='10' font-family='sans-serif'>" << fmt_f(v, 3)
        << "</text>\n";
    out << "<line x1='" << ox << "' y1='" << y << "' x2='" << ox + w << "' y2='" << y
        << "' stroke='#ddd'/>\n";
  }
  out << "<text x='" << ox + w / 2 << "' y='" << oy + h + 24
      << "' text-anchor='middle' font-size='11' font-family='sans-serif'>epoch</text>\n";
  out << "<text x='" << ox << "' y='" << oy + h + 24
      << "' text-anchor='middle' font-size='10' font-family='sans-serif'>1</text>\n";
  out << "<text x='" << ox + w << "' y='" << oy + h + 24
      << "' text-anchor='middle' font-size='10' font-family='sans-serif'>" << n << "</text>\n";

  double legend_x = ox + 10;
  for (const auto& s : series) {
    std::ostringstream pts;
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      const double x = ox + (n > 1 ? static_cast<double>(i) / (n - 1) : 0.5) * w;
      const double y = oy + h - (s.values[i] - lo) / (hi - lo) * h;
      pts << (i ? " " : "") << fmt_f(x, 2) << ',' << fmt_f(y, 2);
    }
    out << "<polyline points='" << pts.str() << "' fill='none' stroke='" << s.color
        << "' stroke-width='1.5'/>\n";
    out << "<line x1='" << legend_x << "' y1='" << oy + 14 << "' x2='" << legend_x + 18
        << "' y2='" << oy + 14 << "' stroke='" << s.color << "' stroke-width='2'/>\n";
    out << "<text x='" << legend_x + 22 << "' y='" << oy + 18
        << "' font-size='11' font-family='sans-serif'>" << s.label << "</text>\n";
    legend_x += 22 + 10 + 7.0 * s.label.size();
  }
}

}  // namespace detail

// Loss and accuracy curves (train + validation) as a static SVG.
inline void write_curves_svg(const TrainingLog& log, const std::filesystem::path& path) {
  if (log.rows.empty()) throw DataError("curves: training log is empty");
  std::vector<double> loss, val_loss, acc, val_acc;
  for (const auto& r : log.rows) {
    loss.push_back(r.loss);
    val_loss.push_back(r.val_loss);
    acc.push_back(r.acc);
    val_acc.push_back(r.val_acc);
  }
  std::ostringstream out;
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='960' height='380' "
         "viewBox='0 0 960 380'>\n";
  out << "<rect width='960' height='380' fill='#fafafa'/>\n";
  detail::render_panel(out, 60, 40, 380, 280, "accuracy",
                       {{"acc", "#1f77b4", acc}, {"val_acc", "#ff7f0e", val_acc}});
  detail::render_panel(out, 540, 40, 380, 280, "loss",
                       {{"loss", "#1f77b4", loss}, {"val_loss", "#ff7f0e", val_loss}});
  out << "</svg>\n";
  detail::write_text_atomic(path, out.str());
}

}  // namespace caepl
