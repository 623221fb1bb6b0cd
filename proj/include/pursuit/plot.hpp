#pragma once

// Line charts of a training metrics CSV as standalone SVG files.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "pursuit/error.hpp"
#include "pursuit/trainer.hpp"

namespace pursuit {

struct MetricsRow {
  int episode = 0;
  double undiscounted = 0.0;
  double discounted = 0.0;
  int completion_step = 0;
  int captures = 0;
  double l1 = 0.0;
  double mi = 0.0;
  double total_loss = 0.0;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double csv_real(const std::string& s, int line_no) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw FormatError("line " + std::to_string(line_no) + ": bad number '" + s + "'");
  }
  return v;
}

inline int csv_int(const std::string& s, int line_no) {
  const double v = csv_real(s, line_no);
  if (v != std::floor(v)) throw FormatError("line " + std::to_string(line_no) + ": expected integer '" + s + "'");
  return static_cast<int>(v);
}

}  // namespace detail

/// Strict parse: exact header, eight numeric cells per row, at least one row.
inline std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw FormatError("empty metrics CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader) throw FormatError("unexpected metrics header '" + line + "'");
  std::vector<MetricsRow> rows;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto c = detail::split_csv_line(line);
    if (c.size() != 8) throw FormatError("line " + std::to_string(line_no) + ": expected 8 columns");
    rows.push_back({detail::csv_int(c[0], line_no), detail::csv_real(c[1], line_no), detail::csv_real(c[2], line_no),
                    detail::csv_int(c[3], line_no), detail::csv_int(c[4], line_no), detail::csv_real(c[5], line_no),
                    detail::csv_real(c[6], line_no), detail::csv_real(c[7], line_no)});
  }
  if (rows.empty()) throw FormatError("metrics CSV has no rows");
  return rows;
}

struct Series {
  std::string label;
  std::string color;
  std::vector<double> y;
};

/// One chart, all series against the shared x values.
inline std::string render_line_chart(const std::string& title, const std::string& x_label,
                                     const std::vector<double>& x, const std::vector<Series>& series) {
  constexpr double W = 800, H = 480, left = 70, right = 20, top = 40, bottom = 60;
  double xlo = x.front(), xhi = x.front(), ylo = 0.0, yhi = 0.0;
  bool first = true;
  for (double v : x) xlo = std::min(xlo, v), xhi = std::max(xhi, v);
  for (const auto& s : series) {
    for (double v : s.y) {
      if (first) ylo = yhi = v, first = false;
      ylo = std::min(ylo, v);
      yhi = std::max(yhi, v);
    }
  }
  if (xhi == xlo) xhi = xlo + 1.0;
  if (yhi == ylo) yhi = ylo + 1.0;
  auto px = [&](double v) { return left + (v - xlo) / (xhi - xlo) * (W - left - right); };
  auto py = [&](double v) { return H - bottom - (v - ylo) / (yhi - ylo) * (H - top - bottom); };

  std::string out;
  char buf[1024];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                W, H, W, H);
  out += buf;
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">", W / 2);
  out += buf + title + "</text>\n";
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n"
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                left, H - bottom, W - right, H - bottom, left, top, left, H - bottom);
  out += buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\">%.6g</text>\n"
                "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" text-anchor=\"end\">%.6g</text>\n"
                "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" text-anchor=\"end\">%.6g</text>\n"
                "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" text-anchor=\"end\">%.6g</text>\n",
                left, H - bottom + 16, xlo, W - right, H - bottom + 16, xhi, left - 6, H - bottom, ylo, left - 6,
                top + 4, yhi);
  out += buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"13\" text-anchor=\"middle\">", W / 2,
                H - 20);
  out += buf + x_label + "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    out += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", i ? " " : "", px(x[i]), py(s.y[i]));
      out += buf;
    }
    out += "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" fill=\"%s\">", W - right - 150,
                  top + 16.0 * static_cast<double>(k + 1), s.color.c_str());
    out += buf + s.label + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

struct PlotFiles {
  std::string reward_svg;
  std::string loss_svg;
};

inline PlotFiles render_metrics(const std::vector<MetricsRow>& rows) {
  std::vector<double> x;
  Series und{"undiscounted", "#1f77b4", {}}, disc{"discounted", "#d62728", {}};
  Series total{"total", "#000000", {}}, l1{"l1", "#2ca02c", {}}, mi{"mi", "#9467bd", {}};
  for (const auto& r : rows) {
    x.push_back(r.episode);
    und.y.push_back(r.undiscounted);
    disc.y.push_back(r.discounted);
    total.y.push_back(r.total_loss);
    l1.y.push_back(r.l1);
    mi.y.push_back(r.mi);
  }
  return {render_line_chart("Reward per episode", "episode", x, {und, disc}),
          render_line_chart("Loss per episode", "episode", x, {total, l1, mi})};
}

}  // namespace pursuit
