#include "bme/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "bme/errors.hpp"

namespace bme::svg {

namespace {

constexpr int kWidth = 720;
constexpr int kHeight = 420;
constexpr int kMarginLeft = 64;
constexpr int kMarginRight = 24;
constexpr int kMarginTop = 40;
constexpr int kMarginBottom = 36;

const char* kPalette[] = {"#2266cc", "#cc5522", "#229955", "#8844bb",
                          "#bb3366", "#557788"};

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void take(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (lo > hi) {
      lo = 0.0;
      hi = 1.0;
    }
    if (hi == lo) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double margin = 0.05 * (hi - lo);
    lo -= margin;
    hi += margin;
  }
};

void open_svg(std::ostringstream& out, const std::string& title) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
      << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << ' '
      << kHeight << "\">\n";
  out << "<rect width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << kWidth / 2
      << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"15\" fill=\"#222\">"
      << title << "</text>\n";
}

void axes(std::ostringstream& out, const Range& y, double x_lo, double x_hi) {
  const int x0 = kMarginLeft;
  const int x1 = kWidth - kMarginRight;
  const int y0 = kHeight - kMarginBottom;
  const int y1 = kMarginTop;
  out << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1
      << "\" y2=\"" << y0 << "\" stroke=\"#888\"/>\n";
  out << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0
      << "\" y2=\"" << y1 << "\" stroke=\"#888\"/>\n";
  out << "<text x=\"" << x0 - 6 << "\" y=\"" << y0
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" "
         "fill=\"#555\">"
      << num(y.lo) << "</text>\n";
  out << "<text x=\"" << x0 - 6 << "\" y=\"" << y1 + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" "
         "fill=\"#555\">"
      << num(y.hi) << "</text>\n";
  out << "<text x=\"" << x0 << "\" y=\"" << y0 + 16
      << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#555\">"
      << num(x_lo) << "</text>\n";
  out << "<text x=\"" << x1 << "\" y=\"" << y0 + 16
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" "
         "fill=\"#555\">"
      << num(x_hi) << "</text>\n";
}

double map_x(std::size_t i, std::size_t n) {
  const double span = kWidth - kMarginLeft - kMarginRight;
  if (n <= 1) return kMarginLeft + span / 2.0;
  return kMarginLeft + span * static_cast<double>(i) / (n - 1);
}

double map_y(double v, const Range& r) {
  const double span = kHeight - kMarginTop - kMarginBottom;
  return kHeight - kMarginBottom - span * (v - r.lo) / (r.hi - r.lo);
}

void polyline(std::ostringstream& out, const std::vector<double>& ys,
              const Range& range, const std::string& color, bool dashed) {
  if (ys.empty()) return;
  out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\"";
  if (dashed) out << " stroke-dasharray=\"6 4\"";
  out << " points=\"";
  for (std::size_t i = 0; i < ys.size(); ++i) {
    out << num(map_x(i, ys.size())) << ',' << num(map_y(ys[i], range)) << ' ';
  }
  out << "\"/>\n";
}

}  // namespace

std::string line_chart(const std::string& title, const std::vector<Series>& series,
                       const std::vector<double>& reference) {
  Range range;
  std::size_t n = reference.size();
  for (const auto& s : series) {
    n = std::max(n, s.values.size());
    for (double v : s.values) range.take(v);
  }
  for (double v : reference) range.take(v);
  range.pad();

  std::ostringstream out;
  open_svg(out, title);
  axes(out, range, 0.0, n > 0 ? static_cast<double>(n - 1) : 0.0);
  if (!reference.empty()) polyline(out, reference, range, "#999", true);
  for (std::size_t i = 0; i < series.size(); ++i) {
    polyline(out, series[i].values, range,
             kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))], false);
  }
  int ly = kMarginTop + 6;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
    out << "<rect x=\"" << kWidth - kMarginRight - 130 << "\" y=\"" << ly - 9
        << "\" width=\"12\" height=\"4\" fill=\"" << color << "\"/>\n";
    out << "<text x=\"" << kWidth - kMarginRight - 112 << "\" y=\"" << ly
        << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">"
        << series[i].label << "</text>\n";
    ly += 16;
  }
  if (!reference.empty()) {
    out << "<text x=\"" << kWidth - kMarginRight - 112 << "\" y=\"" << ly
        << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#999\">"
           "reference</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string box_plot(const std::string& title, const std::vector<Box>& boxes) {
  Range range;
  for (const auto& b : boxes) {
    range.take(b.whisker_lo);
    range.take(b.whisker_hi);
  }
  range.pad();

  std::ostringstream out;
  open_svg(out, title);
  axes(out, range, 0.0, static_cast<double>(boxes.size()));
  const double slot =
      (kWidth - kMarginLeft - kMarginRight) / std::max<std::size_t>(boxes.size(), 1);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const Box& b = boxes[i];
    const double cx = kMarginLeft + slot * (i + 0.5);
    const double half = std::min(32.0, slot * 0.3);
    const char* color = kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
    out << "<line x1=\"" << num(cx) << "\" y1=\"" << num(map_y(b.whisker_lo, range))
        << "\" x2=\"" << num(cx) << "\" y2=\"" << num(map_y(b.whisker_hi, range))
        << "\" stroke=\"#666\"/>\n";
    for (double w : {b.whisker_lo, b.whisker_hi}) {
      out << "<line x1=\"" << num(cx - half / 2) << "\" y1=\"" << num(map_y(w, range))
          << "\" x2=\"" << num(cx + half / 2) << "\" y2=\"" << num(map_y(w, range))
          << "\" stroke=\"#666\"/>\n";
    }
    out << "<rect x=\"" << num(cx - half) << "\" y=\"" << num(map_y(b.q3, range))
        << "\" width=\"" << num(2 * half) << "\" height=\""
        << num(map_y(b.q1, range) - map_y(b.q3, range)) << "\" fill=\"" << color
        << "\" fill-opacity=\"0.25\" stroke=\"" << color << "\"/>\n";
    out << "<line x1=\"" << num(cx - half) << "\" y1=\"" << num(map_y(b.median, range))
        << "\" x2=\"" << num(cx + half) << "\" y2=\"" << num(map_y(b.median, range))
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << num(cx) << "\" y=\"" << kHeight - kMarginBottom + 16
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" "
           "fill=\"#333\">"
        << b.label << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw IOError("cannot open " + path + " for writing");
  out << content;
  if (!out) throw IOError("failed writing " + path);
}

}  // namespace bme::svg
