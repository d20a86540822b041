#include "binn/export.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace binn::plot {

namespace {

constexpr double kWidth = 800, kHeight = 500;
constexpr double kLeft = 60, kRight = 20, kTop = 40, kBottom = 40;

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void include(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finalize() {
    if (lo > hi) {
      lo = 0.0;
      hi = 1.0;
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
};

struct Mapper {
  Range xr, yr;
  double px(double x) const { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * (kWidth - kLeft - kRight); }
  double py(double y) const {
    return kHeight - kBottom - (y - yr.lo) / (yr.hi - yr.lo) * (kHeight - kTop - kBottom);
  }
};

void open_svg(std::ofstream& out, const std::string& path, const std::string& title,
              const Mapper& map) {
  out.open(path);
  if (!out) throw std::runtime_error("write_svg: cannot open " + path);
  out.precision(6);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << title << "</text>\n";
  out << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kWidth - kLeft - kRight
      << "\" height=\"" << kHeight - kTop - kBottom
      << "\" fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>\n";
  auto label = [&](double x, double y, const std::string& anchor, double v) {
    out << "<text x=\"" << x << "\" y=\"" << y << "\" text-anchor=\"" << anchor
        << "\" font-size=\"11\">" << v << "</text>\n";
  };
  label(kLeft, kHeight - kBottom + 16, "middle", map.xr.lo);
  label(kWidth - kRight, kHeight - kBottom + 16, "middle", map.xr.hi);
  label(kLeft - 6, kHeight - kBottom, "end", map.yr.lo);
  label(kLeft - 6, kTop + 10, "end", map.yr.hi);
}

void legend(std::ofstream& out, const std::vector<std::string>& names) {
  for (std::size_t s = 0; s < names.size(); ++s) {
    const double y = kTop + 14 + 14 * static_cast<double>(s);
    out << "<rect x=\"" << kWidth - kRight - 110 << "\" y=\"" << y - 8
        << "\" width=\"10\" height=\"3\" fill=\"" << kPalette[s % 8] << "\"/>\n";
    out << "<text x=\"" << kWidth - kRight - 95 << "\" y=\"" << y
        << "\" font-size=\"11\">" << names[s] << "</text>\n";
  }
}

}  // namespace

void write_svg_lineplot(const std::string& path, const std::string& title,
                        const std::vector<double>& x, const std::vector<Series>& series) {
  Mapper map;
  for (double v : x) map.xr.include(v);
  for (const Series& s : series)
    for (double v : s.y) map.yr.include(v);
  map.xr.finalize();
  map.yr.finalize();

  std::ofstream out;
  open_svg(out, path, title, map);
  std::vector<std::string> names;
  for (std::size_t s = 0; s < series.size(); ++s) {
    names.push_back(series[s].name);
    out << "<polyline fill=\"none\" stroke=\"" << kPalette[s % 8]
        << "\" stroke-width=\"1.5\" points=\"";
    const std::size_t n = std::min(x.size(), series[s].y.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(series[s].y[i])) continue;
      out << map.px(x[i]) << "," << map.py(series[s].y[i]) << " ";
    }
    out << "\"/>\n";
  }
  legend(out, names);
  out << "</svg>\n";
}

void write_svg_scatter(const std::string& path, const std::string& title,
                       const std::vector<PointSeries>& series) {
  Mapper map;
  for (const PointSeries& s : series) {
    for (double v : s.x) map.xr.include(v);
    for (double v : s.y) map.yr.include(v);
  }
  map.xr.finalize();
  map.yr.finalize();

  std::ofstream out;
  open_svg(out, path, title, map);
  std::vector<std::string> names;
  for (std::size_t s = 0; s < series.size(); ++s) {
    names.push_back(series[s].name);
    const std::size_t n = std::min(series[s].x.size(), series[s].y.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(series[s].y[i]) || !std::isfinite(series[s].x[i])) continue;
      out << "<circle cx=\"" << map.px(series[s].x[i]) << "\" cy=\"" << map.py(series[s].y[i])
          << "\" r=\"2\" fill=\"" << (s % 2 == 0 ? kPalette[s % 8] : "none") << "\" stroke=\""
          << kPalette[s % 8] << "\"/>\n";
    }
  }
  legend(out, names);
  out << "</svg>\n";
}

}  // namespace binn::plot
