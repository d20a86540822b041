#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace binn::plot {

/// One named y-series sharing the x grid of the plot.
struct Series {
  std::string name;
  std::vector<double> y;
};

/// Minimal hand-written SVG line plot: an axes box, min/max labels, and one
/// polyline per series. Points with non-finite y are skipped.
void write_svg_lineplot(const std::string& path, const std::string& title,
                        const std::vector<double>& x, const std::vector<Series>& series);

/// Scatter variant used for bifurcation diagrams: each series contributes
/// points at (x[i], y[i]) pairs of equal length, solid for the first series
/// and hollow for the second.
struct PointSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};
void write_svg_scatter(const std::string& path, const std::string& title,
                       const std::vector<PointSeries>& series);

}  // namespace binn::plot
