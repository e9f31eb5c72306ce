#pragma once

#include <string>
#include <vector>

#include "trot/tensor.hpp"

namespace trot {

// Minimal static SVG plotting for report/diagnose artifacts.
struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

void write_line_plot(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<Series>& series);

struct ScatterGroup {
  std::string label;
  int color_index = 0;  // palette index (e.g. token position)
  std::vector<std::pair<double, double>> points;
};

void write_scatter_plot(const std::string& path, const std::string& title,
                        const std::vector<ScatterGroup>& groups);

// Top-2 principal components of (N, P) rows; returns (N, 2).
TensorD pca_2d(const TensorD& rows);

}  // namespace trot
