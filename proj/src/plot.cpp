#include "trot/plot.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace trot {

namespace {

constexpr int kWidth = 720, kHeight = 480;
constexpr int kMarginL = 70, kMarginR = 20, kMarginT = 40, kMarginB = 50;

const char* palette(int i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

std::string hsv_color(int index, int count) {
  double h = count > 0 ? 360.0 * index / count : 0.0;
  double s = 0.75, v = 0.9;
  double c = v * s;
  double x = c * (1 - std::abs(std::fmod(h / 60.0, 2.0) - 1));
  double m = v - c;
  double r = 0, g = 0, b = 0;
  if (h < 60) { r = c; g = x; }
  else if (h < 120) { r = x; g = c; }
  else if (h < 180) { g = c; b = x; }
  else if (h < 240) { g = x; b = c; }
  else if (h < 300) { r = x; b = c; }
  else { r = c; b = x; }
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", static_cast<int>((r + m) * 255),
                static_cast<int>((g + m) * 255), static_cast<int>((b + m) * 255));
  return buf;
}

struct Extent {
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  void expand(double x, double y) {
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  void pad() {
    if (xmax - xmin < 1e-12) { xmin -= 0.5; xmax += 0.5; }
    if (ymax - ymin < 1e-12) { ymin -= 0.5; ymax += 0.5; }
    double dy = 0.05 * (ymax - ymin);
    ymin -= dy;
    ymax += dy;
  }
  double px(double x) const {
    return kMarginL + (x - xmin) / (xmax - xmin) * (kWidth - kMarginL - kMarginR);
  }
  double py(double y) const {
    return kHeight - kMarginB - (y - ymin) / (ymax - ymin) * (kHeight - kMarginT - kMarginB);
  }
};

void svg_header(std::ostream& os, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\" "
        "font-family=\"sans-serif\">" << title << "</text>\n";
}

void svg_axes(std::ostream& os, const Extent& e, const std::string& xl, const std::string& yl) {
  os << "<rect x=\"" << kMarginL << "\" y=\"" << kMarginT << "\" width=\""
     << kWidth - kMarginL - kMarginR << "\" height=\"" << kHeight - kMarginT - kMarginB
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double fx = e.xmin + (e.xmax - e.xmin) * i / 4.0;
    double fy = e.ymin + (e.ymax - e.ymin) * i / 4.0;
    std::ostringstream vx, vy;
    vx.precision(4);
    vy.precision(4);
    vx << fx;
    vy << fy;
    os << "<text x=\"" << e.px(fx) << "\" y=\"" << kHeight - kMarginB + 18
       << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << vx.str()
       << "</text>\n";
    os << "<text x=\"" << kMarginL - 8 << "\" y=\"" << e.py(fy) + 4
       << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << vy.str()
       << "</text>\n";
  }
  os << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 12
     << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" << xl
     << "</text>\n";
  os << "<text x=\"16\" y=\"" << kHeight / 2
     << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\" transform=\"rotate(-90 16 "
     << kHeight / 2 << ")\">" << yl << "</text>\n";
}

}  // namespace

void write_line_plot(const std::string& path, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<Series>& series) {
  std::ofstream os(path);
  require(os.good(), "IoError", "cannot write plot " + path);
  Extent e;
  bool first = true;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(y)) continue;
      if (first) {
        e.xmin = e.xmax = x;
        e.ymin = e.ymax = y;
        first = false;
      } else {
        e.expand(x, y);
      }
    }
  e.pad();
  svg_header(os, title);
  svg_axes(os, e, x_label, y_label);
  int ci = 0;
  for (const auto& s : series) {
    os << "<polyline fill=\"none\" stroke=\"" << palette(ci) << "\" stroke-width=\"1.6\" points=\"";
    for (const auto& [x, y] : s.points)
      if (std::isfinite(y)) os << e.px(x) << "," << e.py(y) << " ";
    os << "\"/>\n";
    for (const auto& [x, y] : s.points)
      if (std::isfinite(y))
        os << "<circle cx=\"" << e.px(x) << "\" cy=\"" << e.py(y) << "\" r=\"2.4\" fill=\""
           << palette(ci) << "\"/>\n";
    os << "<text x=\"" << kWidth - kMarginR - 6 << "\" y=\"" << kMarginT + 16 + 16 * ci
       << "\" text-anchor=\"end\" font-size=\"12\" font-family=\"sans-serif\" fill=\"" << palette(ci)
       << "\">" << s.label << "</text>\n";
    ++ci;
  }
  os << "</svg>\n";
}

void write_scatter_plot(const std::string& path, const std::string& title,
                        const std::vector<ScatterGroup>& groups) {
  std::ofstream os(path);
  require(os.good(), "IoError", "cannot write plot " + path);
  Extent e;
  bool first = true;
  for (const auto& g : groups)
    for (const auto& [x, y] : g.points) {
      if (first) {
        e.xmin = e.xmax = x;
        e.ymin = e.ymax = y;
        first = false;
      } else {
        e.expand(x, y);
      }
    }
  e.pad();
  int n_colors = 1;
  for (const auto& g : groups) n_colors = std::max(n_colors, g.color_index + 1);
  svg_header(os, title);
  svg_axes(os, e, "component 1", "component 2");
  for (const auto& g : groups) {
    std::string color = hsv_color(g.color_index, n_colors);
    for (const auto& [x, y] : g.points)
      os << "<circle cx=\"" << e.px(x) << "\" cy=\"" << e.py(y) << "\" r=\"3\" fill=\"" << color
         << "\" fill-opacity=\"0.75\"/>\n";
  }
  os << "</svg>\n";
}

TensorD pca_2d(const TensorD& rows) {
  require(rows.rank() == 2 && rows.dim(0) >= 2, "ShapeMismatch", "pca_2d expects (N>=2, P)");
  const int64_t n = rows.dim(0), p = rows.dim(1);
  Eigen::MatrixXd x(n, p);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < p; ++j) x(i, j) = rows.at2(i, j);
  Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  Eigen::MatrixXd basis = es.eigenvectors().rightCols(std::min<int64_t>(2, p));
  Eigen::MatrixXd proj = x * basis;
  TensorD out({n, 2});
  for (int64_t i = 0; i < n; ++i) {
    out.at2(i, 0) = proj(i, proj.cols() - 1);  // leading component first
    out.at2(i, 1) = proj.cols() > 1 ? proj(i, 0) : 0.0;
  }
  return out;
}

}  // namespace trot
