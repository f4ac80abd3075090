#include "plot.h"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "gf3d/errors.h"

namespace gf3d {

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool to_number(const std::string& s, double& v) {
  if (s.empty()) return false;
  char* end = nullptr;
  v = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

}  // namespace

std::string plot_svg(const std::string& csv, const std::string& x, const std::vector<std::string>& ys,
                     const std::string& filter) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw DataError("plot: empty CSV");
  const auto header = split_row(line);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("plot: no column named " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t xi = column(x);
  std::vector<std::size_t> yi;
  for (const auto& y : ys) yi.push_back(column(y));
  std::size_t fi = header.size();
  std::string fv;
  if (!filter.empty()) {
    const auto eq = filter.find('=');
    if (eq == std::string::npos) throw ArgumentError("plot: filter must be column=value");
    fi = column(filter.substr(0, eq));
    fv = filter.substr(eq + 1);
  }

  std::vector<std::vector<std::pair<double, double>>> series(ys.size());
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  while (std::getline(in, line)) {
    const auto row = split_row(line);
    if (fi < header.size() && (fi >= row.size() || row[fi] != fv)) continue;
    double xv;
    if (xi >= row.size() || !to_number(row[xi], xv)) continue;
    for (std::size_t s = 0; s < yi.size(); ++s) {
      double yv;
      if (yi[s] < row.size() && to_number(row[yi[s]], yv)) {
        series[s].emplace_back(xv, yv);
        x0 = std::min(x0, xv), x1 = std::max(x1, xv), y0 = std::min(y0, yv), y1 = std::max(y1, yv);
      }
    }
  }
  if (!(x1 >= x0)) throw DataError("plot: no numeric rows");
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;

  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  const double w = 560, h = 320, m = 50;
  std::ostringstream os;
  char buf[128];
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w + 2 * m << "\" height=\"" << h + 2 * m << "\">\n";
  os << "<rect x=\"" << m << "\" y=\"" << m << "\" width=\"" << w << "\" height=\"" << h
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  std::snprintf(buf, sizeof buf, "%.4g", x0);
  os << "<text x=\"" << m << "\" y=\"" << h + m + 16 << "\">" << buf << "</text>\n";
  std::snprintf(buf, sizeof buf, "%.4g", x1);
  os << "<text x=\"" << w + m << "\" y=\"" << h + m + 16 << "\" text-anchor=\"end\">" << buf << "</text>\n";
  std::snprintf(buf, sizeof buf, "%.4g", y1);
  os << "<text x=\"" << m - 4 << "\" y=\"" << m + 4 << "\" text-anchor=\"end\">" << buf << "</text>\n";
  std::snprintf(buf, sizeof buf, "%.4g", y0);
  os << "<text x=\"" << m - 4 << "\" y=\"" << h + m << "\" text-anchor=\"end\">" << buf << "</text>\n";
  os << "<text x=\"" << m + w / 2 << "\" y=\"" << h + 2 * m - 8 << "\" text-anchor=\"middle\">" << x << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    os << "<polyline fill=\"none\" stroke=\"" << kColors[s % 6] << "\" points=\"";
    for (auto [xv, yv] : series[s]) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", m + (xv - x0) / (x1 - x0) * w, m + (1 - (yv - y0) / (y1 - y0)) * h);
      os << buf;
    }
    os << "\"/>\n";
    os << "<text x=\"" << m + w - 8 << "\" y=\"" << m + 16 + 16 * static_cast<double>(s) << "\" fill=\""
       << kColors[s % 6] << "\" text-anchor=\"end\">" << ys[s] << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace gf3d
