#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>

#include "dfm/cli.hpp"

namespace dfm {

namespace {

constexpr double kPanelW = 380.0;
constexpr double kPanelH = 280.0;
constexpr double kMarginL = 55.0;
constexpr double kMarginR = 15.0;
constexpr double kMarginT = 30.0;
constexpr double kMarginB = 45.0;

const char* color_of(Method m) {
  switch (m) {
    case Method::RffHard:
      return "#1f77b4";
    case Method::RffSoft:
      return "#d62728";
    case Method::EnergySoft:
      return "#2ca02c";
    case Method::BbseSoft:
      return "#9467bd";
  }
  return "#000000";
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", std::round(v * 1000.0) / 1000.0);
  return buf;
}

}  // namespace

void write_error_chart(const ExperimentResult& result, std::ostream& out) {
  // kind -> method -> eps -> (sum, count)
  std::vector<std::string> kinds;
  std::map<std::string, std::map<Method, std::map<double, std::pair<double, int>>>> acc;
  for (const auto& r : result.rows) {
    if (r.status != "ok" || !std::isfinite(r.error_l2)) continue;
    if (std::find(kinds.begin(), kinds.end(), r.noise_kind) == kinds.end()) kinds.push_back(r.noise_kind);
    auto& cell = acc[r.noise_kind][r.method][r.eps];
    cell.first += r.error_l2;
    cell.second += 1;
  }
  const std::size_t panels = std::max<std::size_t>(kinds.size(), 1);
  const double width = kPanelW * static_cast<double>(panels);
  const double height = kPanelH + 30.0;

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
      << "\" viewBox=\"0 0 " << num(width) << ' ' << num(height) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (std::size_t p = 0; p < kinds.size(); ++p) {
    const auto& by_method = acc[kinds[p]];
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymax = 0.0;
    for (const auto& [method, series] : by_method)
      for (const auto& [eps, cell] : series) {
        xmin = std::min(xmin, eps);
        xmax = std::max(xmax, eps);
        ymax = std::max(ymax, cell.first / cell.second);
      }
    if (!(xmax > xmin)) {
      xmin -= 0.05;
      xmax += 0.05;
    }
    ymax = ymax > 0.0 ? ymax * 1.1 : 1.0;

    const double ox = kPanelW * static_cast<double>(p);
    const double plot_w = kPanelW - kMarginL - kMarginR;
    const double plot_h = kPanelH - kMarginT - kMarginB;
    auto sx = [&](double x) { return ox + kMarginL + (x - xmin) / (xmax - xmin) * plot_w; };
    auto sy = [&](double y) { return kMarginT + plot_h - y / ymax * plot_h; };

    out << "<g>\n<text x=\"" << num(ox + kPanelW / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
        << kinds[p] << " noise</text>\n";
    out << "<rect x=\"" << num(ox + kMarginL) << "\" y=\"" << num(kMarginT) << "\" width=\"" << num(plot_w)
        << "\" height=\"" << num(plot_h) << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int k = 0; k <= 4; ++k) {
      const double yv = ymax * k / 4.0, xv = xmin + (xmax - xmin) * k / 4.0;
      out << "<text x=\"" << num(ox + kMarginL - 5) << "\" y=\"" << num(sy(yv) + 4)
          << "\" text-anchor=\"end\">" << tick(yv) << "</text>\n";
      out << "<text x=\"" << num(sx(xv)) << "\" y=\"" << num(kMarginT + plot_h + 15)
          << "\" text-anchor=\"middle\">" << tick(xv) << "</text>\n";
    }
    out << "<text x=\"" << num(ox + kMarginL + plot_w / 2) << "\" y=\"" << num(kPanelH - 8)
        << "\" text-anchor=\"middle\">eps</text>\n";
    out << "<text transform=\"translate(" << num(ox + 14) << ',' << num(kMarginT + plot_h / 2)
        << ") rotate(-90)\" text-anchor=\"middle\">mean l2 error</text>\n";

    for (const auto& [method, series] : by_method) {
      out << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << color_of(method) << "\" points=\"";
      bool first = true;
      for (const auto& [eps, cell] : series) {
        out << (first ? "" : " ") << num(sx(eps)) << ',' << num(sy(cell.first / cell.second));
        first = false;
      }
      out << "\"/>\n";
      for (const auto& [eps, cell] : series)
        out << "<circle cx=\"" << num(sx(eps)) << "\" cy=\"" << num(sy(cell.first / cell.second))
            << "\" r=\"2.5\" fill=\"" << color_of(method) << "\"/>\n";
    }
    out << "</g>\n";
  }

  double lx = 10.0;
  for (Method m : {Method::RffHard, Method::RffSoft, Method::EnergySoft, Method::BbseSoft}) {
    out << "<rect x=\"" << num(lx) << "\" y=\"" << num(height - 20) << "\" width=\"12\" height=\"4\" fill=\""
        << color_of(m) << "\"/><text x=\"" << num(lx + 16) << "\" y=\"" << num(height - 14) << "\">"
        << to_string(m) << "</text>\n";
    lx += 110.0;
  }
  out << "</svg>\n";
}

}  // namespace dfm
