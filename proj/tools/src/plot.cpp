#include "urdg_cli/cli.hpp"

#include "urdg/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace urdg::cli {

namespace {

constexpr double kWidth = 720;
constexpr double kHeight = 480;
constexpr double kLeft = 70;
constexpr double kRight = 150;
constexpr double kTop = 30;
constexpr double kBottom = 50;

constexpr std::array<const char*, 10> kPalette{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                               "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text, std::size_t columns) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns) throw FormatError(lineno, "expected " + std::to_string(columns) + " columns");
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw FormatError(0, "empty CSV");
  rows.erase(rows.begin());  // header
  return rows;
}

double to_double(const std::string& s, std::size_t row) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(row + 2, "not a number: '" + s + "'");
  }
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (!(hi > lo)) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double m = 0.05 * (hi - lo);
    lo -= m;
    hi += m;
  }
};

struct Frame {
  Range x, y;

  double px(double v) const { return kLeft + (v - x.lo) / (x.hi - x.lo) * (kWidth - kLeft - kRight); }
  double py(double v) const { return kHeight - kBottom - (v - y.lo) / (y.hi - y.lo) * (kHeight - kTop - kBottom); }
};

void open_svg(std::ostringstream& o, const std::string& title) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << fmt(kLeft) << "\" y=\"18\" font-size=\"13\">" << title << "</text>\n";
}

void axes(std::ostringstream& o, const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  o << "<g stroke=\"#333\" fill=\"none\"><rect x=\"" << fmt(x0) << "\" y=\"" << fmt(y1) << "\" width=\""
    << fmt(x1 - x0) << "\" height=\"" << fmt(y0 - y1) << "\"/></g>\n";
  o << "<g fill=\"#333\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x.lo + (f.x.hi - f.x.lo) * i / 4.0;
    const double yv = f.y.lo + (f.y.hi - f.y.lo) * i / 4.0;
    o << "<text x=\"" << fmt(f.px(xv)) << "\" y=\"" << fmt(y0 + 16) << "\" text-anchor=\"middle\">" << fmt_tick(xv)
      << "</text>\n";
    o << "<text x=\"" << fmt(x0 - 6) << "\" y=\"" << fmt(f.py(yv) + 4) << "\" text-anchor=\"end\">" << fmt_tick(yv)
      << "</text>\n";
  }
  o << "<text x=\"" << fmt((x0 + x1) / 2) << "\" y=\"" << fmt(kHeight - 12) << "\" text-anchor=\"middle\">" << xlabel
    << "</text>\n";
  o << "<text x=\"16\" y=\"" << fmt((y0 + y1) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << fmt((y0 + y1) / 2) << ")\">" << ylabel << "</text>\n";
  o << "</g>\n";
}

/// Lighter shades for later domains.
std::string shade(const char* hex, int level, int levels) {
  unsigned r = 0, g = 0, b = 0;
  std::sscanf(hex + 1, "%02x%02x%02x", &r, &g, &b);
  const double t = levels > 1 ? 0.6 * level / (levels - 1) : 0.0;
  auto mix = [t](unsigned c) { return static_cast<unsigned>(std::lround(c + (255.0 - c) * t)); };
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", mix(r), mix(g), mix(b));
  return buf;
}

void marker(std::ostringstream& o, int shape, double x, double y, const std::string& color) {
  constexpr double r = 3.5;
  const std::string fill = "fill=\"" + color + "\"";
  switch (shape % 4) {
    case 0:
      o << "<circle class=\"pt\" cx=\"" << fmt(x) << "\" cy=\"" << fmt(y) << "\" r=\"" << r << "\" " << fill << "/>\n";
      break;
    case 1:
      o << "<rect class=\"pt\" x=\"" << fmt(x - r) << "\" y=\"" << fmt(y - r) << "\" width=\"" << 2 * r
        << "\" height=\"" << 2 * r << "\" " << fill << "/>\n";
      break;
    case 2:
      o << "<path class=\"pt\" d=\"M" << fmt(x) << ' ' << fmt(y - r) << "L" << fmt(x + r) << ' ' << fmt(y + r) << "L"
        << fmt(x - r) << ' ' << fmt(y + r) << "Z\" " << fill << "/>\n";
      break;
    default:
      o << "<path class=\"pt\" d=\"M" << fmt(x) << ' ' << fmt(y - r) << "L" << fmt(x + r) << ' ' << fmt(y) << "L"
        << fmt(x) << ' ' << fmt(y + r) << "L" << fmt(x - r) << ' ' << fmt(y) << "Z\" " << fill << "/>\n";
      break;
  }
}

}  // namespace

std::string render_loss_svg(const std::string& history_csv) {
  const auto rows = parse_csv(history_csv, 3);
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  Frame f;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double epoch = to_double(rows[i][0], i);
    const double value = to_double(rows[i][2], i);
    series[rows[i][1]].emplace_back(epoch, value);
    f.x.add(epoch);
    if (std::isfinite(value)) f.y.add(value);
  }
  if (series.empty()) throw FormatError(0, "history has no rows");
  f.x.pad();
  f.y.pad();

  std::ostringstream o;
  open_svg(o, "loss components");
  axes(o, f, "epoch", "loss");
  std::size_t k = 0;
  for (auto& [name, pts] : series) {
    std::sort(pts.begin(), pts.end());
    const char* color = kPalette[k % kPalette.size()];
    o << "<polyline class=\"series\" fill=\"none\" stroke-width=\"1.5\" stroke=\"" << color << "\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i) o << ' ';
      o << fmt(f.px(pts[i].first)) << ',' << fmt(f.py(pts[i].second));
    }
    o << "\"/>\n";
    const double ly = kTop + 14.0 * static_cast<double>(k) + 6;
    o << "<line x1=\"" << fmt(kWidth - kRight + 12) << "\" y1=\"" << fmt(ly) << "\" x2=\"" << fmt(kWidth - kRight + 30)
      << "\" y2=\"" << fmt(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << fmt(kWidth - kRight + 36) << "\" y=\"" << fmt(ly + 4) << "\">" << name << "</text>\n";
    ++k;
  }
  o << "</svg>\n";
  return o.str();
}

std::string render_embedding_svg(const std::string& embedding_csv) {
  const auto rows = parse_csv(embedding_csv, 7);
  struct Point {
    double x, y;
    int cls, domain;
    std::string kind;
  };
  std::vector<Point> pts;
  std::set<std::string> kinds;
  std::set<int> domains;
  Frame f;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    Point p{to_double(r[5], i), to_double(r[6], i), static_cast<int>(to_double(r[4], i)),
            static_cast<int>(to_double(r[3], i)), r[1] + "/" + r[2]};
    f.x.add(p.x);
    f.y.add(p.y);
    kinds.insert(p.kind);
    domains.insert(p.domain);
    pts.push_back(std::move(p));
  }
  if (pts.empty()) throw FormatError(0, "embedding file has no rows");
  f.x.pad();
  f.y.pad();
  const std::vector<std::string> kind_list(kinds.begin(), kinds.end());
  const std::vector<int> domain_list(domains.begin(), domains.end());
  auto index_of = [](const auto& v, const auto& key) {
    return static_cast<int>(std::find(v.begin(), v.end(), key) - v.begin());
  };

  std::ostringstream o;
  open_svg(o, "embedding (PCA)");
  axes(o, f, "pc1", "pc2");
  for (const auto& p : pts) {
    const char* base = kPalette[static_cast<std::size_t>(std::abs(p.cls)) % kPalette.size()];
    marker(o, index_of(kind_list, p.kind), f.px(p.x), f.py(p.y),
           shade(base, index_of(domain_list, p.domain), static_cast<int>(domain_list.size())));
  }
  o << "<g class=\"legend\">\n";
  for (std::size_t k = 0; k < kind_list.size(); ++k) {
    const double ly = kTop + 16.0 * static_cast<double>(k) + 6;
    std::ostringstream dummy;
    marker(dummy, static_cast<int>(k), kWidth - kRight + 20, ly, "#555");
    std::string m = dummy.str();
    m.replace(m.find("class=\"pt\""), 10, "class=\"key\"");
    o << m << "<text x=\"" << fmt(kWidth - kRight + 32) << "\" y=\"" << fmt(ly + 4) << "\">" << kind_list[k]
      << "</text>\n";
  }
  o << "</g>\n</svg>\n";
  return o.str();
}

}  // namespace urdg::cli
