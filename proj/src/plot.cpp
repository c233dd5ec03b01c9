#include "ld3dhs/plot.hpp"

#include "ld3dhs/errors.hpp"
#include "ld3dhs/file_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace ld3dhs {

namespace {

constexpr const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void require_same_taxonomy(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw std::invalid_argument("no reports to plot");
  const MetricsReport& a = reports.front();
  for (const auto& b : reports.subspan(1)) {
    if (a.taxonomy != b.taxonomy || a.level_names != b.level_names || a.class_names != b.class_names) {
      throw std::invalid_argument("taxonomy mismatch between reports: '" + a.taxonomy + "' vs '" + b.taxonomy + "'");
    }
  }
}

std::string per_class_svg(std::span<const MetricsReport> reports, std::span<const std::string> labels, int level) {
  require_same_taxonomy(reports);
  if (labels.size() != reports.size()) throw std::invalid_argument("one label per report required");
  const auto& first = reports.front();
  if (level < 0 || level >= static_cast<int>(first.class_names.size())) throw std::out_of_range("level out of range");
  const auto lv = static_cast<std::size_t>(level);
  const auto& names = first.class_names[lv];
  const auto& points = first.class_points[lv];
  const std::size_t k = names.size();
  const std::size_t r = reports.size();

  const double left = 60, right = 70, top = 40, bottom = 110;
  const double group_w = std::max(40.0, 12.0 * static_cast<double>(r) + 16.0);
  const double plot_w = group_w * static_cast<double>(k);
  const double plot_h = 260;
  const double width = left + plot_w + right;
  const double height = top + plot_h + bottom;
  const double bar_w = (group_w - 12.0) / static_cast<double>(r);

  double max_log = 1.0;
  for (auto p : points) max_log = std::max(max_log, std::log10(static_cast<double>(std::max<std::int64_t>(p, 1))));
  max_log = std::ceil(max_log);

  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(left) << "\" y=\"20\" font-size=\"14\">Per-class IoU, " << escape(first.level_names[lv])
     << " (" << escape(first.taxonomy) << ")</text>\n";
  // Axes and gridlines.
  for (int t = 0; t <= 4; ++t) {
    const double y = top + plot_h - plot_h * t / 4.0;
    os << "<line x1=\"" << num(left) << "\" y1=\"" << num(y) << "\" x2=\"" << num(left + plot_w) << "\" y2=\"" << num(y)
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << num(left - 6) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << num(t * 25.0)
       << "</text>\n";
  }
  for (int t = 0; t <= static_cast<int>(max_log); ++t) {
    const double y = top + plot_h - plot_h * t / max_log;
    os << "<text x=\"" << num(left + plot_w + 6) << "\" y=\"" << num(y + 4) << "\" fill=\"#555\">1e" << t << "</text>\n";
  }
  os << "<text transform=\"translate(16," << num(top + plot_h / 2) << ") rotate(-90)\" text-anchor=\"middle\">IoU (%)</text>\n";
  os << "<text transform=\"translate(" << num(width - 12) << "," << num(top + plot_h / 2)
     << ") rotate(90)\" text-anchor=\"middle\" fill=\"#555\">points (log scale)</text>\n";

  for (std::size_t c = 0; c < k; ++c) {
    const double gx = left + group_w * static_cast<double>(c) + 6.0;
    for (std::size_t i = 0; i < r; ++i) {
      const auto& iou = reports[i].iou_per_class[lv][c];
      if (!iou) continue;
      const double h = plot_h * *iou;
      os << "<rect x=\"" << num(gx + bar_w * static_cast<double>(i)) << "\" y=\"" << num(top + plot_h - h)
         << "\" width=\"" << num(bar_w) << "\" height=\"" << num(h) << "\" fill=\"" << kPalette[i % 6] << "\"/>\n";
    }
    const double cx = left + group_w * (static_cast<double>(c) + 0.5);
    os << "<text transform=\"translate(" << num(cx) << "," << num(top + plot_h + 10)
       << ") rotate(45)\" text-anchor=\"start\">" << escape(names[c]) << "</text>\n";
  }
  // Frequency line.
  os << "<polyline fill=\"none\" stroke=\"#222\" stroke-width=\"1.5\" points=\"";
  for (std::size_t c = 0; c < k; ++c) {
    const double lp = std::log10(static_cast<double>(std::max<std::int64_t>(points[c], 1)));
    os << num(left + group_w * (static_cast<double>(c) + 0.5)) << ',' << num(top + plot_h - plot_h * lp / max_log) << ' ';
  }
  os << "\"/>\n";
  for (std::size_t i = 0; i < r; ++i) {
    const double y = top + plot_h + 80;
    const double x = left + 130.0 * static_cast<double>(i);
    os << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"10\" height=\"10\" fill=\"" << kPalette[i % 6]
       << "\"/><text x=\"" << num(x + 14) << "\" y=\"" << num(y + 9) << "\">" << escape(labels[i]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string loss_curve_svg(std::span<const nlohmann::json> records) {
  std::vector<double> total;
  std::vector<double> ces;
  for (const auto& rec : records) {
    if (rec.value("type", "") != "step") continue;
    total.push_back(rec.at("total").get<double>());
    double s = 0.0;
    for (const auto& v : rec.at("ces")) s += v.get<double>();
    ces.push_back(s);
  }
  if (total.empty()) throw std::invalid_argument("training log has no step records");
  const double left = 60, right = 20, top = 40, bottom = 50, plot_w = 560, plot_h = 280;
  double lo = std::min(*std::min_element(total.begin(), total.end()), *std::min_element(ces.begin(), ces.end()));
  double hi = std::max(*std::max_element(total.begin(), total.end()), *std::max_element(ces.begin(), ces.end()));
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const double n = static_cast<double>(std::max<std::size_t>(total.size() - 1, 1));
  auto px = [&](std::size_t i) { return left + plot_w * static_cast<double>(i) / n; };
  auto py = [&](double v) { return top + plot_h - plot_h * (v - lo) / (hi - lo); };

  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(left + plot_w + right) << "\" height=\""
     << num(top + plot_h + bottom) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(left) << "\" y=\"20\" font-size=\"14\">Training loss</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    os << "<line x1=\"" << num(left) << "\" y1=\"" << num(py(v)) << "\" x2=\"" << num(left + plot_w) << "\" y2=\""
       << num(py(v)) << "\" stroke=\"#ddd\"/><text x=\"" << num(left - 6) << "\" y=\"" << num(py(v) + 4)
       << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
  }
  auto line = [&](const std::vector<double>& ys, const char* color) {
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < ys.size(); ++i) os << num(px(i)) << ',' << num(py(ys[i])) << ' ';
    os << "\"/>\n";
  };
  line(total, kPalette[0]);
  line(ces, kPalette[1]);
  const double ly = top + plot_h + 30;
  os << "<text x=\"" << num(left + plot_w / 2) << "\" y=\"" << num(top + plot_h + 16) << "\" text-anchor=\"middle\">step</text>\n";
  os << "<rect x=\"" << num(left) << "\" y=\"" << num(ly) << "\" width=\"10\" height=\"10\" fill=\"" << kPalette[0]
     << "\"/><text x=\"" << num(left + 14) << "\" y=\"" << num(ly + 9) << "\">total</text>\n";
  os << "<rect x=\"" << num(left + 80) << "\" y=\"" << num(ly) << "\" width=\"10\" height=\"10\" fill=\"" << kPalette[1]
     << "\"/><text x=\"" << num(left + 94) << "\" y=\"" << num(ly + 9) << "\">cross-entropy</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::vector<nlohmann::json> read_log(const std::filesystem::path& path) {
  std::istringstream is(read_text_file(path));
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno), std::string("invalid log record: ") + e.what());
    }
  }
  return out;
}

}  // namespace ld3dhs
