#include "ld3dhs/metrics.hpp"

#include "ld3dhs/errors.hpp"
#include "ld3dhs/file_util.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace ld3dhs {

ConfusionMatrix confusion_matrix(std::span<const int> pred, std::span<const int> truth, int num_classes) {
  if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
  if (pred.size() != truth.size()) throw std::invalid_argument("prediction and truth lengths differ");
  ConfusionMatrix m = ConfusionMatrix::Zero(num_classes, num_classes);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i];
    const int t = truth[i];
    if (p < 0 || p >= num_classes || t < 0 || t >= num_classes) {
      throw std::out_of_range("label out of range at index " + std::to_string(i));
    }
    ++m(t, p);
  }
  return m;
}

IouResult miou(const ConfusionMatrix& confusion) {
  if (confusion.rows() != confusion.cols()) throw std::invalid_argument("confusion matrix must be square");
  IouResult r;
  const Eigen::Index k = confusion.rows();
  double sum = 0.0;
  for (Eigen::Index c = 0; c < k; ++c) {
    const std::int64_t tp = confusion(c, c);
    const std::int64_t fn = confusion.row(c).sum() - tp;
    const std::int64_t fp = confusion.col(c).sum() - tp;
    const std::int64_t denom = tp + fp + fn;
    if (denom == 0) {
      r.per_class.emplace_back(std::nullopt);
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    r.per_class.emplace_back(iou);
    sum += iou;
    ++r.defined;
  }
  r.mean = r.defined > 0 ? sum / r.defined : 0.0;
  return r;
}

std::int64_t MetricsReport::num_points() const { return confusion.empty() ? 0 : confusion.front().sum(); }

MetricsReport make_report(const HierarchySpec& taxonomy, std::vector<ConfusionMatrix> confusion,
                          std::vector<double> consistency_rate_per_h) {
  const int levels = taxonomy.num_levels();
  if (static_cast<int>(confusion.size()) != levels || static_cast<int>(consistency_rate_per_h.size()) != levels) {
    throw std::invalid_argument("one confusion matrix and consistency rate per level required");
  }
  MetricsReport r;
  r.taxonomy = taxonomy.name();
  double avg = 0.0;
  for (int h = 0; h < levels; ++h) {
    if (confusion[static_cast<std::size_t>(h)].rows() != taxonomy.num_classes(h)) {
      throw std::invalid_argument("confusion matrix size differs from class count at level " + std::to_string(h));
    }
    r.level_names.push_back(taxonomy.level_name(h));
    r.class_names.push_back(taxonomy.class_names(h));
    IouResult iou = miou(confusion[static_cast<std::size_t>(h)]);
    r.iou_per_class.push_back(iou.per_class);
    r.miou_per_h.push_back(iou.mean);
    avg += iou.mean;
    std::vector<std::int64_t> counts;
    for (Eigen::Index c = 0; c < confusion[static_cast<std::size_t>(h)].rows(); ++c) {
      counts.push_back(confusion[static_cast<std::size_t>(h)].row(c).sum());
    }
    r.class_points.push_back(std::move(counts));
  }
  r.avg_miou = avg / levels;
  r.consistency_rate_per_h = std::move(consistency_rate_per_h);
  r.confusion = std::move(confusion);
  return r;
}

MetricsReport evaluate(const Predictor& predictor, std::span<const Scene> scenes, const HierarchySpec& taxonomy) {
  if (!(predictor.taxonomy() == taxonomy)) {
    throw std::invalid_argument("taxonomy mismatch: model uses '" + predictor.taxonomy().name() + "', dataset uses '" +
                                taxonomy.name() + "'");
  }
  const int levels = taxonomy.num_levels();
  const auto mappings = build_all_mappings(taxonomy);
  std::vector<ConfusionMatrix> conf;
  for (int h = 0; h < levels; ++h) conf.push_back(ConfusionMatrix::Zero(taxonomy.num_classes(h), taxonomy.num_classes(h)));
  std::vector<std::int64_t> consistent(static_cast<std::size_t>(levels), 0);
  std::int64_t total = 0;
  for (const Scene& s : scenes) {
    const auto pred = predictor.predict(s);
    if (static_cast<int>(pred.size()) != levels) throw std::runtime_error("predictor returned wrong level count");
    for (int h = 0; h < levels; ++h) {
      conf[static_cast<std::size_t>(h)] +=
          confusion_matrix(pred[static_cast<std::size_t>(h)], s.labels[static_cast<std::size_t>(h)], taxonomy.num_classes(h));
    }
    const std::size_t n = static_cast<std::size_t>(s.num_points());
    total += static_cast<std::int64_t>(n);
    for (int h = 1; h < levels; ++h) {
      const auto& m = mappings[static_cast<std::size_t>(h - 1)];
      const auto& fine = pred[static_cast<std::size_t>(h)];
      const auto& coarse = pred[static_cast<std::size_t>(h - 1)];
      for (std::size_t i = 0; i < n; ++i) consistent[static_cast<std::size_t>(h)] += m.is_child(fine[i], coarse[i]) ? 1 : 0;
    }
  }
  std::vector<double> rates(static_cast<std::size_t>(levels), 1.0);
  if (total > 0) {
    for (int h = 1; h < levels; ++h) {
      rates[static_cast<std::size_t>(h)] = static_cast<double>(consistent[static_cast<std::size_t>(h)]) / static_cast<double>(total);
    }
  }
  return make_report(taxonomy, std::move(conf), std::move(rates));
}

double mean_iou_over(const MetricsReport& report, int level, std::span<const int> classes) {
  const auto& ious = report.iou_per_class.at(static_cast<std::size_t>(level));
  double sum = 0.0;
  int n = 0;
  for (int c : classes) {
    const auto& v = ious.at(static_cast<std::size_t>(c));
    if (v) {
      sum += *v;
      ++n;
    }
  }
  return n > 0 ? sum / n : 0.0;
}

nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["format"] = "ld3dhs-metrics";
  j["version"] = 1;
  j["taxonomy"] = r.taxonomy;
  j["avg_miou"] = r.avg_miou;
  j["levels"] = nlohmann::ordered_json::array();
  for (std::size_t h = 0; h < r.miou_per_h.size(); ++h) {
    nlohmann::ordered_json lv;
    lv["name"] = r.level_names[h];
    lv["miou"] = r.miou_per_h[h];
    if (h > 0) lv["consistency_rate"] = r.consistency_rate_per_h[h];
    nlohmann::ordered_json classes = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < r.class_names[h].size(); ++c) {
      nlohmann::ordered_json cj;
      cj["name"] = r.class_names[h][c];
      if (r.iou_per_class[h][c]) {
        cj["iou"] = *r.iou_per_class[h][c];
      } else {
        cj["iou"] = nullptr;
      }
      cj["points"] = r.class_points[h][c];
      classes.push_back(std::move(cj));
    }
    lv["classes"] = std::move(classes);
    nlohmann::ordered_json conf = nlohmann::ordered_json::array();
    const auto& m = r.confusion[h];
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
      std::vector<std::int64_t> row(static_cast<std::size_t>(m.cols()));
      for (Eigen::Index p = 0; p < m.cols(); ++p) row[static_cast<std::size_t>(p)] = m(t, p);
      conf.push_back(row);
    }
    lv["confusion"] = std::move(conf);
    j["levels"].push_back(std::move(lv));
  }
  return j;
}

MetricsReport metrics_report_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "ld3dhs-metrics") throw ConfigError("format", "not a metrics report");
  MetricsReport r;
  r.taxonomy = j.at("taxonomy").get<std::string>();
  r.avg_miou = j.at("avg_miou").get<double>();
  for (const auto& lv : j.at("levels")) {
    r.level_names.push_back(lv.at("name").get<std::string>());
    r.miou_per_h.push_back(lv.at("miou").get<double>());
    r.consistency_rate_per_h.push_back(lv.contains("consistency_rate") ? lv.at("consistency_rate").get<double>() : 1.0);
    std::vector<std::string> names;
    std::vector<std::optional<double>> ious;
    std::vector<std::int64_t> points;
    for (const auto& c : lv.at("classes")) {
      names.push_back(c.at("name").get<std::string>());
      ious.push_back(c.at("iou").is_null() ? std::nullopt : std::optional<double>(c.at("iou").get<double>()));
      points.push_back(c.at("points").get<std::int64_t>());
    }
    const auto& conf = lv.at("confusion");
    const auto k = static_cast<Eigen::Index>(names.size());
    ConfusionMatrix m = ConfusionMatrix::Zero(k, k);
    if (static_cast<Eigen::Index>(conf.size()) != k) throw ConfigError("levels.confusion", "size differs from class count");
    for (Eigen::Index t = 0; t < k; ++t) {
      const auto& row = conf.at(static_cast<std::size_t>(t));
      if (static_cast<Eigen::Index>(row.size()) != k) throw ConfigError("levels.confusion", "row size differs from class count");
      for (Eigen::Index p = 0; p < k; ++p) m(t, p) = row.at(static_cast<std::size_t>(p)).get<std::int64_t>();
    }
    r.class_names.push_back(std::move(names));
    r.iou_per_class.push_back(std::move(ious));
    r.class_points.push_back(std::move(points));
    r.confusion.push_back(std::move(m));
  }
  return r;
}

void save_report(const MetricsReport& report, const std::filesystem::path& path) {
  write_text_file(path, to_json(report).dump(2) + "\n");
}

MetricsReport load_report(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
  }
  return metrics_report_from_json(j);
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
  return buf;
}

std::string format_report_table(const MetricsReport& r) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  for (const auto& n : r.level_names) os << n << '\t';
  os << "Avg\n";
  for (double m : r.miou_per_h) os << format_percent(m) << '\t';
  os << format_percent(r.avg_miou) << '\n';
  for (std::size_t h = 1; h < r.consistency_rate_per_h.size(); ++h) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", r.consistency_rate_per_h[h]);
    os << "consistency " << r.level_names[h] << "->" << r.level_names[h - 1] << ": " << buf << '\n';
  }
  return os.str();
}

}  // namespace ld3dhs
