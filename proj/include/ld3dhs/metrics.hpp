#pragma once

// Confusion matrices, per-class IoU, and per-hierarchy mIoU.

#include "ld3dhs/predictor.hpp"
#include "ld3dhs/scene.hpp"
#include "ld3dhs/taxonomy.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ld3dhs {

using ConfusionMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

// entry(t, p) = #{i : truth_i = t and pred_i = p}.
ConfusionMatrix confusion_matrix(std::span<const int> pred, std::span<const int> truth, int num_classes);

struct IouResult {
  std::vector<std::optional<double>> per_class;  // nullopt when TP + FP + FN = 0
  double mean = 0.0;                             // over defined classes; 0 if none
  int defined = 0;
};

IouResult miou(const ConfusionMatrix& confusion);

struct MetricsReport {
  std::string taxonomy;
  std::vector<std::string> level_names;
  std::vector<std::vector<std::string>> class_names;
  std::vector<std::vector<std::optional<double>>> iou_per_class;
  std::vector<double> miou_per_h;
  double avg_miou = 0.0;
  // Entry h is the rate between levels h and h-1; entry 0 is always 1.
  std::vector<double> consistency_rate_per_h;
  std::vector<ConfusionMatrix> confusion;
  std::vector<std::vector<std::int64_t>> class_points;  // ground-truth count per class

  std::int64_t num_points() const;
};

// Streams every scene through `predictor`, accumulating one confusion matrix
// per level. Throws std::invalid_argument when `taxonomy` differs from the
// predictor's.
MetricsReport evaluate(const Predictor& predictor, std::span<const Scene> scenes, const HierarchySpec& taxonomy);

// Builds a report from per-level confusions plus the consistency counts.
MetricsReport make_report(const HierarchySpec& taxonomy, std::vector<ConfusionMatrix> confusion,
                          std::vector<double> consistency_rate_per_h);

// Mean IoU over `classes` at `level`, skipping undefined ones.
double mean_iou_over(const MetricsReport& report, int level, std::span<const int> classes);

nlohmann::ordered_json to_json(const MetricsReport& report);
MetricsReport metrics_report_from_json(const nlohmann::json& j);
void save_report(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport load_report(const std::filesystem::path& path);

// Percent with two decimals, locale independent: 0.63281 -> "63.28".
std::string format_percent(double fraction);

// Table with one column per level plus Avg, percent values.
std::string format_report_table(const MetricsReport& report);

}  // namespace ld3dhs
