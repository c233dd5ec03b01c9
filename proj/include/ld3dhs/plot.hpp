#pragma once

// SVG figures: per-class IoU bars against log-scale class point counts, and
// loss curves from a training log.

#include "ld3dhs/metrics.hpp"

#include <json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ld3dhs {

// One group of bars per class, one bar per report; class point counts (from
// the first report) drawn as a log-scale line on the right axis.
std::string per_class_svg(std::span<const MetricsReport> reports, std::span<const std::string> labels, int level);

// Total loss and summed cross-entropy per step.
std::string loss_curve_svg(std::span<const nlohmann::json> records);

// Reads a line-delimited training log.
std::vector<nlohmann::json> read_log(const std::filesystem::path& path);

// Throws std::invalid_argument unless every report has the same taxonomy
// name, level names, and class names.
void require_same_taxonomy(std::span<const MetricsReport> reports);

}  // namespace ld3dhs
