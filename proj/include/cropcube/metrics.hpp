#pragma once

#include "cropcube/tensor.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cropcube {

/// Fraction of known pixels whose predicted label equals the target label.
/// Pixels with unknown_mask != 0 are skipped. Throws ShapeMismatch, AllUnknown.
double pixel_accuracy(const Image<std::uint8_t>& pred, const Image<std::uint8_t>& target,
                      const Image<std::uint8_t>& unknown_mask);

/// Root mean squared difference. Throws EmptyInput, LengthMismatch.
double rmse(std::span<const double> targets, std::span<const double> preds);

double mean(std::span<const double> values);

/// RMSE as a percentage of the target mean. Throws NonPositiveMean.
double error_pct(double rmse_value, double mu);

struct ErrorRangeRow {
  double rmse_lo = 0.0;
  double rmse_hi = 0.0;
  double pct_lo = 0.0;
  double pct_hi = 0.0;
};

/// One row per consecutive breakpoint pair; a single breakpoint gives one
/// degenerate row. Throws UnsortedBreakpoints, NonPositiveMean, EmptyInput.
std::vector<ErrorRangeRow> error_range_table(double mu, std::span<const double> breakpoints);

struct MetricReport {
  std::string task;
  std::string metric;
  double value = 0.0;
  std::string units;
  Index n = 0;
  std::optional<double> mu;
};

std::string reports_to_json(std::span<const MetricReport> reports);
/// Fixed-width text table, one report per line.
std::string reports_to_text(std::span<const MetricReport> reports);
std::string error_range_table_text(std::span<const ErrorRangeRow> rows);

}  // namespace cropcube
