#include "cropcube/metrics.hpp"
#include "cropcube/error.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>

namespace cropcube {

double pixel_accuracy(const Image<std::uint8_t>& pred, const Image<std::uint8_t>& target,
                      const Image<std::uint8_t>& unknown_mask) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols() || pred.rows() != unknown_mask.rows() ||
      pred.cols() != unknown_mask.cols())
    fail(ErrorCode::ShapeMismatch, "prediction, target and unknown mask must share a shape");
  const auto known = (unknown_mask == 0);
  const Index total = known.count();
  if (total == 0) fail(ErrorCode::AllUnknown, "every pixel is unknown");
  const Index correct = (known && (pred == target)).count();
  return static_cast<double>(correct) / static_cast<double>(total);
}

double rmse(std::span<const double> targets, std::span<const double> preds) {
  if (targets.size() != preds.size())
    fail(ErrorCode::LengthMismatch, std::to_string(targets.size()) + " targets vs " + std::to_string(preds.size()) +
                                        " predictions");
  if (targets.empty()) fail(ErrorCode::EmptyInput, "rmse of an empty set");
  double sum = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double d = targets[i] - preds[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(targets.size()));
}

double mean(std::span<const double> values) {
  if (values.empty()) fail(ErrorCode::EmptyInput, "mean of an empty set");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double error_pct(double rmse_value, double mu) {
  if (!(mu > 0.0)) fail(ErrorCode::NonPositiveMean, "target mean must be positive, got " + std::to_string(mu));
  return 100.0 * rmse_value / mu;
}

std::vector<ErrorRangeRow> error_range_table(double mu, std::span<const double> breakpoints) {
  if (breakpoints.empty()) fail(ErrorCode::EmptyInput, "no breakpoints");
  if (!(mu > 0.0)) fail(ErrorCode::NonPositiveMean, "target mean must be positive");
  for (std::size_t i = 1; i < breakpoints.size(); ++i)
    if (!(breakpoints[i] > breakpoints[i - 1]))
      fail(ErrorCode::UnsortedBreakpoints, "breakpoints must be strictly increasing");
  std::vector<ErrorRangeRow> rows;
  auto row = [&](double lo, double hi) { rows.push_back({lo, hi, error_pct(lo, mu), error_pct(hi, mu)}); };
  if (breakpoints.size() == 1) row(breakpoints[0], breakpoints[0]);
  for (std::size_t i = 1; i < breakpoints.size(); ++i) row(breakpoints[i - 1], breakpoints[i]);
  return rows;
}

std::string reports_to_json(std::span<const MetricReport> reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json j = {{"task", r.task}, {"metric", r.metric}, {"value", r.value}, {"units", r.units}, {"n", r.n}};
    j["mu"] = r.mu ? nlohmann::json(*r.mu) : nlohmann::json(nullptr);
    arr.push_back(std::move(j));
  }
  return arr.dump(1) + "\n";
}

std::string reports_to_text(std::span<const MetricReport> reports) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-14s %-10s %14s %-9s %6s %12s\n", "task", "metric", "value", "units", "n", "mu");
  out += line;
  for (const auto& r : reports) {
    const std::string mu = r.mu ? std::to_string(*r.mu) : "-";
    std::snprintf(line, sizeof line, "%-14s %-10s %14.4f %-9s %6lld %12s\n", r.task.c_str(), r.metric.c_str(), r.value,
                  r.units.c_str(), static_cast<long long>(r.n), mu.c_str());
    out += line;
  }
  return out;
}

std::string error_range_table_text(std::span<const ErrorRangeRow> rows) {
  std::string out;
  char line[128];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%.0f - %.0f\t%.2f%% - %.2f%%\n", r.rmse_lo, r.rmse_hi, r.pct_lo, r.pct_hi);
    out += line;
  }
  return out;
}

}  // namespace cropcube
