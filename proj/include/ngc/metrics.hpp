#pragma once

#include <string>

#include "ngc/repr.hpp"
#include "ngc/tensor.hpp"

namespace ngc::metrics {

enum class Polarity { LowerBetter, HigherBetter };

// Every metric name used anywhere in reports or selection is registered here
// so comparisons are uniform.
Polarity polarity(const std::string& metric_name);  // throws on unknown names

// True when `a` is strictly better than `b` under the metric's polarity.
bool better(const std::string& metric_name, double a, double b);

double l1(const Tensor& pred, const Tensor& gt);  // mean |diff| over elements

// Direction maps store in-plane (nx, ny); both sides are lifted to unit
// 3-vectors (z >= 0) and compared by great-circle angle, averaged, degrees.
double angular_l1_deg(const Tensor& pred, const Tensor& gt);

double l2(const Tensor& pred, const Tensor& gt);  // Euclidean distance

double accuracy(const Tensor& pred, const Tensor& gt);

// Mean intersection-over-union across the classes present in ground truth.
double miou(const Tensor& pred, const Tensor& gt, int classes);

// Percentage of elements where the new prediction beats the baseline against
// ground truth: strictly smaller absolute error (continuous) or newly correct
// (categorical). Ties count as not improved.
double pixels_improved_pct(const NodeSpec& spec, const Tensor& new_pred,
                           const Tensor& baseline, const Tensor& gt);

// The single scalar used to rank paths and drive greedy selection.
std::string selection_metric_name(const NodeSpec& spec);
double selection_metric(const NodeSpec& spec, const Tensor& pred, const Tensor& gt);

}  // namespace ngc::metrics
