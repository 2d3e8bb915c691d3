#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ssmil/types.hpp"

namespace ssmil {

// Rank-statistic AUC: P(score+ > score-) + 0.5 * P(tie), computed from
// midranks. Exact, including ties. Throws on single-class labels.
double metric_auc(const Vector& scores, const std::vector<int>& labels);

// Macro one-vs-rest over the classes present in `labels`; prob column c is the
// score for class c. Needs at least two classes present.
double macro_ovr_auc(const Matrix& probs, const std::vector<Index>& labels);

// Accuracy = correct/total; macro F1 averages per-class 2TP/(2TP+FP+FN) over
// all k classes, scoring 0 where the denominator vanishes.
std::pair<double, double> metric_acc_f1(const std::vector<Index>& predicted,
                                        const std::vector<Index>& truth, Index k);

struct MetricReport {
  double auc = 0.0;
  double acc = 0.0;
  double macro_f1 = 0.0;
  std::vector<Index> true_counts;       // per-class occurrences in the split
  std::vector<Index> predicted_counts;  // per-class predictions
  std::uint64_t seed = 0;
  std::string config_fingerprint;
};

MetricReport make_metric_report(const Matrix& probs, const std::vector<Index>& predicted,
                                const std::vector<Index>& truth, Index k);

// `metric,value` rows, stable across runs for identical inputs.
std::string metric_report_csv(const MetricReport& report);

// Shortest round-trip decimal form, used by every CSV writer.
std::string format_double(double v);

}  // namespace ssmil
