#include "ssmil/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace ssmil {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // trim to the shortest representation that still round-trips
  for (int prec = 1; prec < 17; ++prec) {
    char probe[40];
    std::snprintf(probe, sizeof(probe), "%.*g", prec, v);
    double back;
    std::sscanf(probe, "%lf", &back);
    if (back == v) return probe;
  }
  return buf;
}

double metric_auc(const Vector& scores, const std::vector<int>& labels) {
  const Index n = scores.size();
  contract(static_cast<Index>(labels.size()) == n, "metric_auc: length mismatch, " +
                                                       std::to_string(labels.size()) +
                                                       " labels for " + std::to_string(n) +
                                                       " scores");
  Index n_pos = 0;
  for (int y : labels) n_pos += y ? 1 : 0;
  const Index n_neg = n - n_pos;
  contract(n_pos > 0 && n_neg > 0, "metric_auc: undefined metric, single-class labels");

  std::vector<Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(),
            [&](Index a, Index b) { return scores(a) < scores(b); });

  // midranks (1-based); tied scores share the average rank
  std::vector<double> rank(static_cast<size_t>(n));
  Index at = 0;
  while (at < n) {
    Index end = at;
    while (end + 1 < n && scores(order[static_cast<size_t>(end + 1)]) ==
                              scores(order[static_cast<size_t>(at)]))
      ++end;
    const double mid = 0.5 * static_cast<double>((at + 1) + (end + 1));
    for (Index k = at; k <= end; ++k) rank[static_cast<size_t>(order[static_cast<size_t>(k)])] = mid;
    at = end + 1;
  }
  double rank_sum = 0.0;
  for (Index i = 0; i < n; ++i)
    if (labels[static_cast<size_t>(i)]) rank_sum += rank[static_cast<size_t>(i)];
  const double numer = rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return numer / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double macro_ovr_auc(const Matrix& probs, const std::vector<Index>& labels) {
  const Index n = probs.rows(), k = probs.cols();
  contract(static_cast<Index>(labels.size()) == n, "macro_ovr_auc: length mismatch");
  std::vector<Index> counts(static_cast<size_t>(k), 0);
  for (Index y : labels) {
    contract(y >= 0 && y < k, "macro_ovr_auc: label outside [0,k)");
    ++counts[static_cast<size_t>(y)];
  }
  double sum = 0.0;
  Index present = 0;
  for (Index c = 0; c < k; ++c) {
    if (counts[static_cast<size_t>(c)] == 0) continue;
    ++present;
  }
  contract(present >= 2, "macro_ovr_auc: undefined metric, fewer than two classes present");
  Index used = 0;
  for (Index c = 0; c < k; ++c) {
    if (counts[static_cast<size_t>(c)] == 0) continue;
    std::vector<int> binary(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) binary[static_cast<size_t>(i)] = labels[static_cast<size_t>(i)] == c;
    sum += metric_auc(probs.col(c), binary);
    ++used;
  }
  return sum / static_cast<double>(used);
}

std::pair<double, double> metric_acc_f1(const std::vector<Index>& predicted,
                                        const std::vector<Index>& truth, Index k) {
  contract(predicted.size() == truth.size(), "metric_acc_f1: length mismatch, " +
                                                 std::to_string(predicted.size()) + " vs " +
                                                 std::to_string(truth.size()));
  contract(!truth.empty(), "metric_acc_f1: empty inputs");
  Matrix confusion = Matrix::Zero(k, k);
  for (size_t i = 0; i < truth.size(); ++i) {
    contract(truth[i] >= 0 && truth[i] < k && predicted[i] >= 0 && predicted[i] < k,
             "metric_acc_f1: label outside [0,k)");
    confusion(truth[i], predicted[i]) += 1.0;
  }
  const double acc = confusion.trace() / static_cast<double>(truth.size());
  double f1_sum = 0.0;
  for (Index c = 0; c < k; ++c) {
    const double tp = confusion(c, c);
    const double fp = confusion.col(c).sum() - tp;
    const double fn = confusion.row(c).sum() - tp;
    const double denom = 2.0 * tp + fp + fn;
    f1_sum += denom > 0.0 ? 2.0 * tp / denom : 0.0;
  }
  return {acc, f1_sum / static_cast<double>(k)};
}

MetricReport make_metric_report(const Matrix& probs, const std::vector<Index>& predicted,
                                const std::vector<Index>& truth, Index k) {
  MetricReport r;
  r.auc = macro_ovr_auc(probs, truth);
  const auto [acc, f1] = metric_acc_f1(predicted, truth, k);
  r.acc = acc;
  r.macro_f1 = f1;
  r.true_counts.assign(static_cast<size_t>(k), 0);
  r.predicted_counts.assign(static_cast<size_t>(k), 0);
  for (Index y : truth) ++r.true_counts[static_cast<size_t>(y)];
  for (Index y : predicted) ++r.predicted_counts[static_cast<size_t>(y)];
  return r;
}

std::string metric_report_csv(const MetricReport& report) {
  std::ostringstream out;
  out << "metric,value\n";
  out << "auc_macro_ovr," << format_double(report.auc) << "\n";
  out << "acc," << format_double(report.acc) << "\n";
  out << "macro_f1," << format_double(report.macro_f1) << "\n";
  for (size_t c = 0; c < report.true_counts.size(); ++c)
    out << "true_count_" << c << "," << report.true_counts[c] << "\n";
  for (size_t c = 0; c < report.predicted_counts.size(); ++c)
    out << "predicted_count_" << c << "," << report.predicted_counts[c] << "\n";
  out << "seed," << report.seed << "\n";
  out << "config," << report.config_fingerprint << "\n";
  return out.str();
}

}  // namespace ssmil
