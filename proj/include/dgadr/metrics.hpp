#pragma once

// Multi-class evaluation: accuracy, macro-F1, macro one-vs-rest AUC, confusion matrix.

#include "dgadr/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <numeric>
#include <ostream>

namespace dgadr {

struct MetricsReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double ovr_auc = 0.0;
  std::vector<std::vector<long>> confusion;  // [truth][prediction]
  std::vector<double> per_class_f1;
  std::vector<int> skipped_auc_classes;

  long total() const {
    long n = 0;
    for (const auto &row : confusion) n = std::accumulate(row.begin(), row.end(), n);
    return n;
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"accuracy", accuracy},         {"macro_f1", macro_f1},
                          {"ovr_auc", ovr_auc},           {"confusion", confusion},
                          {"per_class_f1", per_class_f1}, {"skipped_auc_classes", skipped_auc_classes}};
  }

  /// Column order of `csv_row`.
  static std::string csv_header() { return "accuracy,macro_f1,ovr_auc"; }
  std::string csv_row(int digits = 6) const {
    return format_fixed(accuracy, digits) + ',' + format_fixed(macro_f1, digits) + ',' +
           format_fixed(ovr_auc, digits);
  }
};

namespace detail {

inline void check_pairs(const std::vector<int> &pred, const std::vector<int> &truth) {
  if (pred.size() != truth.size()) throw Error("metrics: predictions and truths differ in length");
}

}  // namespace detail

inline double accuracy(const std::vector<int> &pred, const std::vector<int> &truth) {
  detail::check_pairs(pred, truth);
  if (truth.empty()) throw Error("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += pred[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

inline std::vector<std::vector<long>> confusion_matrix(const std::vector<int> &pred,
                                                       const std::vector<int> &truth, int num_classes) {
  detail::check_pairs(pred, truth);
  std::vector<std::vector<long>> c(static_cast<std::size_t>(num_classes),
                                   std::vector<long>(static_cast<std::size_t>(num_classes), 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes || pred[i] < 0 || pred[i] >= num_classes)
      throw Error("confusion_matrix: class id out of range");
    ++c[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];
  }
  return c;
}

/// F1 per class (0 when precision + recall is 0). Classes absent from the truths get NaN.
inline std::vector<double> per_class_f1(const std::vector<int> &pred, const std::vector<int> &truth,
                                        int num_classes) {
  const auto c = confusion_matrix(pred, truth, num_classes);
  std::vector<double> f1(static_cast<std::size_t>(num_classes), std::nan(""));
  for (int k = 0; k < num_classes; ++k) {
    long tp = c[k][k], actual = 0, predicted = 0;
    for (int j = 0; j < num_classes; ++j) {
      actual += c[k][j];
      predicted += c[j][k];
    }
    if (actual == 0) continue;
    const double precision = predicted ? static_cast<double>(tp) / predicted : 0.0;
    const double recall = static_cast<double>(tp) / actual;
    f1[k] = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return f1;
}

/// Macro average over the classes that occur in the truths.
inline double macro_f1(const std::vector<int> &pred, const std::vector<int> &truth, int num_classes) {
  const auto f1 = per_class_f1(pred, truth, num_classes);
  double sum = 0.0;
  int n = 0;
  for (double v : f1)
    if (!std::isnan(v)) {
      sum += v;
      ++n;
    }
  return n ? sum / n : 0.0;
}

/// AUC of one score column against a binary target via the Mann-Whitney rank sum
/// (mid-ranks for ties, i.e. ties count one half).
inline double rank_auc(const std::vector<double> &scores, const std::vector<bool> &positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (positive[order[k]]) {
        rank_sum += mid_rank;
        ++n_pos;
      }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n - n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

struct AucResult {
  double macro = 0.0;
  std::vector<double> per_class;  // NaN for skipped classes
  std::vector<int> skipped;
};

/// Macro one-vs-rest AUC over classes having both positives and negatives.
inline AucResult ovr_auc_detail(const Matrix &scores, const std::vector<int> &truth, int num_classes) {
  if (static_cast<std::size_t>(scores.rows()) != truth.size() || scores.cols() != num_classes)
    throw Error("ovr_auc: score matrix shape does not match truths / classes");
  for (Eigen::Index i = 0; i < scores.rows(); ++i)
    if (std::abs(scores.row(i).sum() - 1.0) > 1e-6)
      throw Error("ovr_auc: score row " + std::to_string(i) + " does not sum to 1");
  AucResult r;
  r.per_class.assign(static_cast<std::size_t>(num_classes), std::nan(""));
  double sum = 0.0;
  int used = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<bool> pos(truth.size());
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      pos[i] = truth[i] == c;
      n_pos += pos[i] ? 1 : 0;
    }
    if (n_pos == 0 || n_pos == truth.size()) {
      r.skipped.push_back(c);
      continue;
    }
    std::vector<double> col(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) col[i] = scores(static_cast<Eigen::Index>(i), c);
    r.per_class[static_cast<std::size_t>(c)] = rank_auc(col, pos);
    sum += r.per_class[static_cast<std::size_t>(c)];
    ++used;
  }
  if (used == 0) throw Error("ovr_auc: no class has both positive and negative samples");
  r.macro = sum / used;
  return r;
}

inline double ovr_auc(const Matrix &scores, const std::vector<int> &truth, int num_classes) {
  return ovr_auc_detail(scores, truth, num_classes).macro;
}

/// Argmax with ties resolved toward the lowest class id.
inline std::vector<int> argmax_rows(const Matrix &scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c)
      if (scores(i, c) > scores(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

inline Matrix softmax_rows(const Matrix &logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const RowVector e = (logits.row(i).array() - logits.row(i).maxCoeff()).exp().matrix();
    p.row(i) = e / e.sum();
  }
  return p;
}

/// Full report from class probabilities: argmax feeds accuracy / F1, probabilities feed AUC.
inline MetricsReport make_report(const Matrix &probabilities, const std::vector<int> &truth,
                                 int num_classes) {
  const auto pred = argmax_rows(probabilities);
  MetricsReport r;
  r.accuracy = accuracy(pred, truth);
  r.confusion = confusion_matrix(pred, truth, num_classes);
  r.per_class_f1 = per_class_f1(pred, truth, num_classes);
  r.macro_f1 = macro_f1(pred, truth, num_classes);
  const auto auc = ovr_auc_detail(probabilities, truth, num_classes);
  r.ovr_auc = auc.macro;
  r.skipped_auc_classes = auc.skipped;
  return r;
}

}  // namespace dgadr
