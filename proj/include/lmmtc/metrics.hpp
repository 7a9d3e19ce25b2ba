#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

#include <json.hpp>

#include "lmmtc/errors.hpp"

namespace lmmtc {

/// |examples| × |labels| matrix of {0,1}.
using LabelMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct MetricsReport {
  double accuracy = 0.0;
  double micro_f1 = 0.0;
  double micro_jaccard = 0.0;
  double hamming_loss = 0.0;
  ConfusionCounts counts;

  nlohmann::json to_json() const {
    return {{"accuracy", accuracy}, {"micro_f1", micro_f1}, {"micro_jaccard", micro_jaccard},
            {"hamming_loss", hamming_loss}, {"tp", counts.tp}, {"fp", counts.fp},
            {"fn", counts.fn}, {"tn", counts.tn}};
  }
  static MetricsReport from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.accuracy = j.at("accuracy").get<double>();
    r.micro_f1 = j.at("micro_f1").get<double>();
    r.micro_jaccard = j.at("micro_jaccard").get<double>();
    r.hamming_loss = j.at("hamming_loss").get<double>();
    r.counts = {j.at("tp").get<std::int64_t>(), j.at("fp").get<std::int64_t>(),
                j.at("fn").get<std::int64_t>(), j.at("tn").get<std::int64_t>()};
    return r;
  }
};

namespace metrics_detail {

template <typename A, typename B>
void check_pair(const Eigen::MatrixBase<A>& y_true, const Eigen::MatrixBase<B>& y_pred) {
  if (y_true.rows() != y_pred.rows() || y_true.cols() != y_pred.cols()) {
    throw ContractError("metrics: shape mismatch " + std::to_string(y_true.rows()) + "x" +
                        std::to_string(y_true.cols()) + " vs " + std::to_string(y_pred.rows()) +
                        "x" + std::to_string(y_pred.cols()));
  }
}

inline double ratio_or_one(double num, double den) { return den == 0.0 ? 1.0 : num / den; }

}  // namespace metrics_detail

template <typename A, typename B>
ConfusionCounts confusion(const Eigen::MatrixBase<A>& y_true, const Eigen::MatrixBase<B>& y_pred) {
  metrics_detail::check_pair(y_true, y_pred);
  const auto t = (y_true.array() != 0);
  const auto p = (y_pred.array() != 0);
  ConfusionCounts c;
  c.tp = (t && p).count();
  c.fp = (!t && p).count();
  c.fn = (t && !p).count();
  c.tn = (!t && !p).count();
  return c;
}

/// Strict accuracy: share of rows predicted exactly.
template <typename A, typename B>
double accuracy(const Eigen::MatrixBase<A>& y_true, const Eigen::MatrixBase<B>& y_pred) {
  metrics_detail::check_pair(y_true, y_pred);
  if (y_true.rows() == 0) throw ContractError("accuracy: no examples");
  const auto row_ok = ((y_true.array() != 0) == (y_pred.array() != 0)).rowwise().all();
  return static_cast<double>(row_ok.count()) / static_cast<double>(y_true.rows());
}

/// 2TP / (2TP + FP + FN) over pooled counts; 1 when nothing is positive on either side.
template <typename A, typename B>
double micro_f1(const Eigen::MatrixBase<A>& y_true, const Eigen::MatrixBase<B>& y_pred) {
  const auto c = confusion(y_true, y_pred);
  return metrics_detail::ratio_or_one(2.0 * c.tp, 2.0 * c.tp + c.fp + c.fn);
}

template <typename A, typename B>
double micro_jaccard(const Eigen::MatrixBase<A>& y_true, const Eigen::MatrixBase<B>& y_pred) {
  const auto c = confusion(y_true, y_pred);
  return metrics_detail::ratio_or_one(static_cast<double>(c.tp),
                                      static_cast<double>(c.tp + c.fp + c.fn));
}

template <typename A, typename B>
double hamming_loss(const Eigen::MatrixBase<A>& y_true, const Eigen::MatrixBase<B>& y_pred) {
  const auto c = confusion(y_true, y_pred);
  const double cells = static_cast<double>(y_true.size());
  if (cells == 0.0) throw ContractError("hamming_loss: empty matrices");
  return static_cast<double>(c.fp + c.fn) / cells;
}

template <typename A, typename B>
MetricsReport full_report(const Eigen::MatrixBase<A>& y_true, const Eigen::MatrixBase<B>& y_pred) {
  metrics_detail::check_pair(y_true, y_pred);
  if (y_true.size() == 0) throw ContractError("full_report: empty matrices");
  MetricsReport r;
  r.counts = confusion(y_true, y_pred);
  const auto& c = r.counts;
  r.accuracy = accuracy(y_true, y_pred);
  r.micro_f1 = metrics_detail::ratio_or_one(2.0 * c.tp, 2.0 * c.tp + c.fp + c.fn);
  r.micro_jaccard = metrics_detail::ratio_or_one(static_cast<double>(c.tp),
                                                 static_cast<double>(c.tp + c.fp + c.fn));
  r.hamming_loss = static_cast<double>(c.fp + c.fn) / static_cast<double>(y_true.size());
  return r;
}

}  // namespace lmmtc
