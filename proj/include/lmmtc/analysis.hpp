#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lmmtc/data.hpp"
#include "lmmtc/errors.hpp"
#include "lmmtc/inference.hpp"

namespace lmmtc {

enum class CorrelationMethod { Pearson, Spearman };
std::string_view to_string(CorrelationMethod m);
CorrelationMethod parse_correlation_method(std::string_view s);

struct CorrelationMatrix {
  Eigen::MatrixXd values;
  CorrelationMethod method = CorrelationMethod::Pearson;
  /// Columns with zero variance; their rows and columns are reported as 0.
  std::vector<bool> degenerate;
};

/// Average ranks (1-based) with ties sharing the mean of their positions.
template <typename Derived>
Eigen::VectorXd average_ranks(const Eigen::MatrixBase<Derived>& column) {
  const Eigen::Index n = column.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return column(a) < column(b); });
  Eigen::VectorXd ranks(n);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j + 1 < n && column(order[static_cast<std::size_t>(j + 1)]) == column(order[static_cast<std::size_t>(i)])) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index k = i; k <= j; ++k) ranks(order[static_cast<std::size_t>(k)]) = r;
    i = j + 1;
  }
  return ranks;
}

/// Column-pair correlation of a label matrix (rows = examples). Spearman is Pearson on
/// average-tie ranks.
template <typename Derived>
CorrelationMatrix correlation_matrix(const Eigen::MatrixBase<Derived>& y, CorrelationMethod method) {
  const Eigen::Index n = y.rows();
  const Eigen::Index k = y.cols();
  if (n < 2) throw ContractError("correlation_matrix: need at least 2 rows");
  Eigen::MatrixXd x = y.template cast<double>();
  if (method == CorrelationMethod::Spearman) {
    for (Eigen::Index c = 0; c < k; ++c) x.col(c) = average_ranks(x.col(c));
  }
  x.rowwise() -= x.colwise().mean();
  const Eigen::VectorXd ss = x.colwise().squaredNorm().transpose();

  CorrelationMatrix out;
  out.method = method;
  out.values = Eigen::MatrixXd::Zero(k, k);
  out.degenerate.assign(static_cast<std::size_t>(k), false);
  for (Eigen::Index c = 0; c < k; ++c) out.degenerate[static_cast<std::size_t>(c)] = !(ss(c) > 0.0);
  for (Eigen::Index a = 0; a < k; ++a) {
    if (out.degenerate[static_cast<std::size_t>(a)]) continue;
    out.values(a, a) = 1.0;
    for (Eigen::Index b = a + 1; b < k; ++b) {
      if (out.degenerate[static_cast<std::size_t>(b)]) continue;
      const double r = std::clamp(x.col(a).dot(x.col(b)) / std::sqrt(ss(a) * ss(b)), -1.0, 1.0);
      out.values(a, b) = r;
      out.values(b, a) = r;
    }
  }
  return out;
}

/// Labels ordered by their strongest off-diagonal |correlation|, highest first, truncated to k.
std::vector<int> top_k_labels(const CorrelationMatrix& m, std::size_t k);

/// Head-averaged, dataset-summed attention between label state-token positions at one layer.
struct LabelAttention {
  int layer = 0;
  std::int64_t n_examples = 0;
  Eigen::MatrixXd sum;  // |L| × |L|, row = attending label, column = attended label

  Eigen::MatrixXd mean() const;
};

/// Extracts one example's |L|×|L| head-mean attention at `layer` from a forward pass.
Eigen::MatrixXd label_pair_attention(const EncoderOutput& output, Index example, std::size_t layer,
                                     std::span<const int> state_positions);

/// All-masked (inference) templates for every example; sums over the dataset.
LabelAttention attention_label_matrix(const Classifier& model, std::span<const Example> dataset,
                                      int layer, int batch_size = 32);
/// Same, for every layer in one pass.
std::vector<LabelAttention> attention_summary(const Classifier& model, std::span<const Example> dataset,
                                              int batch_size = 32);

enum class HeatmapFormat { Csv, Svg };

/// CSV: header "label,<names...>", then one row per label, values with 12 significant digits.
/// SVG: one <rect> per cell at x = 120 + 40*col, y = 120 + 40*row (40×40 px), fill mapped
/// linearly from light gray (min) to red (max); a constant matrix is drawn at the midpoint
/// color. Row and column names are drawn as <text> elements.
void export_heatmap(const Eigen::MatrixXd& matrix, std::span<const std::string> names,
                    const std::string& path, HeatmapFormat format);
std::string heatmap_csv(const Eigen::MatrixXd& matrix, std::span<const std::string> names);
std::string heatmap_svg(const Eigen::MatrixXd& matrix, std::span<const std::string> names);

struct CsvMatrix {
  std::vector<std::string> names;
  Eigen::MatrixXd values;
};
CsvMatrix parse_heatmap_csv(const std::string& text);

/// Fill color of a cell value under the heatmap color map, as "rgb(r,g,b)".
std::string heatmap_color(double value, double lo, double hi);

}  // namespace lmmtc
