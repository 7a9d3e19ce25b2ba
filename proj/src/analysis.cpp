#include "lmmtc/analysis.hpp"

#include <cstdio>
#include <sstream>

#include "lmmtc/io.hpp"

namespace lmmtc {

std::string_view to_string(CorrelationMethod m) {
  return m == CorrelationMethod::Pearson ? "pearson" : "spearman";
}

CorrelationMethod parse_correlation_method(std::string_view s) {
  if (s == "pearson") return CorrelationMethod::Pearson;
  if (s == "spearman") return CorrelationMethod::Spearman;
  throw ConfigError("unknown correlation method: " + std::string(s));
}

std::vector<int> top_k_labels(const CorrelationMatrix& m, std::size_t k) {
  const auto n = m.values.rows();
  std::vector<std::pair<double, int>> score;
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) best = std::max(best, std::abs(m.values(i, j)));
    }
    score.emplace_back(best, static_cast<int>(i));
  }
  std::stable_sort(score.begin(), score.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<int> out;
  for (std::size_t i = 0; i < std::min(k, score.size()); ++i) out.push_back(score[i].second);
  return out;
}

Eigen::MatrixXd LabelAttention::mean() const {
  if (n_examples == 0) return sum;
  return sum / static_cast<double>(n_examples);
}

Eigen::MatrixXd label_pair_attention(const EncoderOutput& output, Index example, std::size_t layer,
                                     std::span<const int> state_positions) {
  const Matrix head_mean = output.head_mean(layer, example);
  const auto L = static_cast<Eigen::Index>(state_positions.size());
  Eigen::MatrixXd out(L, L);
  for (Eigen::Index a = 0; a < L; ++a) {
    for (Eigen::Index b = 0; b < L; ++b) {
      out(a, b) = head_mean(state_positions[static_cast<std::size_t>(a)], state_positions[static_cast<std::size_t>(b)]);
    }
  }
  return out;
}

std::vector<LabelAttention> attention_summary(const Classifier& model, std::span<const Example> dataset,
                                              int batch_size) {
  if (batch_size <= 0) throw ContractError("batch_size must be positive");
  const auto L = static_cast<Eigen::Index>(model.labels.size());
  std::vector<LabelAttention> layers(static_cast<std::size_t>(model.config.n_layers));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].layer = static_cast<int>(l);
    layers[l].sum = Eigen::MatrixXd::Zero(L, L);
  }
  for (std::size_t start = 0; start < dataset.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(dataset.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<EncodedInput> batch;
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(encode_for_inference(dataset[i].text, model.labels.size(), model.vocab, model.config.max_len));
    }
    const ForwardOptions opts{.train_mode = false, .trim_padding = true, .collect_attention = true};
    const auto out = forward(model.params, model.config, batch, opts);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (std::size_t b = 0; b < batch.size(); ++b) {
        layers[l].sum += label_pair_attention(out, static_cast<Index>(b), l, batch[b].label_state_positions);
      }
      layers[l].n_examples += static_cast<std::int64_t>(batch.size());
    }
  }
  return layers;
}

LabelAttention attention_label_matrix(const Classifier& model, std::span<const Example> dataset, int layer,
                                      int batch_size) {
  if (layer < 0 || layer >= model.config.n_layers) {
    throw ContractError("attention_label_matrix: layer " + std::to_string(layer) + " out of range");
  }
  return attention_summary(model, dataset, batch_size)[static_cast<std::size_t>(layer)];
}

// ---- export ----------------------------------------------------------------

namespace {

std::string fmt12(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void check_names(const Eigen::MatrixXd& m, std::span<const std::string> names) {
  if (static_cast<Eigen::Index>(names.size()) != m.cols()) {
    throw ContractError("heatmap: need one name per column");
  }
}

}  // namespace

std::string heatmap_csv(const Eigen::MatrixXd& matrix, std::span<const std::string> names) {
  check_names(matrix, names);
  std::string out = "label";
  for (const auto& n : names) out += "," + csv_field(n);
  out += "\n";
  for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
    out += csv_field(r < static_cast<Eigen::Index>(names.size()) ? names[static_cast<std::size_t>(r)] : std::to_string(r));
    for (Eigen::Index c = 0; c < matrix.cols(); ++c) out += "," + fmt12(matrix(r, c));
    out += "\n";
  }
  return out;
}

CsvMatrix parse_heatmap_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  CsvMatrix out;
  if (!std::getline(in, line)) throw ParseError("heatmap csv: empty");
  auto header = split_csv_line(line);
  if (header.empty() || header[0] != "label") throw ParseError("heatmap csv: missing header");
  out.names.assign(header.begin() + 1, header.end());
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size()) throw ParseError("heatmap csv: ragged row");
    std::vector<double> row;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      try {
        row.push_back(std::stod(fields[i]));
      } catch (const std::exception&) {
        throw ParseError("heatmap csv: bad number '" + fields[i] + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  out.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(out.names.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return out;
}

std::string heatmap_color(double value, double lo, double hi) {
  const double t = hi > lo ? std::clamp((value - lo) / (hi - lo), 0.0, 1.0) : 0.5;
  // light gray (230,230,230) -> red (200,30,30)
  const auto mix = [t](int a, int b) { return static_cast<int>(std::lround(a + (b - a) * t)); };
  return "rgb(" + std::to_string(mix(230, 200)) + "," + std::to_string(mix(230, 30)) + "," +
         std::to_string(mix(230, 30)) + ")";
}

std::string heatmap_svg(const Eigen::MatrixXd& matrix, std::span<const std::string> names) {
  check_names(matrix, names);
  constexpr int kCell = 40;
  constexpr int kMargin = 120;
  const double lo = matrix.size() ? matrix.minCoeff() : 0.0;
  const double hi = matrix.size() ? matrix.maxCoeff() : 0.0;
  const auto width = kMargin + kCell * matrix.cols();
  const auto height = kMargin + kCell * matrix.rows();
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
    for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
      os << "<rect x=\"" << kMargin + kCell * c << "\" y=\"" << kMargin + kCell * r << "\" width=\"" << kCell
         << "\" height=\"" << kCell << "\" fill=\"" << heatmap_color(matrix(r, c), lo, hi) << "\"><title>"
         << fmt12(matrix(r, c)) << "</title></rect>\n";
    }
  }
  for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
    os << "<text x=\"" << kMargin + kCell * c + kCell / 2 << "\" y=\"" << kMargin - 6
       << "\" font-size=\"10\" text-anchor=\"end\" transform=\"rotate(-45 " << kMargin + kCell * c + kCell / 2
       << " " << kMargin - 6 << ")\">" << xml_escape(names[static_cast<std::size_t>(c)]) << "</text>\n";
  }
  for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
    const std::string name = r < static_cast<Eigen::Index>(names.size()) ? names[static_cast<std::size_t>(r)] : std::to_string(r);
    os << "<text x=\"" << kMargin - 6 << "\" y=\"" << kMargin + kCell * r + kCell / 2 + 4
       << "\" font-size=\"10\" text-anchor=\"end\">" << xml_escape(name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void export_heatmap(const Eigen::MatrixXd& matrix, std::span<const std::string> names, const std::string& path,
                    HeatmapFormat format) {
  io::write_file_atomic(path, format == HeatmapFormat::Csv ? heatmap_csv(matrix, names) : heatmap_svg(matrix, names));
}

}  // namespace lmmtc
