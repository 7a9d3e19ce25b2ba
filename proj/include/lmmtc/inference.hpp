#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lmmtc/metrics.hpp"
#include "lmmtc/model.hpp"

namespace lmmtc {

struct Prediction {
  std::vector<double> probabilities;
  LabelVector labels;
};

/// Trained encoder together with the vocabulary and label space it was trained on.
struct Classifier {
  const ModelParams& params;
  const ModelConfig& config;
  const Vocabulary& vocab;
  const LabelSpace& labels;
};

/// Strict threshold: p > 0.5 is positive, everything else (including 0.5) negative.
LabelVector threshold_probabilities(std::span<const double> probabilities);

/// All label slots masked, label logits read at the state positions, then sigmoid.
std::vector<double> predict_proba(const Classifier& model, std::string_view text);
Prediction predict(const Classifier& model, std::string_view text);

/// Batched convenience wrappers; each example is scored independently.
std::vector<Prediction> predict_batch(const Classifier& model, std::span<const std::string> texts,
                                      int batch_size = 32);
LabelMatrix predict_matrix(const Classifier& model, std::span<const std::string> texts,
                           int batch_size = 32);

/// predictions.jsonl line: {"id": ..., "proba": [...], "labels": [indices]}.
nlohmann::json prediction_to_json(const std::string& id, const Prediction& p);

}  // namespace lmmtc
