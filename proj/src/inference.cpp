#include "lmmtc/inference.hpp"

#include <algorithm>

#include "lmmtc/errors.hpp"

namespace lmmtc {

namespace {

void check_compatible(const Classifier& model) {
  if (static_cast<int>(model.labels.size()) != model.config.n_labels) {
    throw ContractError("label space has " + std::to_string(model.labels.size()) +
                        " labels but the model was built for " + std::to_string(model.config.n_labels));
  }
  if (model.vocab.strategy() != model.config.strategy) {
    throw ContractError("vocabulary mask strategy does not match the model");
  }
  if (model.vocab.size() != model.config.vocab_size) {
    throw ContractError("vocabulary size does not match the model");
  }
}

std::vector<std::vector<double>> score(const Classifier& model, std::span<const std::string> texts,
                                       int batch_size) {
  check_compatible(model);
  if (batch_size <= 0) throw ContractError("batch_size must be positive");
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (std::size_t start = 0; start < texts.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(texts.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<EncodedInput> batch;
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(encode_for_inference(texts[i], model.labels.size(), model.vocab, model.config.max_len));
    }
    const ForwardOptions opts{.train_mode = false, .trim_padding = true, .collect_attention = false};
    const auto enc = forward(model.params, model.config, batch, opts);
    const Matrix logits = label_logits(enc, model.params, batch).value();
    for (Index b = 0; b < logits.rows(); ++b) {
      std::vector<double> p(static_cast<std::size_t>(logits.cols()));
      for (Index i = 0; i < logits.cols(); ++i) p[static_cast<std::size_t>(i)] = stable_sigmoid(logits(b, i));
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace

LabelVector threshold_probabilities(std::span<const double> probabilities) {
  LabelVector v;
  v.reserve(probabilities.size());
  for (double p : probabilities) v.push_back(p > 0.5 ? 1 : 0);
  return v;
}

std::vector<double> predict_proba(const Classifier& model, std::string_view text) {
  const std::string t(text);
  return score(model, std::span<const std::string>(&t, 1), 1).front();
}

Prediction predict(const Classifier& model, std::string_view text) {
  Prediction p;
  p.probabilities = predict_proba(model, text);
  p.labels = threshold_probabilities(p.probabilities);
  return p;
}

std::vector<Prediction> predict_batch(const Classifier& model, std::span<const std::string> texts,
                                      int batch_size) {
  std::vector<Prediction> out;
  for (auto& probs : score(model, texts, batch_size)) {
    Prediction p;
    p.labels = threshold_probabilities(probs);
    p.probabilities = std::move(probs);
    out.push_back(std::move(p));
  }
  return out;
}

LabelMatrix predict_matrix(const Classifier& model, std::span<const std::string> texts, int batch_size) {
  const auto preds = predict_batch(model, texts, batch_size);
  LabelMatrix m(static_cast<Index>(preds.size()), static_cast<Index>(model.labels.size()));
  for (std::size_t r = 0; r < preds.size(); ++r) {
    for (std::size_t c = 0; c < preds[r].labels.size(); ++c) {
      m(static_cast<Index>(r), static_cast<Index>(c)) = preds[r].labels[c];
    }
  }
  return m;
}

nlohmann::json prediction_to_json(const std::string& id, const Prediction& p) {
  std::vector<int> idx;
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    if (p.labels[i]) idx.push_back(static_cast<int>(i));
  }
  return {{"id", id}, {"proba", p.probabilities}, {"labels", idx}};
}

}  // namespace lmmtc
