#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmmtc/data.hpp"
#include "lmmtc/metrics.hpp"
#include "lmmtc/model.hpp"

namespace lmmtc {

struct TrainConfig {
  double learning_rate = 5e-5;
  int batch_size = 16;
  int epochs = 40;
  double warmup_ratio = 0.1;
  double mask_prob = 0.15;
  double lambda = 0.05;
  double weight_decay = 0.01;
  std::uint64_t seed = 42;
  MaskStrategy strategy = MaskStrategy::Diff;
  int log_every_batches = 10;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct LossBreakdown {
  double l_mtc = 0.0;
  double l_mlm = 0.0;
  double l_joint = 0.0;
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  std::int64_t masked_slots = 0;
  std::int64_t total_slots = 0;

  nlohmann::json to_json() const;
};

struct EpochRecord {
  int epoch = 0;
  double mean_joint = 0.0;
  std::optional<MetricsReport> dev;

  nlohmann::json to_json() const;
};

struct TrainHistory {
  std::vector<LossBreakdown> losses;
  std::vector<EpochRecord> epochs;
  std::int64_t masked_slots = 0;
  std::int64_t total_slots = 0;

  /// history.jsonl contents: one record per line, losses and epochs interleaved in time order.
  std::string to_jsonl() const;
};

// ---- losses ---------------------------------------------------------------

/// Mean BCE over batch and labels; y_true is {0,1} with the shape of logits.
Tensor bce_loss(const Matrix& y_true, const Tensor& logits);
/// Mean cross entropy over rows; 0 for an empty batch.
Tensor mlm_ce_loss(const Tensor& logits, std::span<const int> targets);
Tensor joint_loss(const Tensor& l_mtc, const Tensor& l_mlm, double lambda);
double joint_loss_value(double l_mtc, double l_mlm, double lambda);

// ---- optimizer ------------------------------------------------------------

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::int64_t t = 0;
};

/// One decoupled-weight-decay Adam update using each tensor's accumulated gradient
/// (missing gradients count as zero).
void adamw_step(std::span<Tensor> params, AdamWState& state, double lr, const AdamWOptions& opts);

/// Linear warmup to base_lr over round(warmup_ratio*total) steps, then linear decay to 0.
double lr_at(std::int64_t step, std::int64_t total_steps, double warmup_ratio, double base_lr);

// ---- training -------------------------------------------------------------

struct TrainResult {
  ModelParams params;
  TrainHistory history;
  /// Parameters at the epoch with the best dev micro-F1 (the final ones without a dev set).
  ModelParams best_params;
  int best_epoch = 0;
};

struct TrainHooks {
  /// Called for every logged LossBreakdown.
  std::function<void(const LossBreakdown&)> on_log;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Base vocabulary of the training texts extended with the label tokens for `strategy`.
Vocabulary make_vocabulary(std::span<const Example> train, const LabelSpace& labels,
                           MaskStrategy strategy, int min_freq = 1);

/// Joint label-mask training. model_cfg's vocab_size/n_labels/strategy are filled from
/// vocab and labels. `init` warm-starts from existing parameters of the same shapes.
TrainResult train(std::span<const Example> dataset, const LabelSpace& labels, const Vocabulary& vocab,
                  ModelConfig model_cfg, const TrainConfig& train_cfg,
                  const ModelParams* init = nullptr, std::span<const Example> dev = {},
                  const TrainHooks& hooks = {});

/// Forward + losses for one batch, without an update. Returns the graph-bearing joint loss.
struct BatchLoss {
  Tensor joint;
  LossBreakdown parts;
};
BatchLoss compute_batch_loss(const ModelParams& params, const ModelConfig& cfg,
                             std::span<const EncodedInput> batch, const Matrix& gold, double lambda,
                             bool train_mode, Pcg32* dropout_rng);

struct PretrainResult {
  ModelParams params;
  std::vector<LossBreakdown> losses;  // l_mlm carries the text-MLM loss
  std::int64_t masked_tokens = 0;
  std::int64_t eligible_tokens = 0;
};

/// [CLS] text [SEP] with 15% (mask_prob) of text tokens replaced by [MASKTXT]; CE on masked
/// positions only. Uses train_cfg's optimizer settings.
PretrainResult pretrain_mlm(std::span<const std::string> corpus, const Vocabulary& vocab,
                            ModelConfig model_cfg, const TrainConfig& train_cfg,
                            const TrainHooks& hooks = {});

/// Text-MLM input for pretraining; masked positions/targets filled from rng.
EncodedInput encode_text_mlm(std::span<const std::string> tokens, const Vocabulary& vocab,
                             int max_len, double mask_prob, Pcg32& rng, std::int64_t* eligible = nullptr);

}  // namespace lmmtc
