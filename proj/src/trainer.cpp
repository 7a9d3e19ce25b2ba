#include "lmmtc/trainer.hpp"

#include <malloc.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "lmmtc/errors.hpp"
#include "lmmtc/inference.hpp"

namespace lmmtc {

// ---- configuration --------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (batch_size <= 0) fail("batch_size must be positive");
  if (epochs <= 0) fail("epochs must be positive");
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) fail("warmup_ratio must lie in [0, 1]");
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0)) fail("mask_prob must lie in [0, 1]");
  if (!(lambda >= 0.0)) fail("lambda must be nonnegative");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be nonnegative");
  if (log_every_batches <= 0) fail("log_every_batches must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"batch_size", batch_size},
          {"epochs", epochs},               {"warmup_ratio", warmup_ratio},
          {"mask_prob", mask_prob},         {"lambda", lambda},
          {"weight_decay", weight_decay},   {"seed", seed},
          {"strategy", std::string(to_string(strategy))},
          {"log_every_batches", log_every_batches}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  static const char* kKeys[] = {"learning_rate", "batch_size", "epochs", "warmup_ratio",
                                "mask_prob",     "lambda",     "weight_decay", "seed",
                                "strategy",      "log_every_batches"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys)) {
      throw ConfigError("train config: unknown key '" + key + "'");
    }
  }
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
    c.mask_prob = j.value("mask_prob", c.mask_prob);
    c.lambda = j.value("lambda", c.lambda);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    if (j.contains("strategy")) c.strategy = parse_mask_strategy(j.at("strategy").get<std::string>());
    c.log_every_batches = j.value("log_every_batches", c.log_every_batches);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return c;
}

nlohmann::json LossBreakdown::to_json() const {
  return {{"type", "loss"},   {"step", step},   {"epoch", epoch},
          {"l_mtc", l_mtc},   {"l_mlm", l_mlm}, {"l_joint", l_joint},
          {"lr", lr}};
}

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json j = {{"type", "epoch"}, {"epoch", epoch}, {"mean_joint", mean_joint}};
  if (dev) j["dev"] = dev->to_json();
  return j;
}

std::string TrainHistory::to_jsonl() const {
  std::string out;
  std::size_t li = 0;
  for (const auto& e : epochs) {
    while (li < losses.size() && losses[li].epoch <= e.epoch) out += losses[li++].to_json().dump() + "\n";
    out += e.to_json().dump() + "\n";
  }
  while (li < losses.size()) out += losses[li++].to_json().dump() + "\n";
  return out;
}

// ---- losses ---------------------------------------------------------------

Tensor bce_loss(const Matrix& y_true, const Tensor& logits) { return bce_with_logits(logits, y_true); }

Tensor mlm_ce_loss(const Tensor& logits, std::span<const int> targets) {
  return cross_entropy(logits, targets);
}

Tensor joint_loss(const Tensor& l_mtc, const Tensor& l_mlm, double lambda) {
  if (!(lambda >= 0.0)) throw ContractError("joint_loss: lambda must be nonnegative");
  return add(l_mtc, scale(l_mlm, lambda));
}

double joint_loss_value(double l_mtc, double l_mlm, double lambda) { return l_mtc + lambda * l_mlm; }

// ---- optimizer ------------------------------------------------------------

void adamw_step(std::span<Tensor> params, AdamWState& state, double lr, const AdamWOptions& opts) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Matrix::Zero(p.rows(), p.cols()));
      state.v.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adamw_step: optimizer state does not match parameters");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& w = params[i].mutable_value();
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    if (m.rows() != w.rows() || m.cols() != w.cols()) throw ContractError("adamw_step: state shape mismatch");
    w *= 1.0 - lr * opts.weight_decay;
    const Matrix& g = params[i].node()->grad;
    if (g.size() != 0) {
      m = opts.beta1 * m + (1.0 - opts.beta1) * g;
      v = opts.beta2 * v + (1.0 - opts.beta2) * g.cwiseAbs2();
    } else {
      m *= opts.beta1;
      v *= opts.beta2;
    }
    w.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + opts.eps);
  }
}

double lr_at(std::int64_t step, std::int64_t total_steps, double warmup_ratio, double base_lr) {
  if (total_steps <= 0) throw ContractError("lr_at: total_steps must be positive");
  if (step < 0 || step > total_steps) throw ContractError("lr_at: step outside [0, total_steps]");
  const auto warmup = static_cast<std::int64_t>(std::llround(warmup_ratio * static_cast<double>(total_steps)));
  if (step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (warmup == total_steps) return base_lr;
  return base_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

// ---- training -------------------------------------------------------------

Vocabulary make_vocabulary(std::span<const Example> train, const LabelSpace& labels,
                           MaskStrategy strategy, int min_freq) {
  std::vector<std::string> texts;
  texts.reserve(train.size());
  for (const auto& ex : train) texts.push_back(ex.text);
  return extend_with_label_tokens(build_base_vocab(texts, min_freq), labels, strategy);
}

BatchLoss compute_batch_loss(const ModelParams& params, const ModelConfig& cfg,
                             std::span<const EncodedInput> batch, const Matrix& gold, double lambda,
                             bool train_mode, Pcg32* dropout_rng) {
  const ForwardOptions opts{.train_mode = train_mode, .trim_padding = true, .collect_attention = false};
  const auto out = forward(params, cfg, batch, opts, dropout_rng);
  const Tensor l_mtc = bce_loss(gold, label_logits(out, params, batch));

  std::vector<std::pair<Index, int>> masked;
  std::vector<int> targets;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& in = batch[b];
    if (in.masked_positions.size() != in.mlm_targets.size()) {
      throw ContractError("masked positions and MLM targets disagree in length");
    }
    for (std::size_t k = 0; k < in.masked_positions.size(); ++k) {
      masked.emplace_back(static_cast<Index>(b), in.masked_positions[k]);
      targets.push_back(in.mlm_targets[k]);
    }
  }
  const Tensor l_mlm = mlm_ce_loss(mlm_logits(out, params, masked), targets);

  BatchLoss r;
  r.joint = joint_loss(l_mtc, l_mlm, lambda);
  r.parts.l_mtc = l_mtc.item();
  r.parts.l_mlm = l_mlm.item();
  r.parts.l_joint = r.joint.item();
  r.parts.masked_slots = static_cast<std::int64_t>(masked.size());
  r.parts.total_slots = gold.size();
  return r;
}

namespace {

ModelParams starting_params(const ModelConfig& cfg, std::uint64_t seed, const ModelParams* init) {
  if (init == nullptr) {
    Pcg32 rng = make_stream(seed, Purpose::Init);
    return init_params(cfg, rng);
  }
  ModelParams p = init->clone();
  Pcg32 unused(0, 0);
  const auto expected = init_params(cfg, unused).named();
  const auto got = p.named();
  for (std::size_t i = 0; i < got.size(); ++i) {
    if (got[i].second.rows() != expected[i].second.rows() || got[i].second.cols() != expected[i].second.cols()) {
      throw ContractError("initial parameters do not match the model config at " + got[i].first);
    }
    Tensor t = got[i].second;
    t.set_requires_grad(true);
  }
  return p;
}

std::int64_t steps_per_epoch(std::size_t n, int batch_size) {
  return static_cast<std::int64_t>((n + static_cast<std::size_t>(batch_size) - 1) /
                                   static_cast<std::size_t>(batch_size));
}

[[noreturn]] void abort_non_finite(std::int64_t step, double lr, const LossBreakdown* parts,
                                   const std::string& detail) {
  std::ostringstream os;
  os << "training diverged at step " << step << " (lr " << lr << ")";
  if (parts) os << ": l_mtc=" << parts->l_mtc << " l_mlm=" << parts->l_mlm << " l_joint=" << parts->l_joint;
  if (!detail.empty()) os << ": " << detail;
  throw NumericError(os.str());
}

bool should_log(std::int64_t step, int every) { return step == 1 || step % every == 0; }

}  // namespace

namespace {

// Activations are large and short-lived; keeping them on the heap instead of fresh mmap
// pages avoids paying page faults on every training step.
void keep_large_allocations_on_heap() {
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    mallopt(M_TOP_PAD, 64 << 20);
    return true;
  }();
  (void)done;
}

}  // namespace

TrainResult train(std::span<const Example> dataset, const LabelSpace& labels, const Vocabulary& vocab,
                  ModelConfig model_cfg, const TrainConfig& train_cfg, const ModelParams* init,
                  std::span<const Example> dev, const TrainHooks& hooks) {
  train_cfg.validate();
  keep_large_allocations_on_heap();
  if (dataset.empty()) throw ContractError("train: empty dataset");
  if (!vocab.strategy() || *vocab.strategy() != train_cfg.strategy) {
    throw ContractError("train: vocabulary label tokens do not match the configured mask strategy");
  }
  model_cfg.vocab_size = vocab.size();
  model_cfg.n_labels = static_cast<int>(labels.size());
  model_cfg.strategy = train_cfg.strategy;
  model_cfg.validate();
  for (const auto& ex : dataset) {
    if (ex.labels.size() != labels.size()) throw ContractError("train: example " + ex.id + " has a label vector of the wrong length");
  }

  TrainResult result;
  result.params = starting_params(model_cfg, train_cfg.seed, init);
  std::vector<Tensor> trainable = result.params.all();

  std::vector<std::vector<std::string>> tokens;
  tokens.reserve(dataset.size());
  for (const auto& ex : dataset) tokens.push_back(tokenize(ex.text));
  std::vector<std::string> dev_texts;
  for (const auto& ex : dev) dev_texts.push_back(ex.text);
  const LabelMatrix dev_gold = to_label_matrix(dev, labels.size());

  Pcg32 mask_rng = make_stream(train_cfg.seed, Purpose::LabelMask);
  Pcg32 drop_rng = make_stream(train_cfg.seed, Purpose::Dropout);
  const AdamWOptions adam{.weight_decay = train_cfg.weight_decay};
  AdamWState adam_state;

  const std::int64_t total_steps = steps_per_epoch(dataset.size(), train_cfg.batch_size) * train_cfg.epochs;
  std::int64_t step = 0;
  double best_f1 = -1.0;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  const Index L = static_cast<Index>(labels.size());

  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    mask_rng.shuffle(std::span<std::size_t>(order));
    double epoch_sum = 0.0;
    std::int64_t epoch_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(train_cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(train_cfg.batch_size));
      std::vector<EncodedInput> batch;
      Matrix gold(static_cast<Index>(end - start), L);
      for (std::size_t k = start; k < end; ++k) {
        const auto& ex = dataset[order[k]];
        const auto sample = sample_label_masks(ex.labels, train_cfg.mask_prob, mask_rng, vocab);
        batch.push_back(encode_example(sample, tokens[order[k]], vocab, model_cfg.max_len));
        for (Index i = 0; i < L; ++i) gold(static_cast<Index>(k - start), i) = ex.labels[static_cast<std::size_t>(i)];
      }

      const double lr = lr_at(step, total_steps, train_cfg.warmup_ratio, train_cfg.learning_rate);
      BatchLoss loss;
      try {
        loss = compute_batch_loss(result.params, model_cfg, batch, gold, train_cfg.lambda, true, &drop_rng);
      } catch (const NumericError& e) {
        abort_non_finite(step + 1, lr, nullptr, e.what());
      }
      if (!std::isfinite(loss.parts.l_joint)) abort_non_finite(step + 1, lr, &loss.parts, "");
      try {
        backward(loss.joint);
      } catch (const NumericError& e) {
        abort_non_finite(step + 1, lr, &loss.parts, e.what());
      }
      adamw_step(trainable, adam_state, lr, adam);
      result.params.zero_grad();
      ++step;

      result.history.masked_slots += loss.parts.masked_slots;
      result.history.total_slots += loss.parts.total_slots;
      epoch_sum += loss.parts.l_joint;
      ++epoch_batches;
      if (should_log(step, train_cfg.log_every_batches)) {
        LossBreakdown rec = loss.parts;
        rec.step = step;
        rec.epoch = epoch;
        rec.lr = lr;
        result.history.losses.push_back(rec);
        if (hooks.on_log) hooks.on_log(rec);
      }
    }

    EpochRecord er;
    er.epoch = epoch;
    er.mean_joint = epoch_sum / static_cast<double>(epoch_batches);
    if (!dev.empty()) {
      const Classifier clf{result.params, model_cfg, vocab, labels};
      er.dev = full_report(dev_gold, predict_matrix(clf, dev_texts));
      if (er.dev->micro_f1 > best_f1) {
        best_f1 = er.dev->micro_f1;
        result.best_params = result.params.clone();
        result.best_epoch = epoch;
      }
    }
    result.history.epochs.push_back(er);
    if (hooks.on_epoch) hooks.on_epoch(er);
  }
  if (dev.empty()) {
    result.best_params = result.params.clone();
    result.best_epoch = train_cfg.epochs;
  }
  return result;
}

// ---- text MLM pretraining --------------------------------------------------

EncodedInput encode_text_mlm(std::span<const std::string> tokens, const Vocabulary& vocab, int max_len,
                             double mask_prob, Pcg32& rng, std::int64_t* eligible) {
  if (max_len < 2) throw CapacityError("max_len too small for [CLS] [SEP]");
  EncodedInput in;
  in.ids.push_back(kClsId);
  const std::size_t keep = std::min(tokens.size(), static_cast<std::size_t>(max_len - 2));
  for (std::size_t i = 0; i < keep; ++i) {
    const int id = vocab.id(tokens[i]);
    if (!vocab.is_special(id)) {
      if (eligible) ++*eligible;
      if (rng.bernoulli(mask_prob)) {
        in.masked_positions.push_back(static_cast<int>(in.ids.size()));
        in.mlm_targets.push_back(id);
        in.ids.push_back(kMaskTextId);
        continue;
      }
    }
    in.ids.push_back(id);
  }
  in.ids.push_back(kSepId);
  in.attn_mask.assign(in.ids.size(), 1);
  in.ids.resize(static_cast<std::size_t>(max_len), kPadId);
  in.attn_mask.resize(static_cast<std::size_t>(max_len), 0);
  return in;
}

PretrainResult pretrain_mlm(std::span<const std::string> corpus, const Vocabulary& vocab,
                            ModelConfig model_cfg, const TrainConfig& train_cfg, const TrainHooks& hooks) {
  train_cfg.validate();
  keep_large_allocations_on_heap();
  if (corpus.empty()) throw ContractError("pretrain_mlm: empty corpus");
  model_cfg.vocab_size = vocab.size();
  if (vocab.strategy()) model_cfg.strategy = *vocab.strategy();
  model_cfg.validate();

  PretrainResult result;
  Pcg32 init_rng = make_stream(train_cfg.seed, Purpose::Init);
  result.params = init_params(model_cfg, init_rng);
  std::vector<Tensor> trainable = result.params.all();

  std::vector<std::vector<std::string>> tokens;
  for (const auto& doc : corpus) tokens.push_back(tokenize(doc));

  Pcg32 text_rng = make_stream(train_cfg.seed, Purpose::TextMask);
  Pcg32 drop_rng = make_stream(train_cfg.seed, Purpose::Dropout);
  const AdamWOptions adam{.weight_decay = train_cfg.weight_decay};
  AdamWState adam_state;
  const std::int64_t total_steps = steps_per_epoch(corpus.size(), train_cfg.batch_size) * train_cfg.epochs;
  std::int64_t step = 0;
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    text_rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(train_cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(train_cfg.batch_size));
      std::vector<EncodedInput> batch;
      std::vector<std::pair<Index, int>> masked;
      std::vector<int> targets;
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(encode_text_mlm(tokens[order[k]], vocab, model_cfg.max_len, train_cfg.mask_prob,
                                        text_rng, &result.eligible_tokens));
        const auto& in = batch.back();
        for (std::size_t m = 0; m < in.masked_positions.size(); ++m) {
          masked.emplace_back(static_cast<Index>(k - start), in.masked_positions[m]);
          targets.push_back(in.mlm_targets[m]);
        }
      }
      result.masked_tokens += static_cast<std::int64_t>(masked.size());
      const double lr = lr_at(step, total_steps, train_cfg.warmup_ratio, train_cfg.learning_rate);
      ++step;
      if (masked.empty()) continue;

      const ForwardOptions opts{.train_mode = true, .trim_padding = true, .collect_attention = false};
      Tensor loss;
      try {
        const auto out = forward(result.params, model_cfg, batch, opts, &drop_rng);
        loss = mlm_ce_loss(mlm_logits(out, result.params, masked), targets);
        backward(loss);
      } catch (const NumericError& e) {
        abort_non_finite(step, lr, nullptr, e.what());
      }
      adamw_step(trainable, adam_state, lr, adam);
      result.params.zero_grad();
      if (should_log(step, train_cfg.log_every_batches)) {
        LossBreakdown rec;
        rec.l_mlm = loss.item();
        rec.l_joint = rec.l_mlm;
        rec.step = step;
        rec.epoch = epoch;
        rec.lr = lr;
        result.losses.push_back(rec);
        if (hooks.on_log) hooks.on_log(rec);
      }
    }
  }
  return result;
}

}  // namespace lmmtc
