#include "lmmtc/cli.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "lmmtc/analysis.hpp"
#include "lmmtc/data.hpp"
#include "lmmtc/errors.hpp"
#include "lmmtc/inference.hpp"
#include "lmmtc/io.hpp"
#include "lmmtc/metrics.hpp"
#include "lmmtc/trainer.hpp"

namespace lmmtc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string json_text(const json& j) { return j.dump(2) + "\n"; }

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("lmmtc");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  const char* env = std::getenv("LMMTC_LOG");
  if (env == nullptr || *env == '\0') return;
  const std::string level(env);
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::warn("LMMTC_LOG={} is not one of error, info, debug; using info", level);
  }
}

/// Collects the artifacts of one output directory and writes run_manifest.json last.
class Run {
 public:
  Run(std::string command, std::vector<std::string> argv, const std::string& out_dir)
      : command_(std::move(command)), argv_(std::move(argv)), out_(out_dir), started_(utc_now()) {
    fs::create_directories(out_);
  }

  void config(const std::string& key, const std::string& path) {
    if (!path.empty()) config_paths_[key] = path;
  }
  void seed(std::uint64_t s) { seed_ = s; }

  void write(const std::string& name, const std::string& contents) {
    io::write_file_atomic((out_ / name).string(), contents);
    artifacts_[name] = io::fnv1a_hex(contents);
  }

  void finish() {
    json artifacts = json::object();
    for (const auto& [name, hash] : artifacts_) artifacts[name] = {{"fnv1a64", hash}};
    const json manifest = {{"command", command_},
                           {"argv", argv_},
                           {"config_paths", config_paths_},
                           {"seed", seed_ ? json(*seed_) : json(nullptr)},
                           {"artifacts", artifacts},
                           {"started_at", started_},
                           {"finished_at", utc_now()},
                           {"tool_version", std::string(kToolVersion)}};
    io::write_file_atomic((out_ / "run_manifest.json").string(), json_text(manifest));
  }

 private:
  std::string command_;
  std::vector<std::string> argv_;
  fs::path out_;
  std::string started_;
  json config_paths_ = json::object();
  std::optional<std::uint64_t> seed_;
  std::map<std::string, std::string> artifacts_;
};

void refuse_input_dir(const std::string& out, const std::string& input) {
  if (input.empty() || out.empty()) return;
  std::error_code ec;
  const auto a = fs::weakly_canonical(out, ec);
  const auto b = fs::weakly_canonical(fs::is_directory(input) ? fs::path(input) : fs::path(input).parent_path(), ec);
  if (!ec && a == b) throw ConfigError("--out must differ from the input directory " + input);
}

/// Resolves a data argument that may be a directory (then `default_name` inside it) or a file.
std::string data_file(const std::string& data, const std::string& default_name) {
  if (fs::is_directory(data)) return (fs::path(data) / default_name).string();
  return data;
}

std::string labels_path_for(const std::string& labels, const std::string& data) {
  if (!labels.empty()) return labels;
  const fs::path dir = fs::is_directory(data) ? fs::path(data) : fs::path(data).parent_path();
  return (dir / "labels.json").string();
}

struct LoadedModel {
  Checkpoint checkpoint;
  Vocabulary vocab;
  LabelSpace labels;

  Classifier classifier() const { return {checkpoint.params, checkpoint.config, vocab, labels}; }
};

/// `model` is a run directory (checkpoint.bin, vocab.json, labels.json) or a checkpoint file
/// whose directory holds the other two.
LoadedModel load_model(const std::string& model, const std::string& checkpoint_name) {
  fs::path dir = model;
  fs::path ckpt = dir / checkpoint_name;
  if (!fs::is_directory(dir)) {
    ckpt = dir;
    dir = dir.parent_path();
  }
  return {load_checkpoint(ckpt.string()), Vocabulary::load((dir / "vocab.json").string()),
          LabelSpace::load((dir / "labels.json").string())};
}

std::string predictions_jsonl(std::span<const std::string> ids, std::span<const Prediction> preds) {
  std::string out;
  for (std::size_t i = 0; i < preds.size(); ++i) out += prediction_to_json(ids[i], preds[i]).dump() + "\n";
  return out;
}

struct Evaluation {
  MetricsReport report;
  std::vector<Prediction> predictions;
};

Evaluation evaluate(const Classifier& model, std::span<const Example> examples) {
  std::vector<std::string> texts;
  for (const auto& e : examples) texts.push_back(e.text);
  Evaluation ev;
  ev.predictions = predict_batch(model, texts);
  std::vector<LabelVector> rows;
  for (const auto& p : ev.predictions) rows.push_back(p.labels);
  ev.report = full_report(to_label_matrix(examples, model.labels.size()),
                          to_label_matrix(std::span<const LabelVector>(rows), model.labels.size()));
  return ev;
}

// ---- option groups ----------------------------------------------------------

struct TrainOverrides {
  std::optional<double> lr, warmup_ratio, mask_prob, lambda, weight_decay;
  std::optional<int> batch_size, epochs, log_every;
  std::optional<std::string> strategy;

  void add(CLI::App* app) {
    app->add_option("--lr", lr, "Peak learning rate");
    app->add_option("--batch-size", batch_size, "Examples per batch");
    app->add_option("--epochs", epochs, "Training epochs");
    app->add_option("--warmup-ratio", warmup_ratio, "Fraction of steps spent warming up");
    app->add_option("--mask-prob", mask_prob, "Probability of masking each label slot");
    app->add_option("--lambda", lambda, "Weight of the label-MLM loss");
    app->add_option("--weight-decay", weight_decay, "AdamW decoupled weight decay");
    app->add_option("--log-every", log_every, "Log every N batches");
    app->add_option("--strategy", strategy, "Label token strategy")->check(CLI::IsMember({"diff", "same"}));
  }

  TrainConfig apply(TrainConfig c) const {
    if (lr) c.learning_rate = *lr;
    if (batch_size) c.batch_size = *batch_size;
    if (epochs) c.epochs = *epochs;
    if (warmup_ratio) c.warmup_ratio = *warmup_ratio;
    if (mask_prob) c.mask_prob = *mask_prob;
    if (lambda) c.lambda = *lambda;
    if (weight_decay) c.weight_decay = *weight_decay;
    if (log_every) c.log_every_batches = *log_every;
    if (strategy) c.strategy = parse_mask_strategy(*strategy);
    return c;
  }
};

struct ModelOverrides {
  std::optional<int> d_model, n_heads, n_layers, d_ffn, max_len;
  std::optional<double> dropout;

  void add(CLI::App* app) {
    app->add_option("--d-model", d_model, "Hidden size");
    app->add_option("--n-heads", n_heads, "Attention heads");
    app->add_option("--n-layers", n_layers, "Encoder layers");
    app->add_option("--d-ffn", d_ffn, "Feed-forward size");
    app->add_option("--max-len", max_len, "Maximum sequence length");
    app->add_option("--dropout", dropout, "Dropout probability");
  }

  ModelConfig apply(ModelConfig c) const {
    if (d_model) c.d_model = *d_model;
    if (n_heads) c.n_heads = *n_heads;
    if (n_layers) c.n_layers = *n_layers;
    if (d_ffn) c.d_ffn = *d_ffn;
    if (max_len) c.max_len = *max_len;
    if (dropout) c.dropout = *dropout;
    return c;
  }
};

struct Common {
  std::optional<std::uint64_t> seed;
  std::vector<std::string> argv;
};

TrainConfig resolve_train_config(const std::string& path, const TrainOverrides& ov, const Common& common) {
  TrainConfig c = path.empty() ? TrainConfig{} : TrainConfig::from_json(io::read_json(path));
  c = ov.apply(c);
  if (common.seed) c.seed = *common.seed;
  c.validate();
  return c;
}

ModelConfig resolve_model_config(const std::string& path, const ModelOverrides& ov) {
  ModelConfig c = path.empty() ? ModelConfig{} : ModelConfig::from_json(io::read_json(path));
  return ov.apply(c);
}

TrainHooks logging_hooks(const std::string& tag) {
  TrainHooks hooks;
  hooks.on_log = [tag](const LossBreakdown& b) {
    spdlog::debug("{}step {} epoch {} lr {:.3e} l_mtc {:.6f} l_mlm {:.6f} l_joint {:.6f}", tag, b.step, b.epoch,
                  b.lr, b.l_mtc, b.l_mlm, b.l_joint);
  };
  hooks.on_epoch = [tag](const EpochRecord& e) {
    if (e.dev) {
      spdlog::info("{}epoch {} mean loss {:.6f} dev micro-F1 {:.4f}", tag, e.epoch, e.mean_joint, e.dev->micro_f1);
    } else {
      spdlog::info("{}epoch {} mean loss {:.6f}", tag, e.epoch, e.mean_joint);
    }
  };
  return hooks;
}

// ---- subcommands ------------------------------------------------------------

struct GenDataArgs {
  std::string genspec, out;
  std::optional<int> n_train, n_test, n_labels;
};

void run_gen_data(const GenDataArgs& a, const Common& common) {
  GenSpec gs = a.genspec.empty() ? GenSpec{} : GenSpec::from_json(io::read_json(a.genspec));
  if (a.n_train) gs.n_train = *a.n_train;
  if (a.n_test) gs.n_test = *a.n_test;
  if (common.seed) gs.seed = *common.seed;
  gs.validate();
  const auto corpus = generate_synthetic(gs);
  Run run("gen-data", common.argv, a.out);
  run.config("genspec", a.genspec);
  run.seed(gs.seed);
  run.write("train.jsonl", to_jsonl(corpus.train));
  run.write("test.jsonl", to_jsonl(corpus.test));
  run.write("labels.json", json_text(corpus.labels.to_json()));
  run.write("genspec.json", json_text(gs.to_json()));
  run.finish();
  spdlog::info("wrote {} train / {} test examples to {}", corpus.train.size(), corpus.test.size(), a.out);
}

struct TrainArgs {
  std::string data, labels, train_config, model_config, out, init;
  double dev_ratio = 0.0;
  TrainOverrides train_ov;
  ModelOverrides model_ov;
};

struct TrainingInputs {
  LabelSpace labels;
  std::vector<Example> train, dev, test;
};

TrainingInputs load_training_inputs(const TrainArgs& a, std::uint64_t seed) {
  TrainingInputs in;
  in.labels = LabelSpace::load(labels_path_for(a.labels, a.data));
  in.train = load_jsonl(data_file(a.data, "train.jsonl"), in.labels);
  if (fs::is_directory(a.data) && fs::exists(fs::path(a.data) / "test.jsonl")) {
    in.test = load_jsonl((fs::path(a.data) / "test.jsonl").string(), in.labels);
  }
  if (a.dev_ratio < 0.0 || a.dev_ratio >= 1.0) throw ConfigError("--dev-ratio must lie in [0, 1)");
  if (a.dev_ratio > 0.0) {
    auto [keep, dev] = split(in.train, 1.0 - a.dev_ratio, seed);
    in.train = std::move(keep);
    in.dev = std::move(dev);
  }
  return in;
}

struct TrainedModel {
  TrainResult result;
  Vocabulary vocab;
  ModelConfig config;
  std::optional<MetricsReport> report;
};

TrainedModel fit(const TrainingInputs& in, ModelConfig mc, const TrainConfig& tc, const std::string& init,
                 const std::string& log_tag) {
  TrainedModel tm;
  std::optional<Checkpoint> start;
  if (!init.empty()) {
    auto loaded = load_model(init, "checkpoint.bin");
    const auto init_strategy = loaded.vocab.strategy();
    if (init_strategy != tc.strategy) {
      const std::string have = init_strategy ? std::string(to_string(*init_strategy)) : "no";
      throw ConfigError("--init vocabulary uses the " + have +
                        " strategy but training asks for " + std::string(to_string(tc.strategy)));
    }
    tm.vocab = std::move(loaded.vocab);
    mc = loaded.checkpoint.config;
    start = std::move(loaded.checkpoint);
  } else {
    tm.vocab = make_vocabulary(in.train, in.labels, tc.strategy);
  }
  mc.vocab_size = tm.vocab.size();
  mc.n_labels = static_cast<int>(in.labels.size());
  mc.strategy = tc.strategy;
  tm.result = train(in.train, in.labels, tm.vocab, mc, tc, start ? &start->params : nullptr, in.dev,
                    logging_hooks(log_tag));
  tm.config = mc;
  const auto& eval_set = in.test.empty() ? in.train : in.test;
  tm.report = evaluate(Classifier{tm.result.params, tm.config, tm.vocab, in.labels}, eval_set).report;
  return tm;
}

void run_train(const TrainArgs& a, const Common& common) {
  refuse_input_dir(a.out, a.data);
  const TrainConfig tc = resolve_train_config(a.train_config, a.train_ov, common);
  const ModelConfig mc = resolve_model_config(a.model_config, a.model_ov);
  const auto in = load_training_inputs(a, tc.seed);
  const auto tm = fit(in, mc, tc, a.init, "");

  Run run("train", common.argv, a.out);
  run.config("train_config", a.train_config);
  run.config("model_config", a.model_config);
  run.config("data", a.data);
  if (!a.init.empty()) run.config("init", a.init);
  run.seed(tc.seed);
  run.write("vocab.json", json_text(tm.vocab.to_json()));
  run.write("labels.json", json_text(in.labels.to_json()));
  run.write("train_config.json", json_text(tc.to_json()));
  run.write("model_config.json", json_text(tm.config.to_json()));
  run.write("history.jsonl", tm.result.history.to_jsonl());
  run.write("checkpoint.bin", serialize_checkpoint(tm.result.params, tm.config, tc.seed));
  run.write("best.bin", serialize_checkpoint(tm.result.best_params, tm.config, tc.seed));
  run.write("report.json", json_text(tm.report->to_json()));
  run.finish();
  std::cout << tm.report->to_json().dump() << "\n";
}

void run_compare(const TrainArgs& a, const Common& common) {
  refuse_input_dir(a.out, a.data);
  const TrainConfig base = resolve_train_config(a.train_config, a.train_ov, common);
  const ModelConfig mc = resolve_model_config(a.model_config, a.model_ov);
  const auto in = load_training_inputs(a, base.seed);

  TrainConfig diff_cfg = base;
  diff_cfg.strategy = MaskStrategy::Diff;
  TrainConfig same_cfg = base;
  same_cfg.strategy = MaskStrategy::Same;
  const auto diff = fit(in, mc, diff_cfg, "", "[diff] ");
  const auto same = fit(in, mc, same_cfg, "", "[same] ");

  const json d = diff.report->to_json();
  const json s = same.report->to_json();
  json delta = json::object();
  for (const char* key : {"accuracy", "micro_f1", "micro_jaccard", "hamming_loss"}) {
    delta[key] = d.at(key).get<double>() - s.at(key).get<double>();
  }
  const json comparison = {{"seed", base.seed}, {"diff", d}, {"same", s}, {"delta", delta}};

  Run run("compare-strategies", common.argv, a.out);
  run.config("train_config", a.train_config);
  run.config("model_config", a.model_config);
  run.config("data", a.data);
  run.seed(base.seed);
  run.write("train_config.json", json_text(base.to_json()));
  run.write("model_config.json", json_text(diff.config.to_json()));
  run.write("history_diff.jsonl", diff.result.history.to_jsonl());
  run.write("history_same.jsonl", same.result.history.to_jsonl());
  run.write("comparison.json", json_text(comparison));
  run.finish();
  std::cout << comparison.dump() << "\n";
}

struct PretrainArgs {
  std::string data, labels, train_config, model_config, out;
  TrainOverrides train_ov;
  ModelOverrides model_ov;
};

void run_pretrain(const PretrainArgs& a, const Common& common) {
  refuse_input_dir(a.out, a.data);
  const TrainConfig tc = resolve_train_config(a.train_config, a.train_ov, common);
  ModelConfig mc = resolve_model_config(a.model_config, a.model_ov);
  const auto labels = LabelSpace::load(labels_path_for(a.labels, a.data));
  const auto examples = load_jsonl(data_file(a.data, "train.jsonl"), labels);
  std::vector<std::string> texts;
  for (const auto& e : examples) texts.push_back(e.text);
  const auto vocab = make_vocabulary(examples, labels, tc.strategy);
  mc.vocab_size = vocab.size();
  mc.n_labels = static_cast<int>(labels.size());
  mc.strategy = tc.strategy;

  const auto res = pretrain_mlm(texts, vocab, mc, tc, logging_hooks("[pretrain] "));
  std::string history;
  for (const auto& l : res.losses) history += l.to_json().dump() + "\n";

  Run run("pretrain", common.argv, a.out);
  run.config("train_config", a.train_config);
  run.config("model_config", a.model_config);
  run.config("data", a.data);
  run.seed(tc.seed);
  run.write("vocab.json", json_text(vocab.to_json()));
  run.write("labels.json", json_text(labels.to_json()));
  run.write("train_config.json", json_text(tc.to_json()));
  run.write("model_config.json", json_text(mc.to_json()));
  run.write("history.jsonl", history);
  run.write("checkpoint.bin", serialize_checkpoint(res.params, mc, tc.seed));
  run.finish();
}

struct EvalArgs {
  std::string model, data, out;
  bool best = false;
};

void run_eval(const EvalArgs& a, const Common& common) {
  refuse_input_dir(a.out, a.model);
  const auto m = load_model(a.model, a.best ? "best.bin" : "checkpoint.bin");
  const auto examples = load_jsonl(data_file(a.data, "test.jsonl"), m.labels);
  if (examples.empty()) throw ContractError("eval: no examples in " + a.data);
  const auto ev = evaluate(m.classifier(), examples);
  if (!a.out.empty()) {
    std::vector<std::string> ids;
    for (const auto& e : examples) ids.push_back(e.id);
    Run run("eval", common.argv, a.out);
    run.config("model", a.model);
    run.config("data", a.data);
    run.seed(m.checkpoint.seed);
    run.write("report.json", json_text(ev.report.to_json()));
    run.write("predictions.jsonl", predictions_jsonl(ids, ev.predictions));
    run.finish();
  }
  std::cout << ev.report.to_json().dump() << "\n";
}

struct PredictArgs {
  std::string model, input, out;
  std::vector<std::string> texts;
  bool best = false;
};

/// Reads {"id", "text"} lines; any "labels" field is ignored.
std::pair<std::vector<std::string>, std::vector<std::string>> read_texts(const std::string& path) {
  std::istringstream in(io::read_file(path));
  std::vector<std::string> ids, texts;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      const auto& id = j.at("id");
      ids.push_back(id.is_string() ? id.get<std::string>() : id.dump());
      texts.push_back(j.at("text").get<std::string>());
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return {std::move(ids), std::move(texts)};
}

void run_predict(const PredictArgs& a, const Common& common) {
  if (a.input.empty() == a.texts.empty()) throw ConfigError("predict: give exactly one of --input or --text");
  refuse_input_dir(a.out, a.model);
  const auto m = load_model(a.model, a.best ? "best.bin" : "checkpoint.bin");
  std::vector<std::string> ids, texts;
  if (!a.input.empty()) {
    std::tie(ids, texts) = read_texts(a.input);
  } else {
    texts = a.texts;
    for (std::size_t i = 0; i < texts.size(); ++i) ids.push_back(std::to_string(i));
  }
  const auto preds = predict_batch(m.classifier(), texts);
  const std::string body = predictions_jsonl(ids, preds);
  if (a.out.empty()) {
    std::cout << body;
    return;
  }
  Run run("predict", common.argv, a.out);
  run.config("model", a.model);
  if (!a.input.empty()) run.config("input", a.input);
  run.seed(m.checkpoint.seed);
  run.write("predictions.jsonl", body);
  run.finish();
}

struct AttentionArgs {
  std::string model, data, out;
  std::optional<int> layer;
  std::optional<std::size_t> max_examples;
  bool best = false;
};

void run_attention(const AttentionArgs& a, const Common& common) {
  refuse_input_dir(a.out, a.model);
  const auto m = load_model(a.model, a.best ? "best.bin" : "checkpoint.bin");
  auto examples = load_jsonl(data_file(a.data, "test.jsonl"), m.labels);
  if (a.max_examples && examples.size() > *a.max_examples) examples.resize(*a.max_examples);
  const int n_layers = m.checkpoint.config.n_layers;
  if (a.layer && (*a.layer < 0 || *a.layer >= n_layers)) {
    throw ContractError("--layer must lie in [0, " + std::to_string(n_layers) + ")");
  }
  const auto summary = attention_summary(m.classifier(), examples);
  const auto& names = m.labels.names();

  Run run("analyze attention", common.argv, a.out);
  run.config("model", a.model);
  run.config("data", a.data);
  run.seed(m.checkpoint.seed);
  for (const auto& s : summary) {
    if (a.layer && s.layer != *a.layer) continue;
    const std::string stem = "attention_layer" + std::to_string(s.layer);
    run.write(stem + ".csv", heatmap_csv(s.sum, names));
    run.write(stem + ".svg", heatmap_svg(s.sum, names));
    run.write(stem + "_mean.csv", heatmap_csv(s.mean(), names));
    run.write(stem + "_mean.svg", heatmap_svg(s.mean(), names));
  }
  run.finish();
}

struct CorrelationArgs {
  std::string data, labels, out, method = "pearson";
  std::size_t top_k = 0;
};

void run_correlation(const CorrelationArgs& a, const Common& common) {
  refuse_input_dir(a.out, a.data);
  const auto labels = LabelSpace::load(labels_path_for(a.labels, a.data));
  const auto examples = load_jsonl(data_file(a.data, "train.jsonl"), labels);
  const LabelMatrix y = to_label_matrix(examples, labels.size());
  std::vector<CorrelationMethod> methods;
  if (a.method == "both") {
    methods = {CorrelationMethod::Pearson, CorrelationMethod::Spearman};
  } else {
    methods = {parse_correlation_method(a.method)};
  }

  Run run("analyze correlation", common.argv, a.out);
  run.config("data", a.data);
  json summary = json::object();
  for (const auto method : methods) {
    const auto corr = correlation_matrix(y, method);
    const std::string stem = "correlation_" + std::string(to_string(method));
    run.write(stem + ".csv", heatmap_csv(corr.values, labels.names()));
    run.write(stem + ".svg", heatmap_svg(corr.values, labels.names()));
    json degenerate = json::array();
    for (std::size_t i = 0; i < corr.degenerate.size(); ++i) {
      if (corr.degenerate[i]) degenerate.push_back(labels.name(i));
    }
    json entry = {{"degenerate", degenerate}};
    if (a.top_k > 0) {
      const auto top = top_k_labels(corr, a.top_k);
      const auto k = static_cast<Eigen::Index>(top.size());
      Eigen::MatrixXd sub(k, k);
      std::vector<std::string> sub_names;
      for (Eigen::Index r = 0; r < k; ++r) {
        sub_names.push_back(labels.name(static_cast<std::size_t>(top[static_cast<std::size_t>(r)])));
        for (Eigen::Index c = 0; c < k; ++c) {
          sub(r, c) = corr.values(top[static_cast<std::size_t>(r)], top[static_cast<std::size_t>(c)]);
        }
      }
      const std::string top_stem = stem + "_top" + std::to_string(a.top_k);
      run.write(top_stem + ".csv", heatmap_csv(sub, sub_names));
      run.write(top_stem + ".svg", heatmap_svg(sub, sub_names));
      entry["top_k"] = sub_names;
    }
    summary[std::string(to_string(method))] = entry;
  }
  run.finish();
  std::cout << summary.dump() << "\n";
}

struct MetricsArgs {
  std::string pred, gold, labels;
};

void run_metrics(const MetricsArgs& a) {
  const auto labels = LabelSpace::load(labels_path_for(a.labels, a.gold));
  const auto gold = load_jsonl(a.gold, labels);
  std::map<std::string, LabelVector> predicted;
  std::istringstream in(io::read_file(a.pred));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = a.pred + ":" + std::to_string(line_no);
    LabelVector v(labels.size(), 0);
    std::string id;
    try {
      const auto j = json::parse(line);
      id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      for (const auto& x : j.at("labels")) {
        const auto idx = x.get<std::int64_t>();
        if (idx < 0 || static_cast<std::size_t>(idx) >= labels.size()) {
          throw RangeError(where + ": label index " + std::to_string(idx) + " outside the label space");
        }
        v[static_cast<std::size_t>(idx)] = 1;
      }
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!predicted.emplace(id, std::move(v)).second) throw ParseError(where + ": duplicate id " + id);
  }
  std::vector<LabelVector> rows;
  for (const auto& g : gold) {
    const auto it = predicted.find(g.id);
    if (it == predicted.end()) throw ContractError("metrics: no prediction for gold id " + g.id);
    rows.push_back(it->second);
  }
  if (rows.size() != predicted.size()) throw ContractError("metrics: predictions contain ids missing from gold");
  const auto report = full_report(to_label_matrix(gold, labels.size()),
                                  to_label_matrix(std::span<const LabelVector>(rows), labels.size()));
  std::cout << json_text(report.to_json());
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  if (!spdlog::get("lmmtc")) configure_logging();

  CLI::App app{"Label-mask multi-label text classification toolkit", "lmmtc"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);
  app.fallthrough();
  app.footer(
      "Configuration precedence: built-in defaults, then the JSON file given by --train-config /\n"
      "--model-config / --genspec, then individual flags (flags win). --seed overrides the seed in\n"
      "any config file. Set LMMTC_LOG to error, info or debug to control logging on stderr.");

  Common common;
  for (int i = 0; i < argc; ++i) common.argv.emplace_back(argv[i]);
  app.add_option("--seed", common.seed, "Seed for every random stream of the run");

  std::function<void()> action;

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic corpus with planted label groups");
  gen_cmd->add_option("--genspec", gen.genspec, "Generator spec JSON")->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--n-train", gen.n_train, "Training examples");
  gen_cmd->add_option("--n-test", gen.n_test, "Test examples");
  gen_cmd->callback([&] { action = [&] { run_gen_data(gen, common); }; });

  PretrainArgs pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "Masked-token pretraining on the training texts");
  pre_cmd->add_option("--data", pre.data, "Data directory or train JSONL")->required();
  pre_cmd->add_option("--labels", pre.labels, "Label space JSON (default: labels.json beside the data)");
  pre_cmd->add_option("--train-config", pre.train_config, "TrainConfig JSON")->check(CLI::ExistingFile);
  pre_cmd->add_option("--model-config", pre.model_config, "ModelConfig JSON")->check(CLI::ExistingFile);
  pre_cmd->add_option("--out", pre.out, "Output directory")->required();
  pre.train_ov.add(pre_cmd);
  pre.model_ov.add(pre_cmd);
  pre_cmd->callback([&] { action = [&] { run_pretrain(pre, common); }; });

  TrainArgs tr;
  auto add_train_options = [](CLI::App* cmd, TrainArgs& t) {
    cmd->add_option("--data", t.data, "Data directory (train.jsonl, optional test.jsonl)")->required();
    cmd->add_option("--labels", t.labels, "Label space JSON (default: labels.json beside the data)");
    cmd->add_option("--train-config", t.train_config, "TrainConfig JSON")->check(CLI::ExistingFile);
    cmd->add_option("--model-config", t.model_config, "ModelConfig JSON")->check(CLI::ExistingFile);
    cmd->add_option("--out", t.out, "Output directory")->required();
    cmd->add_option("--dev-ratio", t.dev_ratio, "Hold out this fraction of train as a dev split");
    t.train_ov.add(cmd);
    t.model_ov.add(cmd);
  };
  auto* train_cmd = app.add_subcommand("train", "Fine-tune with label-mask training");
  add_train_options(train_cmd, tr);
  train_cmd->add_option("--init", tr.init, "Run directory or checkpoint to warm-start from");
  train_cmd->callback([&] { action = [&] { run_train(tr, common); }; });

  TrainArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare-strategies", "Train with diff and same label tokens and compare");
  add_train_options(cmp_cmd, cmp);
  cmp_cmd->callback([&] { action = [&] { run_compare(cmp, common); }; });

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trained model on labelled data");
  eval_cmd->add_option("--model", ev.model, "Run directory or checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "Data directory (uses test.jsonl) or JSONL file")->required();
  eval_cmd->add_option("--out", ev.out, "Optional output directory for report and predictions");
  eval_cmd->add_flag("--best", ev.best, "Use best.bin instead of checkpoint.bin");
  eval_cmd->callback([&] { action = [&] { run_eval(ev, common); }; });

  PredictArgs pr;
  auto* pred_cmd = app.add_subcommand("predict", "Predict labels for new texts");
  pred_cmd->add_option("--model", pr.model, "Run directory or checkpoint")->required();
  pred_cmd->add_option("--input", pr.input, "JSONL with id and text fields")->check(CLI::ExistingFile);
  pred_cmd->add_option("--text", pr.texts, "Text to classify (repeatable)");
  pred_cmd->add_option("--out", pr.out, "Output directory (default: print to stdout)");
  pred_cmd->add_flag("--best", pr.best, "Use best.bin instead of checkpoint.bin");
  pred_cmd->callback([&] { action = [&] { run_predict(pr, common); }; });

  auto* an_cmd = app.add_subcommand("analyze", "Attention and label-correlation analysis");
  an_cmd->require_subcommand(1);
  AttentionArgs att;
  auto* att_cmd = an_cmd->add_subcommand("attention", "Label-pair attention heatmaps per layer");
  att_cmd->add_option("--model", att.model, "Run directory or checkpoint")->required();
  att_cmd->add_option("--data", att.data, "Data directory (uses test.jsonl) or JSONL file")->required();
  att_cmd->add_option("--layer", att.layer, "Only this layer (default: all)");
  att_cmd->add_option("--max-examples", att.max_examples, "Use at most this many examples");
  att_cmd->add_option("--out", att.out, "Output directory")->required();
  att_cmd->add_flag("--best", att.best, "Use best.bin instead of checkpoint.bin");
  att_cmd->callback([&] { action = [&] { run_attention(att, common); }; });
  CorrelationArgs corr;
  auto* corr_cmd = an_cmd->add_subcommand("correlation", "Label correlation heatmaps");
  corr_cmd->add_option("--data", corr.data, "Data directory (uses train.jsonl) or JSONL file")->required();
  corr_cmd->add_option("--labels", corr.labels, "Label space JSON (default: labels.json beside the data)");
  corr_cmd->add_option("--method", corr.method, "pearson, spearman or both")
      ->check(CLI::IsMember({"pearson", "spearman", "both"}));
  corr_cmd->add_option("--top-k", corr.top_k, "Also export the k labels with the strongest correlation");
  corr_cmd->add_option("--out", corr.out, "Output directory")->required();
  corr_cmd->callback([&] { action = [&] { run_correlation(corr, common); }; });

  MetricsArgs met;
  auto* met_cmd = app.add_subcommand("metrics", "Score a predictions file against gold labels");
  met_cmd->add_option("--pred", met.pred, "predictions.jsonl")->required()->check(CLI::ExistingFile);
  met_cmd->add_option("--gold", met.gold, "Gold JSONL")->required()->check(CLI::ExistingFile);
  met_cmd->add_option("--labels", met.labels, "Label space JSON (default: labels.json beside gold)");
  met_cmd->callback([&] { action = [&] { run_metrics(met); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    const CLI::App* target = &app;
    while (!target->get_subcommands().empty()) target = target->get_subcommands().front();
    std::cerr << "error: " << e.what() << "\n\n" << target->help();
    return 2;
  }

  try {
    if (action) action();
    return 0;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
  } catch (const json::exception& e) {
    spdlog::error("{}", e.what());
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
  }
  return 1;
}

int dispatch(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"lmmtc"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace lmmtc::cli
