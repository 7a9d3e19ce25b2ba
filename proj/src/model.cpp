#include "lmmtc/model.hpp"

#include <algorithm>

#include "lmmtc/errors.hpp"

namespace lmmtc {

namespace {
constexpr double kInitStd = 0.02;
constexpr double kLayerNormEps = 1e-12;
}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (d_model <= 0 || n_heads <= 0 || n_layers < 0 || d_ffn <= 0 || max_len <= 0) {
    fail("sizes must be positive");
  }
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (vocab_size <= kBaseSpecialCount) fail("vocab_size must exceed the base specials");
  if (n_labels < 0) fail("n_labels must be nonnegative");
  if (max_len < 3 * n_labels + 3) {
    fail("max_len " + std::to_string(max_len) + " cannot hold a template for " +
         std::to_string(n_labels) + " labels");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d_model", d_model},       {"n_heads", n_heads},   {"n_layers", n_layers},
          {"d_ffn", d_ffn},           {"max_len", max_len},   {"dropout", dropout},
          {"vocab_size", vocab_size}, {"n_labels", n_labels}, {"strategy", std::string(to_string(strategy))}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.d_ffn = j.value("d_ffn", c.d_ffn);
    c.max_len = j.value("max_len", c.max_len);
    c.dropout = j.value("dropout", c.dropout);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.n_labels = j.value("n_labels", c.n_labels);
    if (j.contains("strategy")) c.strategy = parse_mask_strategy(j.at("strategy").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out = {
      {"token_embedding", token_embedding},
      {"position_embedding", position_embedding},
      {"emb_ln.gamma", emb_ln_gamma},
      {"emb_ln.beta", emb_ln_beta},
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    out.insert(out.end(), {{p + "attn.w_q", l.w_q},       {p + "attn.b_q", l.b_q},
                           {p + "attn.w_k", l.w_k},       {p + "attn.b_k", l.b_k},
                           {p + "attn.w_v", l.w_v},       {p + "attn.b_v", l.b_v},
                           {p + "attn.w_o", l.w_o},       {p + "attn.b_o", l.b_o},
                           {p + "ln1.gamma", l.ln1_gamma}, {p + "ln1.beta", l.ln1_beta},
                           {p + "ffn.w1", l.w_ffn1},      {p + "ffn.b1", l.b_ffn1},
                           {p + "ffn.w2", l.w_ffn2},      {p + "ffn.b2", l.b_ffn2},
                           {p + "ln2.gamma", l.ln2_gamma}, {p + "ln2.beta", l.ln2_beta}});
  }
  out.insert(out.end(), {{"label_head.w", w_label},
                         {"label_head.b", b_label},
                         {"mlm_head.w", w_mlm},
                         {"mlm_head.b", b_mlm}});
  return out;
}

std::vector<Tensor> ModelParams::all() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams c;
  c.token_embedding = token_embedding.clone();
  c.position_embedding = position_embedding.clone();
  c.emb_ln_gamma = emb_ln_gamma.clone();
  c.emb_ln_beta = emb_ln_beta.clone();
  for (const auto& l : layers) {
    c.layers.push_back({l.w_q.clone(), l.b_q.clone(), l.w_k.clone(), l.b_k.clone(), l.w_v.clone(),
                        l.b_v.clone(), l.w_o.clone(), l.b_o.clone(), l.ln1_gamma.clone(),
                        l.ln1_beta.clone(), l.w_ffn1.clone(), l.b_ffn1.clone(), l.w_ffn2.clone(),
                        l.b_ffn2.clone(), l.ln2_gamma.clone(), l.ln2_beta.clone()});
  }
  c.w_label = w_label.clone();
  c.b_label = b_label.clone();
  c.w_mlm = w_mlm.clone();
  c.b_mlm = b_mlm.clone();
  return c;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (auto& [name, t] : named()) n += static_cast<std::size_t>(t.size());
  return n;
}

void ModelParams::zero_grad() const {
  for (auto& [name, t] : named()) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

Matrix EncoderOutput::head_mean(std::size_t layer, Index example) const {
  if (layer >= attentions.size()) throw ContractError("head_mean: layer out of range");
  if (example < 0 || example >= batch) throw ContractError("head_mean: example out of range");
  Matrix m = Matrix::Zero(seq_len, seq_len);
  for (Index h = 0; h < n_heads; ++h) m += attentions[layer][static_cast<std::size_t>(example * n_heads + h)];
  return m / static_cast<double>(n_heads);
}

ModelParams init_params(const ModelConfig& config, Pcg32& rng) {
  config.validate();
  const Index d = config.d_model;
  const Index f = config.d_ffn;
  const Index V = config.vocab_size;
  const Index L = config.n_labels;
  auto weight = [](Index r, Index c) { return Tensor::zeros(r, c, true); };
  auto ones = [](Index c) { return Tensor(Matrix::Ones(1, c), true); };

  ModelParams p;
  p.token_embedding = weight(V, d);
  p.position_embedding = weight(config.max_len, d);
  p.emb_ln_gamma = ones(d);
  p.emb_ln_beta = weight(1, d);
  for (int i = 0; i < config.n_layers; ++i) {
    p.layers.push_back({weight(d, d), weight(1, d), weight(d, d), weight(1, d), weight(d, d),
                        weight(1, d), weight(d, d), weight(1, d), ones(d), weight(1, d),
                        weight(d, f), weight(1, f), weight(f, d), weight(1, d), ones(d),
                        weight(1, d)});
  }
  p.w_label = weight(d, L);
  p.b_label = weight(1, L);
  p.w_mlm = weight(d, V);
  p.b_mlm = weight(1, V);

  // Matrices get N(0, 0.02²) in manifest order; biases and layer-norm parameters keep 0 / 1.
  for (auto& [name, t] : p.named()) {
    if (t.rows() == 1) continue;
    Tensor handle = t;
    Matrix& m = handle.mutable_value();
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, kInitStd);
  }
  return p;
}

EncoderOutput forward(const ModelParams& params, const ModelConfig& config,
                      std::span<const EncodedInput> batch, const ForwardOptions& options,
                      Pcg32* rng) {
  const Index B = static_cast<Index>(batch.size());
  if (B == 0) throw ContractError("forward: empty batch");
  const bool use_dropout = options.train_mode && config.dropout > 0.0;
  if (use_dropout && rng == nullptr) throw ContractError("forward: train mode needs a dropout stream");

  Index T = config.max_len;
  for (const auto& in : batch) {
    if (static_cast<int>(in.ids.size()) != config.max_len || in.attn_mask.size() != in.ids.size()) {
      throw DimensionError("forward: inputs must be padded to max_len " + std::to_string(config.max_len));
    }
  }
  if (options.trim_padding) {
    T = 1;
    for (const auto& in : batch) T = std::max<Index>(T, in.real_length());
  }

  std::vector<int> ids(static_cast<std::size_t>(B * T));
  std::vector<int> pos(static_cast<std::size_t>(B * T));
  std::vector<std::uint8_t> valid(static_cast<std::size_t>(B * T));
  for (Index b = 0; b < B; ++b) {
    for (Index t = 0; t < T; ++t) {
      const auto k = static_cast<std::size_t>(b * T + t);
      ids[k] = batch[static_cast<std::size_t>(b)].ids[static_cast<std::size_t>(t)];
      if (ids[k] < 0 || ids[k] >= config.vocab_size) {
        throw VocabularyError("forward: token id " + std::to_string(ids[k]) +
                              " outside vocabulary of size " + std::to_string(config.vocab_size));
      }
      pos[k] = static_cast<int>(t);
      valid[k] = batch[static_cast<std::size_t>(b)].attn_mask[static_cast<std::size_t>(t)];
    }
  }

  auto maybe_dropout = [&](const Tensor& x) {
    return use_dropout ? dropout(x, config.dropout, *rng) : x;
  };

  Tensor x = add(embedding(params.token_embedding, ids), embedding(params.position_embedding, pos));
  x = maybe_dropout(layer_norm(x, params.emb_ln_gamma, params.emb_ln_beta, kLayerNormEps));

  EncoderOutput out;
  out.batch = B;
  out.seq_len = T;
  out.n_heads = config.n_heads;
  const AttentionGeometry geom{B, T, config.n_heads};
  for (const auto& layer : params.layers) {
    const Tensor q = add_bias(matmul(x, layer.w_q), layer.b_q);
    const Tensor k = add_bias(matmul(x, layer.w_k), layer.b_k);
    const Tensor v = add_bias(matmul(x, layer.w_v), layer.b_v);
    std::vector<Matrix> probs;
    const Tensor ctx = multi_head_attention(q, k, v, geom, valid,
                                            options.collect_attention ? &probs : nullptr);
    if (options.collect_attention) out.attentions.push_back(std::move(probs));
    const Tensor attn = maybe_dropout(add_bias(matmul(ctx, layer.w_o), layer.b_o));
    x = layer_norm(add(x, attn), layer.ln1_gamma, layer.ln1_beta, kLayerNormEps);
    const Tensor hidden = gelu(add_bias(matmul(x, layer.w_ffn1), layer.b_ffn1));
    const Tensor ffn = maybe_dropout(add_bias(matmul(hidden, layer.w_ffn2), layer.b_ffn2));
    x = layer_norm(add(x, ffn), layer.ln2_gamma, layer.ln2_beta, kLayerNormEps);
  }
  out.hidden = x;
  return out;
}

Tensor label_logits(const EncoderOutput& output, const ModelParams& params,
                    std::span<const std::vector<int>> positions) {
  const Index L = params.w_label.cols();
  if (static_cast<Index>(positions.size()) != output.batch) {
    throw ContractError("label_logits: one position list per example required");
  }
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(output.batch * L));
  for (Index b = 0; b < output.batch; ++b) {
    const auto& pos = positions[static_cast<std::size_t>(b)];
    if (static_cast<Index>(pos.size()) != L) {
      throw ContractError("label_logits: expected " + std::to_string(L) + " label positions, got " +
                          std::to_string(pos.size()));
    }
    for (int p : pos) {
      if (p < 0 || p >= output.seq_len) {
        throw ContractError("label_logits: position " + std::to_string(p) + " out of range");
      }
      rows.push_back(b * output.seq_len + p);
    }
  }
  // Only the rows that are read are projected; the result equals reading O·W_l + b_l.
  const Tensor slots = gather_rows(output.hidden, rows);
  return block_diagonal(add_bias(matmul(slots, params.w_label), params.b_label), output.batch);
}

Tensor label_logits(const EncoderOutput& output, const ModelParams& params,
                    std::span<const EncodedInput> batch) {
  std::vector<std::vector<int>> positions;
  positions.reserve(batch.size());
  for (const auto& in : batch) positions.push_back(in.label_state_positions);
  return label_logits(output, params, positions);
}

Tensor mlm_logits(const EncoderOutput& output, const ModelParams& params,
                  std::span<const std::pair<Index, int>> masked) {
  if (masked.empty()) return Tensor::zeros(0, params.w_mlm.cols());
  std::vector<Index> rows;
  rows.reserve(masked.size());
  for (const auto& [b, p] : masked) {
    if (b < 0 || b >= output.batch || p < 0 || p >= output.seq_len) {
      throw ContractError("mlm_logits: masked position out of range");
    }
    rows.push_back(b * output.seq_len + p);
  }
  return add_bias(matmul(gather_rows(output.hidden, rows), params.w_mlm), params.b_mlm);
}

}  // namespace lmmtc
