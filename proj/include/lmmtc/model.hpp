#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lmmtc/tensor.hpp"
#include "lmmtc/vocab.hpp"

namespace lmmtc {

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 4;
  int d_ffn = 256;
  int max_len = 128;
  double dropout = 0.1;
  int vocab_size = 0;
  int n_labels = 0;
  MaskStrategy strategy = MaskStrategy::Diff;

  /// Throws ConfigError describing the first violated invariant.
  void validate() const;

  nlohmann::json to_json() const;
  /// Missing keys keep their defaults.
  static ModelConfig from_json(const nlohmann::json& j);

  bool operator==(const ModelConfig&) const = default;
};

struct EncoderLayerParams {
  Tensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
  Tensor ln1_gamma, ln1_beta;
  Tensor w_ffn1, b_ffn1, w_ffn2, b_ffn2;
  Tensor ln2_gamma, ln2_beta;
};

struct ModelParams {
  Tensor token_embedding;     // [|V'| × d]
  Tensor position_embedding;  // [max_len × d]
  Tensor emb_ln_gamma, emb_ln_beta;
  std::vector<EncoderLayerParams> layers;
  Tensor w_label, b_label;  // [d × |L|], [1 × |L|]
  Tensor w_mlm, b_mlm;      // [d × |V'|], [1 × |V'|]

  /// Every parameter with its checkpoint name, in manifest order.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> all() const;
  ModelParams clone() const;
  std::size_t scalar_count() const;
  void zero_grad() const;
};

/// Hidden states and attention maps of one forward pass.
struct EncoderOutput {
  Index batch = 0;
  Index seq_len = 0;
  Index n_heads = 0;
  Tensor hidden;  // [batch*seq_len × d]
  /// attentions[layer][b * n_heads + h] is a seq_len × seq_len row-stochastic matrix.
  std::vector<std::vector<Matrix>> attentions;

  /// Mean over heads of one example's attention at a layer.
  Matrix head_mean(std::size_t layer, Index example) const;
  std::vector<Index> shape() const { return {batch, seq_len, hidden.cols()}; }
};

struct ForwardOptions {
  bool train_mode = false;
  /// Run only over the longest real (unpadded) length in the batch. Outputs at real positions
  /// are unaffected; padded rows are simply not materialized.
  bool trim_padding = false;
  bool collect_attention = true;
};

ModelParams init_params(const ModelConfig& config, Pcg32& rng);

/// Encoder forward pass. rng is only drawn from in train_mode (dropout) and may be null otherwise.
EncoderOutput forward(const ModelParams& params, const ModelConfig& config,
                      std::span<const EncodedInput> batch, const ForwardOptions& options,
                      Pcg32* rng = nullptr);

/// O·W_l + b_l read at each example's label state positions: entry (b, i) is the logit of
/// column i at the row of label i's own state token.
Tensor label_logits(const EncoderOutput& output, const ModelParams& params,
                    std::span<const std::vector<int>> positions);
Tensor label_logits(const EncoderOutput& output, const ModelParams& params,
                    std::span<const EncodedInput> batch);

/// O·W_m + b_m at the given (example, position) pairs.
Tensor mlm_logits(const EncoderOutput& output, const ModelParams& params,
                  std::span<const std::pair<Index, int>> masked);

// ---- checkpoint ------------------------------------------------------------

inline constexpr char kCheckpointMagic[] = "LMMTC1";
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::uint64_t seed = 0;
};

/// Serialized checkpoint bytes: magic, u16 version, u32 header length, JSON header, f64 payload.
std::string serialize_checkpoint(const ModelParams& params, const ModelConfig& config,
                                 std::uint64_t seed);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const ModelParams& params, const ModelConfig& config, std::uint64_t seed,
                     const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lmmtc
