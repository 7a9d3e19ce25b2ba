#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "lmmtc/prng.hpp"

namespace lmmtc {

/// Ordered label names; label i keeps index i everywhere it is persisted.
class LabelSpace {
 public:
  LabelSpace() = default;
  explicit LabelSpace(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t i) const { return names_.at(i); }

  nlohmann::json to_json() const;
  static LabelSpace from_json(const nlohmann::json& j);
  static LabelSpace load(const std::string& path);
  void save(const std::string& path) const;

  bool operator==(const LabelSpace&) const = default;

 private:
  std::vector<std::string> names_;
};

/// 1 = positive label, 0 = negative label.
using LabelVector = std::vector<std::uint8_t>;

enum class MaskStrategy { Diff, Same };
std::string_view to_string(MaskStrategy s);
MaskStrategy parse_mask_strategy(std::string_view s);

enum class LabelState { Yes, No, Mask };
using LabelStateSeq = std::vector<LabelState>;

/// The five per-slot template tokens, in the order they are appended to the vocabulary.
enum class SlotToken { Start = 0, Yes = 1, No = 2, Mask = 3, End = 4 };
inline constexpr int kSlotTokenCount = 5;

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kMaskTextId = 4;
inline constexpr int kBaseSpecialCount = 5;

/// Token spelling of a template token; label_index is 0-based and ignored under Same.
std::string slot_token_name(SlotToken kind, std::size_t label_index, MaskStrategy strategy);

/// Lowercased whitespace tokenization.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  Vocabulary();

  int size() const { return static_cast<int>(tokens_.size()); }
  int base_size() const { return base_size_; }
  bool has_label_tokens() const { return strategy_.has_value(); }
  std::optional<MaskStrategy> strategy() const { return strategy_; }
  /// Number of labels the extension was built for (0 before extension).
  int n_labels() const { return n_labels_; }

  /// Id of a token, [UNK] when absent.
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Id of a slot token for label_index (0-based). Requires label tokens.
  int slot_token_id(SlotToken kind, std::size_t label_index) const;
  /// True for every YES/NO/MASK slot token id.
  bool is_state_token(int id) const;
  bool is_mask_slot_token(int id) const;
  bool is_special(int id) const;

  std::vector<int> encode(std::span<const std::string> tokens) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  bool operator==(const Vocabulary& o) const {
    return tokens_ == o.tokens_ && base_size_ == o.base_size_ && strategy_ == o.strategy_;
  }

 private:
  friend Vocabulary build_base_vocab(std::span<const std::string> corpus, int min_freq);
  friend Vocabulary extend_with_label_tokens(const Vocabulary& vocab, const LabelSpace& labels,
                                             MaskStrategy strategy);
  int append(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int base_size_ = kBaseSpecialCount;
  int n_labels_ = 0;
  std::optional<MaskStrategy> strategy_;
};

/// Five specials, then tokens with frequency >= min_freq in first-appearance order.
Vocabulary build_base_vocab(std::span<const std::string> corpus, int min_freq = 1);

/// Appends LS, YES, NO, MASK, LE per label (Diff) or once (Same). Extending twice is an error.
Vocabulary extend_with_label_tokens(const Vocabulary& vocab, const LabelSpace& labels,
                                    MaskStrategy strategy);

/// [LS-i][state-i][LE-i] for every label in order.
std::vector<std::string> render_template(const LabelStateSeq& states, MaskStrategy strategy);

/// Inverse of render_template; throws ParseError on malformed input.
LabelStateSeq parse_template(std::span<const std::string> tokens, MaskStrategy strategy);

struct EncodedInput {
  std::vector<int> ids;
  std::vector<std::uint8_t> attn_mask;
  std::vector<int> label_state_positions;
  std::vector<int> masked_positions;
  std::vector<int> mlm_targets;

  int real_length() const;
};

/// [CLS] template [SEP] text [SEP] [PAD]..., text tail-truncated to fit max_len.
EncodedInput compose_input(std::span<const std::string> template_tokens,
                           std::span<const std::string> text_tokens, const Vocabulary& vocab,
                           int max_len);

struct LabelMaskSample {
  LabelStateSeq states;
  std::vector<int> masked_labels;  // label indices, ascending
  std::vector<int> targets;        // gold YES/NO token id per masked label
};

/// Independently masks each label slot with probability p.
LabelMaskSample sample_label_masks(const LabelVector& gold, double p, Pcg32& rng,
                                   const Vocabulary& vocab);

LabelStateSeq states_from_gold(const LabelVector& gold);

/// Template + text for one example, with MLM targets attached for masked slots.
EncodedInput encode_example(const LabelMaskSample& sample, std::span<const std::string> text_tokens,
                            const Vocabulary& vocab, int max_len);

/// All-Mask template + text: the inference-time input.
EncodedInput encode_for_inference(std::string_view text, std::size_t n_labels,
                                  const Vocabulary& vocab, int max_len);

}  // namespace lmmtc
