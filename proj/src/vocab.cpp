#include "lmmtc/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>

#include "lmmtc/errors.hpp"
#include "lmmtc/io.hpp"

namespace lmmtc {

// ---- LabelSpace ------------------------------------------------------------

LabelSpace::LabelSpace(std::vector<std::string> names) : names_(std::move(names)) {
  std::unordered_set<std::string> seen;
  for (const auto& n : names_) {
    if (!seen.insert(n).second) throw ConfigError("duplicate label name: " + n);
  }
}

nlohmann::json LabelSpace::to_json() const { return names_; }

LabelSpace LabelSpace::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw FormatError("labels.json must be a JSON array of strings");
  std::vector<std::string> names;
  for (const auto& e : j) {
    if (!e.is_string()) throw FormatError("labels.json must contain only strings");
    names.push_back(e.get<std::string>());
  }
  return LabelSpace(std::move(names));
}

LabelSpace LabelSpace::load(const std::string& path) { return from_json(io::read_json(path)); }

void LabelSpace::save(const std::string& path) const { io::write_json(path, to_json()); }

// ---- strategy --------------------------------------------------------------

std::string_view to_string(MaskStrategy s) { return s == MaskStrategy::Diff ? "diff" : "same"; }

MaskStrategy parse_mask_strategy(std::string_view s) {
  if (s == "diff") return MaskStrategy::Diff;
  if (s == "same") return MaskStrategy::Same;
  throw ConfigError("unknown mask strategy: " + std::string(s));
}

std::string slot_token_name(SlotToken kind, std::size_t label_index, MaskStrategy strategy) {
  static constexpr const char* kStem[] = {"LS", "YES", "NO", "MASK", "LE"};
  std::string name = "[";
  name += kStem[static_cast<int>(kind)];
  if (strategy == MaskStrategy::Diff) name += "-" + std::to_string(label_index + 1);
  name += "]";
  return name;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// ---- Vocabulary ------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASKTXT]"}) append(s);
}

int Vocabulary::append(const std::string& token) {
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

int Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) != 0;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of size " +
                          std::to_string(size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::slot_token_id(SlotToken kind, std::size_t label_index) const {
  if (!strategy_) throw ContractError("vocabulary has no label tokens");
  if (*strategy_ == MaskStrategy::Same) return base_size_ + static_cast<int>(kind);
  if (static_cast<int>(label_index) >= n_labels_) {
    throw ContractError("label index " + std::to_string(label_index) + " outside label space of size " +
                        std::to_string(n_labels_));
  }
  return base_size_ + kSlotTokenCount * static_cast<int>(label_index) + static_cast<int>(kind);
}

namespace {
int slot_kind_of(int id, int base_size) { return (id - base_size) % kSlotTokenCount; }
}  // namespace

bool Vocabulary::is_state_token(int id) const {
  if (!strategy_ || id < base_size_ || id >= size()) return false;
  const int kind = slot_kind_of(id, base_size_);
  return kind == static_cast<int>(SlotToken::Yes) || kind == static_cast<int>(SlotToken::No) ||
         kind == static_cast<int>(SlotToken::Mask);
}

bool Vocabulary::is_mask_slot_token(int id) const {
  return strategy_ && id >= base_size_ && id < size() &&
         slot_kind_of(id, base_size_) == static_cast<int>(SlotToken::Mask);
}

bool Vocabulary::is_special(int id) const { return id < kBaseSpecialCount || id >= base_size_; }

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json j;
  j["tokens"] = tokens_;
  j["base_size"] = base_size_;
  j["strategy"] = strategy_ ? nlohmann::json(std::string(to_string(*strategy_))) : nlohmann::json();
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  try {
    Vocabulary v;
    v.tokens_.clear();
    v.index_.clear();
    for (const auto& t : j.at("tokens")) v.append(t.get<std::string>());
    if (v.index_.size() != v.tokens_.size()) throw FormatError("vocab.json: duplicate tokens");
    v.base_size_ = j.at("base_size").get<int>();
    if (v.base_size_ < kBaseSpecialCount || v.base_size_ > v.size()) {
      throw FormatError("vocab.json: base_size out of range");
    }
    static const char* kSpecials[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASKTXT]"};
    for (int i = 0; i < kBaseSpecialCount; ++i) {
      if (v.tokens_[static_cast<std::size_t>(i)] != kSpecials[i]) {
        throw FormatError("vocab.json: base specials out of place");
      }
    }
    const auto& s = j.at("strategy");
    const int extra = v.size() - v.base_size_;
    if (!s.is_null()) {
      v.strategy_ = parse_mask_strategy(s.get<std::string>());
      if (*v.strategy_ == MaskStrategy::Diff) {
        if (extra % kSlotTokenCount != 0) throw FormatError("vocab.json: label token count");
        v.n_labels_ = extra / kSlotTokenCount;
      } else if (extra != kSlotTokenCount) {
        throw FormatError("vocab.json: shared label token set must have 5 tokens");
      }
    } else if (extra != 0) {
      throw FormatError("vocab.json: tokens beyond base_size without a strategy");
    }
    return v;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("vocab.json: ") + e.what());
  }
}

Vocabulary Vocabulary::load(const std::string& path) { return from_json(io::read_json(path)); }

void Vocabulary::save(const std::string& path) const { io::write_json(path, to_json()); }

Vocabulary build_base_vocab(std::span<const std::string> corpus, int min_freq) {
  if (min_freq < 1) throw ContractError("build_base_vocab: min_freq must be >= 1");
  std::vector<std::string> order;
  std::unordered_map<std::string, int> counts;
  for (const auto& doc : corpus) {
    for (auto& tok : tokenize(doc)) {
      auto [it, fresh] = counts.emplace(tok, 0);
      if (fresh) order.push_back(tok);
      ++it->second;
    }
  }
  Vocabulary v;
  for (const auto& tok : order) {
    if (counts[tok] >= min_freq && !v.contains(tok)) v.append(tok);
  }
  v.base_size_ = v.size();
  return v;
}

Vocabulary extend_with_label_tokens(const Vocabulary& vocab, const LabelSpace& labels,
                                    MaskStrategy strategy) {
  if (vocab.has_label_tokens()) throw ContractError("vocabulary already carries label tokens");
  Vocabulary v = vocab;
  if (labels.empty()) return v;
  const std::size_t groups = strategy == MaskStrategy::Diff ? labels.size() : 1;
  for (std::size_t i = 0; i < groups; ++i) {
    for (int k = 0; k < kSlotTokenCount; ++k) {
      const auto name = slot_token_name(static_cast<SlotToken>(k), i, strategy);
      if (v.contains(name)) throw VocabularyError("label token collides with corpus token: " + name);
      v.append(name);
    }
  }
  v.strategy_ = strategy;
  v.n_labels_ = strategy == MaskStrategy::Diff ? static_cast<int>(labels.size()) : 0;
  return v;
}

// ---- templates -------------------------------------------------------------

std::vector<std::string> render_template(const LabelStateSeq& states, MaskStrategy strategy) {
  std::vector<std::string> out;
  out.reserve(states.size() * 3);
  for (std::size_t i = 0; i < states.size(); ++i) {
    SlotToken state = SlotToken::Mask;
    if (states[i] == LabelState::Yes) state = SlotToken::Yes;
    if (states[i] == LabelState::No) state = SlotToken::No;
    out.push_back(slot_token_name(SlotToken::Start, i, strategy));
    out.push_back(slot_token_name(state, i, strategy));
    out.push_back(slot_token_name(SlotToken::End, i, strategy));
  }
  return out;
}

LabelStateSeq parse_template(std::span<const std::string> tokens, MaskStrategy strategy) {
  if (tokens.size() % 3 != 0) throw ParseError("template length is not a multiple of 3");
  LabelStateSeq states;
  for (std::size_t i = 0; i < tokens.size() / 3; ++i) {
    if (tokens[3 * i] != slot_token_name(SlotToken::Start, i, strategy) ||
        tokens[3 * i + 2] != slot_token_name(SlotToken::End, i, strategy)) {
      throw ParseError("malformed slot " + std::to_string(i + 1));
    }
    const auto& mid = tokens[3 * i + 1];
    if (mid == slot_token_name(SlotToken::Yes, i, strategy)) {
      states.push_back(LabelState::Yes);
    } else if (mid == slot_token_name(SlotToken::No, i, strategy)) {
      states.push_back(LabelState::No);
    } else if (mid == slot_token_name(SlotToken::Mask, i, strategy)) {
      states.push_back(LabelState::Mask);
    } else {
      throw ParseError("unknown state token " + mid);
    }
  }
  return states;
}

int EncodedInput::real_length() const {
  return static_cast<int>(std::count(attn_mask.begin(), attn_mask.end(), std::uint8_t{1}));
}

EncodedInput compose_input(std::span<const std::string> template_tokens,
                           std::span<const std::string> text_tokens, const Vocabulary& vocab,
                           int max_len) {
  const int tlen = static_cast<int>(template_tokens.size());
  if (tlen + 3 > max_len) {
    throw CapacityError("template of " + std::to_string(tlen) + " tokens does not fit max_len " +
                        std::to_string(max_len));
  }
  EncodedInput in;
  in.ids.reserve(static_cast<std::size_t>(max_len));
  in.ids.push_back(kClsId);
  for (int i = 0; i < tlen; ++i) {
    const int id = vocab.id(template_tokens[static_cast<std::size_t>(i)]);
    if (!vocab.is_special(id) || id < kBaseSpecialCount) {
      throw VocabularyError("template token missing from vocabulary: " +
                            template_tokens[static_cast<std::size_t>(i)]);
    }
    if (vocab.is_state_token(id)) {
      in.label_state_positions.push_back(static_cast<int>(in.ids.size()));
      if (vocab.is_mask_slot_token(id)) in.masked_positions.push_back(static_cast<int>(in.ids.size()));
    }
    in.ids.push_back(id);
  }
  in.ids.push_back(kSepId);
  const std::size_t room = static_cast<std::size_t>(max_len - tlen - 3);
  const std::size_t keep = std::min(room, text_tokens.size());
  for (std::size_t i = 0; i < keep; ++i) in.ids.push_back(vocab.id(text_tokens[i]));
  in.ids.push_back(kSepId);
  in.attn_mask.assign(in.ids.size(), 1);
  in.ids.resize(static_cast<std::size_t>(max_len), kPadId);
  in.attn_mask.resize(static_cast<std::size_t>(max_len), 0);
  return in;
}

LabelStateSeq states_from_gold(const LabelVector& gold) {
  LabelStateSeq s;
  s.reserve(gold.size());
  for (auto bit : gold) s.push_back(bit ? LabelState::Yes : LabelState::No);
  return s;
}

LabelMaskSample sample_label_masks(const LabelVector& gold, double p, Pcg32& rng,
                                   const Vocabulary& vocab) {
  if (!(p >= 0.0 && p <= 1.0)) throw ContractError("mask probability must lie in [0, 1]");
  LabelMaskSample s;
  s.states = states_from_gold(gold);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (rng.bernoulli(p)) {
      s.states[i] = LabelState::Mask;
      s.masked_labels.push_back(static_cast<int>(i));
      s.targets.push_back(vocab.slot_token_id(gold[i] ? SlotToken::Yes : SlotToken::No, i));
    }
  }
  return s;
}

EncodedInput encode_example(const LabelMaskSample& sample, std::span<const std::string> text_tokens,
                            const Vocabulary& vocab, int max_len) {
  const auto strategy = vocab.strategy();
  if (!strategy) throw ContractError("vocabulary has no label tokens");
  const auto tmpl = render_template(sample.states, *strategy);
  EncodedInput in = compose_input(tmpl, text_tokens, vocab, max_len);
  in.mlm_targets = sample.targets;
  return in;
}

EncodedInput encode_for_inference(std::string_view text, std::size_t n_labels,
                                  const Vocabulary& vocab, int max_len) {
  const auto strategy = vocab.strategy();
  if (!strategy) throw ContractError("vocabulary has no label tokens");
  const LabelStateSeq states(n_labels, LabelState::Mask);
  const auto tokens = tokenize(text);
  return compose_input(render_template(states, *strategy), tokens, vocab, max_len);
}

}  // namespace lmmtc
