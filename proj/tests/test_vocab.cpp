#include <doctest.h>

#include <numeric>
#include <set>

#include "lmmtc/errors.hpp"
#include "lmmtc/vocab.hpp"

using namespace lmmtc;

namespace {

std::string joined(const std::vector<std::string>& tokens) {
  return std::accumulate(tokens.begin(), tokens.end(), std::string());
}

Vocabulary vocab_for(std::size_t n_labels, MaskStrategy s, const std::vector<std::string>& corpus = {"a b c d e f g"}) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n_labels; ++i) names.push_back("l" + std::to_string(i));
  return extend_with_label_tokens(build_base_vocab(corpus), LabelSpace(names), s);
}

}  // namespace

TEST_CASE("base vocabulary") {
  const std::vector<std::string> corpus = {"a b a"};
  const auto v = build_base_vocab(corpus);
  CHECK(v.size() == 7);
  CHECK(v.id("[PAD]") == 0);
  CHECK(v.id("[UNK]") == 1);
  CHECK(v.id("[CLS]") == 2);
  CHECK(v.id("[SEP]") == 3);
  CHECK(v.id("[MASKTXT]") == 4);
  CHECK(v.id("a") == 5);
  CHECK(v.id("b") == 6);
  CHECK(v.id("zebra") == kUnkId);

  const auto empty = build_base_vocab(std::span<const std::string>{});
  CHECK(empty.size() == 5);

  const std::vector<std::string> freq = {"x y x Z z"};
  const auto v2 = build_base_vocab(freq, 2);
  CHECK(v2.size() == 7);
  CHECK(v2.id("x") == 5);
  CHECK(v2.id("z") == 6);
  CHECK(v2.id("y") == kUnkId);
  CHECK_THROWS_AS(build_base_vocab(freq, 0), ContractError);
}

TEST_CASE("label space") {
  CHECK_THROWS_AS(LabelSpace({"a", "b", "a"}), ConfigError);
  const LabelSpace ls({"x", "y"});
  CHECK(LabelSpace::from_json(ls.to_json()) == ls);
}

TEST_CASE("extension sizes") {
  const std::vector<std::string> corpus = {"p q r"};
  const auto base = build_base_vocab(corpus);
  const LabelSpace three({"a", "b", "c"});
  const auto diff = extend_with_label_tokens(base, three, MaskStrategy::Diff);
  const auto same = extend_with_label_tokens(base, three, MaskStrategy::Same);
  CHECK(diff.size() == base.size() + 15);
  CHECK(same.size() == base.size() + 5);
  CHECK(diff.base_size() == base.size());
  for (int i = 0; i < base.size(); ++i) CHECK(diff.token(i) == base.token(i));

  const auto none = extend_with_label_tokens(base, LabelSpace{}, MaskStrategy::Diff);
  CHECK(none.size() == base.size());

  CHECK_THROWS_AS(extend_with_label_tokens(diff, three, MaskStrategy::Diff), ContractError);
}

TEST_CASE("label token ids are laid out LS, YES, NO, MASK, LE per label") {
  const auto v = vocab_for(3, MaskStrategy::Diff);
  const int base = v.base_size();
  CHECK(v.token(base) == "[LS-1]");
  CHECK(v.token(base + 1) == "[YES-1]");
  CHECK(v.token(base + 2) == "[NO-1]");
  CHECK(v.token(base + 3) == "[MASK-1]");
  CHECK(v.token(base + 4) == "[LE-1]");
  CHECK(v.token(base + 5) == "[LS-2]");
  std::set<int> ids;
  for (std::size_t i = 0; i < 3; ++i) {
    for (int k = 0; k < kSlotTokenCount; ++k) ids.insert(v.slot_token_id(static_cast<SlotToken>(k), i));
  }
  CHECK(ids.size() == 15);

  const auto s = vocab_for(7, MaskStrategy::Same);
  std::set<int> shared;
  for (std::size_t i = 0; i < 7; ++i) {
    for (int k = 0; k < kSlotTokenCount; ++k) shared.insert(s.slot_token_id(static_cast<SlotToken>(k), i));
  }
  CHECK(shared.size() == 5);
}

TEST_CASE("template golden strings") {
  const LabelStateSeq states = {LabelState::Yes, LabelState::No, LabelState::Mask};
  CHECK(joined(render_template(states, MaskStrategy::Diff)) ==
        "[LS-1][YES-1][LE-1][LS-2][NO-2][LE-2][LS-3][MASK-3][LE-3]");
  CHECK(joined(render_template(states, MaskStrategy::Same)) == "[LS][YES][LE][LS][NO][LE][LS][MASK][LE]");
  CHECK(joined(render_template({LabelState::Mask, LabelState::Mask}, MaskStrategy::Diff)) ==
        "[LS-1][MASK-1][LE-1][LS-2][MASK-2][LE-2]");
}

TEST_CASE("template round trip through ids") {
  Pcg32 rng(3, 3);
  for (auto strategy : {MaskStrategy::Diff, MaskStrategy::Same}) {
    const auto v = vocab_for(6, strategy);
    for (int trial = 0; trial < 50; ++trial) {
      LabelStateSeq states;
      for (int i = 0; i < 6; ++i) states.push_back(static_cast<LabelState>(rng.below(3)));
      const auto tokens = render_template(states, strategy);
      const auto ids = v.encode(tokens);
      std::vector<std::string> decoded;
      for (int id : ids) decoded.push_back(v.token(id));
      CHECK(parse_template(decoded, strategy) == states);
    }
  }
  const std::vector<std::string> broken = {"[LS-1]", "[YES-1]"};
  CHECK_THROWS_AS(parse_template(broken, MaskStrategy::Diff), ParseError);
}

TEST_CASE("compose_input layout") {
  const auto v = vocab_for(2, MaskStrategy::Diff, {"w1 w2 w3 w4 w5"});
  const auto tmpl = render_template({LabelState::Yes, LabelState::No}, MaskStrategy::Diff);
  const auto text = tokenize("w1 w2 w3 w4 w5");
  const auto in = compose_input(tmpl, text, v, 16);
  CHECK(in.ids.size() == 16);
  CHECK(in.label_state_positions == std::vector<int>{2, 5});
  CHECK(in.ids[0] == kClsId);
  CHECK(in.ids[7] == kSepId);
  CHECK(in.ids[8] == v.id("w1"));
  CHECK(in.ids[12] == v.id("w5"));
  CHECK(in.ids[13] == kSepId);
  CHECK(in.ids[14] == kPadId);
  CHECK(in.real_length() == 14);

  // Tail truncation keeps the template and fills max_len exactly.
  const auto tight = compose_input(tmpl, text, v, 11);
  CHECK(tight.real_length() == 11);
  CHECK(tight.ids[8] == v.id("w1"));
  CHECK(tight.ids[9] == v.id("w2"));
  CHECK(tight.ids[10] == kSepId);

  const auto empty = compose_input(tmpl, std::span<const std::string>{}, v, 16);
  CHECK(std::accumulate(empty.attn_mask.begin(), empty.attn_mask.end(), 0) == 3 * 2 + 3);
  CHECK(empty.ids[8] == kSepId);
  CHECK(empty.ids[9] == kPadId);

  CHECK_THROWS_AS(compose_input(tmpl, text, v, 8), CapacityError);
}

TEST_CASE("compose_input invariants") {
  Pcg32 rng(17, 1);
  const auto v = vocab_for(4, MaskStrategy::Same, {"a b c d e f g h"});
  for (int trial = 0; trial < 40; ++trial) {
    LabelStateSeq states;
    for (int i = 0; i < 4; ++i) states.push_back(static_cast<LabelState>(rng.below(3)));
    std::vector<std::string> text;
    const int len = rng.range(0, 30);
    for (int i = 0; i < len; ++i) text.push_back(std::string(1, static_cast<char>('a' + rng.below(8))));
    const auto in = compose_input(render_template(states, MaskStrategy::Same), text, v, 24);
    CHECK(in.ids.size() == 24);
    CHECK(std::is_sorted(in.attn_mask.rbegin(), in.attn_mask.rend()));
    CHECK(in.label_state_positions.size() == 4);
    CHECK(std::adjacent_find(in.label_state_positions.begin(), in.label_state_positions.end(),
                             std::greater_equal<int>()) == in.label_state_positions.end());
    for (int p : in.label_state_positions) CHECK(v.is_state_token(in.ids[static_cast<std::size_t>(p)]));
  }
}

TEST_CASE("label masking") {
  const auto v = vocab_for(4, MaskStrategy::Diff);
  const LabelVector gold = {1, 0, 0, 1};
  Pcg32 rng(8, 3);

  const auto none = sample_label_masks(gold, 0.0, rng, v);
  CHECK(none.states == states_from_gold(gold));
  CHECK(none.masked_labels.empty());

  const auto all = sample_label_masks(gold, 1.0, rng, v);
  CHECK(all.states == LabelStateSeq(4, LabelState::Mask));
  CHECK(all.masked_labels == std::vector<int>{0, 1, 2, 3});
  CHECK(all.targets == std::vector<int>{v.slot_token_id(SlotToken::Yes, 0), v.slot_token_id(SlotToken::No, 1),
                                        v.slot_token_id(SlotToken::No, 2), v.slot_token_id(SlotToken::Yes, 3)});

  const auto text = tokenize("a b c");
  const auto in = encode_example(all, text, v, 32);
  CHECK(in.masked_positions == in.label_state_positions);
  for (std::size_t i = 0; i < in.masked_positions.size(); ++i) {
    CHECK(in.ids[static_cast<std::size_t>(in.masked_positions[i])] == v.slot_token_id(SlotToken::Mask, i));
  }
  CHECK(in.mlm_targets == all.targets);

  // 10,000 independent slot draws at p = 0.15.
  const LabelVector many(10000, 1);
  std::vector<std::string> names(10000);
  for (std::size_t i = 0; i < names.size(); ++i) names[i] = "x" + std::to_string(i);
  const auto big = extend_with_label_tokens(build_base_vocab(std::span<const std::string>{}), LabelSpace(names),
                                            MaskStrategy::Same);
  Pcg32 mc(2024, 3);
  const auto draw = sample_label_masks(many, 0.15, mc, big);
  CHECK(std::abs(static_cast<double>(draw.masked_labels.size()) / 10000.0 - 0.15) <= 0.01);

  CHECK_THROWS_AS(sample_label_masks(gold, 1.5, rng, v), ContractError);
}

TEST_CASE("inference input masks every slot") {
  const auto v = vocab_for(3, MaskStrategy::Diff);
  const auto in = encode_for_inference("A b", 3, v, 20);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(in.ids[static_cast<std::size_t>(in.label_state_positions[i])] == v.slot_token_id(SlotToken::Mask, i));
  }
  CHECK(in.ids[11] == v.id("a"));
}

TEST_CASE("vocabulary json round trip") {
  for (auto s : {MaskStrategy::Diff, MaskStrategy::Same}) {
    const auto v = vocab_for(3, s);
    const auto back = Vocabulary::from_json(v.to_json());
    CHECK(back == v);
    CHECK(v.to_json().at("strategy") == std::string(to_string(s)));
  }
  const auto base = build_base_vocab(std::vector<std::string>{"q"});
  CHECK(Vocabulary::from_json(base.to_json()) == base);
  CHECK(base.to_json().at("strategy").is_null());
}
