#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "lmmtc/analysis.hpp"
#include "lmmtc/data.hpp"
#include "lmmtc/io.hpp"
#include "support.hpp"

using namespace lmmtc;

namespace {

std::vector<Example> numbered(int n) {
  std::vector<Example> v;
  for (int i = 0; i < n; ++i) v.push_back({"e" + std::to_string(i), "w" + std::to_string(i), {static_cast<std::uint8_t>(i % 2)}});
  return v;
}

std::multiset<std::string> words_of(const std::string& text) {
  std::multiset<std::string> out;
  std::istringstream in(text);
  for (std::string w; in >> w;) out.insert(w);
  return out;
}

}  // namespace

TEST_CASE("jsonl parsing") {
  const LabelSpace three({"a", "b", "c"});
  const auto ex = parse_jsonl(R"({"id":"1","text":"a b","labels":[0,2]})", three);
  REQUIRE(ex.size() == 1);
  CHECK(ex[0].labels == LabelVector{1, 0, 1});
  CHECK(ex[0].text == "a b");

  const auto empty = parse_jsonl("{\"id\":7,\"text\":\"\",\"labels\":[]}\n\n", three);
  REQUIRE(empty.size() == 1);
  CHECK(empty[0].labels == LabelVector{0, 0, 0});
  CHECK(empty[0].id == "7");

  const std::string bad_range = "{\"id\":\"1\",\"text\":\"x\",\"labels\":[0]}\n{\"id\":\"2\",\"text\":\"x\",\"labels\":[5]}\n";
  try {
    parse_jsonl(bad_range, three, "f.jsonl");
    FAIL("expected RangeError");
  } catch (const RangeError& e) {
    CHECK(std::string(e.what()).find("f.jsonl:2") != std::string::npos);
  }

  const std::string malformed = "{\"id\":\"1\",\"text\":\"x\",\"labels\":[]}\n{\"id\":\n";
  try {
    parse_jsonl(malformed, three, "g.jsonl");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("g.jsonl:2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_jsonl(R"({"id":"1","labels":[]})", three), ParseError);
  CHECK_THROWS_AS(load_jsonl(testing::scratch_dir("data") + "/absent.jsonl", three), IoError);
}

TEST_CASE("split sizes, disjointness and determinism") {
  const auto ten = numbered(10);
  const auto [a, b] = split(ten, 0.7, 3);
  CHECK(a.size() == 7);
  CHECK(b.size() == 3);
  std::multiset<std::string> ids;
  for (const auto& e : a) ids.insert(e.id);
  for (const auto& e : b) ids.insert(e.id);
  std::multiset<std::string> expected;
  for (const auto& e : ten) expected.insert(e.id);
  CHECK(ids == expected);

  const auto [a2, b2] = split(ten, 0.7, 3);
  CHECK(a2 == a);
  CHECK(b2 == b);

  const auto two = numbered(2);
  const auto [c, d] = split(two, 0.999, 1);
  CHECK(c.size() == 1);
  CHECK(d.size() == 1);
  const auto [e, f] = split(two, 0.001, 1);
  CHECK(e.size() == 1);
  CHECK(f.size() == 1);

  CHECK_THROWS_AS(split(ten, 0.0, 1), ContractError);
  CHECK_THROWS_AS(split(ten, 1.0, 1), ContractError);
}

TEST_CASE("genspec validation") {
  GenSpec ok;
  CHECK_NOTHROW(ok.validate());
  GenSpec empty;
  empty.n_labels = 0;
  empty.co_groups.clear();
  empty.group_probs.clear();
  CHECK_THROWS_AS(generate_synthetic(empty), ConfigError);
  GenSpec overlap;
  overlap.co_groups = {{0, 1}, {1, 2}};
  overlap.group_probs = {0.2, 0.2};
  CHECK_THROWS_AS(overlap.validate(), ConfigError);
  GenSpec js;
  js.noise_vocab_size = 17;
  CHECK(GenSpec::from_json(js.to_json()).to_json() == js.to_json());
  auto j = js.to_json();
  j["n_lables"] = 3;
  CHECK_THROWS_AS(GenSpec::from_json(j), ConfigError);
}

TEST_CASE("synthetic corpus structure") {
  GenSpec gs;
  const auto corpus = generate_synthetic(gs);
  REQUIRE(corpus.train.size() == 2000);
  REQUIRE(corpus.test.size() == 500);
  CHECK(corpus.labels.size() == 12);

  for (const auto& split_part : {corpus.train, corpus.test}) {
    for (const auto& ex : split_part) {
      CHECK(std::count(ex.labels.begin(), ex.labels.end(), 1) >= 1);
      const auto words = words_of(ex.text);
      for (int l = 0; l < gs.n_labels; ++l) {
        std::set<std::string> own;
        for (int k = 0; k < gs.topic_words_per_label; ++k) {
          if (words.count(topic_word(l, k))) own.insert(topic_word(l, k));
        }
        if (ex.labels[static_cast<std::size_t>(l)]) {
          CHECK(own.size() >= 2);
          CHECK(own.size() <= 4);
        } else {
          CHECK(own.empty());
        }
      }
    }
  }

  // Planted groups are perfectly correlated.
  const auto y = to_label_matrix(corpus.train, 12);
  const auto r = correlation_matrix(y, CorrelationMethod::Pearson);
  for (const auto& group : gs.co_groups) {
    for (int a : group) {
      for (int b : group) CHECK(std::abs(r.values(a, b) - 1.0) <= 1e-9);
    }
  }

  // Marginals within 0.03 of the analytic values.
  const auto expected = expected_marginals(gs);
  for (int l = 0; l < 12; ++l) {
    const double observed = y.col(l).cast<double>().mean();
    CHECK(std::abs(observed - expected[static_cast<std::size_t>(l)]) <= 0.03);
  }
}

TEST_CASE("generation is deterministic and seed-sensitive") {
  GenSpec gs;
  gs.n_train = 200;
  gs.n_test = 50;
  const auto a = generate_synthetic(gs);
  const auto b = generate_synthetic(gs);
  CHECK(to_jsonl(a.train) == to_jsonl(b.train));
  CHECK(to_jsonl(a.test) == to_jsonl(b.test));
  gs.seed = 2;
  CHECK(to_jsonl(generate_synthetic(gs).train) != to_jsonl(a.train));
}

TEST_CASE("jsonl round trip") {
  GenSpec gs;
  gs.n_train = 100;
  gs.n_test = 0;
  const auto corpus = generate_synthetic(gs);
  const auto path = testing::scratch_dir("data") + "/train.jsonl";
  save_jsonl(path, corpus.train);
  CHECK(load_jsonl(path, corpus.labels) == corpus.train);
  const auto text = io::read_file(path);
  CHECK(text.find('\r') == std::string::npos);
  CHECK(text.back() == '\n');
}

TEST_CASE("label matrix conversion") {
  const std::vector<LabelVector> rows = {{1, 0}, {0, 1}};
  const auto m = to_label_matrix(rows, 2);
  CHECK(m(0, 0) == 1);
  CHECK(m(1, 1) == 1);
  CHECK(m(0, 1) == 0);
  CHECK_THROWS_AS(to_label_matrix(rows, 3), ContractError);
}
