#include "lmmtc/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "lmmtc/errors.hpp"
#include "lmmtc/io.hpp"
#include "lmmtc/prng.hpp"

namespace lmmtc {

void GenSpec::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("genspec: " + m); };
  if (n_labels <= 0) fail("label set is empty");
  if (group_probs.size() != co_groups.size()) fail("one probability per co_group required");
  std::vector<int> owner(static_cast<std::size_t>(n_labels), -1);
  for (std::size_t g = 0; g < co_groups.size(); ++g) {
    if (co_groups[g].empty()) fail("empty co_group");
    for (int l : co_groups[g]) {
      if (l < 0 || l >= n_labels) fail("co_group label out of range");
      if (owner[static_cast<std::size_t>(l)] != -1) fail("co_groups overlap");
      owner[static_cast<std::size_t>(l)] = static_cast<int>(g);
    }
  }
  auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!std::all_of(group_probs.begin(), group_probs.end(), prob_ok) || !prob_ok(singleton_prob)) {
    fail("probabilities must lie in [0, 1]");
  }
  if (!singleton_probs.empty()) {
    if (static_cast<int>(singleton_probs.size()) != n_labels) fail("singleton_probs needs one entry per label");
    if (!std::all_of(singleton_probs.begin(), singleton_probs.end(), prob_ok)) fail("probabilities must lie in [0, 1]");
  }
  double any = 0.0;
  for (int l = 0; l < n_labels; ++l) any = std::max(any, unit_prob_of_label(l));
  if (any <= 0.0) fail("no label can ever be active");
  if (topic_words_per_label < 4) fail("topic_words_per_label must be >= 4");
  if (noise_vocab_size < 1) fail("noise_vocab_size must be >= 1");
  if (doc_len_min < 0 || doc_len_max < doc_len_min) fail("invalid doc_len range");
  if (n_train < 0 || n_test < 0) fail("split sizes must be nonnegative");
}

double GenSpec::unit_prob_of_label(int label) const {
  for (std::size_t g = 0; g < co_groups.size(); ++g) {
    if (std::find(co_groups[g].begin(), co_groups[g].end(), label) != co_groups[g].end()) {
      return group_probs[g];
    }
  }
  return singleton_probs.empty() ? singleton_prob : singleton_probs[static_cast<std::size_t>(label)];
}

nlohmann::json GenSpec::to_json() const {
  return {{"n_labels", n_labels},
          {"co_groups", co_groups},
          {"group_probs", group_probs},
          {"singleton_prob", singleton_prob},
          {"singleton_probs", singleton_probs},
          {"topic_words_per_label", topic_words_per_label},
          {"noise_vocab_size", noise_vocab_size},
          {"doc_len_min", doc_len_min},
          {"doc_len_max", doc_len_max},
          {"n_train", n_train},
          {"n_test", n_test},
          {"seed", seed}};
}

GenSpec GenSpec::from_json(const nlohmann::json& j) {
  static const char* kKeys[] = {"n_labels",   "co_groups",   "group_probs", "singleton_prob",
                                "singleton_probs", "topic_words_per_label", "noise_vocab_size",
                                "doc_len_min", "doc_len_max", "n_train", "n_test", "seed"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys)) {
      throw ConfigError("genspec: unknown key '" + key + "'");
    }
  }
  GenSpec s;
  try {
    s.n_labels = j.value("n_labels", s.n_labels);
    s.co_groups = j.value("co_groups", s.co_groups);
    s.group_probs = j.value("group_probs", s.group_probs);
    s.singleton_prob = j.value("singleton_prob", s.singleton_prob);
    s.singleton_probs = j.value("singleton_probs", s.singleton_probs);
    s.topic_words_per_label = j.value("topic_words_per_label", s.topic_words_per_label);
    s.noise_vocab_size = j.value("noise_vocab_size", s.noise_vocab_size);
    s.doc_len_min = j.value("doc_len_min", s.doc_len_min);
    s.doc_len_max = j.value("doc_len_max", s.doc_len_max);
    s.n_train = j.value("n_train", s.n_train);
    s.n_test = j.value("n_test", s.n_test);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("genspec: ") + e.what());
  }
  return s;
}

std::string topic_word(int label, int k) {
  return "t" + std::to_string(label) + "w" + std::to_string(k);
}

std::string noise_word(int k) { return "n" + std::to_string(k); }

namespace {

struct Unit {
  std::vector<int> labels;
  double prob;
};

std::vector<Unit> activation_units(const GenSpec& spec) {
  std::vector<Unit> units;
  std::vector<bool> grouped(static_cast<std::size_t>(spec.n_labels), false);
  for (std::size_t g = 0; g < spec.co_groups.size(); ++g) {
    units.push_back({spec.co_groups[g], spec.group_probs[g]});
    for (int l : spec.co_groups[g]) grouped[static_cast<std::size_t>(l)] = true;
  }
  for (int l = 0; l < spec.n_labels; ++l) {
    if (!grouped[static_cast<std::size_t>(l)]) units.push_back({{l}, spec.unit_prob_of_label(l)});
  }
  return units;
}

Example make_example(const GenSpec& spec, const std::vector<Unit>& units, Pcg32& rng,
                     const std::string& id) {
  Example ex;
  ex.id = id;
  ex.labels.assign(static_cast<std::size_t>(spec.n_labels), 0);
  bool any = false;
  while (!any) {
    std::fill(ex.labels.begin(), ex.labels.end(), 0);
    for (const auto& u : units) {
      if (rng.bernoulli(u.prob)) {
        any = true;
        for (int l : u.labels) ex.labels[static_cast<std::size_t>(l)] = 1;
      }
    }
  }
  std::vector<std::string> words;
  std::vector<int> pool(static_cast<std::size_t>(spec.topic_words_per_label));
  for (int l = 0; l < spec.n_labels; ++l) {
    if (!ex.labels[static_cast<std::size_t>(l)]) continue;
    std::iota(pool.begin(), pool.end(), 0);
    rng.shuffle(std::span<int>(pool));
    const int k = rng.range(2, 4);
    for (int i = 0; i < k; ++i) words.push_back(topic_word(l, pool[static_cast<std::size_t>(i)]));
  }
  const int target = rng.range(spec.doc_len_min, spec.doc_len_max);
  while (static_cast<int>(words.size()) < target) {
    words.push_back(noise_word(static_cast<int>(rng.below(static_cast<std::uint32_t>(spec.noise_vocab_size)))));
  }
  rng.shuffle(std::span<std::string>(words));
  std::ostringstream text;
  for (std::size_t i = 0; i < words.size(); ++i) text << (i ? " " : "") << words[i];
  ex.text = text.str();
  return ex;
}

}  // namespace

SyntheticCorpus generate_synthetic(const GenSpec& spec) {
  spec.validate();
  const auto units = activation_units(spec);
  Pcg32 rng = make_stream(spec.seed, Purpose::DataGen);
  SyntheticCorpus c;
  std::vector<std::string> names;
  for (int l = 0; l < spec.n_labels; ++l) names.push_back("label_" + std::to_string(l));
  c.labels = LabelSpace(std::move(names));
  for (int i = 0; i < spec.n_train; ++i) c.train.push_back(make_example(spec, units, rng, "train-" + std::to_string(i)));
  for (int i = 0; i < spec.n_test; ++i) c.test.push_back(make_example(spec, units, rng, "test-" + std::to_string(i)));
  return c;
}

std::vector<double> expected_marginals(const GenSpec& spec) {
  spec.validate();
  double p_none = 1.0;
  for (const auto& u : activation_units(spec)) p_none *= 1.0 - u.prob;
  std::vector<double> m;
  for (int l = 0; l < spec.n_labels; ++l) m.push_back(spec.unit_prob_of_label(l) / (1.0 - p_none));
  return m;
}

std::vector<Example> parse_jsonl(const std::string& contents, const LabelSpace& labels,
                                 const std::string& source) {
  std::vector<Example> out;
  std::istringstream in(contents);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    Example ex;
    try {
      const auto& id = j.at("id");
      ex.id = id.is_string() ? id.get<std::string>() : id.dump();
      ex.text = j.at("text").get<std::string>();
      ex.labels.assign(labels.size(), 0);
      for (const auto& v : j.at("labels")) {
        const auto idx = v.get<std::int64_t>();
        if (idx < 0 || static_cast<std::size_t>(idx) >= labels.size()) {
          throw RangeError(where + ": label index " + std::to_string(idx) +
                           " outside label space of size " + std::to_string(labels.size()));
        }
        ex.labels[static_cast<std::size_t>(idx)] = 1;
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<Example> load_jsonl(const std::string& path, const LabelSpace& labels) {
  return parse_jsonl(io::read_file(path), labels, path);
}

std::string to_jsonl(std::span<const Example> examples) {
  std::string out;
  for (const auto& ex : examples) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < ex.labels.size(); ++i) {
      if (ex.labels[i]) idx.push_back(static_cast<int>(i));
    }
    nlohmann::json j = {{"id", ex.id}, {"text", ex.text}, {"labels", idx}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_jsonl(const std::string& path, std::span<const Example> examples) {
  io::write_file_atomic(path, to_jsonl(examples));
}

std::pair<std::vector<Example>, std::vector<Example>> split(std::span<const Example> examples,
                                                            double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ContractError("split: ratio must lie in (0, 1)");
  const std::size_t n = examples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Pcg32 rng = make_stream(seed, Purpose::DataGen);
  rng.shuffle(std::span<std::size_t>(order));
  auto cut = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  if (n >= 2) cut = std::clamp<std::size_t>(cut, 1, n - 1);
  std::pair<std::vector<Example>, std::vector<Example>> parts;
  for (std::size_t i = 0; i < n; ++i) {
    (i < cut ? parts.first : parts.second).push_back(examples[order[i]]);
  }
  return parts;
}

LabelMatrix to_label_matrix(std::span<const LabelVector> rows, std::size_t n_labels) {
  LabelMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_labels));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != n_labels) throw ContractError("label vector length does not match |L|");
    for (std::size_t c = 0; c < n_labels; ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c] ? 1 : 0;
    }
  }
  return m;
}

LabelMatrix to_label_matrix(std::span<const Example> examples, std::size_t n_labels) {
  std::vector<LabelVector> rows;
  rows.reserve(examples.size());
  for (const auto& ex : examples) rows.push_back(ex.labels);
  return to_label_matrix(rows, n_labels);
}

}  // namespace lmmtc
