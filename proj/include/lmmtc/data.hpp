#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lmmtc/metrics.hpp"
#include "lmmtc/vocab.hpp"

namespace lmmtc {

struct Example {
  std::string id;
  std::string text;
  LabelVector labels;

  bool operator==(const Example&) const = default;
};

/// Recipe for a synthetic corpus with planted label structure.
///
/// Labels inside one co_group are switched on and off together. Each group and each
/// ungrouped label is an independent activation unit; an example with no active unit is
/// redrawn. Every active label contributes 2-4 distinct words from its own topic list and
/// the remainder of the document is filled with noise words.
struct GenSpec {
  int n_labels = 12;
  std::vector<std::vector<int>> co_groups = {{0, 1}, {2, 3, 4}, {5, 6}};
  std::vector<double> group_probs = {0.25, 0.25, 0.25};
  double singleton_prob = 0.4;
  /// Optional per-label override for ungrouped labels (entries for grouped labels unused).
  std::vector<double> singleton_probs;
  int topic_words_per_label = 4;
  int noise_vocab_size = 200;
  int doc_len_min = 12;
  int doc_len_max = 24;
  int n_train = 2000;
  int n_test = 500;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static GenSpec from_json(const nlohmann::json& j);

  /// Activation probability of label i before the at-least-one redraw.
  double unit_prob_of_label(int label) const;
};

struct SyntheticCorpus {
  std::vector<Example> train;
  std::vector<Example> test;
  LabelSpace labels;
};

SyntheticCorpus generate_synthetic(const GenSpec& spec);

/// Marginal P(label active) after conditioning on at least one active unit.
std::vector<double> expected_marginals(const GenSpec& spec);

std::string topic_word(int label, int k);
std::string noise_word(int k);

/// One JSON object per line: {"id", "text", "labels": [indices]}.
std::vector<Example> load_jsonl(const std::string& path, const LabelSpace& labels);
std::vector<Example> parse_jsonl(const std::string& contents, const LabelSpace& labels,
                                 const std::string& source = "<memory>");
std::string to_jsonl(std::span<const Example> examples);
void save_jsonl(const std::string& path, std::span<const Example> examples);

/// Seeded shuffle, then the first round(ratio*n) examples (clamped so both sides are nonempty
/// when n >= 2) form part_a.
std::pair<std::vector<Example>, std::vector<Example>> split(std::span<const Example> examples,
                                                            double ratio, std::uint64_t seed);

LabelMatrix to_label_matrix(std::span<const Example> examples, std::size_t n_labels);
LabelMatrix to_label_matrix(std::span<const LabelVector> rows, std::size_t n_labels);

}  // namespace lmmtc
