#include "gradient_suite.hpp"

#include "lmmtc/trainer.hpp"

namespace lmmtc::testing {

namespace {

Tensor project(const Tensor& y, const Matrix& direction) { return sum(mul(y, Tensor(direction))); }

Matrix direction_for(Index rows, Index cols, Pcg32& rng) {
  return random_tensor(rows, cols, rng, 1.0, false).value();
}

}  // namespace

std::vector<NamedCheck> kernel_gradient_suite(std::uint64_t seed, int coords) {
  Pcg32 rng(seed, 9);
  std::vector<NamedCheck> out;
  auto check = [&](const char* name, const std::function<Tensor()>& f, const std::vector<Tensor>& inputs) {
    out.push_back({name, check_gradients(f, inputs, rng, coords)});
  };

  // Every kernel sees at least 20 input scalars, so every check samples at least 20 coordinates.
  auto a = random_tensor(4, 6, rng);
  auto b = random_tensor(6, 5, rng);
  auto c = random_tensor(4, 6, rng);
  auto bias = random_tensor(1, 6, rng);
  const Matrix d45 = direction_for(4, 5, rng);
  const Matrix d46 = direction_for(4, 6, rng);

  check("matmul", [&] { return project(matmul(a, b), d45); }, {a, b});
  check("add", [&] { return project(add(a, c), d46); }, {a, c});
  check("add_bias", [&] { return project(add_bias(a, bias), d46); }, {a, bias});
  check("scale", [&] { return project(scale(a, -1.7), d46); }, {a});
  check("mul", [&] { return project(mul(a, c), d46); }, {a, c});
  check("sum", [&] { return sum(mul(a, a)); }, {a});
  check("mean", [&] { return mean(mul(a, c)); }, {a, c});
  check("gelu", [&] { return project(gelu(scale(a, 3.0)), d46); }, {a});
  check("sigmoid", [&] { return project(sigmoid(scale(a, 3.0)), d46); }, {a});
  check("softmax_rows", [&] { return project(softmax_rows(scale(a, 2.0)), d46); }, {a});

  auto gamma = random_tensor(1, 6, rng);
  auto beta = random_tensor(1, 6, rng);
  check("layer_norm", [&] { return project(layer_norm(a, gamma, beta, 1e-5), d46); }, {a, gamma, beta});

  auto table = random_tensor(6, 4, rng);
  const std::vector<int> ids = {5, 0, 2, 5};
  const Matrix d44 = direction_for(4, 4, rng);
  check("embedding", [&] { return project(embedding(table, ids), d44); }, {table});

  const std::vector<Index> rows = {2, 0, 2};
  const Matrix d36 = direction_for(3, 6, rng);
  check("gather_rows", [&] { return project(gather_rows(a, rows), d36); }, {a});

  // A fixed seed per evaluation keeps the dropout mask identical across perturbations.
  check("dropout", [&] {
    Pcg32 r(5, 4);
    return project(dropout(a, 0.3, r), d46);
  }, {a});

  auto blocks = random_tensor(8, 4, rng);
  const Matrix d24 = direction_for(2, 4, rng);
  check("block_diagonal", [&] { return project(block_diagonal(blocks, 2), d24); }, {blocks});

  auto logits = random_tensor(4, 6, rng, 3.0);
  const Matrix targets = (random_tensor(4, 6, rng, 1.0, false).value().array() > 0.0).cast<double>();
  check("bce_with_logits", [&] { return bce_with_logits(logits, targets); }, {logits});
  const std::vector<int> classes = {3, 0, 5, 1};
  check("cross_entropy", [&] { return cross_entropy(logits, classes); }, {logits});

  // Two examples of length 4, two heads of width 3, with the last key of example 1 padded.
  auto q = random_tensor(8, 6, rng);
  auto k = random_tensor(8, 6, rng);
  auto v = random_tensor(8, 6, rng);
  const std::vector<std::uint8_t> valid = {1, 1, 1, 1, 1, 1, 1, 0};
  const AttentionGeometry geom{2, 4, 2};
  const Matrix d86 = direction_for(8, 6, rng);
  check("multi_head_attention", [&] { return project(multi_head_attention(q, k, v, geom, valid), d86); }, {q, k, v});
  return out;
}

GradCheck joint_loss_gradient_check(int coords) {
  const LabelSpace labels(std::vector<std::string>{"red", "green", "blue"});
  const std::vector<std::string> corpus = {"apple banana cherry date elder fig grape"};
  const auto vocab = extend_with_label_tokens(build_base_vocab(corpus), labels, MaskStrategy::Diff);
  ModelConfig config;
  config.d_model = 8;
  config.n_heads = 2;
  config.n_layers = 2;
  config.d_ffn = 12;
  config.max_len = 20;
  config.dropout = 0.0;
  config.vocab_size = vocab.size();
  config.n_labels = 3;
  Pcg32 init_rng(13, 2);
  const auto params = init_params(config, init_rng);
  // Away from the near-uniform attention of the 0.02 init, where most gradients are tiny.
  Pcg32 spread(31, 1);
  for (auto& t : params.all()) {
    for (Index i = 0; i < t.size(); ++i) t.mutable_value().data()[i] = 0.3 * (2.0 * spread.uniform() - 1.0);
  }

  const auto make = [&](const LabelVector& gold, const std::vector<int>& masked, const std::string& text) {
    LabelMaskSample s;
    s.states = states_from_gold(gold);
    for (int m : masked) {
      const auto i = static_cast<std::size_t>(m);
      s.states[i] = LabelState::Mask;
      s.masked_labels.push_back(m);
      s.targets.push_back(vocab.slot_token_id(gold[i] ? SlotToken::Yes : SlotToken::No, i));
    }
    return encode_example(s, tokenize(text), vocab, config.max_len);
  };
  const std::vector<EncodedInput> batch = {make({1, 0, 1}, {0}, "apple banana"),
                                           make({1, 1, 0}, {1, 2}, "cherry fig grape")};
  Matrix gold(2, 3);
  gold << 1, 0, 1, 1, 1, 0;
  const auto inputs = params.all();
  const auto f = [&] { return compute_batch_loss(params, config, batch, gold, 0.05, false, nullptr).joint; };

  for (const auto& t : inputs) t.node()->grad.resize(0, 0);
  backward(f());
  std::vector<std::pair<std::size_t, Index>> pool;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Index i = 0; i < inputs[k].size(); ++i) pool.emplace_back(k, i);
  }
  Pcg32 rng(77, 1);
  rng.shuffle(std::span<std::pair<std::size_t, Index>>(pool));
  pool.resize(static_cast<std::size_t>(coords));
  GradCheck out;
  for (const auto& [k, i] : pool) {
    const double analytic = inputs[k].grad().data()[i];
    Tensor t = inputs[k];
    double& x = t.mutable_value().data()[i];
    const double saved = x;
    const auto at = [&](double offset) {
      x = saved + offset;
      return f().item();
    };
    // Five-point central stencil: truncation error O(h^4), so h can be large enough that
    // cancellation stays far below the smallest sampled gradients (~1e-8).
    const double h = 1e-3;
    const double fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
    x = saved;
    out.worst = std::max(out.worst, std::abs(analytic - fd) / (std::abs(fd) + 1e-8));
    ++out.checked;
  }
  return out;
}

}  // namespace lmmtc::testing
