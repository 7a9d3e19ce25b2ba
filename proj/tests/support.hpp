#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "lmmtc/prng.hpp"
#include "lmmtc/tensor.hpp"

namespace lmmtc::testing {

inline Tensor random_tensor(Index rows, Index cols, Pcg32& rng, double scale = 1.0, bool grad = true) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * (2.0 * rng.uniform() - 1.0);
  return Tensor(m, grad);
}

struct GradCheck {
  double worst = 0.0;  // max |analytic - fd| / (|fd| + 1e-8)
  int checked = 0;
};

/// Central finite differences on up to `coords` randomly chosen scalars of each input.
/// `f` must rebuild the whole computation from the inputs' current values.
inline GradCheck check_gradients(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs, Pcg32& rng,
                                 int coords = 20, double h = 1e-5) {
  for (const auto& t : inputs) t.node()->grad.resize(0, 0);
  backward(f());
  std::vector<Matrix> analytic;
  for (const auto& t : inputs) analytic.push_back(t.grad());

  GradCheck out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor t = inputs[k];
    std::vector<Index> idx(static_cast<std::size_t>(t.size()));
    std::iota(idx.begin(), idx.end(), Index{0});
    rng.shuffle(std::span<Index>(idx));
    if (idx.size() > static_cast<std::size_t>(coords)) idx.resize(static_cast<std::size_t>(coords));
    for (Index i : idx) {
      double& x = t.mutable_value().data()[i];
      const double saved = x;
      x = saved + h;
      const double up = f().item();
      x = saved - h;
      const double down = f().item();
      x = saved;
      const double fd = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[k].data()[i] - fd) / (std::abs(fd) + 1e-8);
      out.worst = std::max(out.worst, err);
      ++out.checked;
    }
  }
  return out;
}

/// Unique scratch directory under the build tree's temp area.
std::string scratch_dir(const std::string& name);

}  // namespace lmmtc::testing
