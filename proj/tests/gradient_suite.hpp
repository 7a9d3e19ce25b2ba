#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "support.hpp"

namespace lmmtc::testing {

struct NamedCheck {
  std::string name;
  GradCheck result;
};

/// Finite-difference checks of every differentiable kernel, each output projected onto a
/// random direction so that every entry contributes.
std::vector<NamedCheck> kernel_gradient_suite(std::uint64_t seed, int coords = 20);

/// Joint loss (label BCE + weighted label-token CE, dropout off) of a two-example batch on a
/// small encoder with parameters spread over ±0.3, checked on `coords` coordinates drawn from
/// the pool of all parameters with a five-point central difference.
GradCheck joint_loss_gradient_check(int coords = 40);

}  // namespace lmmtc::testing
