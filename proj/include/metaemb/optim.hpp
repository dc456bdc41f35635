#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "metaemb/tensor.hpp"

namespace metaemb {

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

// param <- param - lr * grad for each pair. Throws ValidationError for
// lr <= 0, a frozen parameter, or a shape mismatch.
void sgd_step(std::span<Parameter* const> params, std::span<const Tensor> grads, double lr);

std::uint64_t checksum(std::span<const Parameter> params);

}  // namespace metaemb
