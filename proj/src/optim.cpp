#include "metaemb/optim.hpp"

#include <cmath>

#include "metaemb/errors.hpp"

namespace metaemb {

void sgd_step(std::span<Parameter* const> params, std::span<const Tensor> grads, double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("sgd_step: learning rate must be positive");
  if (params.size() != grads.size()) throw ValidationError("sgd_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = *params[i];
    if (!p.trainable) throw ValidationError("sgd_step: parameter '" + p.name + "' is frozen");
    if (p.value.shape() != grads[i].shape()) {
      throw ShapeError("sgd_step: parameter '" + p.name + "' " + shape_string(p.value.shape()) + " vs gradient " +
                       shape_string(grads[i].shape()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i]->value.values();
    auto g = grads[i].values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] -= lr * g[k];
  }
}

std::uint64_t checksum(std::span<const Parameter> params) {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& p : params) h = checksum_combine(h, checksum(p.value));
  return h;
}

}  // namespace metaemb
