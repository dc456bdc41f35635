#pragma once

#include <optional>
#include <string>
#include <vector>

#include "metaemb/model.hpp"
#include "metaemb/tape.hpp"

namespace metaemb {

struct GradCheckConfig {
  std::size_t embedding_dim = 4;
  std::vector<std::size_t> hidden_dims{6, 4};
  std::size_t batch_size = 4;   // K for the meta suite, batch for the HVP suite
  std::size_t instances = 20;   // first-order checks per model
  std::size_t meta_configs = 10;
  double tolerance = 1e-3;
  std::uint64_t seed = 1;
  std::optional<ad::OpKind> fault;  // corrupt one VJP to confirm the checks bite
};

struct GradCheckSuite {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checks = 0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckSuite> suites;
  std::size_t parameters = 0;  // largest differentiated parameter count
  bool pass() const;
};

inline constexpr std::size_t kGradCheckMaxParams = 5000;

// Differentiated parameters of the largest model the check would build.
std::size_t grad_check_parameter_count(const GradCheckConfig& config);

// First-order checks over (theta, Phi, phi) for every variant, double-backprop
// HVP against differences of gradients, and the full meta-gradient against
// central differences over W. Throws ValidationError above the size guard.
GradCheckReport grad_check(const GradCheckConfig& config);

std::optional<ad::OpKind> parse_op_kind(std::string_view name);

}  // namespace metaemb
