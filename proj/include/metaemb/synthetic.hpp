#pragma once

#include <cstdint>
#include <vector>

#include "metaemb/dataset.hpp"

namespace metaemb {

// Synthetic CTR data with a known generating process:
//   logit = bias + sum_f beta_f[u_f] + sum_g gamma_g[v_g] + tau_ad
// where u are per-ad categorical features and v per-sample user features.
struct SynthConfig {
  std::size_t n_ads = 200;
  std::size_t samples_per_ad = 400;
  // The last `n_new_ads` ads get `new_ad_samples` samples instead.
  std::size_t n_new_ads = 0;
  std::size_t new_ad_samples = 0;
  std::size_t n_ad_features = 3;
  std::size_t ad_feature_vocab = 8;
  std::size_t n_user_features = 2;
  std::size_t user_feature_vocab = 40;
  double bias = 0.0;
  double feature_scale = 1.0;  // stddev of beta
  double user_scale = 0.5;     // stddev of gamma
  double noise_scale = 0.3;    // stddev of tau
  std::uint64_t seed = 1;

  void validate() const;
};

struct SynthTruth {
  double bias = 0.0;
  std::vector<std::vector<double>> beta;   // [ad feature field][value]
  std::vector<std::vector<double>> gamma;  // [user feature field][value]
  std::vector<double> tau;                 // [ad index]
  std::vector<double> ctr;                 // true click probability per row
};

struct SynthData {
  Dataset data;
  SynthTruth truth;
};

SynthData synth_generate(const SynthConfig& config);

}  // namespace metaemb
