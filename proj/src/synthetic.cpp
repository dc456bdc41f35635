#include "metaemb/synthetic.hpp"

#include <cmath>

#include "metaemb/errors.hpp"
#include "metaemb/random.hpp"

namespace metaemb {

void SynthConfig::validate() const {
  if (n_ads == 0 || samples_per_ad == 0 || n_ad_features == 0 || n_user_features == 0 || ad_feature_vocab == 0 ||
      user_feature_vocab == 0) {
    throw ValidationError("synth: counts must be positive");
  }
  if (n_new_ads > n_ads) throw ValidationError("synth: n_new_ads exceeds n_ads");
  if (n_new_ads > 0 && new_ad_samples == 0) throw ValidationError("synth: new_ad_samples must be positive");
  if (feature_scale < 0 || user_scale < 0 || noise_scale < 0) throw ValidationError("synth: negative scale");
}

SynthData synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "synth"));

  std::vector<FieldSpec> fields;
  fields.push_back({"ad", FieldKind::categorical, cfg.n_ads + 1, FieldGroup::ad_id});
  for (std::size_t f = 0; f < cfg.n_ad_features; ++f) {
    fields.push_back({"ad_f" + std::to_string(f), FieldKind::categorical, cfg.ad_feature_vocab + 1,
                      FieldGroup::ad_feature});
  }
  for (std::size_t g = 0; g < cfg.n_user_features; ++g) {
    fields.push_back({"user_f" + std::to_string(g), FieldKind::categorical, cfg.user_feature_vocab + 1,
                      FieldGroup::other_feature});
  }

  SynthTruth truth;
  truth.bias = cfg.bias;
  truth.beta.assign(cfg.n_ad_features, std::vector<double>(cfg.ad_feature_vocab + 1, 0.0));
  truth.gamma.assign(cfg.n_user_features, std::vector<double>(cfg.user_feature_vocab + 1, 0.0));
  for (auto& b : truth.beta)
    for (std::size_t v = 1; v < b.size(); ++v) b[v] = normal(rng, 0.0, cfg.feature_scale);
  for (auto& g : truth.gamma)
    for (std::size_t v = 1; v < g.size(); ++v) g[v] = normal(rng, 0.0, cfg.user_scale);
  truth.tau.assign(cfg.n_ads + 1, 0.0);

  SynthData out{Dataset(Schema(std::move(fields))), {}};
  std::vector<std::string> names{"<unk>"};
  Instance inst;
  inst.values.resize(1 + cfg.n_ad_features + cfg.n_user_features);
  for (std::size_t a = 1; a <= cfg.n_ads; ++a) {
    names.push_back("ad" + std::to_string(a));
    truth.tau[a] = normal(rng, 0.0, cfg.noise_scale);
    double ad_logit = cfg.bias + truth.tau[a];
    inst.ad_id = static_cast<std::int32_t>(a);
    inst.values[0] = {inst.ad_id};
    for (std::size_t f = 0; f < cfg.n_ad_features; ++f) {
      const auto v = static_cast<std::int32_t>(1 + uniform_index(rng, cfg.ad_feature_vocab));
      inst.values[1 + f] = {v};
      ad_logit += truth.beta[f][v];
    }
    const bool is_new = a > cfg.n_ads - cfg.n_new_ads;
    const std::size_t n = is_new ? cfg.new_ad_samples : cfg.samples_per_ad;
    for (std::size_t s = 0; s < n; ++s) {
      double logit = ad_logit;
      for (std::size_t g = 0; g < cfg.n_user_features; ++g) {
        const auto v = static_cast<std::int32_t>(1 + uniform_index(rng, cfg.user_feature_vocab));
        inst.values[1 + cfg.n_ad_features + g] = {v};
        logit += truth.gamma[g][v];
      }
      const double p = 1.0 / (1.0 + std::exp(-logit));
      inst.label = uniform01(rng) < p ? 1 : 0;
      truth.ctr.push_back(p);
      out.data.add(inst);
    }
  }
  out.data.set_ad_names(std::move(names));
  out.truth = std::move(truth);
  return out;
}

}  // namespace metaemb
