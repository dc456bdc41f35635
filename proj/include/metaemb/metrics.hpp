#pragma once

#include <cstdint>
#include <span>

namespace metaemb {

// P(s+ > s-) + 0.5 P(s+ = s-) over positive/negative pairs, by rank sum.
// Throws UndefinedMetricError unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

// Mean binary cross-entropy with predictions clipped to [1e-7, 1 - 1e-7].
double logloss(std::span<const double> preds, std::span<const int> labels);

// (value / anchor - 1) * 100. Throws ValidationError for a non-positive anchor.
double percentage(double value, double anchor);

// Mean of per-ad AUCs over ads that have both classes; NaN when none does.
double per_ad_auc(std::span<const double> scores, std::span<const int> labels, std::span<const std::int32_t> ads);

}  // namespace metaemb
