#include "metaemb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "metaemb/errors.hpp"
#include "metaemb/ops.hpp"

namespace metaemb {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ValidationError(std::string(what) + ": " + std::to_string(a) + " scores for " + std::to_string(b) + " labels");
  }
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores.size(), labels.size(), "auc");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("auc: labels must be 0 or 1");
    if (std::isnan(scores[i])) throw ValidationError("auc: NaN score");
    pos += static_cast<std::size_t>(labels[i]);
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("auc: needs at least one positive and one negative label");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of positive ranks, tied scores sharing their average rank.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t tied_pos = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) tied_pos += static_cast<std::size_t>(labels[order[j++]]);
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += avg_rank * static_cast<double>(tied_pos);
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double logloss(std::span<const double> preds, std::span<const int> labels) {
  check_lengths(preds.size(), labels.size(), "logloss");
  if (preds.empty()) throw ValidationError("logloss: no predictions");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!(preds[i] >= 0.0 && preds[i] <= 1.0)) throw ValidationError("logloss: prediction outside [0, 1]");
    total += ad::bce(preds[i], labels[i]);
  }
  return total / static_cast<double>(preds.size());
}

double percentage(double value, double anchor) {
  if (!(anchor > 0.0)) throw ValidationError("percentage: anchor must be positive");
  return (value / anchor - 1.0) * 100.0;
}

double per_ad_auc(std::span<const double> scores, std::span<const int> labels, std::span<const std::int32_t> ads) {
  check_lengths(scores.size(), labels.size(), "per_ad_auc");
  check_lengths(ads.size(), labels.size(), "per_ad_auc");
  std::unordered_map<std::int32_t, std::vector<std::size_t>> by_ad;
  std::vector<std::int32_t> order;
  for (std::size_t i = 0; i < ads.size(); ++i) {
    auto [it, fresh] = by_ad.try_emplace(ads[i]);
    if (fresh) order.push_back(ads[i]);
    it->second.push_back(i);
  }
  std::sort(order.begin(), order.end());
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<double> s;
  std::vector<int> l;
  for (auto ad : order) {
    s.clear();
    l.clear();
    for (auto i : by_ad[ad]) {
      s.push_back(scores[i]);
      l.push_back(labels[i]);
    }
    const auto pos = std::count(l.begin(), l.end(), 1);
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(l.size())) continue;
    total += auc(s, l);
    ++counted;
  }
  return counted ? total / static_cast<double>(counted) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace metaemb
