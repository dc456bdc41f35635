#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace metaemb {

// The engine is fully specified by the standard; the distributions below are
// written out so streams match across standard libraries.
using Rng = std::mt19937_64;

// Per-stage seed derived from a master seed and a stage tag by fixed hashing.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t salt);

// Uniform integer in [0, n).
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);
// Uniform real in [0, 1).
double uniform01(Rng& rng);
double uniform(Rng& rng, double lo, double hi);
// Standard normal via Box-Muller.
double normal(Rng& rng, double mean = 0.0, double stddev = 1.0);

template <class T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[uniform_index(rng, i)]);
  }
}

template <class T>
void shuffle(std::vector<T>& items, Rng& rng) {
  shuffle(std::span<T>(items), rng);
}

}  // namespace metaemb
