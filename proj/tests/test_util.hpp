#pragma once

// Shared fixture helpers for the test binaries.

#include <cstdint>
#include <span>
#include <vector>

#include "polymatch/costs.hpp"
#include "polymatch/rng.hpp"

namespace testutil {

inline polymatch::EmbeddingBatch random_batch(int k, int n, int d, std::uint64_t seed) {
  polymatch::Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(k) * static_cast<std::size_t>(n) *
                        static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < v.size(); i += static_cast<std::size_t>(d))
    rng.unit_vector(std::span<double>(v.data() + i, static_cast<std::size_t>(d)));
  return polymatch::EmbeddingBatch::from_values(k, n, d, std::move(v));
}

inline std::vector<std::vector<double>> random_tuple(int k, int d, polymatch::Rng& rng) {
  std::vector<std::vector<double>> z(static_cast<std::size_t>(k),
                                     std::vector<double>(static_cast<std::size_t>(d)));
  for (auto& v : z) rng.unit_vector(v);
  return z;
}

inline std::vector<std::span<const double>> spans_of(
    const std::vector<std::vector<double>>& z) {
  std::vector<std::span<const double>> s;
  s.reserve(z.size());
  for (const auto& v : z) s.emplace_back(v.data(), v.size());
  return s;
}

}  // namespace testutil
