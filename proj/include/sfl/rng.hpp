// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sfl {

using Rng = std::mt19937_64;

/// Seed for an independent stream identified by (root, purpose, a, b).
/// Streams never depend on how many draws other streams made.
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t a = 0, std::uint64_t b = 0);

inline Rng make_rng(std::uint64_t root, std::string_view purpose, std::uint64_t a = 0, std::uint64_t b = 0) {
  return Rng(derive_seed(root, purpose, a, b));
}

}  // namespace sfl
