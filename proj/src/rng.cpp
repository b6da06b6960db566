// SPDX-License-Identifier: Apache-2.0
#include "sfl/rng.hpp"

namespace sfl {

namespace {
std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t a, std::uint64_t b) {
  std::uint64_t tag = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : purpose) {
    tag ^= c;
    tag *= 0x100000001b3ULL;
  }
  std::uint64_t h = splitmix(root);
  h = splitmix(h ^ tag);
  h = splitmix(h ^ a);
  h = splitmix(h ^ (b + 0x51ed27ULL));
  return h;
}

}  // namespace sfl
