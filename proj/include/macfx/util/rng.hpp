#pragma once

#include <cstdint>

namespace macfx::util {

/// SplitMix64 step: advances `state` and returns the next output.
inline std::uint64_t splitmix(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Independent stream seed for (base, tag).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t s = base ^ (tag * 0xd1b54a32d192ed03ULL);
  splitmix(s);
  return splitmix(s);
}

}  // namespace macfx::util
