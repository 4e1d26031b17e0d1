// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace robustseq {

using Rng = std::mt19937_64;

/// Independent generator for a (seed, stream...) tuple. Streams are derived
/// through std::seed_seq so neighbouring ids do not produce correlated draws.
Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {});

/// Uniform double in [0, 1) built from the top 53 bits of one draw.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace robustseq
