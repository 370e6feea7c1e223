// src/rng.h
//
// Copyright 2026  The cmm authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef CMM_SRC_RNG_H_
#define CMM_SRC_RNG_H_

#include <array>
#include <cstdint>
#include <vector>

namespace cmm {

// xoshiro256** with hand-rolled distributions. std:: distributions are
// implementation-defined, which would break bit-exact corpus generation and
// training resume across standard-library versions; everything random in this
// codebase goes through this class. State is 4x u64 and serializes exactly.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // [0, 1) with 53 random bits.
  double uniform();
  // [lo, hi)
  double uniform(double lo, double hi);
  // Unbiased integer in [0, n), n >= 1 (Lemire's method).
  uint64_t uniform_int(uint64_t n);
  // Standard normal via Box-Muller. No cached spare value, so the state
  // stays exactly the four words below.
  double normal();
  // Poisson by inversion; intended for small lambda.
  int poisson(double lambda);
  // k distinct values from [0, n) excluding `exclude` (pass n for none),
  // in random order.
  std::vector<int> sample_without_replacement(int n, int k, int exclude);

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4> &s) { s_ = s; }

  // Independent substream: seeds a fresh generator from (state seed, stream).
  static Rng substream(uint64_t seed, uint64_t stream);

 private:
  std::array<uint64_t, 4> s_;
};

}  // namespace cmm

#endif  // CMM_SRC_RNG_H_
