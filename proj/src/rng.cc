// src/rng.cc
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

#include "rng.h"

#include <cmath>

#include "common.h"

namespace cmm {

namespace {

uint64_t splitmix64(uint64_t &x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t x = seed;
  for (auto &w : s_) w = splitmix64(x);
}

uint64_t Rng::next_u64() {
  uint64_t result = rotl(s_[1] * 5, 7) * 9;
  uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

uint64_t Rng::uniform_int(uint64_t n) {
  CMM_CHECK(n >= 1, InternalError, "uniform_int: n must be >= 1");
  __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
  auto lo = static_cast<uint64_t>(m);
  if (lo < n) {
    uint64_t t = (-n) % n;
    while (lo < t) {
      m = static_cast<__uint128_t>(next_u64()) * n;
      lo = static_cast<uint64_t>(m);
    }
  }
  return static_cast<uint64_t>(m >> 64);
}

double Rng::normal() {
  // u1 in (0,1] so the log is finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

int Rng::poisson(double lambda) {
  CMM_CHECK(lambda >= 0.0 && lambda < 64.0, InternalError,
            "poisson: lambda out of supported range: " << lambda);
  double l = std::exp(-lambda);
  double p = 1.0;
  int k = 0;
  do {
    ++k;
    p *= uniform();
  } while (p > l);
  return k - 1;
}

std::vector<int> Rng::sample_without_replacement(int n, int k, int exclude) {
  std::vector<int> pool;
  pool.reserve(n);
  for (int i = 0; i < n; ++i) {
    if (i != exclude) pool.push_back(i);
  }
  CMM_CHECK(k <= static_cast<int>(pool.size()), InternalError,
            "sample_without_replacement: k=" << k << " exceeds pool size "
                                             << pool.size());
  std::vector<int> out;
  out.reserve(k);
  for (int i = 0; i < k; ++i) {
    auto j = static_cast<size_t>(uniform_int(pool.size()));
    out.push_back(pool[j]);
    pool[j] = pool.back();
    pool.pop_back();
  }
  return out;
}

Rng Rng::substream(uint64_t seed, uint64_t stream) {
  uint64_t x = seed;
  uint64_t a = splitmix64(x);
  uint64_t y = stream ^ 0xd1b54a32d192ed03ULL;
  uint64_t b = splitmix64(y);
  return Rng(a ^ rotl(b, 23));
}

}  // namespace cmm
