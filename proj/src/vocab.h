// src/vocab.h
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

#ifndef CMM_SRC_VOCAB_H_
#define CMM_SRC_VOCAB_H_

#include <vector>

#include "common.h"

namespace cmm {

struct ChoiceVector;  // model.h

// Per-language vocabularies over one shared token-id space. The blank id sits
// one past the last real token and never belongs to any language.
struct VocabularyTable {
  int total_size = 0;
  std::vector<std::vector<int>> per_language;  // sorted, nonempty id lists
  int blank_id = 0;

  // Validates the invariants above; throws UsageError.
  void validate() const;
};

// Union of the selected languages' vocabularies, sorted ascending.
std::vector<int> merge_vocab(const VocabularyTable &table,
                             const ChoiceVector &choice);

// Membership mask over logits indices [0, total_size]; blank always allowed.
std::vector<uint8_t> allowed_mask(const std::vector<int> &merged,
                                  int total_size, int blank_id);

// Decode-time logit mask: everything outside allowed+blank is forced to the
// largest-negative sentinel so softmax mass lands on exactly zero.
constexpr real kMaskSentinel = static_cast<real>(-1e30);
void mask_logits(std::vector<real> &logits, const std::vector<uint8_t> &mask);

}  // namespace cmm

#endif  // CMM_SRC_VOCAB_H_
