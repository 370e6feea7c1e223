// src/vocab.cc
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

#include "vocab.h"

#include <algorithm>

#include "model.h"

namespace cmm {

void VocabularyTable::validate() const {
  CMM_CHECK(total_size >= 1, UsageError, "vocabulary: total_size must be >= 1");
  CMM_CHECK(blank_id == total_size, UsageError,
            "vocabulary: blank_id must be total_size (last logit index), got "
                << blank_id);
  CMM_CHECK(!per_language.empty(), UsageError, "vocabulary: no languages");
  for (size_t i = 0; i < per_language.size(); ++i) {
    const auto &v = per_language[i];
    CMM_CHECK(!v.empty(), UsageError, "vocabulary: V_" << i << " is empty");
    CMM_CHECK(std::is_sorted(v.begin(), v.end()), UsageError,
              "vocabulary: V_" << i << " must be sorted");
    for (int id : v) {
      CMM_CHECK(id >= 0 && id < total_size, UsageError,
                "vocabulary: token " << id << " of V_" << i
                                     << " outside [0," << total_size << ")");
      CMM_CHECK(id != blank_id, UsageError,
                "vocabulary: blank id " << id << " inside V_" << i);
    }
  }
}

std::vector<int> merge_vocab(const VocabularyTable &table,
                             const ChoiceVector &choice) {
  CMM_CHECK(choice.bits.size() == table.per_language.size(), UsageError,
            "merge_vocab: choice has " << choice.bits.size()
                                       << " languages, table has "
                                       << table.per_language.size());
  std::vector<uint8_t> seen(static_cast<size_t>(table.total_size), 0);
  for (size_t i = 0; i < choice.bits.size(); ++i) {
    if (!choice.bits[i]) continue;
    for (int id : table.per_language[i]) seen[static_cast<size_t>(id)] = 1;
  }
  std::vector<int> merged;
  for (int id = 0; id < table.total_size; ++id) {
    if (seen[static_cast<size_t>(id)]) merged.push_back(id);
  }
  return merged;
}

std::vector<uint8_t> allowed_mask(const std::vector<int> &merged,
                                  int total_size, int blank_id) {
  std::vector<uint8_t> mask(static_cast<size_t>(total_size) + 1, 0);
  for (int id : merged) mask[static_cast<size_t>(id)] = 1;
  mask[static_cast<size_t>(blank_id)] = 1;  // decoding must be able to stop
  return mask;
}

void mask_logits(std::vector<real> &logits, const std::vector<uint8_t> &mask) {
  CMM_CHECK(logits.size() == mask.size(), UsageError,
            "mask_logits: " << logits.size() << " logits vs " << mask.size()
                            << " mask entries");
  for (size_t i = 0; i < logits.size(); ++i) {
    if (!mask[i]) logits[i] = kMaskSentinel;
  }
}

}  // namespace cmm
