// Copyright 2026 The mixpgd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mixpgd {

/// Levenshtein distance: minimal number of insertions, deletions and
/// substitutions turning `ref` into `hyp`.
template <typename T>
std::size_t edit_distance(std::span<const T> ref, std::span<const T> hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

inline std::size_t edit_distance(std::string_view ref, std::string_view hyp) {
  return edit_distance<char>(std::span<const char>(ref.data(), ref.size()),
                             std::span<const char>(hyp.data(), hyp.size()));
}

/// Whitespace-separated tokens.
std::vector<std::string> split_words(std::string_view text);

struct ErrorRates {
  double cer = 0.0;  // percent
  double wer = 0.0;  // percent
  std::size_t n_examples = 0;
  std::size_t total_ref_chars = 0;
  std::size_t total_ref_words = 0;
  std::size_t char_edits = 0;
  std::size_t word_edits = 0;
};

/// Corpus-level rates: total edits over total reference length. Throws on
/// a length mismatch or an empty reference.
ErrorRates error_rates(std::span<const std::string> refs, std::span<const std::string> hyps);

}  // namespace mixpgd
