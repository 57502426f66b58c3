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

#include "mixpgd/metrics.hpp"

#include <sstream>
#include <stdexcept>

namespace mixpgd {

std::vector<std::string> split_words(std::string_view text) {
  std::istringstream ss{std::string(text)};
  std::vector<std::string> words;
  for (std::string w; ss >> w;) words.push_back(std::move(w));
  return words;
}

ErrorRates error_rates(std::span<const std::string> refs, std::span<const std::string> hyps) {
  if (refs.size() != hyps.size()) {
    throw std::invalid_argument("error_rates: " + std::to_string(refs.size()) +
                                " references vs " + std::to_string(hyps.size()) +
                                " hypotheses");
  }
  ErrorRates r;
  r.n_examples = refs.size();
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].empty()) {
      throw std::invalid_argument("error_rates: reference " + std::to_string(i) + " is empty");
    }
    r.char_edits += edit_distance(refs[i], hyps[i]);
    r.total_ref_chars += refs[i].size();
    const auto rw = split_words(refs[i]);
    const auto hw = split_words(hyps[i]);
    r.word_edits += edit_distance<std::string>(rw, hw);
    r.total_ref_words += rw.size();
  }
  if (r.total_ref_chars > 0) r.cer = 100.0 * static_cast<double>(r.char_edits) / r.total_ref_chars;
  if (r.total_ref_words > 0) r.wer = 100.0 * static_cast<double>(r.word_edits) / r.total_ref_words;
  return r;
}

}  // namespace mixpgd
