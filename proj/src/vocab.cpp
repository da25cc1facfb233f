//
// Copyright 2026 The dpsynth Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#include "dpsynth/vocab.hpp"

#include <algorithm>
#include <set>

namespace dpsynth::model {

Vocabulary::Vocabulary() {
  to_token_ = {"<pad>", "<bos>", "<eos>", "<sep>", "<unk>"};
  for (size_t i = 0; i < to_token_.size(); ++i) {
    to_id_[to_token_[i]] = static_cast<int>(i);
  }
}

Vocabulary Vocabulary::build(
    const std::vector<std::vector<std::string>>& sequences) {
  std::set<std::string> uniq;
  for (const auto& seq : sequences) {
    for (const auto& tok : seq) uniq.insert(tok);
  }
  return from_tokens(std::vector<std::string>(uniq.begin(), uniq.end()));
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& data_tokens) {
  Vocabulary v;
  std::vector<std::string> sorted = data_tokens;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (const std::string& tok : sorted) {
    if (v.to_id_.count(tok)) continue;  // specials cannot be shadowed
    v.to_id_[tok] = static_cast<int>(v.to_token_.size());
    v.to_token_.push_back(tok);
  }
  return v;
}

std::vector<int> Vocabulary::ids(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& tok : tokens) out.push_back(id(tok));
  return out;
}

std::vector<std::string> Vocabulary::data_tokens() const {
  return std::vector<std::string>(to_token_.begin() + 5, to_token_.end());
}

}  // namespace dpsynth::model
