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

#ifndef DPSYNTH_VOCAB_HPP_
#define DPSYNTH_VOCAB_HPP_

#include <string>
#include <unordered_map>
#include <vector>

namespace dpsynth::model {

// Word-level vocabulary shared by every model role. Specials hold fixed ids;
// tokens first seen at eval time map to UNK.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSep = 3;
  static constexpr int kUnk = 4;

  Vocabulary();

  // Data tokens get ids 5.. in first-sorted order; deterministic.
  static Vocabulary build(const std::vector<std::vector<std::string>>& sequences);
  static Vocabulary from_tokens(const std::vector<std::string>& data_tokens);

  int id(const std::string& token) const {
    auto it = to_id_.find(token);
    return it == to_id_.end() ? kUnk : it->second;
  }
  const std::string& token(int id) const { return to_token_.at(id); }
  int size() const { return static_cast<int>(to_token_.size()); }

  std::vector<int> ids(const std::vector<std::string>& tokens) const;

  // Data tokens only (ids 5..), for serialization.
  std::vector<std::string> data_tokens() const;

  bool operator==(const Vocabulary& other) const {
    return to_token_ == other.to_token_;
  }

 private:
  std::vector<std::string> to_token_;
  std::unordered_map<std::string, int> to_id_;
};

}  // namespace dpsynth::model

#endif  // DPSYNTH_VOCAB_HPP_
