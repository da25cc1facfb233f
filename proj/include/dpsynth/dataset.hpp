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

#ifndef DPSYNTH_DATASET_HPP_
#define DPSYNTH_DATASET_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dpsynth/lispress.hpp"

namespace dpsynth::corpus {

struct LabeledExample {
  std::string utterance;
  std::optional<ParseTree> parse;
  std::optional<std::string> domain;
  // Grammar provenance; -1 for ingested or synthesized data. Not serialized.
  int template_id = -1;
};

// Immutable after construction; order is part of the dataset's identity.
struct Dataset {
  std::vector<LabeledExample> examples;
  std::string name;
  uint64_t seed = 0;  // generator seed; 0 for ingested data

  size_t size() const { return examples.size(); }
};

// JSONL, one object per line: {"utterance": string, "parse": string|null,
// "domain": string|null}. UTF-8, LF line endings.
void write_jsonl(const Dataset& data, const std::string& path);
Dataset read_jsonl(const std::string& path);

std::vector<std::string> whitespace_tokens(const std::string& text);

}  // namespace dpsynth::corpus

#endif  // DPSYNTH_DATASET_HPP_
