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

#ifndef DPSYNTH_GRAMMAR_HPP_
#define DPSYNTH_GRAMMAR_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dpsynth/dataset.hpp"

namespace dpsynth::corpus {

struct GrammarConfig {
  int n_train = 20000;
  int n_test = 2000;
  // Zipf exponent over the 8 domains in rank order; 0 means uniform.
  double mode_skew = 1.0;
  uint64_t seed = 7;
};

// The 8 built-in domains, most frequent rank first.
const std::vector<std::string>& domain_inventory();

// Every function label the grammar can emit, sorted.
const std::vector<std::string>& function_inventory();

// Union of labels over all productions, enumerated from the frame and slot
// tables; equals function_inventory() (checked in tests).
std::vector<std::string> enumerate_production_labels();

// Deterministic (train, test) pair. Every example carries utterance, parse,
// domain, and the id of the template that produced it.
std::pair<Dataset, Dataset> gen_corpus(const GrammarConfig& cfg);

// Exact inversion of the built-in grammar: recovers the gold tree of any
// utterance the generator can produce, nullopt otherwise. Test oracle only;
// pipelines must use trained parsers.
std::optional<ParseTree> invert_grammar_utterance(const std::string& utterance);

}  // namespace dpsynth::corpus

#endif  // DPSYNTH_GRAMMAR_HPP_
