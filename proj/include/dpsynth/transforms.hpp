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

#ifndef DPSYNTH_TRANSFORMS_HPP_
#define DPSYNTH_TRANSFORMS_HPP_

#include <cstdint>
#include <string>
#include <utility>

#include "dpsynth/dataset.hpp"

namespace dpsynth::corpus {

// Uniform pub_fraction subsample with every example whose tree contains
// missing_label removed; the complement (before removal) becomes the private
// side with parses and domains stripped. Deterministic given seed.
std::pair<Dataset, Dataset> partition_e2e(const Dataset& train,
                                          const std::string& missing_label,
                                          double pub_fraction, uint64_t seed);

// Keeps exactly the examples whose parse contains label, order preserved.
// Throws if the result would be empty.
Dataset restrict_modes(const Dataset& data, const std::string& label);

// Permutes parses by a seeded uniform permutation, utterances stay in place.
// All examples must carry parses.
Dataset shuffle_pairs(const Dataset& data, uint64_t seed);

}  // namespace dpsynth::corpus

#endif  // DPSYNTH_TRANSFORMS_HPP_
