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

#include "dpsynth/transforms.hpp"

#include <numeric>
#include <stdexcept>

#include "dpsynth/rng.hpp"

namespace dpsynth::corpus {
namespace {

bool tree_contains(const ParseTree& tree, const std::string& label) {
  return function_types(tree).count(label) > 0;
}

}  // namespace

std::pair<Dataset, Dataset> partition_e2e(const Dataset& train,
                                          const std::string& missing_label,
                                          double pub_fraction, uint64_t seed) {
  if (pub_fraction <= 0.0 || pub_fraction >= 1.0) {
    throw std::invalid_argument("partition_e2e: pub_fraction must be in (0,1)");
  }
  bool label_seen = false;
  for (const LabeledExample& ex : train.examples) {
    if (ex.parse && tree_contains(*ex.parse, missing_label)) {
      label_seen = true;
      break;
    }
  }
  if (!label_seen) {
    throw std::invalid_argument("partition_e2e: label '" + missing_label +
                                "' does not occur in the corpus");
  }

  // Seeded uniform subsample: shuffle indices, take the first fraction.
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  size_t n_pub = static_cast<size_t>(pub_fraction * train.size());
  std::vector<bool> in_pub(train.size(), false);
  for (size_t i = 0; i < n_pub; ++i) in_pub[order[i]] = true;

  Dataset pub, priv;
  pub.name = train.name + "/pub";
  priv.name = train.name + "/priv";
  pub.seed = seed;
  priv.seed = seed;
  for (size_t i = 0; i < train.size(); ++i) {
    const LabeledExample& ex = train.examples[i];
    if (in_pub[i]) {
      if (ex.parse && tree_contains(*ex.parse, missing_label)) continue;
      pub.examples.push_back(ex);
    } else {
      LabeledExample stripped;
      stripped.utterance = ex.utterance;
      priv.examples.push_back(std::move(stripped));
    }
  }
  return {std::move(pub), std::move(priv)};
}

Dataset restrict_modes(const Dataset& data, const std::string& label) {
  Dataset out;
  out.name = data.name + "/modes(" + label + ")";
  out.seed = data.seed;
  for (const LabeledExample& ex : data.examples) {
    if (ex.parse && tree_contains(*ex.parse, label)) out.examples.push_back(ex);
  }
  if (out.examples.empty()) {
    throw std::runtime_error("restrict_modes: no example contains label '" +
                             label + "'");
  }
  return out;
}

Dataset shuffle_pairs(const Dataset& data, uint64_t seed) {
  for (const LabeledExample& ex : data.examples) {
    if (!ex.parse) {
      throw std::runtime_error("shuffle_pairs: all examples must have parses");
    }
  }
  std::vector<size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), size_t{0});
  Rng rng(seed);
  rng.shuffle(perm);
  Dataset out;
  out.name = data.name + "/shuffled";
  out.seed = seed;
  out.examples = data.examples;
  for (size_t i = 0; i < data.size(); ++i) {
    out.examples[i].parse = data.examples[perm[i]].parse;
    out.examples[i].template_id = -1;
  }
  return out;
}

}  // namespace dpsynth::corpus
