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

#ifndef DPSYNTH_DP_HPP_
#define DPSYNTH_DP_HPP_

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dpsynth/accountant.hpp"
#include "dpsynth/model.hpp"
#include "dpsynth/rng.hpp"

namespace dpsynth::dp {

// Flat gradient, laid out exactly like the model's parameter vector; the
// model's tensor directory names the slices.
template <typename Real>
using Gradient = std::vector<Real>;

struct DpSgdConfig {
  double clip = 0.1;
  double noise_multiplier = 0.0;
  int logical_batch = 256;
  int microbatch = 32;   // memory knob only; never changes the resulting step
  int epochs = 1;
  double learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool use_adam = true;  // false: plain noisy SGD update
  bool parallel = true;  // per-example gradients via OpenMP; serial otherwise
  uint64_t seed = 0;     // shuffling and noise streams are forked from this
};

template <typename Real>
struct AdamState {
  std::vector<Real> m;
  std::vector<Real> v;
  long t = 0;

  void reset(size_t n) {
    m.assign(n, Real(0));
    v.assign(n, Real(0));
    t = 0;
  }
};

// Test hook: observes every per-example clipped gradient norm.
using ClipObserver = std::function<void(size_t example_index, double norm)>;

struct TrainReport {
  std::vector<double> epoch_mean_loss;
  long steps = 0;
  double wall_seconds = 0.0;
  double sigma = 0.0;
  double clip = 0.0;
  int epochs_debited = 0;
};

// In-place clip to L2 norm <= clip over the concatenation of all tensors;
// returns the pre-clip norm. Direction is preserved; gradients inside the
// ball pass through bit-identically. Throws on non-finite input.
template <typename Real>
double clip_gradient(Gradient<Real>& grad, double clip);

// Sum of clipped per-example gradients of `batch_idx`, reduced in example
// order (the order fixes the float result independent of thread count and
// microbatch size). clip <= 0 disables clipping (non-private reference).
// Returns the summed per-example losses.
template <typename Real>
double accumulate_clipped_grads(const model::ModelT<Real>& m,
                                std::span<const model::EncodedSeq> data,
                                std::span<const size_t> batch_idx, double clip,
                                int microbatch, bool parallel,
                                Gradient<Real>& sum,
                                const ClipObserver& observer);

// One DP step on an assembled batch: clipped sum, Gaussian noise of stddev
// sigma * C per coordinate, division by the *nominal* batch size, then an
// Adam (or SGD) update. Returns the mean per-example loss.
template <typename Real>
double dp_step(model::ModelT<Real>& m, std::span<const model::EncodedSeq> data,
               std::span<const size_t> batch_idx, const DpSgdConfig& cfg,
               AdamState<Real>& adam, Rng& noise_rng,
               const ClipObserver& observer = nullptr);

// T epochs of dp_step over seeded shuffled fixed-size batches, debiting one
// ledger epoch per trained epoch. Refuses before any step if the budget or
// its parameters do not match the config.
template <typename Real>
TrainReport train_dp(model::ModelT<Real>& m,
                     std::span<const model::EncodedSeq> data,
                     const DpSgdConfig& cfg, privacy::EpochBudget& budget,
                     const ClipObserver& observer = nullptr);

// Non-private reference: identical batching and update code with clipping
// and noise disabled and the mean taken over the actual batch.
template <typename Real>
TrainReport train_plain(model::ModelT<Real>& m,
                        std::span<const model::EncodedSeq> data,
                        const DpSgdConfig& cfg);

}  // namespace dpsynth::dp

#endif  // DPSYNTH_DP_HPP_
