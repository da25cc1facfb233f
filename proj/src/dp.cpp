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

#include "dpsynth/dp.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dpsynth/threading.hpp"

namespace dpsynth::dp {
namespace {

constexpr uint64_t kShuffleStream = 0x5eed0001;
constexpr uint64_t kNoiseStream = 0x5eed0002;

template <typename Real>
double l2_norm(const Gradient<Real>& g) {
  double sq = 0;
  for (Real v : g) sq += double(v) * double(v);
  return std::sqrt(sq);
}

}  // namespace

template <typename Real>
double clip_gradient(Gradient<Real>& grad, double clip) {
  if (clip <= 0) throw std::invalid_argument("clip threshold must be positive");
  double sq = 0;
  for (Real v : grad) {
    sq += double(v) * double(v);
  }
  if (!std::isfinite(sq)) {
    throw std::runtime_error("clip_gradient: non-finite gradient");
  }
  const double norm = std::sqrt(sq);
  if (norm > clip) {
    const Real factor = static_cast<Real>(clip / norm);
    for (Real& v : grad) v *= factor;
  }
  return norm;
}

template <typename Real>
double accumulate_clipped_grads(const model::ModelT<Real>& m,
                                std::span<const model::EncodedSeq> data,
                                std::span<const size_t> batch_idx, double clip,
                                int microbatch, bool parallel,
                                Gradient<Real>& sum,
                                const ClipObserver& observer) {
  if (microbatch < 1) throw std::invalid_argument("microbatch must be >= 1");
  sum.assign(m.param_count(), Real(0));
  const int slots = std::min<int>(microbatch, batch_idx.size());
  std::vector<Gradient<Real>> grads(slots);
  std::vector<model::Workspace<Real>> workspaces(slots);
  std::vector<double> losses(slots, 0.0);
  std::vector<std::string> errors(slots);

  double loss_sum = 0;
  const int threads = parallel ? max_threads() : 1;
  (void)threads;
  for (size_t start = 0; start < batch_idx.size(); start += slots) {
    const int m_count =
        static_cast<int>(std::min<size_t>(slots, batch_idx.size() - start));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(threads) if (threads > 1)
#endif
    for (int j = 0; j < m_count; ++j) {
      try {
        losses[j] = model::nll_grad(m, data[batch_idx[start + j]], grads[j],
                                    workspaces[j]);
        errors[j].clear();
      } catch (const std::exception& e) {
        errors[j] = e.what();
      }
    }
    // Clip and reduce serially in example order so the result does not depend
    // on thread count or microbatch size.
    for (int j = 0; j < m_count; ++j) {
      const size_t example = batch_idx[start + j];
      if (!errors[j].empty()) {
        throw std::runtime_error("example " + std::to_string(example) + ": " +
                                 errors[j]);
      }
      if (!std::isfinite(losses[j])) {
        throw std::runtime_error("example " + std::to_string(example) +
                                 ": non-finite loss");
      }
      loss_sum += losses[j];
      if (clip > 0) {
        double norm = clip_gradient(grads[j], clip);
        if (observer) observer(example, std::min(norm, clip));
      }
      Real* acc = sum.data();
      const Real* g = grads[j].data();
      const size_t n = grads[j].size();
      for (size_t i = 0; i < n; ++i) acc[i] += g[i];
    }
  }
  return loss_sum;
}

template <typename Real>
double dp_step(model::ModelT<Real>& m, std::span<const model::EncodedSeq> data,
               std::span<const size_t> batch_idx, const DpSgdConfig& cfg,
               AdamState<Real>& adam, Rng& noise_rng,
               const ClipObserver& observer) {
  if (batch_idx.empty()) throw std::invalid_argument("dp_step: empty batch");
  thread_local Gradient<Real> sum;
  const double loss_sum =
      accumulate_clipped_grads(m, data, batch_idx, cfg.clip, cfg.microbatch,
                               cfg.parallel, sum, observer);
  if (cfg.noise_multiplier > 0) {
    const double stddev = cfg.noise_multiplier * cfg.clip;
    for (Real& v : sum) v += static_cast<Real>(noise_rng.normal() * stddev);
  }
  const Real divisor = static_cast<Real>(cfg.logical_batch);
  std::vector<Real>& w = m.params();
  if (adam.m.size() != w.size()) adam.reset(w.size());

  if (cfg.use_adam) {
    ++adam.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(adam.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(adam.t));
    const Real b1 = static_cast<Real>(cfg.beta1);
    const Real b2 = static_cast<Real>(cfg.beta2);
    const Real one_m_b1 = static_cast<Real>(1.0 - cfg.beta1);
    const Real one_m_b2 = static_cast<Real>(1.0 - cfg.beta2);
    const Real inv_bc1 = static_cast<Real>(1.0 / bc1);
    const Real inv_bc2 = static_cast<Real>(1.0 / bc2);
    const Real lr = static_cast<Real>(cfg.learning_rate);
    const Real eps = static_cast<Real>(cfg.adam_eps);
    for (size_t i = 0; i < w.size(); ++i) {
      const Real g = sum[i] / divisor;
      adam.m[i] = b1 * adam.m[i] + one_m_b1 * g;
      adam.v[i] = b2 * adam.v[i] + one_m_b2 * g * g;
      const Real mhat = adam.m[i] * inv_bc1;
      const Real vhat = adam.v[i] * inv_bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  } else {
    const Real lr = static_cast<Real>(cfg.learning_rate);
    for (size_t i = 0; i < w.size(); ++i) {
      w[i] -= lr * (sum[i] / divisor);
    }
  }
  return loss_sum / static_cast<double>(batch_idx.size());
}

namespace {

template <typename Real>
TrainReport train_impl(model::ModelT<Real>& m,
                       std::span<const model::EncodedSeq> data,
                       const DpSgdConfig& cfg, privacy::EpochBudget* budget,
                       const ClipObserver& observer) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.epochs < 0) throw std::invalid_argument("train: negative epochs");
  if (cfg.logical_batch < 1 ||
      cfg.logical_batch > static_cast<int>(data.size())) {
    throw std::invalid_argument("train: need 1 <= batch <= dataset size");
  }

  const bool is_private = budget != nullptr;
  if (is_private) {
    const privacy::PrivacySpec& spec = budget->spec();
    if (spec.clip != cfg.clip || spec.batch != cfg.logical_batch ||
        spec.dataset_size != static_cast<int>(data.size())) {
      throw std::runtime_error(
          "train_dp: config does not match the ledger's (C, |B|, |D|)");
    }
    if (cfg.noise_multiplier != budget->sigma()) {
      throw std::runtime_error("train_dp: config sigma differs from the ledger");
    }
    if (budget->epochs_remaining() < cfg.epochs) {
      throw std::runtime_error(
          "train_dp: ledger has " + std::to_string(budget->epochs_remaining()) +
          " epochs left, need " + std::to_string(cfg.epochs));
    }
  }

  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  report.sigma = is_private ? cfg.noise_multiplier : 0.0;
  report.clip = is_private ? cfg.clip : 0.0;

  Rng shuffle_rng = Rng(cfg.seed).fork(kShuffleStream);
  Rng noise_rng = Rng(cfg.seed).fork(kNoiseStream);
  AdamState<Real> adam;
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (is_private) {
      budget->debit_epoch();  // spend before touching the data
      ++report.epochs_debited;
    }
    shuffle_rng.shuffle(order);
    double loss_acc = 0;
    long batches = 0;
    for (size_t start = 0; start < order.size();
         start += cfg.logical_batch) {
      const size_t count =
          std::min<size_t>(cfg.logical_batch, order.size() - start);
      std::span<const size_t> batch(order.data() + start, count);
      DpSgdConfig step_cfg = cfg;
      if (!is_private) {
        step_cfg.clip = 0.0;  // disabled
        step_cfg.noise_multiplier = 0.0;
        step_cfg.logical_batch = static_cast<int>(count);
      }
      loss_acc += dp_step(m, data, batch, step_cfg, adam, noise_rng, observer);
      ++batches;
      ++report.steps;
    }
    report.epoch_mean_loss.push_back(loss_acc / batches);
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return report;
}

}  // namespace

template <typename Real>
TrainReport train_dp(model::ModelT<Real>& m,
                     std::span<const model::EncodedSeq> data,
                     const DpSgdConfig& cfg, privacy::EpochBudget& budget,
                     const ClipObserver& observer) {
  if (cfg.clip <= 0) throw std::invalid_argument("train_dp: clip must be > 0");
  return train_impl(m, data, cfg, &budget, observer);
}

template <typename Real>
TrainReport train_plain(model::ModelT<Real>& m,
                        std::span<const model::EncodedSeq> data,
                        const DpSgdConfig& cfg) {
  return train_impl(m, data, cfg, nullptr, nullptr);
}

template double clip_gradient(Gradient<float>&, double);
template double clip_gradient(Gradient<double>&, double);
template double accumulate_clipped_grads(const model::ModelT<float>&,
                                         std::span<const model::EncodedSeq>,
                                         std::span<const size_t>, double, int,
                                         bool, Gradient<float>&,
                                         const ClipObserver&);
template double accumulate_clipped_grads(const model::ModelT<double>&,
                                         std::span<const model::EncodedSeq>,
                                         std::span<const size_t>, double, int,
                                         bool, Gradient<double>&,
                                         const ClipObserver&);
template double dp_step(model::ModelT<float>&, std::span<const model::EncodedSeq>,
                        std::span<const size_t>, const DpSgdConfig&,
                        AdamState<float>&, Rng&, const ClipObserver&);
template double dp_step(model::ModelT<double>&,
                        std::span<const model::EncodedSeq>,
                        std::span<const size_t>, const DpSgdConfig&,
                        AdamState<double>&, Rng&, const ClipObserver&);
template TrainReport train_dp(model::ModelT<float>&,
                              std::span<const model::EncodedSeq>,
                              const DpSgdConfig&, privacy::EpochBudget&,
                              const ClipObserver&);
template TrainReport train_dp(model::ModelT<double>&,
                              std::span<const model::EncodedSeq>,
                              const DpSgdConfig&, privacy::EpochBudget&,
                              const ClipObserver&);
template TrainReport train_plain(model::ModelT<float>&,
                                 std::span<const model::EncodedSeq>,
                                 const DpSgdConfig&);
template TrainReport train_plain(model::ModelT<double>&,
                                 std::span<const model::EncodedSeq>,
                                 const DpSgdConfig&);

}  // namespace dpsynth::dp
