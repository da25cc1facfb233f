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

#include "dpsynth/accountant.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dpsynth::privacy {
namespace {

constexpr double kSigmaLo = 0.3;
constexpr double kSigmaHi = 100.0;
constexpr double kEpsSlack = 1e-3;

double log_choose(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// log(1 + e^x) without overflow.
double softplus(double x) {
  if (x > 35.0) return x + std::exp(-x);
  return std::log1p(std::exp(x));
}

// log(e^v - 1) for v > 0.
double log_expm1(double v) {
  if (v > 35.0) return v + std::log1p(-std::exp(-v));
  return std::log(std::expm1(v));
}

}  // namespace

void PrivacySpec::validate() const {
  if (epsilon <= 0) throw std::invalid_argument("privacy spec: epsilon <= 0");
  if (delta <= 0 || delta >= 1) {
    throw std::invalid_argument("privacy spec: delta outside (0,1)");
  }
  if (clip <= 0) throw std::invalid_argument("privacy spec: clip <= 0");
  if (batch < 1 || dataset_size < 1 || batch > dataset_size) {
    throw std::invalid_argument("privacy spec: need 1 <= batch <= dataset size");
  }
  if (total_epochs < 1) throw std::invalid_argument("privacy spec: epochs < 1");
}

double rdp_subsampled_gaussian(double q, double sigma, int alpha) {
  if (sigma <= 0) throw std::invalid_argument("rdp: sigma must be positive");
  if (q < 0 || q > 1) throw std::invalid_argument("rdp: q outside [0,1]");
  if (alpha < 2) throw std::invalid_argument("rdp: alpha must be >= 2");
  if (q == 0) return 0.0;
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  if (q == 1) return alpha * inv2s2;

  // The k = 0 and k = 1 binomial terms sum with the rest of the binomial
  // expansion to exactly 1, so the whole sum is 1 + S with
  //   S = sum_{k=2}^{alpha} C(alpha,k) (1-q)^(alpha-k) q^k (e^{k(k-1)/2s^2}-1),
  // every term positive. Accumulate log S by running logsumexp.
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  double log_s = -std::numeric_limits<double>::infinity();
  for (int k = 2; k <= alpha; ++k) {
    double v = k * (k - 1.0) * inv2s2;
    double term = log_choose(alpha, k) + (alpha - k) * log_1mq + k * log_q +
                  log_expm1(v);
    if (term > log_s) {
      log_s = term + std::log1p(std::exp(log_s - term));
    } else {
      log_s += std::log1p(std::exp(term - log_s));
    }
  }
  return softplus(log_s) / (alpha - 1.0);
}

RdpCurve rdp_curve(double q, double sigma) {
  RdpCurve curve(kAlphaMax - kAlphaMin + 1);
  for (int alpha = kAlphaMin; alpha <= kAlphaMax; ++alpha) {
    curve[alpha - kAlphaMin] = rdp_subsampled_gaussian(q, sigma, alpha);
  }
  return curve;
}

RdpCurve compose(const RdpCurve& step_curve, long n_steps) {
  if (n_steps < 0) throw std::invalid_argument("compose: n_steps < 0");
  RdpCurve total(step_curve.size());
  for (size_t i = 0; i < step_curve.size(); ++i) {
    total[i] = step_curve[i] * static_cast<double>(n_steps);
  }
  return total;
}

EpsResult to_eps_delta(const RdpCurve& curve, double delta) {
  if (curve.empty()) throw std::invalid_argument("to_eps_delta: empty curve");
  const double log_inv_delta = std::log(1.0 / delta);
  EpsResult best;
  best.epsilon = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < curve.size(); ++i) {
    int alpha = kAlphaMin + static_cast<int>(i);
    double eps = curve[i] + log_inv_delta / (alpha - 1.0);
    if (eps < best.epsilon) {
      best.epsilon = eps;
      best.alpha_star = alpha;
    }
  }
  return best;
}

long steps_per_epoch(int dataset_size, int batch) {
  return (static_cast<long>(dataset_size) + batch - 1) / batch;
}

double noise_for_budget(const PrivacySpec& spec) {
  spec.validate();
  const double q = static_cast<double>(spec.batch) / spec.dataset_size;
  const long steps = spec.total_epochs * steps_per_epoch(spec.dataset_size, spec.batch);
  auto eps_at = [&](double sigma) {
    return to_eps_delta(compose(rdp_curve(q, sigma), steps), spec.delta).epsilon;
  };
  if (eps_at(kSigmaHi) > spec.epsilon) {
    throw std::runtime_error(
        "noise_for_budget: target epsilon unreachable at sigma = 100");
  }
  if (eps_at(kSigmaLo) <= spec.epsilon) return kSigmaLo;

  double lo = kSigmaLo;  // eps(lo) > target
  double hi = kSigmaHi;  // eps(hi) <= target
  for (int it = 0; it < 200; ++it) {
    if (spec.epsilon - eps_at(hi) <= kEpsSlack) break;
    double mid = 0.5 * (lo + hi);
    if (eps_at(mid) <= spec.epsilon) {
      hi = mid;
    } else {
      lo = mid;
    }
    if (hi - lo < 1e-12) break;
  }
  return hi;
}

AccountantLedger::AccountantLedger(const PrivacySpec& spec)
    : AccountantLedger(spec, noise_for_budget(spec)) {}

AccountantLedger::AccountantLedger(const PrivacySpec& spec, double sigma)
    : spec_(spec), sigma_(sigma) {
  spec_.validate();
  if (sigma_ <= 0) throw std::invalid_argument("ledger: sigma must be positive");
  steps_total_ =
      spec_.total_epochs * steps_per_epoch(spec_.dataset_size, spec_.batch);
}

void AccountantLedger::debit_epoch() {
  if (epochs_remaining() <= 0) {
    throw std::runtime_error("privacy ledger exhausted: all " +
                             std::to_string(spec_.total_epochs) +
                             " epochs already spent");
  }
  ++epochs_spent_;
  steps_spent_ += steps_per_epoch(spec_.dataset_size, spec_.batch);
}

double AccountantLedger::sampling_rate() const {
  return static_cast<double>(spec_.batch) / spec_.dataset_size;
}

EpsResult AccountantLedger::spent_eps() const {
  return to_eps_delta(compose(rdp_curve(sampling_rate(), sigma_), steps_spent_),
                      spec_.delta);
}

EpsResult AccountantLedger::full_eps() const {
  return to_eps_delta(compose(rdp_curve(sampling_rate(), sigma_), steps_total_),
                      spec_.delta);
}

void PhaseBudget::debit_epoch() {
  if (spent_ >= granted_) {
    throw std::runtime_error("phase budget exhausted: all " +
                             std::to_string(granted_) + " epochs spent");
  }
  ledger_->debit_epoch();
  ++spent_;
}

std::pair<PhaseBudget, PhaseBudget> split_ledger(AccountantLedger& ledger,
                                                 int t1) {
  const int total = ledger.epochs_total();
  if (t1 < 1 || t1 > total - 1) {
    throw std::invalid_argument("split_ledger: need 1 <= t1 <= T-1, got t1=" +
                                std::to_string(t1) + " with T=" +
                                std::to_string(total));
  }
  return {PhaseBudget(ledger, t1), PhaseBudget(ledger, total - t1)};
}

}  // namespace dpsynth::privacy
