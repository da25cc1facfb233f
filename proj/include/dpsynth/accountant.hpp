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

#ifndef DPSYNTH_ACCOUNTANT_HPP_
#define DPSYNTH_ACCOUNTANT_HPP_

#include <utility>
#include <vector>

namespace dpsynth::privacy {

// Rényi orders tracked by the accountant: integers 2..256.
inline constexpr int kAlphaMin = 2;
inline constexpr int kAlphaMax = 256;

// epsilon(alpha) sampled on the integer grid; index i holds alpha = 2 + i.
using RdpCurve = std::vector<double>;

struct PrivacySpec {
  double epsilon = 3.0;
  double delta = 8e-6;
  double clip = 0.1;
  int batch = 1024;        // |B|
  int dataset_size = 0;    // |D|
  int total_epochs = 10;   // T; for the 2-stage method, T = T1 + T2

  void validate() const;
};

// Per-step RDP of the subsampled Gaussian mechanism at sampling rate q and
// noise multiplier sigma. Exact integer-order expression, evaluated in log
// space; q = 1 is the plain Gaussian closed form alpha / (2 sigma^2).
double rdp_subsampled_gaussian(double q, double sigma, int alpha);

RdpCurve rdp_curve(double q, double sigma);

// RDP composes additively per order.
RdpCurve compose(const RdpCurve& step_curve, long n_steps);

struct EpsResult {
  double epsilon = 0.0;
  int alpha_star = kAlphaMin;
};

// Standard conversion: eps = min_alpha eps_alpha + log(1/delta)/(alpha-1).
EpsResult to_eps_delta(const RdpCurve& curve, double delta);

long steps_per_epoch(int dataset_size, int batch);

// Binary search over sigma in [0.3, 100] such that the fully composed,
// converted epsilon lands within 1e-3 below the target (never above it).
// Throws if the target is unreachable even at sigma = 100.
double noise_for_budget(const PrivacySpec& spec);

// Something a DP training run can debit whole epochs from.
class EpochBudget {
 public:
  virtual ~EpochBudget() = default;
  virtual const PrivacySpec& spec() const = 0;
  virtual double sigma() const = 0;
  virtual int epochs_remaining() const = 0;
  virtual void debit_epoch() = 0;
};

// Tracks spend for one resolved (sigma, C, |B|, |D|, T) budget. Sampling from
// trained models never touches the ledger (post-processing).
class AccountantLedger : public EpochBudget {
 public:
  // Resolves sigma for the spec via noise_for_budget.
  explicit AccountantLedger(const PrivacySpec& spec);

  // Uses the given sigma as-is (tests, pre-resolved budgets).
  AccountantLedger(const PrivacySpec& spec, double sigma);

  const PrivacySpec& spec() const override { return spec_; }
  double sigma() const override { return sigma_; }

  long steps_total() const { return steps_total_; }
  long steps_spent() const { return steps_spent_; }
  int epochs_total() const { return spec_.total_epochs; }
  int epochs_spent() const { return epochs_spent_; }
  int epochs_remaining() const override {
    return spec_.total_epochs - epochs_spent_;
  }

  void debit_epoch() override;

  double sampling_rate() const;

  // (epsilon, alpha*) of the budget spent so far.
  EpsResult spent_eps() const;
  // (epsilon, alpha*) if the whole budget is spent.
  EpsResult full_eps() const;

 private:
  PrivacySpec spec_;
  double sigma_;
  long steps_total_;
  long steps_spent_ = 0;
  int epochs_spent_ = 0;
};

// A slice of a shared ledger granting exactly `granted` epochs of debits.
class PhaseBudget : public EpochBudget {
 public:
  PhaseBudget(AccountantLedger& ledger, int granted)
      : ledger_(&ledger), granted_(granted) {}

  const PrivacySpec& spec() const override { return ledger_->spec(); }
  double sigma() const override { return ledger_->sigma(); }
  int epochs_remaining() const override { return granted_ - spent_; }
  void debit_epoch() override;

  int granted() const { return granted_; }

 private:
  AccountantLedger* ledger_;
  int granted_;
  int spent_ = 0;
};

// Splits a ledger's T epochs into phases of t1 and T - t1 epochs sharing the
// single sigma and clip. Requires 1 <= t1 <= T - 1.
std::pair<PhaseBudget, PhaseBudget> split_ledger(AccountantLedger& ledger,
                                                 int t1);

}  // namespace dpsynth::privacy

#endif  // DPSYNTH_ACCOUNTANT_HPP_
