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

#ifndef DPSYNTH_MODEL_HPP_
#define DPSYNTH_MODEL_HPP_

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpsynth/lispress.hpp"
#include "dpsynth/rng.hpp"
#include "dpsynth/vocab.hpp"

namespace dpsynth::model {

struct ModelConfig {
  int vocab_size = 0;
  int embed_dim = 64;
  int n_layers = 2;
  int n_heads = 2;
  int context_len = 96;
  uint64_t seed = 0;

  int head_dim() const { return embed_dim / n_heads; }
  int mlp_dim() const { return 4 * embed_dim; }
  void validate() const;
};

struct TensorInfo {
  std::string name;
  std::vector<int> shape;
  size_t offset = 0;

  size_t count() const {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
  }
};

struct DecodeConfig {
  int beam_width = 1;
  int max_len = 96;       // total sequence length cap, prompt included
  double temperature = 1.0;
  uint64_t seed = 0;
};

// A training sequence: token ids plus a 0/1 mask marking loss targets.
struct EncodedSeq {
  std::vector<int> ids;
  std::vector<uint8_t> loss_mask;
};

struct SampleResult {
  std::vector<int> tokens;  // prompt followed by the generated continuation
  size_t prompt_len = 0;
  double logprob = 0.0;     // model (temperature-1) log-prob of the continuation
  bool ended_with_eos = false;

  std::span<const int> generated() const {
    return std::span<const int>(tokens).subspan(prompt_len);
  }
};

// Decoder-only pre-norm transformer with weights in one flat parameter
// vector. Real is float on the training path and double where tests need an
// exact float64 route.
template <typename Real>
class ModelT {
 public:
  explicit ModelT(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  size_t param_count() const { return params_.size(); }
  std::vector<Real>& params() { return params_; }
  const std::vector<Real>& params() const { return params_; }

  // Seeded init: N(0, 0.02^2) matrices, zero biases, unit norm gains.
  void init_weights();

  bool all_finite() const;

 private:
  ModelConfig cfg_;
  std::vector<TensorInfo> tensors_;
  std::vector<Real> params_;

  void register_tensors();
};

using Model = ModelT<float>;
using ModelD = ModelT<double>;

// Scratch space for one sequence's forward/backward pass; reusable across
// calls, one instance per thread.
template <typename Real>
struct Workspace {
  std::shared_ptr<void> impl;
};

// Mean NLL over masked positions (teacher forcing). The sequence must start
// with BOS, end with EOS, fit the context, and mask at least one position.
template <typename Real>
double nll(const ModelT<Real>& m, const EncodedSeq& seq);

// NLL and its exact gradient with respect to every weight, laid out like
// params(). grad is overwritten.
template <typename Real>
double nll_grad(const ModelT<Real>& m, const EncodedSeq& seq,
                std::vector<Real>& grad, Workspace<Real>& ws);

// Next-token log-probabilities (natural log) after teacher-forcing ids[0..i]
// for every position i; out[i][t] = log p(t | ids[0..i]). Row-major
// [len x vocab]. Requires a full BOS..EOS sequence; test/oracle path.
template <typename Real>
std::vector<double> stepwise_log_probs(const ModelT<Real>& m,
                                       std::span<const int> ids);

// Distribution over the next token after an arbitrary non-empty prefix,
// computed through the incremental decoder.
template <typename Real>
std::vector<double> next_token_log_probs(const ModelT<Real>& m,
                                         std::span<const int> prefix);

// Incremental decoding state (per-layer KV cache).
template <typename Real>
struct DecoderState {
  int len = 0;
  std::vector<Real> k_cache;  // [layer][pos][dim]
  std::vector<Real> v_cache;
  std::vector<Real> scratch;
};

// Feeds one token, returns the logits row for the next position.
template <typename Real>
void decoder_reset(const ModelT<Real>& m, DecoderState<Real>& st);
template <typename Real>
void decoder_step(const ModelT<Real>& m, DecoderState<Real>& st, int token,
                  std::vector<Real>& logits_out);

// Multinomial beam search. With beam_width = 1 this is ancestral sampling at
// the given temperature; with W > 1 each hypothesis expands by W next tokens
// sampled without replacement, the W best cumulative-log-probability
// hypotheses survive, and the best finished one is returned. temperature = 0
// degenerates to deterministic top-W expansion.
template <typename Real>
SampleResult sample(const ModelT<Real>& m, std::span<const int> prompt,
                    const DecodeConfig& dcfg, Rng& rng);

template <typename Real>
SampleResult sample(const ModelT<Real>& m, std::span<const int> prompt,
                    const DecodeConfig& dcfg);

struct ParsePrediction {
  std::optional<corpus::ParseTree> tree;  // nullopt: emission was not lispress
  std::string raw_text;
};

// Prompts `BOS <utterance tokens> SEP`, decodes the parse segment, and
// attempts to read it back as lispress. Failures are values, not errors.
template <typename Real>
ParsePrediction predict_parse(const ModelT<Real>& parser, const Vocabulary& vocab,
                              const std::string& utterance,
                              const DecodeConfig& dcfg, Rng& rng);

// `BOS <cond> SEP <target> EOS` with loss on the target segment and EOS.
EncodedSeq encode_conditional(const Vocabulary& vocab,
                              const std::vector<std::string>& cond,
                              const std::vector<std::string>& target,
                              int context_len, bool* truncated = nullptr);

// Checkpoint: one file, JSON manifest line then raw little-endian float32
// payload in tensor directory order.
template <typename Real>
void save_checkpoint(const ModelT<Real>& m, const Vocabulary& vocab,
                     const std::string& path);
std::pair<Model, Vocabulary> load_checkpoint(const std::string& path);

}  // namespace dpsynth::model

#endif  // DPSYNTH_MODEL_HPP_
