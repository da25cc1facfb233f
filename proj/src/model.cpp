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

#include "dpsynth/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "dpsynth/dataset.hpp"

namespace dpsynth::model {

void ModelConfig::validate() const {
  if (vocab_size < 5) throw std::invalid_argument("model: vocab_size < 5");
  if (embed_dim < 1 || n_layers < 1 || n_heads < 1 || context_len < 4) {
    throw std::invalid_argument("model: non-positive dimension");
  }
  if (embed_dim % n_heads != 0) {
    throw std::invalid_argument("model: embed_dim must divide by n_heads");
  }
}

template <typename Real>
ModelT<Real>::ModelT(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  register_tensors();
  size_t total = 0;
  for (const TensorInfo& t : tensors_) total += t.count();
  params_.assign(total, Real(0));
  init_weights();
}

template <typename Real>
void ModelT<Real>::register_tensors() {
  const int d = cfg_.embed_dim;
  const int f = cfg_.mlp_dim();
  size_t offset = 0;
  auto add = [&](const std::string& name, std::vector<int> shape) {
    TensorInfo info{name, std::move(shape), offset};
    offset += info.count();
    tensors_.push_back(std::move(info));
  };
  add("tok_emb", {cfg_.vocab_size, d});
  add("pos_emb", {cfg_.context_len, d});
  for (int l = 0; l < cfg_.n_layers; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    add(p + "ln1.gain", {d});
    add(p + "ln1.bias", {d});
    add(p + "attn.qkv.w", {d, 3 * d});
    add(p + "attn.qkv.b", {3 * d});
    add(p + "attn.out.w", {d, d});
    add(p + "attn.out.b", {d});
    add(p + "ln2.gain", {d});
    add(p + "ln2.bias", {d});
    add(p + "mlp.fc1.w", {d, f});
    add(p + "mlp.fc1.b", {f});
    add(p + "mlp.fc2.w", {f, d});
    add(p + "mlp.fc2.b", {d});
  }
  add("ln_f.gain", {d});
  add("ln_f.bias", {d});
  add("out.w", {d, cfg_.vocab_size});
  add("out.b", {cfg_.vocab_size});
}

template <typename Real>
void ModelT<Real>::init_weights() {
  Rng rng(cfg_.seed);
  for (const TensorInfo& t : tensors_) {
    Real* p = params_.data() + t.offset;
    const size_t n = t.count();
    const bool is_matrix = t.shape.size() == 2;
    const bool is_gain = t.name.ends_with(".gain");
    for (size_t i = 0; i < n; ++i) {
      if (is_matrix) {
        p[i] = static_cast<Real>(rng.normal(0.0, 0.02));
      } else if (is_gain) {
        p[i] = Real(1);
      } else {
        p[i] = Real(0);
      }
    }
  }
}

template <typename Real>
bool ModelT<Real>::all_finite() const {
  for (Real v : params_) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

namespace {

// y[m x n] += x[m x k] * w[k x n]; all row-major, y pre-zeroed by caller.
template <typename Real>
void matmul(const Real* x, const Real* w, Real* y, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    Real* yi = y + static_cast<size_t>(i) * n;
    const Real* xi = x + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const Real xv = xi[p];
      const Real* wp = w + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) yi[j] += xv * wp[j];
    }
  }
}

// dx[m x k] += dy[m x n] * w^T
template <typename Real>
void matmul_dx(const Real* dy, const Real* w, Real* dx, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Real* dyi = dy + static_cast<size_t>(i) * n;
    Real* dxi = dx + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const Real* wp = w + static_cast<size_t>(p) * n;
      Real acc = 0;
      for (int j = 0; j < n; ++j) acc += dyi[j] * wp[j];
      dxi[p] += acc;
    }
  }
}

// dw[k x n] += x^T * dy; db[n] += column sums of dy
template <typename Real>
void matmul_dw(const Real* x, const Real* dy, Real* dw, Real* db, int m, int k,
               int n) {
  for (int i = 0; i < m; ++i) {
    const Real* xi = x + static_cast<size_t>(i) * k;
    const Real* dyi = dy + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const Real xv = xi[p];
      Real* dwp = dw + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) dwp[j] += xv * dyi[j];
    }
    for (int j = 0; j < n; ++j) db[j] += dyi[j];
  }
}

template <typename Real>
void add_bias(Real* y, const Real* b, int m, int n) {
  for (int i = 0; i < m; ++i) {
    Real* yi = y + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) yi[j] += b[j];
  }
}

constexpr double kLnEps = 1e-5;

// Row-wise layer norm; saves normalized rows and reciprocal stddevs.
template <typename Real>
void layernorm_fwd(const Real* x, const Real* gain, const Real* bias, Real* y,
                   Real* xhat, Real* rstd, int m, int d) {
  for (int i = 0; i < m; ++i) {
    const Real* xi = x + static_cast<size_t>(i) * d;
    Real* yi = y + static_cast<size_t>(i) * d;
    Real* xh = xhat + static_cast<size_t>(i) * d;
    double mean = 0;
    for (int j = 0; j < d; ++j) mean += xi[j];
    mean /= d;
    double var = 0;
    for (int j = 0; j < d; ++j) {
      double c = xi[j] - mean;
      var += c * c;
    }
    var /= d;
    double r = 1.0 / std::sqrt(var + kLnEps);
    rstd[i] = static_cast<Real>(r);
    for (int j = 0; j < d; ++j) {
      Real h = static_cast<Real>((xi[j] - mean) * r);
      xh[j] = h;
      yi[j] = gain[j] * h + bias[j];
    }
  }
}

// dx += LN backward of dy; dgain/dbias accumulated.
template <typename Real>
void layernorm_bwd(const Real* dy, const Real* xhat, const Real* rstd,
                   const Real* gain, Real* dx, Real* dgain, Real* dbias, int m,
                   int d) {
  for (int i = 0; i < m; ++i) {
    const Real* dyi = dy + static_cast<size_t>(i) * d;
    const Real* xh = xhat + static_cast<size_t>(i) * d;
    Real* dxi = dx + static_cast<size_t>(i) * d;
    double mean_dxhat = 0, mean_dxhat_xhat = 0;
    for (int j = 0; j < d; ++j) {
      double dxh = static_cast<double>(dyi[j]) * gain[j];
      mean_dxhat += dxh;
      mean_dxhat_xhat += dxh * xh[j];
      dgain[j] += dyi[j] * xh[j];
      dbias[j] += dyi[j];
    }
    mean_dxhat /= d;
    mean_dxhat_xhat /= d;
    const double r = rstd[i];
    for (int j = 0; j < d; ++j) {
      double dxh = static_cast<double>(dyi[j]) * gain[j];
      dxi[j] += static_cast<Real>(r * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat));
    }
  }
}

template <typename Real>
Real gelu(Real x) {
  return Real(0.5) * x * (Real(1) + std::erf(x * Real(M_SQRT1_2)));
}

template <typename Real>
Real gelu_grad(Real x) {
  const Real cdf = Real(0.5) * (Real(1) + std::erf(x * Real(M_SQRT1_2)));
  const Real pdf = std::exp(Real(-0.5) * x * x) * Real(0.3989422804014327);
  return cdf + x * pdf;
}

// Offsets of the named tensors, resolved once per call batch.
struct Layout {
  size_t tok_emb, pos_emb;
  struct Layer {
    size_t ln1_g, ln1_b, qkv_w, qkv_b, ao_w, ao_b;
    size_t ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };
  std::vector<Layer> layers;
  size_t lnf_g, lnf_b, out_w, out_b;
};

template <typename Real>
Layout resolve_layout(const ModelT<Real>& m) {
  Layout lay;
  size_t idx = 0;
  const auto& ts = m.tensors();
  auto next = [&]() { return ts[idx++].offset; };
  lay.tok_emb = next();
  lay.pos_emb = next();
  lay.layers.resize(m.config().n_layers);
  for (auto& l : lay.layers) {
    l.ln1_g = next();
    l.ln1_b = next();
    l.qkv_w = next();
    l.qkv_b = next();
    l.ao_w = next();
    l.ao_b = next();
    l.ln2_g = next();
    l.ln2_b = next();
    l.fc1_w = next();
    l.fc1_b = next();
    l.fc2_w = next();
    l.fc2_b = next();
  }
  lay.lnf_g = next();
  lay.lnf_b = next();
  lay.out_w = next();
  lay.out_b = next();
  return lay;
}

template <typename Real>
struct Acts {
  int n = 0;  // positions processed
  std::vector<Real> x;
  std::vector<Real> xin1, xhat1, y1, qkv, probs, att;
  std::vector<Real> xin2, xhat2, y2, h1, g;
  std::vector<Real> rstd1, rstd2;
  std::vector<Real> xhatf, zf, rstdf;
  std::vector<Real> logits;
  std::vector<int> loss_pos;
  std::vector<Real> dx, dres, dqkv, datt, dbuf_f, dbuf_d;

  void resize(const ModelConfig& cfg, int n_, int n_loss) {
    n = n_;
    const size_t L = cfg.n_layers, D = cfg.embed_dim, F = cfg.mlp_dim();
    const size_t H = cfg.n_heads;
    x.assign(size_t(n) * D, 0);
    xin1.assign(L * n * D, 0);
    xhat1.assign(L * n * D, 0);
    y1.assign(L * n * D, 0);
    qkv.assign(L * n * 3 * D, 0);
    probs.assign(L * H * n * n, 0);
    att.assign(L * n * D, 0);
    xin2.assign(L * n * D, 0);
    xhat2.assign(L * n * D, 0);
    y2.assign(L * n * D, 0);
    h1.assign(L * n * F, 0);
    g.assign(L * n * F, 0);
    rstd1.assign(L * n, 0);
    rstd2.assign(L * n, 0);
    xhatf.assign(size_t(n) * D, 0);
    zf.assign(size_t(n) * D, 0);
    rstdf.assign(n, 0);
    logits.assign(size_t(n_loss) * cfg.vocab_size, 0);
    loss_pos.clear();
  }
};

template <typename Real>
Acts<Real>& workspace_acts(Workspace<Real>& ws) {
  if (!ws.impl) ws.impl = std::make_shared<Acts<Real>>();
  return *static_cast<Acts<Real>*>(ws.impl.get());
}

template <typename Real>
void check_sequence(const ModelT<Real>& m, const EncodedSeq& seq) {
  if (seq.ids.size() != seq.loss_mask.size()) {
    throw std::invalid_argument("sequence: mask length mismatch");
  }
  if (seq.ids.size() < 2) throw std::invalid_argument("sequence: too short");
  if (static_cast<int>(seq.ids.size()) > m.config().context_len) {
    throw std::invalid_argument("sequence longer than context window");
  }
  if (seq.ids.front() != Vocabulary::kBos) {
    throw std::invalid_argument("sequence must start with BOS");
  }
  if (seq.ids.back() != Vocabulary::kEos) {
    throw std::invalid_argument("sequence must end with EOS");
  }
  for (int t : seq.ids) {
    if (t < 0 || t >= m.config().vocab_size) {
      throw std::invalid_argument("token id outside vocabulary");
    }
  }
  int masked = 0;
  for (size_t i = 1; i < seq.loss_mask.size(); ++i) masked += seq.loss_mask[i];
  if (masked == 0 || seq.loss_mask[0]) {
    throw std::invalid_argument("loss mask must cover >= 1 predicted position");
  }
}

// Runs the transformer over positions 0..n_pos-1 and fills logits rows for
// every position whose next token is masked. Returns the mean masked NLL.
template <typename Real>
double forward_pass(const ModelT<Real>& m, const EncodedSeq& seq,
                    Acts<Real>& a) {
  const ModelConfig& cfg = m.config();
  const int D = cfg.embed_dim;
  const int F = cfg.mlp_dim();
  const int H = cfg.n_heads;
  const int dh = cfg.head_dim();
  const int V = cfg.vocab_size;
  const int n_tok = static_cast<int>(seq.ids.size());
  const int n = n_tok - 1;  // the final token is never an input
  const Real inv_sqrt_dh = Real(1) / std::sqrt(Real(dh));

  int n_loss = 0;
  for (int i = 0; i < n; ++i) {
    if (seq.loss_mask[i + 1]) ++n_loss;
  }
  a.resize(cfg, n, n_loss);
  const Layout lay = resolve_layout(m);
  const Real* P = m.params().data();

  for (int i = 0; i < n; ++i) {
    const Real* te = P + lay.tok_emb + static_cast<size_t>(seq.ids[i]) * D;
    const Real* pe = P + lay.pos_emb + static_cast<size_t>(i) * D;
    Real* xi = a.x.data() + static_cast<size_t>(i) * D;
    for (int j = 0; j < D; ++j) xi[j] = te[j] + pe[j];
  }

  const size_t nD = static_cast<size_t>(n) * D;
  const size_t nF = static_cast<size_t>(n) * F;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& L = lay.layers[l];
    Real* xin1 = a.xin1.data() + l * nD;
    Real* xhat1 = a.xhat1.data() + l * nD;
    Real* y1 = a.y1.data() + l * nD;
    Real* qkv = a.qkv.data() + l * nD * 3;
    Real* probs = a.probs.data() + static_cast<size_t>(l) * H * n * n;
    Real* att = a.att.data() + l * nD;
    Real* xin2 = a.xin2.data() + l * nD;
    Real* xhat2 = a.xhat2.data() + l * nD;
    Real* y2 = a.y2.data() + l * nD;
    Real* h1 = a.h1.data() + l * nF;
    Real* g = a.g.data() + l * nF;

    std::copy(a.x.begin(), a.x.end(), xin1);
    layernorm_fwd(xin1, P + L.ln1_g, P + L.ln1_b, y1, xhat1,
                  a.rstd1.data() + static_cast<size_t>(l) * n, n, D);
    std::fill(qkv, qkv + nD * 3, Real(0));
    matmul(y1, P + L.qkv_w, qkv, n, D, 3 * D);
    add_bias(qkv, P + L.qkv_b, n, 3 * D);

    for (int h = 0; h < H; ++h) {
      Real* ph = probs + static_cast<size_t>(h) * n * n;
      for (int i = 0; i < n; ++i) {
        const Real* qi = qkv + static_cast<size_t>(i) * 3 * D + h * dh;
        Real* pi = ph + static_cast<size_t>(i) * n;
        Real maxs = -std::numeric_limits<Real>::infinity();
        for (int j = 0; j <= i; ++j) {
          const Real* kj = qkv + static_cast<size_t>(j) * 3 * D + D + h * dh;
          Real s = 0;
          for (int c = 0; c < dh; ++c) s += qi[c] * kj[c];
          s *= inv_sqrt_dh;
          pi[j] = s;
          if (s > maxs) maxs = s;
        }
        Real z = 0;
        for (int j = 0; j <= i; ++j) {
          pi[j] = std::exp(pi[j] - maxs);
          z += pi[j];
        }
        const Real inv_z = Real(1) / z;
        for (int j = 0; j <= i; ++j) pi[j] *= inv_z;
        Real* oi = att + static_cast<size_t>(i) * D + h * dh;
        std::fill(oi, oi + dh, Real(0));
        for (int j = 0; j <= i; ++j) {
          const Real* vj = qkv + static_cast<size_t>(j) * 3 * D + 2 * D + h * dh;
          const Real pij = pi[j];
          for (int c = 0; c < dh; ++c) oi[c] += pij * vj[c];
        }
      }
    }

    // x += att * Wo + bo
    std::copy(xin1, xin1 + nD, a.x.begin());
    matmul(att, P + L.ao_w, a.x.data(), n, D, D);
    add_bias(a.x.data(), P + L.ao_b, n, D);

    std::copy(a.x.begin(), a.x.end(), xin2);
    layernorm_fwd(xin2, P + L.ln2_g, P + L.ln2_b, y2, xhat2,
                  a.rstd2.data() + static_cast<size_t>(l) * n, n, D);
    std::fill(h1, h1 + nF, Real(0));
    matmul(y2, P + L.fc1_w, h1, n, D, F);
    add_bias(h1, P + L.fc1_b, n, F);
    for (size_t i = 0; i < nF; ++i) g[i] = gelu(h1[i]);
    std::copy(xin2, xin2 + nD, a.x.begin());
    matmul(g, P + L.fc2_w, a.x.data(), n, F, D);
    add_bias(a.x.data(), P + L.fc2_b, n, D);
  }

  layernorm_fwd(a.x.data(), P + lay.lnf_g, P + lay.lnf_b, a.zf.data(),
                a.xhatf.data(), a.rstdf.data(), n, D);

  double loss = 0;
  int row = 0;
  for (int i = 0; i < n; ++i) {
    if (!seq.loss_mask[i + 1]) continue;
    a.loss_pos.push_back(i);
    Real* lr = a.logits.data() + static_cast<size_t>(row) * V;
    const Real* zi = a.zf.data() + static_cast<size_t>(i) * D;
    std::copy(P + lay.out_b, P + lay.out_b + V, lr);
    for (int p = 0; p < D; ++p) {
      const Real zv = zi[p];
      const Real* wp = P + lay.out_w + static_cast<size_t>(p) * V;
      for (int j = 0; j < V; ++j) lr[j] += zv * wp[j];
    }
    double maxl = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < V; ++j) maxl = std::max(maxl, double(lr[j]));
    double z = 0;
    for (int j = 0; j < V; ++j) z += std::exp(double(lr[j]) - maxl);
    loss += maxl + std::log(z) - double(lr[seq.ids[i + 1]]);
    ++row;
  }
  return loss / a.loss_pos.size();
}

}  // namespace

template <typename Real>
double nll(const ModelT<Real>& m, const EncodedSeq& seq) {
  check_sequence(m, seq);
  thread_local Acts<Real> acts;
  return forward_pass(m, seq, acts);
}

template <typename Real>
double nll_grad(const ModelT<Real>& m, const EncodedSeq& seq,
                std::vector<Real>& grad, Workspace<Real>& ws) {
  check_sequence(m, seq);
  Acts<Real>& a = workspace_acts(ws);
  const double loss = forward_pass(m, seq, a);

  const ModelConfig& cfg = m.config();
  const int D = cfg.embed_dim;
  const int F = cfg.mlp_dim();
  const int H = cfg.n_heads;
  const int dh = cfg.head_dim();
  const int V = cfg.vocab_size;
  const int n = a.n;
  const Real inv_sqrt_dh = Real(1) / std::sqrt(Real(dh));
  const Layout lay = resolve_layout(m);
  const Real* P = m.params().data();

  grad.assign(m.param_count(), Real(0));
  Real* G = grad.data();

  const size_t nD = static_cast<size_t>(n) * D;
  const size_t nF = static_cast<size_t>(n) * F;
  a.dx.assign(nD, 0);
  a.dres.assign(nD, 0);
  a.dqkv.assign(nD * 3, 0);
  a.datt.assign(nD, 0);
  a.dbuf_f.assign(nF, 0);
  a.dbuf_d.assign(nD, 0);

  // Softmax cross-entropy backward into dzf (stored in a.dres), then through
  // the output projection.
  const double inv_m = 1.0 / a.loss_pos.size();
  for (size_t row = 0; row < a.loss_pos.size(); ++row) {
    const int i = a.loss_pos[row];
    Real* lr = a.logits.data() + row * V;
    double maxl = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < V; ++j) maxl = std::max(maxl, double(lr[j]));
    double z = 0;
    for (int j = 0; j < V; ++j) z += std::exp(double(lr[j]) - maxl);
    const double inv_z = 1.0 / z;
    // overwrite logits row with dlogits
    for (int j = 0; j < V; ++j) {
      lr[j] = static_cast<Real>(std::exp(double(lr[j]) - maxl) * inv_z * inv_m);
    }
    lr[seq.ids[i + 1]] -= static_cast<Real>(inv_m);

    // dzf row += dlogits * out.w^T ; d out.w += zf^T dlogits ; d out.b += dlogits
    const Real* zi = a.zf.data() + static_cast<size_t>(i) * D;
    Real* dzi = a.dres.data() + static_cast<size_t>(i) * D;
    Real* dwo = G + lay.out_w;
    Real* dbo = G + lay.out_b;
    for (int p = 0; p < D; ++p) {
      const Real* wp = P + lay.out_w + static_cast<size_t>(p) * V;
      Real* dwp = dwo + static_cast<size_t>(p) * V;
      Real acc = 0;
      const Real zv = zi[p];
      for (int j = 0; j < V; ++j) {
        acc += lr[j] * wp[j];
        dwp[j] += zv * lr[j];
      }
      dzi[p] += acc;
    }
    for (int j = 0; j < V; ++j) dbo[j] += lr[j];
  }

  // Final layer norm: dres -> dx
  std::fill(a.dx.begin(), a.dx.end(), Real(0));
  layernorm_bwd(a.dres.data(), a.xhatf.data(), a.rstdf.data(), P + lay.lnf_g,
                a.dx.data(), G + lay.lnf_g, G + lay.lnf_b, n, D);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& L = lay.layers[l];
    const Real* xhat1 = a.xhat1.data() + l * nD;
    const Real* y1 = a.y1.data() + l * nD;
    const Real* qkv = a.qkv.data() + l * nD * 3;
    const Real* probs = a.probs.data() + static_cast<size_t>(l) * H * n * n;
    const Real* att = a.att.data() + l * nD;
    const Real* xhat2 = a.xhat2.data() + l * nD;
    const Real* y2 = a.y2.data() + l * nD;
    const Real* h1 = a.h1.data() + l * nF;
    const Real* g = a.g.data() + l * nF;

    // MLP block: x_out = xin2 + gelu(LN2(xin2) W1 + b1) W2 + b2
    Real* dg = a.dbuf_f.data();
    std::fill(dg, dg + nF, Real(0));
    matmul_dx(a.dx.data(), P + L.fc2_w, dg, n, F, D);
    matmul_dw(g, a.dx.data(), G + L.fc2_w, G + L.fc2_b, n, F, D);
    for (size_t i = 0; i < nF; ++i) dg[i] *= gelu_grad(h1[i]);
    Real* dy2 = a.dbuf_d.data();
    std::fill(dy2, dy2 + nD, Real(0));
    matmul_dx(dg, P + L.fc1_w, dy2, n, D, F);
    matmul_dw(y2, dg, G + L.fc1_w, G + L.fc1_b, n, D, F);
    // residual: dxin2 = dx + LN2 backward(dy2)
    layernorm_bwd(dy2, xhat2, a.rstd2.data() + static_cast<size_t>(l) * n,
                  P + L.ln2_g, a.dx.data(), G + L.ln2_g, G + L.ln2_b, n, D);

    // Attention block: xin2 = xin1 + att Wo + bo
    std::fill(a.datt.begin(), a.datt.end(), Real(0));
    matmul_dx(a.dx.data(), P + L.ao_w, a.datt.data(), n, D, D);
    matmul_dw(att, a.dx.data(), G + L.ao_w, G + L.ao_b, n, D, D);

    std::fill(a.dqkv.begin(), a.dqkv.end(), Real(0));
    for (int h = 0; h < H; ++h) {
      const Real* ph = probs + static_cast<size_t>(h) * n * n;
      for (int i = 0; i < n; ++i) {
        const Real* pi = ph + static_cast<size_t>(i) * n;
        const Real* doi = a.datt.data() + static_cast<size_t>(i) * D + h * dh;
        const Real* qi = qkv + static_cast<size_t>(i) * 3 * D + h * dh;
        // dp_ij = do_i . v_j ; ds = p (dp - sum_l p dp)
        double dot_pd = 0;
        for (int j = 0; j <= i; ++j) {
          const Real* vj = qkv + static_cast<size_t>(j) * 3 * D + 2 * D + h * dh;
          Real dp = 0;
          for (int c = 0; c < dh; ++c) dp += doi[c] * vj[c];
          dot_pd += double(pi[j]) * dp;
        }
        for (int j = 0; j <= i; ++j) {
          const Real* vj = qkv + static_cast<size_t>(j) * 3 * D + 2 * D + h * dh;
          Real dp = 0;
          for (int c = 0; c < dh; ++c) dp += doi[c] * vj[c];
          const Real ds = pi[j] * (dp - static_cast<Real>(dot_pd));
          const Real ds_scaled = ds * inv_sqrt_dh;
          const Real* kj = qkv + static_cast<size_t>(j) * 3 * D + D + h * dh;
          Real* dqi = a.dqkv.data() + static_cast<size_t>(i) * 3 * D + h * dh;
          Real* dkj = a.dqkv.data() + static_cast<size_t>(j) * 3 * D + D + h * dh;
          Real* dvj =
              a.dqkv.data() + static_cast<size_t>(j) * 3 * D + 2 * D + h * dh;
          const Real pij = pi[j];
          for (int c = 0; c < dh; ++c) {
            dqi[c] += ds_scaled * kj[c];
            dkj[c] += ds_scaled * qi[c];
            dvj[c] += pij * doi[c];
          }
        }
      }
    }

    Real* dy1 = a.dbuf_d.data();
    std::fill(dy1, dy1 + nD, Real(0));
    matmul_dx(a.dqkv.data(), P + L.qkv_w, dy1, n, D, 3 * D);
    matmul_dw(y1, a.dqkv.data(), G + L.qkv_w, G + L.qkv_b, n, D, 3 * D);
    layernorm_bwd(dy1, xhat1, a.rstd1.data() + static_cast<size_t>(l) * n,
                  P + L.ln1_g, a.dx.data(), G + L.ln1_g, G + L.ln1_b, n, D);
  }

  // Embedding scatter.
  for (int i = 0; i < n; ++i) {
    const Real* dxi = a.dx.data() + static_cast<size_t>(i) * D;
    Real* dte = G + lay.tok_emb + static_cast<size_t>(seq.ids[i]) * D;
    Real* dpe = G + lay.pos_emb + static_cast<size_t>(i) * D;
    for (int j = 0; j < D; ++j) {
      dte[j] += dxi[j];
      dpe[j] += dxi[j];
    }
  }
  return loss;
}

template <typename Real>
std::vector<double> stepwise_log_probs(const ModelT<Real>& m,
                                       std::span<const int> ids) {
  // Teacher-forced distributions at every position, via an all-ones mask.
  EncodedSeq seq;
  seq.ids.assign(ids.begin(), ids.end());
  seq.loss_mask.assign(ids.size(), 1);
  seq.loss_mask[0] = 0;
  check_sequence(m, seq);
  thread_local Acts<Real> acts;
  forward_pass(m, seq, acts);
  const int V = m.config().vocab_size;
  const int n = acts.n;
  std::vector<double> out(static_cast<size_t>(n) * V);
  for (int i = 0; i < n; ++i) {
    const Real* lr = acts.logits.data() + static_cast<size_t>(i) * V;
    double maxl = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < V; ++j) maxl = std::max(maxl, double(lr[j]));
    double z = 0;
    for (int j = 0; j < V; ++j) z += std::exp(double(lr[j]) - maxl);
    const double log_z = maxl + std::log(z);
    for (int j = 0; j < V; ++j) {
      out[static_cast<size_t>(i) * V + j] = double(lr[j]) - log_z;
    }
  }
  return out;
}

template <typename Real>
std::vector<double> next_token_log_probs(const ModelT<Real>& m,
                                         std::span<const int> prefix) {
  if (prefix.empty()) throw std::invalid_argument("empty prefix");
  DecoderState<Real> st;
  decoder_reset(m, st);
  std::vector<Real> logits;
  for (int t : prefix) decoder_step(m, st, t, logits);
  std::vector<double> lp(logits.size());
  double maxl = -std::numeric_limits<double>::infinity();
  for (size_t j = 0; j < logits.size(); ++j) {
    lp[j] = double(logits[j]);
    maxl = std::max(maxl, lp[j]);
  }
  double z = 0;
  for (double v : lp) z += std::exp(v - maxl);
  const double log_z = maxl + std::log(z);
  for (double& v : lp) v -= log_z;
  return lp;
}

template <typename Real>
void decoder_reset(const ModelT<Real>& m, DecoderState<Real>& st) {
  const ModelConfig& cfg = m.config();
  st.len = 0;
  st.k_cache.assign(
      static_cast<size_t>(cfg.n_layers) * cfg.context_len * cfg.embed_dim, 0);
  st.v_cache.assign(st.k_cache.size(), Real(0));
}

template <typename Real>
void decoder_step(const ModelT<Real>& m, DecoderState<Real>& st, int token,
                  std::vector<Real>& logits_out) {
  const ModelConfig& cfg = m.config();
  const int D = cfg.embed_dim;
  const int F = cfg.mlp_dim();
  const int H = cfg.n_heads;
  const int dh = cfg.head_dim();
  const int V = cfg.vocab_size;
  const int pos = st.len;
  if (pos >= cfg.context_len) throw std::runtime_error("decoder: context full");
  if (token < 0 || token >= V) throw std::runtime_error("decoder: bad token");
  const Real inv_sqrt_dh = Real(1) / std::sqrt(Real(dh));
  const Layout lay = resolve_layout(m);
  const Real* P = m.params().data();

  st.scratch.resize(static_cast<size_t>(4) * D + 3 * D + F + cfg.context_len);
  Real* x = st.scratch.data();
  Real* y = x + D;
  Real* xh = y + D;      // normalized row (unused beyond the call)
  Real* o = xh + D;      // attention/mlp output row
  Real* qkv = o + D;
  Real* h1 = qkv + 3 * D;
  Real* pbuf = h1 + F;
  Real rstd;

  const Real* te = P + lay.tok_emb + static_cast<size_t>(token) * D;
  const Real* pe = P + lay.pos_emb + static_cast<size_t>(pos) * D;
  for (int j = 0; j < D; ++j) x[j] = te[j] + pe[j];

  const size_t ctxD = static_cast<size_t>(cfg.context_len) * D;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& L = lay.layers[l];
    layernorm_fwd(x, P + L.ln1_g, P + L.ln1_b, y, xh, &rstd, 1, D);
    std::fill(qkv, qkv + 3 * D, Real(0));
    matmul(y, P + L.qkv_w, qkv, 1, D, 3 * D);
    add_bias(qkv, P + L.qkv_b, 1, 3 * D);

    Real* kc = st.k_cache.data() + l * ctxD + static_cast<size_t>(pos) * D;
    Real* vc = st.v_cache.data() + l * ctxD + static_cast<size_t>(pos) * D;
    std::copy(qkv + D, qkv + 2 * D, kc);
    std::copy(qkv + 2 * D, qkv + 3 * D, vc);

    std::fill(o, o + D, Real(0));
    for (int h = 0; h < H; ++h) {
      const Real* q = qkv + h * dh;
      Real maxs = -std::numeric_limits<Real>::infinity();
      for (int j = 0; j <= pos; ++j) {
        const Real* kj = st.k_cache.data() + l * ctxD + static_cast<size_t>(j) * D + h * dh;
        Real s = 0;
        for (int c = 0; c < dh; ++c) s += q[c] * kj[c];
        s *= inv_sqrt_dh;
        pbuf[j] = s;
        if (s > maxs) maxs = s;
      }
      Real z = 0;
      for (int j = 0; j <= pos; ++j) {
        pbuf[j] = std::exp(pbuf[j] - maxs);
        z += pbuf[j];
      }
      const Real inv_z = Real(1) / z;
      Real* oh = o + h * dh;
      for (int j = 0; j <= pos; ++j) {
        const Real* vj = st.v_cache.data() + l * ctxD + static_cast<size_t>(j) * D + h * dh;
        const Real pij = pbuf[j] * inv_z;
        for (int c = 0; c < dh; ++c) oh[c] += pij * vj[c];
      }
    }
    // x += o * Wo + bo, reusing y as the matmul target
    std::copy(x, x + D, y);
    matmul(o, P + L.ao_w, y, 1, D, D);
    add_bias(y, P + L.ao_b, 1, D);
    std::copy(y, y + D, x);

    layernorm_fwd(x, P + L.ln2_g, P + L.ln2_b, y, xh, &rstd, 1, D);
    std::fill(h1, h1 + F, Real(0));
    matmul(y, P + L.fc1_w, h1, 1, D, F);
    add_bias(h1, P + L.fc1_b, 1, F);
    for (int j = 0; j < F; ++j) h1[j] = gelu(h1[j]);
    std::copy(x, x + D, o);
    matmul(h1, P + L.fc2_w, o, 1, F, D);
    add_bias(o, P + L.fc2_b, 1, D);
    std::copy(o, o + D, x);
  }

  layernorm_fwd(x, P + lay.lnf_g, P + lay.lnf_b, y, xh, &rstd, 1, D);
  logits_out.assign(V, Real(0));
  std::copy(P + lay.out_b, P + lay.out_b + V, logits_out.begin());
  for (int p = 0; p < D; ++p) {
    const Real zv = y[p];
    const Real* wp = P + lay.out_w + static_cast<size_t>(p) * V;
    for (int j = 0; j < V; ++j) logits_out[j] += zv * wp[j];
  }
  ++st.len;
}

namespace {

// log softmax in double precision; returns log-probabilities.
template <typename Real>
std::vector<double> log_softmax(const std::vector<Real>& logits,
                                double inv_temp) {
  std::vector<double> lp(logits.size());
  double maxl = -std::numeric_limits<double>::infinity();
  for (size_t j = 0; j < logits.size(); ++j) {
    lp[j] = double(logits[j]) * inv_temp;
    maxl = std::max(maxl, lp[j]);
  }
  double z = 0;
  for (double& v : lp) z += std::exp(v - maxl);
  const double log_z = maxl + std::log(z);
  for (double& v : lp) v -= log_z;
  return lp;
}

// Draws `count` distinct tokens without replacement from probabilities
// exp(lp); returns token indices in draw order.
std::vector<int> draw_without_replacement(const std::vector<double>& lp,
                                          int count, Rng& rng) {
  const int v = static_cast<int>(lp.size());
  std::vector<double> p(v);
  double mass = 0;
  for (int j = 0; j < v; ++j) {
    p[j] = std::exp(lp[j]);
    mass += p[j];
  }
  std::vector<int> out;
  out.reserve(count);
  std::vector<bool> taken(v, false);
  for (int w = 0; w < count && w < v; ++w) {
    double u = rng.uniform() * mass;
    double acc = 0;
    int pick = -1;
    for (int j = 0; j < v; ++j) {
      if (taken[j]) continue;
      acc += p[j];
      if (u < acc) {
        pick = j;
        break;
      }
    }
    if (pick < 0) {
      for (int j = v - 1; j >= 0; --j) {
        if (!taken[j]) {
          pick = j;
          break;
        }
      }
    }
    taken[pick] = true;
    mass -= p[pick];
    out.push_back(pick);
  }
  return out;
}

std::vector<int> top_k_tokens(const std::vector<double>& lp, int count) {
  std::vector<int> idx(lp.size());
  for (size_t j = 0; j < lp.size(); ++j) idx[j] = static_cast<int>(j);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return lp[a] > lp[b]; });
  idx.resize(std::min<size_t>(count, idx.size()));
  return idx;
}

}  // namespace

template <typename Real>
SampleResult sample(const ModelT<Real>& m, std::span<const int> prompt,
                    const DecodeConfig& dcfg, Rng& rng) {
  const ModelConfig& cfg = m.config();
  const int max_len = std::min(dcfg.max_len, cfg.context_len);
  if (dcfg.beam_width < 1) throw std::invalid_argument("beam_width < 1");
  if (prompt.empty() || static_cast<int>(prompt.size()) >= max_len) {
    throw std::invalid_argument("prompt must be non-empty and shorter than max_len");
  }
  const int W = dcfg.beam_width;
  const bool greedy = dcfg.temperature == 0.0;
  const double inv_temp = greedy ? 1.0 : 1.0 / dcfg.temperature;

  struct Hyp {
    DecoderState<Real> st;
    std::vector<Real> logits;
    std::vector<int> gen;
    double rank_lp = 0.0;   // cumulative log-prob at the decode temperature
    double model_lp = 0.0;  // cumulative log-prob at temperature 1
    bool done = false;
  };

  Hyp root;
  decoder_reset(m, root.st);
  for (int t : prompt) decoder_step(m, root.st, t, root.logits);

  std::vector<Hyp> beams;
  beams.push_back(std::move(root));

  auto total_len = [&](const Hyp& h) {
    return static_cast<int>(prompt.size() + h.gen.size());
  };

  for (;;) {
    bool all_done = true;
    for (const Hyp& h : beams) {
      if (!h.done && total_len(h) < max_len) all_done = false;
    }
    if (all_done) break;

    struct Cand {
      int parent;
      int token;       // -1 for a finished hypothesis carried through
      double rank_lp;
      double model_lp;
    };
    std::vector<Cand> cands;
    for (size_t b = 0; b < beams.size(); ++b) {
      Hyp& h = beams[b];
      if (h.done || total_len(h) >= max_len) {
        cands.push_back({static_cast<int>(b), -1, h.rank_lp, h.model_lp});
        continue;
      }
      std::vector<double> lp_model = log_softmax(h.logits, 1.0);
      std::vector<double> lp_rank = (greedy || dcfg.temperature == 1.0)
                                        ? lp_model
                                        : log_softmax(h.logits, inv_temp);
      std::vector<int> picks = greedy ? top_k_tokens(lp_rank, W)
                                      : draw_without_replacement(lp_rank, W, rng);
      for (int tok : picks) {
        cands.push_back({static_cast<int>(b), tok, h.rank_lp + lp_rank[tok],
                         h.model_lp + lp_model[tok]});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      return a.rank_lp > b.rank_lp;
    });
    if (cands.size() > static_cast<size_t>(W)) cands.resize(W);

    std::vector<Hyp> next;
    next.reserve(cands.size());
    const bool single = cands.size() == 1;
    for (const Cand& c : cands) {
      Hyp& parent = beams[c.parent];
      if (c.token < 0) {
        next.push_back(std::move(parent));
        continue;
      }
      Hyp h;
      // With one candidate per round the parent state can be recycled.
      if (single) {
        h.st = std::move(parent.st);
        h.gen = std::move(parent.gen);
      } else {
        h.st = parent.st;
        h.gen = parent.gen;
      }
      h.rank_lp = c.rank_lp;
      h.model_lp = c.model_lp;
      h.gen.push_back(c.token);
      if (c.token == Vocabulary::kEos) {
        h.done = true;
        h.logits = parent.logits;  // unused once finished
      } else {
        decoder_step(m, h.st, c.token, h.logits);
        h.done = total_len(h) >= max_len;
      }
      next.push_back(std::move(h));
    }
    beams = std::move(next);
  }

  // Best finished hypothesis, falling back to the best overall.
  const Hyp* best = nullptr;
  for (const Hyp& h : beams) {
    if (!h.gen.empty() && h.gen.back() == Vocabulary::kEos) {
      if (!best || h.rank_lp > best->rank_lp) best = &h;
    }
  }
  if (!best) {
    for (const Hyp& h : beams) {
      if (!best || h.rank_lp > best->rank_lp) best = &h;
    }
  }
  SampleResult res;
  res.tokens.assign(prompt.begin(), prompt.end());
  res.tokens.insert(res.tokens.end(), best->gen.begin(), best->gen.end());
  res.prompt_len = prompt.size();
  res.logprob = best->model_lp;
  res.ended_with_eos = !best->gen.empty() && best->gen.back() == Vocabulary::kEos;
  return res;
}

template <typename Real>
SampleResult sample(const ModelT<Real>& m, std::span<const int> prompt,
                    const DecodeConfig& dcfg) {
  Rng rng(dcfg.seed);
  return sample(m, prompt, dcfg, rng);
}

template <typename Real>
ParsePrediction predict_parse(const ModelT<Real>& parser, const Vocabulary& vocab,
                              const std::string& utterance,
                              const DecodeConfig& dcfg, Rng& rng) {
  std::vector<int> prompt;
  prompt.push_back(Vocabulary::kBos);
  for (const std::string& tok : corpus::whitespace_tokens(utterance)) {
    prompt.push_back(vocab.id(tok));
  }
  prompt.push_back(Vocabulary::kSep);
  const int max_len = std::min(dcfg.max_len, parser.config().context_len);
  if (static_cast<int>(prompt.size()) >= max_len) {
    prompt.resize(max_len - 1);
    prompt.back() = Vocabulary::kSep;
  }
  SampleResult out = sample(parser, prompt, dcfg, rng);
  std::string text;
  for (int t : out.generated()) {
    if (t == Vocabulary::kEos) break;
    if (!text.empty()) text += ' ';
    text += vocab.token(t);
  }
  ParsePrediction pred;
  pred.raw_text = text;
  try {
    pred.tree = corpus::parse_lispress(text);
  } catch (const corpus::LispressError&) {
    pred.tree = std::nullopt;
  }
  return pred;
}

EncodedSeq encode_conditional(const Vocabulary& vocab,
                              const std::vector<std::string>& cond,
                              const std::vector<std::string>& target,
                              int context_len, bool* truncated) {
  EncodedSeq seq;
  seq.ids.push_back(Vocabulary::kBos);
  for (const auto& tok : cond) seq.ids.push_back(vocab.id(tok));
  seq.ids.push_back(Vocabulary::kSep);
  const size_t target_start = seq.ids.size();
  for (const auto& tok : target) seq.ids.push_back(vocab.id(tok));
  seq.ids.push_back(Vocabulary::kEos);

  bool trunc = false;
  if (static_cast<int>(seq.ids.size()) > context_len) {
    // Drop target tail so EOS still fits; conditions are never cut.
    seq.ids.resize(context_len);
    seq.ids.back() = Vocabulary::kEos;
    trunc = true;
  }
  if (truncated) *truncated = trunc;
  seq.loss_mask.assign(seq.ids.size(), 0);
  for (size_t i = target_start; i < seq.ids.size(); ++i) seq.loss_mask[i] = 1;
  return seq;
}

template <typename Real>
void save_checkpoint(const ModelT<Real>& m, const Vocabulary& vocab,
                     const std::string& path) {
  nlohmann::ordered_json manifest;
  manifest["format"] = "dpsynth-ckpt-v1";
  manifest["config"] = {{"vocab_size", m.config().vocab_size},
                        {"embed_dim", m.config().embed_dim},
                        {"n_layers", m.config().n_layers},
                        {"n_heads", m.config().n_heads},
                        {"context_len", m.config().context_len},
                        {"seed", m.config().seed}};
  manifest["vocab"] = vocab.data_tokens();
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  for (const TensorInfo& t : m.tensors()) {
    tensors.push_back({{"name", t.name},
                       {"shape", t.shape},
                       {"offset", t.offset * sizeof(float)}});
  }
  manifest["tensors"] = std::move(tensors);
  manifest["payload_bytes"] = m.param_count() * sizeof(float);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << manifest.dump() << '\n';
  std::vector<float> payload(m.param_count());
  for (size_t i = 0; i < payload.size(); ++i) {
    payload[i] = static_cast<float>(m.params()[i]);
  }
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

std::pair<Model, Vocabulary> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("checkpoint missing manifest: " + path);
  }
  nlohmann::json manifest = nlohmann::json::parse(line);
  if (manifest.value("format", "") != "dpsynth-ckpt-v1") {
    throw std::runtime_error("unknown checkpoint format: " + path);
  }
  ModelConfig cfg;
  cfg.vocab_size = manifest["config"]["vocab_size"].get<int>();
  cfg.embed_dim = manifest["config"]["embed_dim"].get<int>();
  cfg.n_layers = manifest["config"]["n_layers"].get<int>();
  cfg.n_heads = manifest["config"]["n_heads"].get<int>();
  cfg.context_len = manifest["config"]["context_len"].get<int>();
  cfg.seed = manifest["config"]["seed"].get<uint64_t>();
  Model m(cfg);
  const size_t payload_bytes = manifest["payload_bytes"].get<size_t>();
  if (payload_bytes != m.param_count() * sizeof(float)) {
    throw std::runtime_error("checkpoint payload size mismatch: " + path);
  }
  std::vector<float> payload(m.param_count());
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload_bytes));
  if (in.gcount() != static_cast<std::streamsize>(payload_bytes)) {
    throw std::runtime_error("checkpoint truncated: " + path);
  }
  std::copy(payload.begin(), payload.end(), m.params().begin());
  Vocabulary vocab =
      Vocabulary::from_tokens(manifest["vocab"].get<std::vector<std::string>>());
  if (vocab.size() != cfg.vocab_size) {
    throw std::runtime_error("checkpoint vocabulary size mismatch: " + path);
  }
  return {std::move(m), std::move(vocab)};
}

template class ModelT<float>;
template class ModelT<double>;
template double nll(const ModelT<float>&, const EncodedSeq&);
template double nll(const ModelT<double>&, const EncodedSeq&);
template double nll_grad(const ModelT<float>&, const EncodedSeq&,
                         std::vector<float>&, Workspace<float>&);
template double nll_grad(const ModelT<double>&, const EncodedSeq&,
                         std::vector<double>&, Workspace<double>&);
template std::vector<double> stepwise_log_probs(const ModelT<float>&,
                                                std::span<const int>);
template std::vector<double> stepwise_log_probs(const ModelT<double>&,
                                                std::span<const int>);
template std::vector<double> next_token_log_probs(const ModelT<float>&,
                                                  std::span<const int>);
template std::vector<double> next_token_log_probs(const ModelT<double>&,
                                                  std::span<const int>);
template void decoder_reset(const ModelT<float>&, DecoderState<float>&);
template void decoder_reset(const ModelT<double>&, DecoderState<double>&);
template void decoder_step(const ModelT<float>&, DecoderState<float>&, int,
                           std::vector<float>&);
template void decoder_step(const ModelT<double>&, DecoderState<double>&, int,
                           std::vector<double>&);
template SampleResult sample(const ModelT<float>&, std::span<const int>,
                             const DecodeConfig&, Rng&);
template SampleResult sample(const ModelT<double>&, std::span<const int>,
                             const DecodeConfig&, Rng&);
template SampleResult sample(const ModelT<float>&, std::span<const int>,
                             const DecodeConfig&);
template SampleResult sample(const ModelT<double>&, std::span<const int>,
                             const DecodeConfig&);
template ParsePrediction predict_parse(const ModelT<float>&, const Vocabulary&,
                                       const std::string&, const DecodeConfig&,
                                       Rng&);
template ParsePrediction predict_parse(const ModelT<double>&, const Vocabulary&,
                                       const std::string&, const DecodeConfig&,
                                       Rng&);
template void save_checkpoint(const ModelT<float>&, const Vocabulary&,
                              const std::string&);
template void save_checkpoint(const ModelT<double>&, const Vocabulary&,
                              const std::string&);

}  // namespace dpsynth::model
