#include "differ/denoiser.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

#include "differ/kernels.hpp"
#include "json.hpp"

namespace differ {

void DenoiserConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0 || n_layers <= 0 || max_len <= 0) {
    throw UsageError("denoiser dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw UsageError("d_model must be divisible by n_heads");
  if (vocab_size <= Vocabulary::kNumSpecial) throw UsageError("vocab_size too small");
  if (!(init_std > 0.0)) throw UsageError("init_std must be positive");
}

std::string DenoiserConfig::to_json() const {
  nlohmann::ordered_json j;
  j["d_model"] = d_model;
  j["n_heads"] = n_heads;
  j["n_layers"] = n_layers;
  j["max_len"] = max_len;
  j["vocab_size"] = vocab_size;
  j["tie_embeddings"] = tie_embeddings;
  j["init_std"] = init_std;
  return j.dump();
}

DenoiserConfig DenoiserConfig::from_json(std::string_view text) {
  try {
    auto j = nlohmann::json::parse(text);
    DenoiserConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.max_len = j.value("max_len", c.max_len);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.tie_embeddings = j.value("tie_embeddings", c.tie_embeddings);
    c.init_std = j.value("init_std", c.init_std);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad denoiser config: ") + e.what());
  }
}

std::string_view to_string(LossWeighting w) {
  return w == LossWeighting::uniform ? "uniform" : "inverse_t";
}

LossWeighting parse_loss_weighting(std::string_view s) {
  if (s == "uniform") return LossWeighting::uniform;
  if (s == "inverse_t" || s == "inverse-t") return LossWeighting::inverse_t;
  throw UsageError("unknown loss weighting: '" + std::string(s) + "'");
}

namespace {

constexpr double kLayerNormEps = 1e-5;

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <class T>
void layer_norm(const T* x, const T* g, const T* b, T* out, T* mean, T* rstd, std::size_t n,
                std::size_t d) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = x + i * d;
    T mu = 0;
    for (std::size_t c = 0; c < d; ++c) mu += xi[c];
    mu /= T(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (xi[c] - mu) * (xi[c] - mu);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + T(kLayerNormEps));
    for (std::size_t c = 0; c < d; ++c) out[i * d + c] = (xi[c] - mu) * rs * g[c] + b[c];
    mean[i] = mu;
    rstd[i] = rs;
  }
}

// dx += LN backward; dg, db accumulate.
template <class T>
void layer_norm_backward(const T* dy, const T* x, const T* mean, const T* rstd, const T* g,
                         T* dx, T* dg, T* db, std::size_t n, std::size_t d) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = x + i * d;
    const T* dyi = dy + i * d;
    T sum_dxhat = 0;
    T sum_dxhat_xhat = 0;
    for (std::size_t c = 0; c < d; ++c) {
      const T xhat = (xi[c] - mean[i]) * rstd[i];
      const T dxhat = dyi[c] * g[c];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
      dg[c] += dyi[c] * xhat;
      db[c] += dyi[c];
    }
    sum_dxhat /= T(d);
    sum_dxhat_xhat /= T(d);
    for (std::size_t c = 0; c < d; ++c) {
      const T xhat = (xi[c] - mean[i]) * rstd[i];
      dx[i * d + c] += rstd[i] * (dyi[c] * g[c] - sum_dxhat - xhat * sum_dxhat_xhat);
    }
  }
}

template <class T>
void add_bias_grad(const T* dy, T* db, std::size_t n, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) db[j] += dy[i * m + j];
  }
}

template <class T>
std::span<const T> cspan(const std::vector<T>& v) {
  return {v.data(), v.size()};
}

}  // namespace

template <class T>
struct Denoiser<T>::Workspace {
  struct Layer {
    std::vector<T> ln1_out, ln1_mean, ln1_rstd, qkv, att, attn_y;
    std::vector<T> ln2_out, ln2_mean, ln2_rstd, fc_pre, fc_act;
  };
  std::size_t n = 0;
  std::vector<std::vector<T>> resid;  // resid[l] = input to layer l; resid[L] = final
  std::vector<T> x_mid_storage;       // per layer [n x d], concatenated
  std::vector<Layer> layers;
  std::vector<T> lnf_out, lnf_mean, lnf_rstd;

  T* x_mid(std::size_t l, std::size_t d) { return x_mid_storage.data() + l * n * d; }
  const T* x_mid(std::size_t l, std::size_t d) const { return x_mid_storage.data() + l * n * d; }
};

template <class T>
Denoiser<T>::Denoiser(DenoiserConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  build_entries();
  Rng rng(derive_seed(seed, "denoiser-init"));
  for (const auto& e : entries_) {
    auto p = std::span<T>(params_).subspan(e.offset, e.size);
    const bool gain = e.name.ends_with(".g");
    const bool bias = e.name.ends_with(".b");
    if (e.name == "head.w") {
      std::fill(p.begin(), p.end(), T(0));
    } else if (gain) {
      std::fill(p.begin(), p.end(), T(1));
    } else if (bias) {
      std::fill(p.begin(), p.end(), T(0));
    } else {
      for (auto& v : p) v = static_cast<T>(config_.init_std * rng.normal());
    }
  }
}

template <class T>
void Denoiser<T>::build_entries() {
  const int d = config_.d_model;
  const int v = config_.vocab_size;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::vector<int> shape) {
    std::size_t size = 1;
    for (int s : shape) size *= static_cast<std::size_t>(s);
    const bool decay = shape.size() == 2;
    entries_.push_back({std::move(name), std::move(shape), offset, size, decay});
    offset += size;
  };
  add("tok_emb", {v, d});
  add("pos_emb", {config_.max_len, d});
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    add(p + "ln1.g", {d});
    add(p + "ln1.b", {d});
    add(p + "qkv.w", {3 * d, d});
    add(p + "qkv.b", {3 * d});
    add(p + "out.w", {d, d});
    add(p + "out.b", {d});
    add(p + "ln2.g", {d});
    add(p + "ln2.b", {d});
    add(p + "fc.w", {4 * d, d});
    add(p + "fc.b", {4 * d});
    add(p + "proj.w", {d, 4 * d});
    add(p + "proj.b", {d});
  }
  add("lnf.g", {d});
  add("lnf.b", {d});
  if (!config_.tie_embeddings) add("head.w", {v, d});
  add("head.b", {v});
  params_.assign(offset, T(0));
}

template <class T>
const ParamEntry& Denoiser<T>::entry(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw DataError("no parameter named " + std::string(name));
}

template <class T>
std::span<T> Denoiser<T>::param(std::string_view name) {
  const auto& e = entry(name);
  return std::span<T>(params_).subspan(e.offset, e.size);
}

template <class T>
std::span<const T> Denoiser<T>::param(std::string_view name) const {
  const auto& e = entry(name);
  return std::span<const T>(params_).subspan(e.offset, e.size);
}

template <class T>
bool Denoiser<T>::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](T x) { return std::isfinite(x); });
}

template <class T>
template <class U>
Denoiser<U> Denoiser<T>::cast() const {
  Denoiser<U> out(config_, 0);
  out.step = step;
  for (std::size_t i = 0; i < params_.size(); ++i) out.params_[i] = static_cast<U>(params_[i]);
  return out;
}

namespace {

// Parameter layout offsets, resolved by name once per call site.
struct LayerOffsets {
  std::size_t ln1_g, ln1_b, qkv_w, qkv_b, out_w, out_b, ln2_g, ln2_b, fc_w, fc_b, proj_w, proj_b;
};

template <class T>
LayerOffsets layer_offsets(const Denoiser<T>& m, int l) {
  const std::string p = "layer" + std::to_string(l) + ".";
  auto o = [&](const char* s) { return m.entry(p + s).offset; };
  return {o("ln1.g"), o("ln1.b"), o("qkv.w"), o("qkv.b"), o("out.w"), o("out.b"),
          o("ln2.g"), o("ln2.b"), o("fc.w"),  o("fc.b"),  o("proj.w"), o("proj.b")};
}

template <class T>
std::size_t head_offset(const Denoiser<T>& m) {
  return m.config().tie_embeddings ? m.entry("tok_emb").offset : m.entry("head.w").offset;
}

}  // namespace

template <class T>
void Denoiser<T>::run_forward(std::span<const TokenId> ids, Workspace& ws) const {
  const auto n = ids.size();
  if (n == 0) throw UsageError("empty input sequence");
  if (n > static_cast<std::size_t>(config_.max_len)) {
    throw UsageError("input of length " + std::to_string(n) + " exceeds max_len " +
                     std::to_string(config_.max_len));
  }
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto L = static_cast<std::size_t>(config_.n_layers);
  const auto H = static_cast<std::size_t>(config_.n_heads);
  const std::size_t hd = d / H;
  const auto V = static_cast<std::size_t>(config_.vocab_size);
  const T scale = T(1) / std::sqrt(T(hd));
  const T* P = params_.data();

  ws.n = n;
  ws.resid.assign(L + 1, std::vector<T>(n * d));
  ws.x_mid_storage.assign(L * n * d, T(0));
  ws.layers.resize(L);

  const T* tok = P + entry("tok_emb").offset;
  const T* pos = P + entry("pos_emb").offset;
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V) {
      throw DataError("token id out of vocabulary range: " + std::to_string(ids[i]));
    }
    for (std::size_t c = 0; c < d; ++c) {
      ws.resid[0][i * d + c] = tok[static_cast<std::size_t>(ids[i]) * d + c] + pos[i * d + c];
    }
  }

  std::vector<T> qh(n * hd), kh(n * hd), vh(n * hd), yh(n * hd), tmp(n * d), hidden(n * 4 * d);
  for (std::size_t l = 0; l < L; ++l) {
    const auto o = layer_offsets(*this, static_cast<int>(l));
    auto& lw = ws.layers[l];
    const T* x = ws.resid[l].data();
    lw.ln1_out.resize(n * d);
    lw.ln1_mean.resize(n);
    lw.ln1_rstd.resize(n);
    layer_norm(x, P + o.ln1_g, P + o.ln1_b, lw.ln1_out.data(), lw.ln1_mean.data(),
               lw.ln1_rstd.data(), n, d);

    lw.qkv.resize(n * 3 * d);
    kernels::matmul_nt<T>(lw.qkv, cspan(lw.ln1_out), {P + o.qkv_w, 3 * d * d},
                          {P + o.qkv_b, 3 * d}, n, 3 * d, d);

    lw.att.assign(H * n * n, T(0));
    lw.attn_y.assign(n * d, T(0));
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < hd; ++c) {
          qh[i * hd + c] = lw.qkv[i * 3 * d + h * hd + c];
          kh[i * hd + c] = lw.qkv[i * 3 * d + d + h * hd + c];
          vh[i * hd + c] = lw.qkv[i * 3 * d + 2 * d + h * hd + c];
        }
      }
      std::span<T> att(lw.att.data() + h * n * n, n * n);
      kernels::matmul_nt<T>(att, cspan(qh), cspan(kh), {}, n, n, hd);
      for (std::size_t i = 0; i < n; ++i) {
        T* row = att.data() + i * n;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          row[j] *= scale;
          mx = std::max(mx, row[j]);
        }
        T sum = 0;
        for (std::size_t j = 0; j < n; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
      }
      std::fill(yh.begin(), yh.end(), T(0));
      kernels::matmul_nn_acc<T>(yh, std::span<const T>(att), cspan(vh), n, n, hd);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < hd; ++c) lw.attn_y[i * d + h * hd + c] = yh[i * hd + c];
      }
    }

    T* xm = ws.x_mid(l, d);
    kernels::matmul_nt<T>({xm, n * d}, cspan(lw.attn_y), {P + o.out_w, d * d}, {P + o.out_b, d},
                          n, d, d);
    for (std::size_t i = 0; i < n * d; ++i) xm[i] += x[i];

    lw.ln2_out.resize(n * d);
    lw.ln2_mean.resize(n);
    lw.ln2_rstd.resize(n);
    layer_norm(static_cast<const T*>(xm), P + o.ln2_g, P + o.ln2_b, lw.ln2_out.data(),
               lw.ln2_mean.data(), lw.ln2_rstd.data(), n, d);

    lw.fc_pre.resize(n * 4 * d);
    lw.fc_act.resize(n * 4 * d);
    kernels::matmul_nt<T>(lw.fc_pre, cspan(lw.ln2_out), {P + o.fc_w, 4 * d * d},
                          {P + o.fc_b, 4 * d}, n, 4 * d, d);
    for (std::size_t i = 0; i < n * 4 * d; ++i) lw.fc_act[i] = gelu(lw.fc_pre[i]);

    auto& out = ws.resid[l + 1];
    kernels::matmul_nt<T>(out, cspan(lw.fc_act), {P + o.proj_w, 4 * d * d}, {P + o.proj_b, d}, n,
                          d, 4 * d);
    for (std::size_t i = 0; i < n * d; ++i) out[i] += xm[i];
  }

  ws.lnf_out.resize(n * d);
  ws.lnf_mean.resize(n);
  ws.lnf_rstd.resize(n);
  layer_norm(ws.resid[L].data(), P + entry("lnf.g").offset, P + entry("lnf.b").offset,
             ws.lnf_out.data(), ws.lnf_mean.data(), ws.lnf_rstd.data(), n, d);
}

template <class T>
std::vector<T> Denoiser<T>::forward(std::span<const TokenId> ids) const {
  Workspace ws;
  run_forward(ids, ws);
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto V = static_cast<std::size_t>(config_.vocab_size);
  std::vector<T> logits(ws.n * V);
  kernels::matmul_nt<T>(logits, cspan(ws.lnf_out), {params_.data() + head_offset(*this), V * d},
                        param("head.b"), ws.n, V, d);
  return logits;
}

template <class T>
double masked_cross_entropy(std::span<const T> logits, std::size_t vocab,
                            std::span<const TokenId> targets, std::span<const std::uint8_t> mask,
                            std::span<T> dlogits) {
  const std::size_t n = targets.size();
  if (logits.size() != n * vocab || mask.size() != n) {
    throw DataError("masked_cross_entropy: shape mismatch");
  }
  if (!dlogits.empty()) std::fill(dlogits.begin(), dlogits.end(), T(0));
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const T* row = logits.data() + i * vocab;
    T mx = *std::max_element(row, row + vocab);
    T sum = 0;
    for (std::size_t v = 0; v < vocab; ++v) sum += std::exp(row[v] - mx);
    const T lse = mx + std::log(sum);
    const auto t = static_cast<std::size_t>(targets[i]);
    loss += static_cast<double>(lse - row[t]);
    if (!dlogits.empty()) {
      T* drow = dlogits.data() + i * vocab;
      for (std::size_t v = 0; v < vocab; ++v) drow[v] = std::exp(row[v] - lse);
      drow[t] -= T(1);
    }
  }
  return loss;
}

template <class T>
double Denoiser<T>::accumulate_example(const CorruptedSequence& ex, T scale,
                                       std::span<T> grads) const {
  if (grads.size() != params_.size()) throw DataError("gradient buffer has wrong size");
  Workspace ws;
  run_forward(ex.ids, ws);
  const std::size_t n = ws.n;
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto L = static_cast<std::size_t>(config_.n_layers);
  const auto H = static_cast<std::size_t>(config_.n_heads);
  const std::size_t hd = d / H;
  const auto V = static_cast<std::size_t>(config_.vocab_size);
  const T attn_scale = T(1) / std::sqrt(T(hd));
  const T* P = params_.data();
  T* G = grads.data();

  // Output head on masked rows only; unmasked rows carry no loss.
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < n; ++i) {
    if (ex.mask.bits[i]) rows.push_back(i);
  }
  if (rows.empty()) throw DataError("example has no masked position");
  const std::size_t nm = rows.size();
  std::vector<T> feat(nm * d);
  std::vector<TokenId> targets(nm);
  for (std::size_t r = 0; r < nm; ++r) {
    std::copy_n(ws.lnf_out.data() + rows[r] * d, d, feat.data() + r * d);
    targets[r] = ex.clean_ids[rows[r]];
  }
  const std::size_t head_off = head_offset(*this);
  const std::size_t head_b_off = entry("head.b").offset;
  std::vector<T> logits(nm * V), dlogits(nm * V);
  kernels::matmul_nt<T>(logits, cspan(feat), {P + head_off, V * d}, {P + head_b_off, V}, nm, V, d);
  const std::vector<std::uint8_t> all(nm, 1);
  const double loss = masked_cross_entropy<T>(logits, V, targets, all, dlogits);
  for (auto& g : dlogits) g *= scale;

  kernels::matmul_tn_acc<T>({G + head_off, V * d}, cspan(dlogits), cspan(feat), nm, V, d);
  add_bias_grad(dlogits.data(), G + head_b_off, nm, V);
  std::vector<T> dfeat(nm * d, T(0));
  kernels::matmul_nn_acc<T>(dfeat, cspan(dlogits), {P + head_off, V * d}, nm, V, d);
  std::vector<T> dlnf(n * d, T(0));
  for (std::size_t r = 0; r < nm; ++r) std::copy_n(dfeat.data() + r * d, d, dlnf.data() + rows[r] * d);

  // dx: gradient w.r.t. the residual stream, walked backwards layer by layer.
  std::vector<T> dx(n * d, T(0));
  layer_norm_backward(dlnf.data(), ws.resid[L].data(), ws.lnf_mean.data(), ws.lnf_rstd.data(),
                      P + entry("lnf.g").offset, dx.data(), G + entry("lnf.g").offset,
                      G + entry("lnf.b").offset, n, d);

  std::vector<T> dhidden(n * 4 * d), dln(n * d), dattn_y(n * d), dqkv(n * 3 * d);
  std::vector<T> qh(n * hd), kh(n * hd), vh(n * hd), dyh(n * hd), dqh(n * hd), dkh(n * hd),
      dvh(n * hd), dp(n * n);
  for (std::size_t li = L; li-- > 0;) {
    const auto o = layer_offsets(*this, static_cast<int>(li));
    const auto& lw = ws.layers[li];
    const T* xm = ws.x_mid(li, d);

    // MLP branch: out = xm + proj(gelu(fc(ln2(xm)))).
    kernels::matmul_tn_acc<T>({G + o.proj_w, 4 * d * d}, cspan(dx), cspan(lw.fc_act), n, d, 4 * d);
    add_bias_grad(dx.data(), G + o.proj_b, n, d);
    std::fill(dhidden.begin(), dhidden.end(), T(0));
    kernels::matmul_nn_acc<T>(dhidden, cspan(dx), {P + o.proj_w, 4 * d * d}, n, d, 4 * d);
    for (std::size_t i = 0; i < n * 4 * d; ++i) dhidden[i] *= gelu_grad(lw.fc_pre[i]);
    kernels::matmul_tn_acc<T>({G + o.fc_w, 4 * d * d}, cspan(dhidden), cspan(lw.ln2_out), n, 4 * d, d);
    add_bias_grad(dhidden.data(), G + o.fc_b, n, 4 * d);
    std::fill(dln.begin(), dln.end(), T(0));
    kernels::matmul_nn_acc<T>(dln, cspan(dhidden), {P + o.fc_w, 4 * d * d}, n, 4 * d, d);
    // dx now refers to d(loss)/d(xm): residual path plus LN2 path.
    layer_norm_backward(dln.data(), xm, lw.ln2_mean.data(), lw.ln2_rstd.data(), P + o.ln2_g,
                        dx.data(), G + o.ln2_g, G + o.ln2_b, n, d);

    // Attention branch: xm = x + out(attn(ln1(x))).
    kernels::matmul_tn_acc<T>({G + o.out_w, d * d}, cspan(dx), cspan(lw.attn_y), n, d, d);
    add_bias_grad(dx.data(), G + o.out_b, n, d);
    std::fill(dattn_y.begin(), dattn_y.end(), T(0));
    kernels::matmul_nn_acc<T>(dattn_y, cspan(dx), {P + o.out_w, d * d}, n, d, d);

    std::fill(dqkv.begin(), dqkv.end(), T(0));
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < hd; ++c) {
          qh[i * hd + c] = lw.qkv[i * 3 * d + h * hd + c];
          kh[i * hd + c] = lw.qkv[i * 3 * d + d + h * hd + c];
          vh[i * hd + c] = lw.qkv[i * 3 * d + 2 * d + h * hd + c];
          dyh[i * hd + c] = dattn_y[i * d + h * hd + c];
        }
      }
      std::span<const T> att(lw.att.data() + h * n * n, n * n);
      // y = A v  =>  dA = dy v^T, dv = A^T dy.
      kernels::matmul_nt<T>(dp, cspan(dyh), cspan(vh), {}, n, n, hd);
      std::fill(dvh.begin(), dvh.end(), T(0));
      kernels::matmul_tn_acc<T>(dvh, att, cspan(dyh), n, n, hd);
      // Softmax backward, then the 1/sqrt(hd) scale.
      for (std::size_t i = 0; i < n; ++i) {
        const T* a = att.data() + i * n;
        T* g = dp.data() + i * n;
        T s = 0;
        for (std::size_t j = 0; j < n; ++j) s += g[j] * a[j];
        for (std::size_t j = 0; j < n; ++j) g[j] = a[j] * (g[j] - s) * attn_scale;
      }
      std::fill(dqh.begin(), dqh.end(), T(0));
      std::fill(dkh.begin(), dkh.end(), T(0));
      kernels::matmul_nn_acc<T>(dqh, cspan(dp), cspan(kh), n, n, hd);
      kernels::matmul_tn_acc<T>(dkh, cspan(dp), cspan(qh), n, n, hd);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < hd; ++c) {
          dqkv[i * 3 * d + h * hd + c] = dqh[i * hd + c];
          dqkv[i * 3 * d + d + h * hd + c] = dkh[i * hd + c];
          dqkv[i * 3 * d + 2 * d + h * hd + c] = dvh[i * hd + c];
        }
      }
    }
    kernels::matmul_tn_acc<T>({G + o.qkv_w, 3 * d * d}, cspan(dqkv), cspan(lw.ln1_out), n, 3 * d, d);
    add_bias_grad(dqkv.data(), G + o.qkv_b, n, 3 * d);
    std::fill(dln.begin(), dln.end(), T(0));
    kernels::matmul_nn_acc<T>(dln, cspan(dqkv), {P + o.qkv_w, 3 * d * d}, n, 3 * d, d);
    layer_norm_backward(dln.data(), ws.resid[li].data(), lw.ln1_mean.data(), lw.ln1_rstd.data(),
                        P + o.ln1_g, dx.data(), G + o.ln1_g, G + o.ln1_b, n, d);
  }

  T* dtok = G + entry("tok_emb").offset;
  T* dpos = G + entry("pos_emb").offset;
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = static_cast<std::size_t>(ex.ids[i]);
    for (std::size_t c = 0; c < d; ++c) {
      dtok[id * d + c] += dx[i * d + c];
      dpos[i * d + c] += dx[i * d + c];
    }
  }
  return loss;
}

template <class T>
LossAndGrads loss_and_grads(const Denoiser<T>& model, std::span<const CorruptedSequence> batch,
                            LossWeighting weighting, std::vector<T>& grads) {
  if (batch.empty()) throw DataError("empty batch");
  grads.assign(model.params().size(), T(0));
  LossAndGrads out;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    const std::size_t masked = ex.mask.count();
    if (masked == 0) throw DataError("example has no masked position");
    double w = inv_b;
    if (weighting == LossWeighting::inverse_t) w /= ex.mask.noise_level;
    const double l = model.accumulate_example(ex, static_cast<T>(w), grads);
    out.loss += w * l;
    out.masked_positions += masked;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'D', 'F', 'E', 'R'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint truncated");
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Denoiser<float>& model, const std::string& vocab_hash) {
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  auto doc = nlohmann::ordered_json::parse(model.config().to_json());
  doc["vocab_hash"] = vocab_hash;
  doc["step"] = model.step;
  const std::string config = doc.dump();
  put_u32(out, static_cast<std::uint32_t>(config.size()));
  out += config;
  put_u32(out, static_cast<std::uint32_t>(model.entries().size()));
  for (const auto& e : model.entries()) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (int s : e.shape) put_u32(out, static_cast<std::uint32_t>(s));
    const auto p = model.params().subspan(e.offset, e.size);
    for (float v : p) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

void save_checkpoint(const Denoiser<float>& model, const std::string& vocab_hash,
                     const std::string& path) {
  write_file(path, serialize_checkpoint(model, vocab_hash));
}

LoadedCheckpoint parse_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4) != std::string_view(kMagic, 4)) throw DataError("not a DFER checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::string config_text(r.take(r.u32()));
  DenoiserConfig config = DenoiserConfig::from_json(config_text);
  std::string vocab_hash;
  std::int64_t step = 0;
  try {
    auto doc = nlohmann::json::parse(config_text);
    vocab_hash = doc.value("vocab_hash", std::string());
    step = doc.value("step", std::int64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint config: ") + e.what());
  }
  LoadedCheckpoint out{Denoiser<float>(config, 0), vocab_hash};
  out.model.step = step;
  const std::uint32_t count = r.u32();
  if (count != out.model.entries().size()) throw DataError("checkpoint tensor count mismatch");
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string name(r.take(r.u32()));
    const ParamEntry& e = out.model.entry(name);
    const std::uint32_t rank = r.u32();
    if (rank != e.shape.size()) throw DataError("checkpoint rank mismatch for " + name);
    for (std::uint32_t k = 0; k < rank; ++k) {
      if (r.u32() != static_cast<std::uint32_t>(e.shape[k])) {
        throw DataError("checkpoint shape mismatch for " + name);
      }
    }
    auto p = out.model.params().subspan(e.offset, e.size);
    for (auto& v : p) v = std::bit_cast<float>(r.u32());
  }
  if (!r.done()) throw DataError("trailing bytes after checkpoint tensors");
  return out;
}

LoadedCheckpoint load_checkpoint(const std::string& path, const std::string& expected_vocab_hash) {
  LoadedCheckpoint c = parse_checkpoint(read_file(path));
  if (!expected_vocab_hash.empty() && c.vocab_hash != expected_vocab_hash) {
    throw DataError("checkpoint " + path + " was trained with vocabulary " + c.vocab_hash +
                    ", refusing to use it with vocabulary " + expected_vocab_hash);
  }
  return c;
}

template class Denoiser<float>;
template class Denoiser<double>;
template Denoiser<double> Denoiser<float>::cast<double>() const;
template Denoiser<float> Denoiser<double>::cast<float>() const;
template Denoiser<float> Denoiser<float>::cast<float>() const;
template Denoiser<double> Denoiser<double>::cast<double>() const;
template double masked_cross_entropy<float>(std::span<const float>, std::size_t,
                                            std::span<const TokenId>,
                                            std::span<const std::uint8_t>, std::span<float>);
template double masked_cross_entropy<double>(std::span<const double>, std::size_t,
                                             std::span<const TokenId>,
                                             std::span<const std::uint8_t>, std::span<double>);
template LossAndGrads loss_and_grads<float>(const Denoiser<float>&,
                                            std::span<const CorruptedSequence>, LossWeighting,
                                            std::vector<float>&);
template LossAndGrads loss_and_grads<double>(const Denoiser<double>&,
                                             std::span<const CorruptedSequence>, LossWeighting,
                                             std::vector<double>&);

}  // namespace differ
