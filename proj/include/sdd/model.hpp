#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdd/dsp.hpp"
#include "sdd/mat.hpp"

namespace sdd::model {

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int sentence_layers = 4;
  int speech_layers = 2;  // 0 for the segment variant
  int frame_width = 2;
  int n_mels = 128;
  int target_frames = 256;
  int max_sentences = 12;
  double dropout = 0.1;
  int freeze_prefix_layers = 0;
  double init_std = 0.02;
  double pad_value = -23.025850929940457;  // ln(1e-10), must match the dsp pad constant
  uint64_t seed = 1;
  std::string variant = "speech";  // "speech" | "segment"

  int head_dim() const { return d_model / n_heads; }
  int frame_tokens() const { return target_frames / frame_width; }
  int patch_dim() const { return n_mels * frame_width; }
  bool has_speech_block() const { return speech_layers > 0; }

  void validate() const {
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
      throw std::invalid_argument("model: d_model must be divisible by n_heads");
    if (frame_width <= 0 || target_frames % frame_width != 0)
      throw std::invalid_argument("model: frame_width must divide target_frames");
    if (sentence_layers < 1) throw std::invalid_argument("model: need sentence layers");
    if (max_sentences < 1) throw std::invalid_argument("model: max_sentences must be >= 1");
    if (variant != "speech" && variant != "segment")
      throw std::invalid_argument("model: unknown variant '" + variant + "'");
    if (variant == "speech" && speech_layers < 1)
      throw std::invalid_argument("model: speech variant needs speech layers");
  }
};

enum class RunMode { kEval, kTrain };

// Post-softmax attention probabilities per layer and head, plus the gradients
// of the target logit with respect to them once backward() has run.
template <class T>
struct BlockTrace {
  std::vector<std::vector<Mat<T>>> attn;
  std::vector<std::vector<Mat<T>>> grad_attn;
  std::vector<uint8_t> token_valid;

  bool has_gradients() const { return !grad_attn.empty(); }
};

// Additive perturbation injected into one post-softmax attention entry;
// test hook for finite-difference checks of grad_attn.
struct AttnInjection {
  int block = 0;  // 0 = sentence block, 1 = speech block
  int sentence = 0;
  int layer = 0;
  int head = 0;
  int row = 0;
  int col = 0;
  double eps = 0.0;
};

template <class T>
struct LayerParams {
  Mat<T> ln1_g, ln1_b;
  Mat<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Mat<T> ln2_g, ln2_b;
  Mat<T> w1, b1, w2, b2;
};

template <class T>
struct EncoderParams {
  std::vector<LayerParams<T>> layers;
  Mat<T> lnf_g, lnf_b;
};

template <class T>
struct Params {
  Mat<T> patch_w, patch_b;
  Mat<T> sent_pos, sent_cls;
  EncoderParams<T> sent;
  Mat<T> speech_pos, speech_cls;
  EncoderParams<T> speech;
  Mat<T> head_w, head_b;

  struct Named {
    std::string name;
    Mat<T>* mat;
  };

  std::vector<Named> tensors() {
    std::vector<Named> out;
    auto add = [&out](const std::string& name, Mat<T>& m) { out.push_back({name, &m}); };
    add("patch.w", patch_w);
    add("patch.b", patch_b);
    add("sent.pos", sent_pos);
    add("sent.cls", sent_cls);
    auto add_block = [&](const std::string& prefix, EncoderParams<T>& ep) {
      for (size_t l = 0; l < ep.layers.size(); ++l) {
        auto& lp = ep.layers[l];
        const std::string p = prefix + ".layer" + std::to_string(l) + ".";
        add(p + "ln1.g", lp.ln1_g);
        add(p + "ln1.b", lp.ln1_b);
        add(p + "wq", lp.wq);
        add(p + "bq", lp.bq);
        add(p + "wk", lp.wk);
        add(p + "bk", lp.bk);
        add(p + "wv", lp.wv);
        add(p + "bv", lp.bv);
        add(p + "wo", lp.wo);
        add(p + "bo", lp.bo);
        add(p + "ln2.g", lp.ln2_g);
        add(p + "ln2.b", lp.ln2_b);
        add(p + "w1", lp.w1);
        add(p + "b1", lp.b1);
        add(p + "w2", lp.w2);
        add(p + "b2", lp.b2);
      }
      add(prefix + ".lnf.g", ep.lnf_g);
      add(prefix + ".lnf.b", ep.lnf_b);
    };
    add_block("sent", sent);
    if (!speech.layers.empty() || speech_pos.rows > 0) {
      add("speech.pos", speech_pos);
      add("speech.cls", speech_cls);
      add_block("speech", speech);
    }
    add("head.w", head_w);
    add("head.b", head_b);
    return out;
  }

  void set_zero() {
    for (auto& t : tensors()) t.mat->set_zero();
  }
};

template <class T>
struct LayerTape {
  Mat<T> x_in, ln1_out, q, k, vv, attn_concat, x_mid, ln2_out, ff_pre, ff_act;
  Mat<T> proj_drop, ff_drop;  // dropout masks, empty in eval mode
  std::vector<T> ln1_mean, ln1_istd, ln2_mean, ln2_istd;
};

template <class T>
struct EncoderTape {
  std::vector<LayerTape<T>> layers;
  Mat<T> x_final;
  Mat<T> lnf_out;
  std::vector<T> lnf_mean, lnf_istd;
};

template <class T>
struct SentencePass {
  Mat<T> patches;              // [frame_tokens_used x patch_dim]
  Mat<T> tokens;               // embedded input [n x d]
  std::vector<uint8_t> valid;  // per-token key mask
  EncoderTape<T> tape;
  BlockTrace<T> trace;
  Mat<T> cls;  // [1 x d] sentence embedding e_ij
  int n_tokens = 0;
  int n_frame_tokens = 0;
  bool complete = false;
};

template <class T>
struct SegmentPass {
  SentencePass<T> sentence;
  std::array<T, 2> logits{};
  bool complete = false;
};

template <class T>
struct SpeechPass {
  std::vector<SentencePass<T>> sentences;
  Mat<T> e_pre;   // [n x d] sentence embeddings before positional add
  Mat<T> tokens;  // [n+1 x d] speech block input
  std::vector<uint8_t> valid;
  EncoderTape<T> tape;
  BlockTrace<T> trace;
  Mat<T> r;  // [1 x d]
  std::array<T, 2> logits{};
  int n_sentences = 0;
  bool complete = false;
};

namespace detail {

template <class T>
inline void check_finite(const Mat<T>& x, const char* block, int layer) {
  for (const T& v : x.v) {
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("non-finite activation in ") + block + " layer " +
                               std::to_string(layer));
  }
}

// y = LN(x) * g + b, rowwise; saves mean and 1/std per row.
template <class T>
inline void layernorm_fwd(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b, Mat<T>& y,
                          std::vector<T>& mean, std::vector<T>& istd) {
  const int n = x.rows, d = x.cols;
  const T eps = T(1e-5);
  y = Mat<T>(n, d);
  mean.resize(n);
  istd.resize(n);
  for (int i = 0; i < n; ++i) {
    const T* xr = x.row(i);
    T mu = 0;
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= d;
    T var = 0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= d;
    const T is = T(1) / std::sqrt(var + eps);
    mean[i] = mu;
    istd[i] = is;
    T* yr = y.row(i);
    for (int j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * is * g.v[j] + b.v[j];
  }
}

// dx += backward of layernorm; accumulates dg, db.
template <class T>
inline void layernorm_bwd(const Mat<T>& dy, const Mat<T>& x, const std::vector<T>& mean,
                          const std::vector<T>& istd, const Mat<T>& g, Mat<T>& dx, Mat<T>& dg,
                          Mat<T>& db) {
  const int n = x.rows, d = x.cols;
  std::vector<T> xhat(d), dxh(d);
  for (int i = 0; i < n; ++i) {
    const T* xr = x.row(i);
    const T* dyr = dy.row(i);
    T* dxr = dx.row(i);
    const T is = istd[i];
    T m1 = 0, m2 = 0;
    for (int j = 0; j < d; ++j) {
      xhat[j] = (xr[j] - mean[i]) * is;
      dxh[j] = dyr[j] * g.v[j];
      m1 += dxh[j];
      m2 += dxh[j] * xhat[j];
      dg.v[j] += dyr[j] * xhat[j];
      db.v[j] += dyr[j];
    }
    m1 /= d;
    m2 /= d;
    for (int j = 0; j < d; ++j) dxr[j] += is * (dxh[j] - m1 - xhat[j] * m2);
  }
}

// y = x * w + b (bias broadcast over rows).
template <class T>
inline void linear_fwd(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b, Mat<T>& y) {
  y = Mat<T>(x.rows, w.cols);
  la::gemm_nn(false, x.rows, x.cols, w.cols, x.data(), x.cols, w.data(), w.cols, y.data(),
              y.cols);
  for (int i = 0; i < y.rows; ++i) {
    T* yr = y.row(i);
    for (int j = 0; j < y.cols; ++j) yr[j] += b.v[j];
  }
}

// dx = dy * w^T; dw += x^T * dy; db += colsum(dy).
template <class T>
inline void linear_bwd(const Mat<T>& dy, const Mat<T>& x, const Mat<T>& w, Mat<T>& dx, Mat<T>& dw,
                       Mat<T>& db) {
  dx = Mat<T>(x.rows, x.cols);
  la::gemm_nt(false, dy.rows, dy.cols, w.rows, dy.data(), dy.cols, w.data(), w.cols, dx.data(),
              dx.cols);
  la::gemm_tn(true, w.rows, x.rows, w.cols, x.data(), x.cols, dy.data(), dy.cols, dw.data(),
              dw.cols);
  for (int i = 0; i < dy.rows; ++i) {
    const T* dyr = dy.row(i);
    for (int j = 0; j < dy.cols; ++j) db.v[j] += dyr[j];
  }
}

template <class T>
inline T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <class T>
inline T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(-x * x / T(2)) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

template <class T>
inline void softmax_rows_masked(Mat<T>& a, const std::vector<uint8_t>& valid) {
  const int n = a.rows;
  for (int i = 0; i < n; ++i) {
    T* r = a.row(i);
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < n; ++j) {
      if (!valid[j]) continue;
      mx = std::max(mx, r[j]);
    }
    T sum = 0;
    for (int j = 0; j < n; ++j) {
      if (valid[j]) {
        r[j] = std::exp(r[j] - mx);
        sum += r[j];
      } else {
        r[j] = T(0);
      }
    }
    for (int j = 0; j < n; ++j) r[j] /= sum;
  }
}

// ds = a .* (da - rowdot(da, a)), in place on da.
template <class T>
inline void softmax_bwd_rows(const Mat<T>& a, Mat<T>& da) {
  for (int i = 0; i < a.rows; ++i) {
    const T* ar = a.row(i);
    T* dr = da.row(i);
    T dot = 0;
    for (int j = 0; j < a.cols; ++j) dot += dr[j] * ar[j];
    for (int j = 0; j < a.cols; ++j) dr[j] = ar[j] * (dr[j] - dot);
  }
}

template <class T>
inline Mat<T> dropout_mask(int rows, int cols, T p, std::mt19937_64& rng) {
  Mat<T> m(rows, cols);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const T keep_scale = T(1) / (T(1) - p);
  for (auto& v : m.v) v = (u(rng) < static_cast<double>(p)) ? T(0) : keep_scale;
  return m;
}

template <class T>
inline void apply_mask(Mat<T>& x, const Mat<T>& mask) {
  for (size_t i = 0; i < x.v.size(); ++i) x.v[i] *= mask.v[i];
}

template <class T>
void encoder_forward(const EncoderParams<T>& ep, int n_heads, Mat<T>& x,
                     const std::vector<uint8_t>& valid, EncoderTape<T>& tape,
                     BlockTrace<T>& trace, RunMode mode, T dropout_p, std::mt19937_64* rng,
                     const AttnInjection* inj, const char* block_name) {
  const int n = x.rows, d = x.cols, h = n_heads, dh = d / h;
  const T scale = T(1) / std::sqrt(T(dh));
  const int n_layers = static_cast<int>(ep.layers.size());
  const bool train = mode == RunMode::kTrain && dropout_p > 0;
  if (train && !rng) throw std::invalid_argument("encoder: training mode needs an rng");

  tape.layers.resize(n_layers);
  trace.attn.assign(n_layers, {});
  trace.grad_attn.clear();
  trace.token_valid = valid;

  Mat<T> proj, u;
  for (int l = 0; l < n_layers; ++l) {
    const auto& lp = ep.layers[l];
    auto& lt = tape.layers[l];
    lt.x_in = x;
    layernorm_fwd(x, lp.ln1_g, lp.ln1_b, lt.ln1_out, lt.ln1_mean, lt.ln1_istd);
    linear_fwd(lt.ln1_out, lp.wq, lp.bq, lt.q);
    linear_fwd(lt.ln1_out, lp.wk, lp.bk, lt.k);
    linear_fwd(lt.ln1_out, lp.wv, lp.bv, lt.vv);

    lt.attn_concat = Mat<T>(n, d);
    trace.attn[l].resize(h);
    for (int head = 0; head < h; ++head) {
      Mat<T>& a = trace.attn[l][head];
      a = Mat<T>(n, n);
      la::gemm_nt(false, n, dh, n, lt.q.data() + head * dh, d, lt.k.data() + head * dh, d,
                  a.data(), n);
      for (T& v : a.v) v *= scale;
      softmax_rows_masked(a, valid);
      if (inj && inj->layer == l && inj->head == head) a(inj->row, inj->col) += T(inj->eps);
      la::gemm_nn(false, n, n, dh, a.data(), n, lt.vv.data() + head * dh, d,
                  lt.attn_concat.data() + head * dh, d);
    }

    linear_fwd(lt.attn_concat, lp.wo, lp.bo, proj);
    if (train) {
      lt.proj_drop = dropout_mask<T>(n, d, T(dropout_p), *rng);
      apply_mask(proj, lt.proj_drop);
    }
    lt.x_mid = Mat<T>(n, d);
    for (size_t i = 0; i < lt.x_mid.v.size(); ++i) lt.x_mid.v[i] = lt.x_in.v[i] + proj.v[i];

    layernorm_fwd(lt.x_mid, lp.ln2_g, lp.ln2_b, lt.ln2_out, lt.ln2_mean, lt.ln2_istd);
    linear_fwd(lt.ln2_out, lp.w1, lp.b1, lt.ff_pre);
    lt.ff_act = Mat<T>(lt.ff_pre.rows, lt.ff_pre.cols);
    for (size_t i = 0; i < lt.ff_pre.v.size(); ++i) lt.ff_act.v[i] = gelu(lt.ff_pre.v[i]);
    linear_fwd(lt.ff_act, lp.w2, lp.b2, u);
    if (train) {
      lt.ff_drop = dropout_mask<T>(n, d, T(dropout_p), *rng);
      apply_mask(u, lt.ff_drop);
    }
    x = Mat<T>(n, d);
    for (size_t i = 0; i < x.v.size(); ++i) x.v[i] = lt.x_mid.v[i] + u.v[i];
    check_finite(x, block_name, l);
  }
  tape.x_final = x;
  layernorm_fwd(x, ep.lnf_g, ep.lnf_b, tape.lnf_out, tape.lnf_mean, tape.lnf_istd);
}

// d_lnf_out: gradient on the block output (post final LN). Returns the
// gradient on the block input and accumulates parameter gradients.
template <class T>
Mat<T> encoder_backward(const EncoderParams<T>& ep, EncoderParams<T>& gp, int n_heads,
                        const EncoderTape<T>& tape, BlockTrace<T>& trace,
                        const Mat<T>& d_lnf_out, bool record_grad_attn) {
  const int n = tape.x_final.rows, d = tape.x_final.cols, h = n_heads, dh = d / h;
  const T scale = T(1) / std::sqrt(T(dh));
  const int n_layers = static_cast<int>(ep.layers.size());

  if (record_grad_attn) trace.grad_attn.assign(n_layers, std::vector<Mat<T>>(h));

  Mat<T> dx(n, d);
  layernorm_bwd(d_lnf_out, tape.x_final, tape.lnf_mean, tape.lnf_istd, ep.lnf_g, dx, gp.lnf_g,
                gp.lnf_b);

  for (int l = n_layers - 1; l >= 0; --l) {
    const auto& lp = ep.layers[l];
    const auto& lt = tape.layers[l];
    auto& lg = gp.layers[l];

    // x_out = x_mid + drop(ff2(gelu(ff1(ln2(x_mid)))))
    Mat<T> du = dx;
    if (lt.ff_drop.rows > 0) apply_mask(du, lt.ff_drop);
    Mat<T> dact;
    linear_bwd(du, lt.ff_act, lp.w2, dact, lg.w2, lg.b2);
    for (size_t i = 0; i < dact.v.size(); ++i) dact.v[i] *= gelu_grad(lt.ff_pre.v[i]);
    Mat<T> dln2;
    linear_bwd(dact, lt.ln2_out, lp.w1, dln2, lg.w1, lg.b1);
    Mat<T> dx_mid = dx;  // residual branch
    layernorm_bwd(dln2, lt.x_mid, lt.ln2_mean, lt.ln2_istd, lp.ln2_g, dx_mid, lg.ln2_g,
                  lg.ln2_b);

    // x_mid = x_in + drop(proj(attn))
    Mat<T> dproj = dx_mid;
    if (lt.proj_drop.rows > 0) apply_mask(dproj, lt.proj_drop);
    Mat<T> dconcat;
    linear_bwd(dproj, lt.attn_concat, lp.wo, dconcat, lg.wo, lg.bo);

    Mat<T> dq(n, d), dk(n, d), dv(n, d);
    for (int head = 0; head < h; ++head) {
      const Mat<T>& a = trace.attn[l][head];
      Mat<T> da(n, n);
      la::gemm_nt(false, n, dh, n, dconcat.data() + head * dh, d, lt.vv.data() + head * dh, d,
                  da.data(), n);
      if (record_grad_attn) trace.grad_attn[l][head] = da;
      la::gemm_tn(false, n, n, dh, a.data(), n, dconcat.data() + head * dh, d,
                  dv.data() + head * dh, d);
      softmax_bwd_rows(a, da);  // da becomes dS
      la::gemm_nn(false, n, n, dh, da.data(), n, lt.k.data() + head * dh, d,
                  dq.data() + head * dh, d);
      la::gemm_tn(false, n, n, dh, da.data(), n, lt.q.data() + head * dh, d,
                  dk.data() + head * dh, d);
    }
    for (T& v : dq.v) v *= scale;
    for (T& v : dk.v) v *= scale;

    Mat<T> dln1(n, d), tmp;
    la::gemm_nt(false, n, d, d, dq.data(), d, lp.wq.data(), d, dln1.data(), d);
    la::gemm_nt(true, n, d, d, dk.data(), d, lp.wk.data(), d, dln1.data(), d);
    la::gemm_nt(true, n, d, d, dv.data(), d, lp.wv.data(), d, dln1.data(), d);
    la::gemm_tn(true, d, n, d, lt.ln1_out.data(), d, dq.data(), d, lg.wq.data(), d);
    la::gemm_tn(true, d, n, d, lt.ln1_out.data(), d, dk.data(), d, lg.wk.data(), d);
    la::gemm_tn(true, d, n, d, lt.ln1_out.data(), d, dv.data(), d, lg.wv.data(), d);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) {
        lg.bq.v[j] += dq(i, j);
        lg.bk.v[j] += dk(i, j);
        lg.bv.v[j] += dv(i, j);
      }
    }

    Mat<T> dx_in = dx_mid;  // residual branch
    layernorm_bwd(dln1, lt.x_in, lt.ln1_mean, lt.ln1_istd, lp.ln1_g, dx_in, lg.ln1_g, lg.ln1_b);
    dx = std::move(dx_in);
  }
  return dx;
}

}  // namespace detail

template <class T>
inline std::array<T, 2> softmax2(const std::array<T, 2>& logits) {
  const T mx = std::max(logits[0], logits[1]);
  const T e0 = std::exp(logits[0] - mx), e1 = std::exp(logits[1] - mx);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

template <class T>
inline T cross_entropy2(const std::array<T, 2>& logits, int label) {
  const auto p = softmax2(logits);
  return -std::log(std::max(p[label], std::numeric_limits<T>::min()));
}

template <class T>
class Net {
 public:
  ModelConfig cfg;
  Params<T> params;

  explicit Net(const ModelConfig& c) : cfg(c) {
    cfg.validate();
    allocate();
    init_weights();
  }

  Net(const ModelConfig& c, Params<T> p) : cfg(c), params(std::move(p)) { cfg.validate(); }

  // Tokenizes a padded spectrogram: one learned [cls] token plus one token
  // per 128 x frame_width slice. Tokens past the valid region are dropped
  // (padding is a contiguous suffix); a token is masked when none of its
  // source frames survive (validity and optional ablation).
  void embed_sentence(const dsp::MelSpectrogram& spec,
                      const std::vector<uint8_t>* frame_ablation, Mat<T>& tokens, Mat<T>& patches,
                      std::vector<uint8_t>& valid, int& n_frame_tokens) const {
    if (spec.n_mels != cfg.n_mels || spec.n_frames != cfg.target_frames)
      throw std::invalid_argument("embed_sentence: spectrogram not padded to target shape");
    if (spec.valid_frames < 1 || spec.valid_frames > spec.n_frames)
      throw std::invalid_argument("embed_sentence: no valid frames");
    const int width = cfg.frame_width;
    const int nft = std::min((spec.valid_frames + width - 1) / width, cfg.frame_tokens());
    n_frame_tokens = nft;
    const int n = 1 + nft;
    const int pd = cfg.patch_dim();
    const T pad = T(cfg.pad_value);

    patches = Mat<T>(nft, pd);
    for (int p = 0; p < nft; ++p) {
      T* pr = patches.row(p);
      for (int f = 0; f < width; ++f) {
        const int frame = p * width + f;
        for (int m = 0; m < cfg.n_mels; ++m) {
          pr[f * cfg.n_mels + m] = frame < spec.valid_frames ? T(spec.at(m, frame)) : pad;
        }
      }
    }

    tokens = Mat<T>(n, cfg.d_model);
    for (int j = 0; j < cfg.d_model; ++j) tokens(0, j) = params.sent_cls.v[j];
    la::gemm_nn(false, nft, pd, cfg.d_model, patches.data(), pd, params.patch_w.data(),
                cfg.d_model, tokens.row(1), cfg.d_model);
    for (int p = 0; p < nft; ++p) {
      T* tr = tokens.row(p + 1);
      const T* pos = params.sent_pos.row(p);
      for (int j = 0; j < cfg.d_model; ++j) tr[j] += params.patch_b.v[j] + pos[j];
    }

    valid.assign(n, 0);
    valid[0] = 1;
    for (int p = 0; p < nft; ++p) {
      bool any = false;
      for (int f = 0; f < width && !any; ++f) {
        const int frame = p * width + f;
        if (frame >= spec.valid_frames) continue;
        if (frame_ablation && frame < static_cast<int>(frame_ablation->size()) &&
            (*frame_ablation)[frame])
          continue;
        any = true;
      }
      valid[p + 1] = any ? 1 : 0;
    }
  }

  SentencePass<T> sentence_forward(const dsp::MelSpectrogram& spec, RunMode mode,
                                   std::mt19937_64* rng,
                                   const std::vector<uint8_t>* frame_ablation = nullptr,
                                   const AttnInjection* inj = nullptr) const {
    SentencePass<T> pass;
    embed_sentence(spec, frame_ablation, pass.tokens, pass.patches, pass.valid,
                   pass.n_frame_tokens);
    pass.n_tokens = pass.tokens.rows;
    Mat<T> x = pass.tokens;
    detail::encoder_forward(params.sent, cfg.n_heads, x, pass.valid, pass.tape, pass.trace, mode,
                            T(cfg.dropout), rng, inj, "sentence block");
    pass.cls = Mat<T>(1, cfg.d_model);
    for (int j = 0; j < cfg.d_model; ++j) pass.cls.v[j] = pass.tape.lnf_out(0, j);
    pass.complete = true;
    return pass;
  }

  SpeechPass<T> speech_forward(const std::vector<const dsp::MelSpectrogram*>& specs, RunMode mode,
                               std::mt19937_64* rng = nullptr,
                               const std::vector<const std::vector<uint8_t>*>* ablations = nullptr,
                               const AttnInjection* inj = nullptr) const {
    if (!cfg.has_speech_block())
      throw std::logic_error("speech_forward: segment variant has no speech block");
    if (specs.empty()) throw std::invalid_argument("speech_forward: empty speech");
    SpeechPass<T> pass;
    pass.n_sentences = std::min<int>(static_cast<int>(specs.size()), cfg.max_sentences);
    const int n = pass.n_sentences;
    const int d = cfg.d_model;

    pass.sentences.reserve(n);
    pass.e_pre = Mat<T>(n, d);
    for (int j = 0; j < n; ++j) {
      const std::vector<uint8_t>* abl =
          ablations && j < static_cast<int>(ablations->size()) ? (*ablations)[j] : nullptr;
      const AttnInjection* sent_inj = inj && inj->block == 0 && inj->sentence == j ? inj : nullptr;
      pass.sentences.push_back(sentence_forward(*specs[j], mode, rng, abl, sent_inj));
      for (int c = 0; c < d; ++c) pass.e_pre(j, c) = pass.sentences.back().cls.v[c];
    }

    pass.tokens = Mat<T>(n + 1, d);
    for (int c = 0; c < d; ++c) pass.tokens(0, c) = params.speech_cls.v[c];
    for (int j = 0; j < n; ++j) {
      const T* pos = params.speech_pos.row(j);
      for (int c = 0; c < d; ++c) pass.tokens(j + 1, c) = pass.e_pre(j, c) + pos[c];
    }
    pass.valid.assign(n + 1, 1);
    Mat<T> x = pass.tokens;
    const AttnInjection* speech_inj = inj && inj->block == 1 ? inj : nullptr;
    detail::encoder_forward(params.speech, cfg.n_heads, x, pass.valid, pass.tape, pass.trace,
                            mode, T(cfg.dropout), rng, speech_inj, "speech block");
    pass.r = Mat<T>(1, d);
    for (int c = 0; c < d; ++c) pass.r.v[c] = pass.tape.lnf_out(0, c);
    pass.logits = head_logits(pass.r);
    pass.complete = true;
    return pass;
  }

  // Speech-block head pass over precomputed sentence embeddings (rows of
  // e_pre, in sentence order). Lets perturbation sweeps reuse cached
  // sentence encodings.
  std::array<T, 2> speech_logits_from_embeddings(const Mat<T>& e_pre) const {
    if (!cfg.has_speech_block())
      throw std::logic_error("speech_logits_from_embeddings: no speech block");
    const int n = e_pre.rows;
    if (n < 1) throw std::invalid_argument("speech_logits_from_embeddings: empty speech");
    if (n > cfg.max_sentences)
      throw std::invalid_argument("speech_logits_from_embeddings: too many sentences");
    const int d = cfg.d_model;
    Mat<T> x(n + 1, d);
    for (int c = 0; c < d; ++c) x(0, c) = params.speech_cls.v[c];
    for (int j = 0; j < n; ++j) {
      const T* pos = params.speech_pos.row(j);
      for (int c = 0; c < d; ++c) x(j + 1, c) = e_pre(j, c) + pos[c];
    }
    std::vector<uint8_t> valid(n + 1, 1);
    EncoderTape<T> tape;
    BlockTrace<T> trace;
    detail::encoder_forward(params.speech, cfg.n_heads, x, valid, tape, trace, RunMode::kEval,
                            T(0), nullptr, nullptr, "speech block");
    Mat<T> r(1, d);
    for (int c = 0; c < d; ++c) r.v[c] = tape.lnf_out(0, c);
    return head_logits(r);
  }

  SegmentPass<T> segment_forward(const dsp::MelSpectrogram& spec, RunMode mode = RunMode::kEval,
                                 std::mt19937_64* rng = nullptr,
                                 const std::vector<uint8_t>* frame_ablation = nullptr,
                                 const AttnInjection* inj = nullptr) const {
    SegmentPass<T> pass;
    pass.sentence = sentence_forward(spec, mode, rng, frame_ablation, inj);
    pass.logits = head_logits(pass.sentence.cls);
    pass.complete = true;
    return pass;
  }

  void backward_speech(SpeechPass<T>& pass, const std::array<T, 2>& dlogits, Params<T>& grads,
                       bool record_grad_attn = false) const {
    if (!pass.complete) throw std::logic_error("backward: no forward pass recorded");
    const int n = pass.n_sentences, d = cfg.d_model;
    Mat<T> dr = head_backward(pass.r, dlogits, grads);

    Mat<T> d_lnf(n + 1, d);
    for (int c = 0; c < d; ++c) d_lnf(0, c) = dr.v[c];
    Mat<T> dtok = detail::encoder_backward(params.speech, grads.speech, cfg.n_heads, pass.tape,
                                           pass.trace, d_lnf, record_grad_attn);
    for (int c = 0; c < d; ++c) grads.speech_cls.v[c] += dtok(0, c);
    for (int j = 0; j < n; ++j) {
      T* gp = grads.speech_pos.row(j);
      for (int c = 0; c < d; ++c) gp[c] += dtok(j + 1, c);
    }
    for (int j = 0; j < n; ++j) {
      Mat<T> de(1, d);
      for (int c = 0; c < d; ++c) de.v[c] = dtok(j + 1, c);
      backward_sentence(pass.sentences[j], de, grads, record_grad_attn);
    }
  }

  void backward_segment(SegmentPass<T>& pass, const std::array<T, 2>& dlogits, Params<T>& grads,
                        bool record_grad_attn = false) const {
    if (!pass.complete) throw std::logic_error("backward: no forward pass recorded");
    Mat<T> de = head_backward(pass.sentence.cls, dlogits, grads);
    backward_sentence(pass.sentence, de, grads, record_grad_attn);
  }

  std::array<T, 2> head_logits(const Mat<T>& r) const {
    std::array<T, 2> out{};
    for (int c = 0; c < 2; ++c) {
      T acc = params.head_b.v[c];
      for (int j = 0; j < cfg.d_model; ++j) acc += r.v[j] * params.head_w(j, c);
      out[c] = acc;
    }
    if (!std::isfinite(out[0]) || !std::isfinite(out[1]))
      throw std::runtime_error("non-finite logits");
    return out;
  }

 private:
  void backward_sentence(SentencePass<T>& sp, const Mat<T>& d_cls, Params<T>& grads,
                         bool record_grad_attn) const {
    const int d = cfg.d_model;
    Mat<T> d_lnf(sp.n_tokens, d);
    for (int c = 0; c < d; ++c) d_lnf(0, c) = d_cls.v[c];
    Mat<T> dtok = detail::encoder_backward(params.sent, grads.sent, cfg.n_heads, sp.tape,
                                           sp.trace, d_lnf, record_grad_attn);
    for (int c = 0; c < d; ++c) grads.sent_cls.v[c] += dtok(0, c);
    const int nft = sp.n_frame_tokens;
    for (int p = 0; p < nft; ++p) {
      T* gp = grads.sent_pos.row(p);
      const T* dr = dtok.row(p + 1);
      for (int c = 0; c < d; ++c) gp[c] += dr[c];
    }
    const int pd = cfg.patch_dim();
    la::gemm_tn(true, pd, nft, d, sp.patches.data(), pd, dtok.row(1), d, grads.patch_w.data(),
                d);
    for (int p = 0; p < nft; ++p) {
      const T* dr = dtok.row(p + 1);
      for (int c = 0; c < d; ++c) grads.patch_b.v[c] += dr[c];
    }
  }

  Mat<T> head_backward(const Mat<T>& r, const std::array<T, 2>& dlogits, Params<T>& grads) const {
    const int d = cfg.d_model;
    Mat<T> dr(1, d);
    for (int j = 0; j < d; ++j) {
      dr.v[j] = dlogits[0] * params.head_w(j, 0) + dlogits[1] * params.head_w(j, 1);
      grads.head_w(j, 0) += r.v[j] * dlogits[0];
      grads.head_w(j, 1) += r.v[j] * dlogits[1];
    }
    grads.head_b.v[0] += dlogits[0];
    grads.head_b.v[1] += dlogits[1];
    return dr;
  }

  void allocate() {
    params = shaped_params(cfg);
  }

 public:
  static Params<T> shaped_params(const ModelConfig& cfg) {
    Params<T> p;
    const int d = cfg.d_model;
    p.patch_w = Mat<T>(cfg.patch_dim(), d);
    p.patch_b = Mat<T>(1, d);
    p.sent_pos = Mat<T>(cfg.frame_tokens(), d);
    p.sent_cls = Mat<T>(1, d);
    auto make_block = [&](EncoderParams<T>& ep, int layers) {
      ep.layers.resize(layers);
      for (auto& lp : ep.layers) {
        lp.ln1_g = Mat<T>(1, d);
        lp.ln1_b = Mat<T>(1, d);
        lp.wq = Mat<T>(d, d);
        lp.bq = Mat<T>(1, d);
        lp.wk = Mat<T>(d, d);
        lp.bk = Mat<T>(1, d);
        lp.wv = Mat<T>(d, d);
        lp.bv = Mat<T>(1, d);
        lp.wo = Mat<T>(d, d);
        lp.bo = Mat<T>(1, d);
        lp.ln2_g = Mat<T>(1, d);
        lp.ln2_b = Mat<T>(1, d);
        lp.w1 = Mat<T>(d, 4 * d);
        lp.b1 = Mat<T>(1, 4 * d);
        lp.w2 = Mat<T>(4 * d, d);
        lp.b2 = Mat<T>(1, d);
      }
      ep.lnf_g = Mat<T>(1, d);
      ep.lnf_b = Mat<T>(1, d);
    };
    make_block(p.sent, cfg.sentence_layers);
    if (cfg.has_speech_block()) {
      p.speech_pos = Mat<T>(cfg.max_sentences, d);
      p.speech_cls = Mat<T>(1, d);
      make_block(p.speech, cfg.speech_layers);
    }
    p.head_w = Mat<T>(d, 2);
    p.head_b = Mat<T>(1, 2);
    return p;
  }

 private:
  void init_weights() {
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> dist(0.0, cfg.init_std);
    auto fill_normal = [&](Mat<T>& m) {
      for (auto& v : m.v) v = T(dist(rng));
    };
    auto fill_ones = [](Mat<T>& m) { std::fill(m.v.begin(), m.v.end(), T(1)); };
    for (auto& t : params.tensors()) {
      const auto& name = t.name;
      const bool is_gamma = name.ends_with("ln1.g") || name.ends_with("ln2.g") ||
                            name.ends_with("lnf.g");
      const bool is_bias = name.ends_with(".b") || name.ends_with("bq") ||
                           name.ends_with("bk") || name.ends_with("bv") || name.ends_with("bo") ||
                           name.ends_with("b1") || name.ends_with("b2");
      if (is_gamma)
        fill_ones(*t.mat);
      else if (is_bias)
        t.mat->set_zero();
      else
        fill_normal(*t.mat);
    }
  }
};

}  // namespace sdd::model
