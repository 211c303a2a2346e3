#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "agediff/conditioning.hpp"
#include "agediff/ops.hpp"
#include "agediff/rng.hpp"
#include "agediff/synthface.hpp"
#include "agediff/tensor.hpp"

namespace agediff {

inline constexpr int kPatch = 4;
inline constexpr int kTokens = (kImageSize / kPatch) * (kImageSize / kPatch);
inline constexpr int kPatchVals = kPatch * kPatch;
inline constexpr int kFFDim = 128;
inline constexpr int kBlocks = 4;

template <class S>
using NamedTensors = std::vector<std::pair<std::string, TensorT<S>>>;

template <class S>
struct SelfAttnParamsT {
  TensorT<S> wq, wk, wv, wo, bo;

  static SelfAttnParamsT init(Rng& rng) {
    SelfAttnParamsT p;
    const double std = 1.0 / std::sqrt(static_cast<double>(kModelDim));
    p.wq = TensorT<S>::randn({kModelDim, kModelDim}, rng, std);
    p.wk = TensorT<S>::randn({kModelDim, kModelDim}, rng, std);
    p.wv = TensorT<S>::randn({kModelDim, kModelDim}, rng, std);
    p.wo = TensorT<S>::randn({kModelDim, kModelDim}, rng, std);
    p.bo = TensorT<S>::zeros({1, kModelDim});
    return p;
  }

  NamedTensors<S> named(const std::string& prefix) const {
    return {{prefix + "wq", wq}, {prefix + "wk", wk}, {prefix + "wv", wv},
            {prefix + "wo", wo}, {prefix + "bo", bo}};
  }
};

template <class S>
TensorT<S> self_attention(const TensorT<S>& x, const SelfAttnParamsT<S>& p) {
  TensorT<S> q = matmul(x, p.wq);
  TensorT<S> k = matmul(x, p.wk);
  TensorT<S> v = matmul(x, p.wv);
  TensorT<S> att =
      softmax_rows(scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(kModelDim))));
  return add_rows(matmul(matmul(att, v), p.wo), p.bo);
}

template <class S>
struct BlockParamsT {
  TensorT<S> ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
  SelfAttnParamsT<S> self_attn;
  MultiCAParamsT<S> cross;
  TensorT<S> w_ff1, b_ff1, w_ff2, b_ff2;

  static BlockParamsT init(Rng& rng) {
    BlockParamsT p;
    p.ln1_g = TensorT<S>::full({kModelDim}, S(1));
    p.ln1_b = TensorT<S>::zeros({kModelDim});
    p.ln2_g = TensorT<S>::full({kModelDim}, S(1));
    p.ln2_b = TensorT<S>::zeros({kModelDim});
    p.ln3_g = TensorT<S>::full({kModelDim}, S(1));
    p.ln3_b = TensorT<S>::zeros({kModelDim});
    p.self_attn = SelfAttnParamsT<S>::init(rng);
    p.cross = MultiCAParamsT<S>::init(rng);
    p.w_ff1 = TensorT<S>::randn({kModelDim, kFFDim}, rng, 1.0 / std::sqrt(64.0));
    p.b_ff1 = TensorT<S>::zeros({1, kFFDim});
    p.w_ff2 = TensorT<S>::randn({kFFDim, kModelDim}, rng, 1.0 / std::sqrt(128.0));
    p.b_ff2 = TensorT<S>::zeros({1, kModelDim});
    return p;
  }

  NamedTensors<S> named(const std::string& prefix) const {
    NamedTensors<S> out = {{prefix + "ln1_g", ln1_g}, {prefix + "ln1_b", ln1_b},
                           {prefix + "ln2_g", ln2_g}, {prefix + "ln2_b", ln2_b},
                           {prefix + "ln3_g", ln3_g}, {prefix + "ln3_b", ln3_b}};
    for (auto& kv : self_attn.named(prefix + "self.")) out.push_back(std::move(kv));
    const auto& c = cross;
    NamedTensors<S> cross_named = {
        {prefix + "cross.wq", c.wq},
        {prefix + "cross.wk_text", c.wk_text}, {prefix + "cross.wv_text", c.wv_text},
        {prefix + "cross.wk_id", c.wk_id},     {prefix + "cross.wv_id", c.wv_id},
        {prefix + "cross.wk_age", c.wk_age},   {prefix + "cross.wv_age", c.wv_age},
        {prefix + "cross.wk_cage", c.wk_cage}, {prefix + "cross.wv_cage", c.wv_cage},
        {prefix + "cross.wo", c.wo},           {prefix + "cross.bo", c.bo}};
    for (auto& kv : cross_named) out.push_back(std::move(kv));
    out.push_back({prefix + "ff1_w", w_ff1});
    out.push_back({prefix + "ff1_b", b_ff1});
    out.push_back({prefix + "ff2_w", w_ff2});
    out.push_back({prefix + "ff2_b", b_ff2});
    return out;
  }
};

// Token-transformer noise predictor over 4x4 patches with three-way
// conditioning injected through the cross-attention branches.
template <class S>
struct DenoiserParamsT {
  TensorT<S> w_patch, b_patch;
  TensorT<S> pos;
  TensorT<S> time_fixed;  // sinusoidal rows, not learned
  TensorT<S> time_delta;  // learned correction, zero init
  std::array<BlockParamsT<S>, kBlocks> blocks;
  TensorT<S> lnf_g, lnf_b;
  TensorT<S> w_out, b_out;
  int T = 0;

  static DenoiserParamsT init(int T, Rng& rng) {
    if (T < 1) throw ValueError("denoiser: T must be positive");
    DenoiserParamsT p;
    p.T = T;
    p.w_patch = TensorT<S>::randn({kPatchVals, kModelDim}, rng, 1.0 / 4.0);
    p.b_patch = TensorT<S>::zeros({1, kModelDim});
    p.pos = TensorT<S>::randn({kTokens, kModelDim}, rng, 0.02);
    p.time_fixed = TensorT<S>::zeros({T, kModelDim});
    auto& tv = p.time_fixed.mutable_values();
    for (int t = 1; t <= T; ++t)
      for (int k = 0; k < kModelDim / 2; ++k) {
        const double w = std::pow(10000.0, -2.0 * k / kModelDim);
        tv[static_cast<size_t>(t - 1) * kModelDim + 2 * k] = static_cast<S>(std::sin(t * w));
        tv[static_cast<size_t>(t - 1) * kModelDim + 2 * k + 1] =
            static_cast<S>(std::cos(t * w));
      }
    p.time_delta = TensorT<S>::zeros({T, kModelDim});
    for (auto& b : p.blocks) b = BlockParamsT<S>::init(rng);
    p.lnf_g = TensorT<S>::full({kModelDim}, S(1));
    p.lnf_b = TensorT<S>::zeros({kModelDim});
    p.w_out = TensorT<S>::zeros({kModelDim, kPatchVals});
    p.b_out = TensorT<S>::zeros({1, kPatchVals});
    return p;
  }

  NamedTensors<S> named() const {
    NamedTensors<S> out = {{"patch_w", w_patch}, {"patch_b", b_patch}, {"pos", pos},
                           {"time_delta", time_delta}};
    for (int b = 0; b < kBlocks; ++b) {
      auto block = blocks[static_cast<size_t>(b)].named("blk" + std::to_string(b) + ".");
      for (auto& kv : block) out.push_back(std::move(kv));
    }
    out.push_back({"lnf_g", lnf_g});
    out.push_back({"lnf_b", lnf_b});
    out.push_back({"out_w", w_out});
    out.push_back({"out_b", b_out});
    return out;
  }

  std::vector<TensorT<S>> params() const {
    std::vector<TensorT<S>> out;
    for (auto& kv : named()) out.push_back(kv.second);
    return out;
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& p : params()) n += p.numel();
    return n;
  }

  void set_branch_scales(double id, double age, double cage) {
    for (auto& b : blocks) b.cross.set_scales(id, age, cage);
  }

  void set_branch_enables(bool id, bool age, bool cage) {
    for (auto& b : blocks) {
      b.cross.enable_id = id;
      b.cross.enable_age = age;
      b.cross.enable_cage = cage;
    }
  }
};

using DenoiserParams = DenoiserParamsT<float>;

template <class S>
TensorT<S> denoise(const DenoiserParamsT<S>& p, const TensorT<S>& z_t, int t,
                   const ProjectedConditionsT<S>& cond, AttnCapture* cap = nullptr) {
  if (t < 1 || t > p.T)
    throw ValueError("denoiser: timestep " + std::to_string(t) + " outside [1, " +
                     std::to_string(p.T) + "]");
  if (z_t.shape() != Shape{kImageSize, kImageSize})
    throw ShapeError("denoiser: latent must be " + std::to_string(kImageSize) + "x" +
                     std::to_string(kImageSize));
  const double eps = 1e-5;

  TensorT<S> x = add(add_rows(matmul(patchify(z_t, kPatch), p.w_patch), p.b_patch), p.pos);
  TensorT<S> trow =
      add(lookup_rows(p.time_fixed, {t - 1}), lookup_rows(p.time_delta, {t - 1}));
  x = add_rows(x, trow);

  for (int b = 0; b < kBlocks; ++b) {
    const auto& blk = p.blocks[static_cast<size_t>(b)];
    if (cap) {
      cap->block = b;
      cap->timestep = t;
    }
    x = add(x, self_attention(layer_norm(x, blk.ln1_g, blk.ln1_b, eps), blk.self_attn));
    x = add(x, multi_cross_attention(layer_norm(x, blk.ln2_g, blk.ln2_b, eps), blk.cross,
                                     cond, cap));
    TensorT<S> h = layer_norm(x, blk.ln3_g, blk.ln3_b, eps);
    h = add_rows(matmul(silu(add_rows(matmul(h, blk.w_ff1), blk.b_ff1)), blk.w_ff2),
                 blk.b_ff2);
    x = add(x, h);
  }

  TensorT<S> y = add_rows(matmul(layer_norm(x, p.lnf_g, p.lnf_b, eps), p.w_out), p.b_out);
  return unpatchify(y, kPatch, kImageSize, kImageSize);
}

}  // namespace agediff
