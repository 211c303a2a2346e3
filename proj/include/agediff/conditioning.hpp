#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "agediff/ops.hpp"
#include "agediff/rng.hpp"
#include "agediff/tensor.hpp"
#include "agediff/vocab.hpp"

namespace agediff {

inline constexpr int kModelDim = 64;
inline constexpr int kEmbedDim = 16;
inline constexpr int kCondTokens = 4;

// Raw conditioning inputs for one sample.
template <class S>
struct ConditionBundleT {
  std::vector<int> caption;     // kCaptionLen ids
  std::vector<int> age_phrase;  // 3 ids
  TensorT<S> e_id;              // {1, kEmbedDim}
  TensorT<S> e_age;             // {1, kEmbedDim}
  int age = 0;
};

using ConditionBundle = ConditionBundleT<float>;

// Learned maps from raw conditions into model-width token matrices.
template <class S>
struct CondProjParamsT {
  TensorT<S> embed;  // {kVocabSize, kModelDim}, shared by caption and age phrase
  TensorT<S> w_id, b_id;
  TensorT<S> w_age, b_age;

  static CondProjParamsT init(Rng& rng) {
    CondProjParamsT p;
    p.embed = TensorT<S>::randn({kVocabSize, kModelDim}, rng, 0.02);
    const double std_in = 1.0 / std::sqrt(static_cast<double>(kEmbedDim));
    p.w_id = TensorT<S>::randn({kEmbedDim, kCondTokens * kModelDim}, rng, std_in);
    p.b_id = TensorT<S>::zeros({1, kCondTokens * kModelDim});
    p.w_age = TensorT<S>::randn({kEmbedDim, kCondTokens * kModelDim}, rng, std_in);
    p.b_age = TensorT<S>::zeros({1, kCondTokens * kModelDim});
    return p;
  }

  std::vector<TensorT<S>> params() const { return {embed, w_id, b_id, w_age, b_age}; }
};

using CondProjParams = CondProjParamsT<float>;

template <class S>
struct ProjectedConditionsT {
  TensorT<S> text_tokens;  // {kCaptionLen, kModelDim}
  TensorT<S> id_tokens;    // {kCondTokens, kModelDim}
  TensorT<S> age_tokens;   // {kCondTokens, kModelDim}
  TensorT<S> cage_tokens;  // {3, kModelDim}
};

using ProjectedConditions = ProjectedConditionsT<float>;

template <class S>
ProjectedConditionsT<S> project_conditions(const CondProjParamsT<S>& p,
                                           const ConditionBundleT<S>& b) {
  if (static_cast<int>(b.caption.size()) != kCaptionLen)
    throw ShapeError("conditions: caption must have " + std::to_string(kCaptionLen) +
                     " tokens");
  if (b.age_phrase.size() != 3)
    throw ShapeError("conditions: age phrase must have 3 tokens");
  if (!b.e_id.defined() || b.e_id.numel() != kEmbedDim)
    throw ShapeError("conditions: e_id must have numel " + std::to_string(kEmbedDim));
  if (!b.e_age.defined() || b.e_age.numel() != kEmbedDim)
    throw ShapeError("conditions: e_age must have numel " + std::to_string(kEmbedDim));

  ProjectedConditionsT<S> out;
  out.text_tokens = lookup_rows(p.embed, b.caption);
  out.cage_tokens = lookup_rows(p.embed, b.age_phrase);
  TensorT<S> id_row = reshape(b.e_id, {1, kEmbedDim});
  TensorT<S> age_row = reshape(b.e_age, {1, kEmbedDim});
  out.id_tokens = reshape(silu(add_rows(matmul(id_row, p.w_id), p.b_id)),
                          {kCondTokens, kModelDim});
  out.age_tokens = reshape(silu(add_rows(matmul(age_row, p.w_age), p.b_age)),
                           {kCondTokens, kModelDim});
  return out;
}

// Normalized attention maps captured during a forward pass, for analysis.
struct AttnRecord {
  int block = 0;
  int timestep = 0;
  std::string branch;
  int rows = 0, cols = 0;
  std::vector<double> weights;
};

struct AttnCapture {
  int block = 0;
  int timestep = 0;
  std::vector<AttnRecord> records;

  template <class S>
  void add(const char* branch, const TensorT<S>& att) {
    AttnRecord r;
    r.block = block;
    r.timestep = timestep;
    r.branch = branch;
    r.rows = att.dim(0);
    r.cols = att.dim(1);
    r.weights.assign(att.values().begin(), att.values().end());
    records.push_back(std::move(r));
  }
};

// Decoupled multi-branch cross-attention. Each condition stream gets its own
// key/value projections and its own softmax; branch outputs are summed with
// per-branch gains before one shared output projection.
template <class S>
struct MultiCAParamsT {
  TensorT<S> wq;
  TensorT<S> wk_text, wv_text;
  TensorT<S> wk_id, wv_id;
  TensorT<S> wk_age, wv_age;
  TensorT<S> wk_cage, wv_cage;
  TensorT<S> wo, bo;
  double lambda_id = 1.0, lambda_age = 1.0, lambda_cage = 1.0;
  bool enable_id = true, enable_age = true, enable_cage = true;

  static MultiCAParamsT init(Rng& rng) {
    MultiCAParamsT p;
    const double std = 1.0 / std::sqrt(static_cast<double>(kModelDim));
    auto mat = [&]() { return TensorT<S>::randn({kModelDim, kModelDim}, rng, std); };
    p.wq = mat();
    p.wk_text = mat();
    p.wv_text = mat();
    p.wk_id = mat();
    p.wv_id = mat();
    p.wk_age = mat();
    p.wv_age = mat();
    p.wk_cage = mat();
    p.wv_cage = mat();
    p.wo = mat();
    p.bo = TensorT<S>::zeros({1, kModelDim});
    return p;
  }

  void set_scales(double id, double age, double cage) {
    if (!std::isfinite(id) || !std::isfinite(age) || !std::isfinite(cage))
      throw ValueError("attention: branch scale must be finite");
    lambda_id = id;
    lambda_age = age;
    lambda_cage = cage;
  }

  std::vector<TensorT<S>> params() const {
    return {wq, wk_text, wv_text, wk_id, wv_id, wk_age, wv_age, wk_cage, wv_cage, wo, bo};
  }
};

using MultiCAParams = MultiCAParamsT<float>;

template <class S>
struct MultiCAPartsT {
  TensorT<S> text, id, age, cage;  // branch outputs before the shared projection
  TensorT<S> combined;
  TensorT<S> out;
};

namespace detail {

template <class S>
TensorT<S> attend(const TensorT<S>& q, const TensorT<S>& tokens, const TensorT<S>& wk,
                  const TensorT<S>& wv, AttnCapture* cap, const char* branch) {
  if (!tokens.defined())
    throw ValueError(std::string("attention: ") + branch + " branch enabled without tokens");
  TensorT<S> k = matmul(tokens, wk);
  TensorT<S> v = matmul(tokens, wv);
  TensorT<S> att =
      softmax_rows(scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(kModelDim))));
  if (cap) cap->add(branch, att);
  return matmul(att, v);
}

}  // namespace detail

template <class S>
MultiCAPartsT<S> multi_cross_attention_parts(const TensorT<S>& x,
                                             const MultiCAParamsT<S>& p,
                                             const ProjectedConditionsT<S>& cond,
                                             AttnCapture* cap = nullptr) {
  TensorT<S> q = matmul(x, p.wq);
  MultiCAPartsT<S> parts;
  parts.text = detail::attend(q, cond.text_tokens, p.wk_text, p.wv_text, cap, "text");
  parts.combined = parts.text;
  if (p.enable_id) {
    parts.id = detail::attend(q, cond.id_tokens, p.wk_id, p.wv_id, cap, "id");
    parts.combined = add(parts.combined, scale(parts.id, p.lambda_id));
  }
  if (p.enable_age) {
    parts.age = detail::attend(q, cond.age_tokens, p.wk_age, p.wv_age, cap, "age");
    parts.combined = add(parts.combined, scale(parts.age, p.lambda_age));
  }
  if (p.enable_cage) {
    parts.cage = detail::attend(q, cond.cage_tokens, p.wk_cage, p.wv_cage, cap, "cage");
    parts.combined = add(parts.combined, scale(parts.cage, p.lambda_cage));
  }
  parts.out = add_rows(matmul(parts.combined, p.wo), p.bo);
  return parts;
}

template <class S>
TensorT<S> multi_cross_attention(const TensorT<S>& x, const MultiCAParamsT<S>& p,
                                 const ProjectedConditionsT<S>& cond,
                                 AttnCapture* cap = nullptr) {
  return multi_cross_attention_parts(x, p, cond, cap).out;
}

}  // namespace agediff
