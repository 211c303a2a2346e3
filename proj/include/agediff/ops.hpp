#pragma once

#include <cmath>
#include <cstring>
#include <initializer_list>
#include <string>
#include <vector>

#include "agediff/tape.hpp"
#include "agediff/tensor.hpp"

namespace agediff {

namespace detail {

template <class S>
inline void check_finite(const std::vector<S>& v, const char* op) {
  // x * 0 is 0 for finite x and NaN for Inf/NaN, so the sum stays zero
  // exactly when every element is finite. Branch-free, so it vectorizes.
  S acc = S(0);
  for (S x : v) acc += x * S(0);
  if (!(acc == S(0)))
    throw NonFiniteError(std::string(op) + " produced NaN/Inf");
}

template <class S>
inline bool live(const TensorT<S>& t) {
  return t.requires_grad() || t.tracked();
}

// Returns the active tape when at least one input participates in it.
template <class S>
inline TapeT<S>* tape_for(std::initializer_list<const TensorT<S>*> ins) {
  auto* tape = TapeT<S>::active();
  if (!tape) return nullptr;
  for (const auto* t : ins)
    if (live(*t)) return tape;
  return nullptr;
}

template <class S>
inline void ensure_grad(TensorDataT<S>& d) {
  if (d.grad.empty()) d.grad.assign(d.values.size(), S(0));
}

template <class S>
inline void record(TapeT<S>* tape, TensorT<S>& out, std::function<void()> backprop) {
  out.handle()->tracked = true;
  tape->record(out.handle(), std::move(backprop));
}

// Row-major GEMM kernels. Plain loops ordered for autovectorization.
// c[m x n] (+)= a[m x k] * b[k x n]
template <bool Acc, class S>
inline void gemm_nn(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    S* ci = c + static_cast<size_t>(i) * n;
    if (!Acc)
      for (int j = 0; j < n; ++j) ci[j] = S(0);
    const S* ai = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const S aip = ai[p];
      const S* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[m x n] (+)= a[m x k] * b[n x k]^T
template <bool Acc, class S>
inline void gemm_nt(const S* a, const S* b, S* c, int m, int k, int n) {
  // Repack b as [k x n] so the inner loop streams contiguously; the naive
  // dot-product form is a serial reduction the compiler cannot vectorize.
  thread_local std::vector<S> bt;
  bt.assign(static_cast<size_t>(k) * n, S(0));
  for (int j = 0; j < n; ++j) {
    const S* bj = b + static_cast<size_t>(j) * k;
    for (int p = 0; p < k; ++p) bt[static_cast<size_t>(p) * n + j] = bj[p];
  }
  gemm_nn<Acc>(a, bt.data(), c, m, k, n);
}

// c[m x n] (+)= a[k x m]^T * b[k x n]
template <bool Acc, class S>
inline void gemm_tn(const S* a, const S* b, S* c, int m, int k, int n) {
  if (!Acc)
    for (size_t i = 0; i < static_cast<size_t>(m) * n; ++i) c[i] = S(0);
  for (int p = 0; p < k; ++p) {
    const S* ap = a + static_cast<size_t>(p) * m;
    const S* bp = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const S api = ap[i];
      S* ci = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise operations. Shapes must match exactly, or one operand may be a
// scalar (numel == 1); no other broadcasting.
// ---------------------------------------------------------------------------

enum class OpKind { add, sub, mul, scale, silu, square, sqrt };

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b);
template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b);
template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b);

namespace detail {

enum class BinKind { add, sub, mul };

template <class S>
TensorT<S> binary_op(BinKind kind, const TensorT<S>& a, const TensorT<S>& b, const char* name) {
  const bool a_scalar = a.is_scalar();
  const bool b_scalar = b.is_scalar();
  if (a.shape() != b.shape() && !a_scalar && !b_scalar)
    throw ShapeError(std::string(name) + ": " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const TensorT<S>& big = (b_scalar && !a_scalar) ? a : (a_scalar && !b_scalar ? b : a);
  const size_t n = big.values().size();

  TensorT<S> out = TensorT<S>::zeros(big.shape());
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  const auto& bv = b.values();
  const size_t an = av.size(), bn = bv.size();
  for (size_t i = 0; i < n; ++i) {
    const S x = av[an == 1 ? 0 : i];
    const S y = bv[bn == 1 ? 0 : i];
    ov[i] = kind == BinKind::add ? x + y : kind == BinKind::sub ? x - y : x * y;
  }
  detail::check_finite(ov, name);

  if (auto* tape = detail::tape_for<S>({&a, &b})) {
    const bool da = detail::live(a), db = detail::live(b);
    auto ah = a.handle(), bh = b.handle(), oh = out.handle();
    detail::record(tape, out, [kind, da, db, ah, bh, oh]() {
      const auto& g = oh->grad;
      const size_t an2 = ah->values.size(), bn2 = bh->values.size();
      if (da) {
        detail::ensure_grad(*ah);
        for (size_t i = 0; i < g.size(); ++i) {
          S gi = g[i];
          if (kind == BinKind::mul) gi *= bh->values[bn2 == 1 ? 0 : i];
          ah->grad[an2 == 1 ? 0 : i] += gi;
        }
      }
      if (db) {
        detail::ensure_grad(*bh);
        for (size_t i = 0; i < g.size(); ++i) {
          S gi = g[i];
          if (kind == BinKind::mul) gi *= ah->values[an2 == 1 ? 0 : i];
          if (kind == BinKind::sub) gi = -gi;
          bh->grad[bn2 == 1 ? 0 : i] += gi;
        }
      }
    });
  }
  return out;
}

}  // namespace detail

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  return detail::binary_op(detail::BinKind::add, a, b, "add");
}
template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  return detail::binary_op(detail::BinKind::sub, a, b, "sub");
}
template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  return detail::binary_op(detail::BinKind::mul, a, b, "mul");
}

// Multiply by a compile-time-known constant. The constant gets no gradient.
template <class S>
TensorT<S> scale(const TensorT<S>& a, double c) {
  if (!std::isfinite(c)) throw ValueError("scale: non-finite constant");
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) ov[i] = static_cast<S>(av[i] * c);
  detail::check_finite(ov, "scale");
  if (auto* tape = detail::tape_for<S>({&a})) {
    auto ah = a.handle();
    auto oh = out.handle();
    detail::record(tape, out, [c, ah, oh]() {
      detail::ensure_grad(*ah);
      for (size_t i = 0; i < oh->grad.size(); ++i)
        ah->grad[i] += static_cast<S>(oh->grad[i] * c);
    });
  }
  return out;
}

namespace detail {

template <class S, class Fwd, class Bwd>
TensorT<S> unary_op(const TensorT<S>& a, const char* name, Fwd fwd, Bwd bwd) {
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i]);
  detail::check_finite(ov, name);
  if (auto* tape = detail::tape_for<S>({&a})) {
    auto ah = a.handle();
    auto oh = out.handle();
    detail::record(tape, out, [ah, oh, bwd]() {
      detail::ensure_grad(*ah);
      for (size_t i = 0; i < oh->grad.size(); ++i)
        ah->grad[i] += oh->grad[i] * bwd(ah->values[i], oh->values[i]);
    });
  }
  return out;
}

}  // namespace detail

// x * sigmoid(x)
template <class S>
TensorT<S> silu(const TensorT<S>& a) {
  auto sig = [](S x) { return S(1) / (S(1) + std::exp(-x)); };
  return detail::unary_op(
      a, "silu", [sig](S x) { return x * sig(x); },
      [sig](S x, S) {
        const S s = sig(x);
        return s * (S(1) + x * (S(1) - s));
      });
}

template <class S>
TensorT<S> square(const TensorT<S>& a) {
  return detail::unary_op(
      a, "square", [](S x) { return x * x; }, [](S x, S) { return S(2) * x; });
}

template <class S>
TensorT<S> sqrt_elem(const TensorT<S>& a) {
  return detail::unary_op(
      a, "sqrt", [](S x) { return std::sqrt(x); },
      [](S, S y) { return S(1) / (S(2) * y); });
}

template <class S>
TensorT<S> elementwise(OpKind kind, const TensorT<S>& a);

// Dispatcher over the primitive elementwise kinds. For OpKind::scale the
// second operand must be a scalar tensor and is treated as a constant.
template <class S>
TensorT<S> elementwise(OpKind kind, const TensorT<S>& a, const TensorT<S>& b) {
  switch (kind) {
    case OpKind::add: return add(a, b);
    case OpKind::sub: return sub(a, b);
    case OpKind::mul: return mul(a, b);
    case OpKind::scale:
      if (!b.is_scalar()) throw ShapeError("elementwise scale: operand must be scalar");
      return scale(a, static_cast<double>(b.item()));
    case OpKind::silu:
    case OpKind::square:
    case OpKind::sqrt: return elementwise(kind, a);
  }
  throw ValueError("elementwise: unknown op kind");
}

template <class S>
TensorT<S> elementwise(OpKind kind, const TensorT<S>& a) {
  switch (kind) {
    case OpKind::silu: return silu(a);
    case OpKind::square: return square(a);
    case OpKind::sqrt: return sqrt_elem(a);
    default: throw ValueError("elementwise: missing second operand");
  }
}

// ---------------------------------------------------------------------------
// Matrix operations (2-D).
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
inline void require_2d(const TensorT<S>& t, const char* name) {
  if (t.shape().size() != 2)
    throw ShapeError(std::string(name) + ": expected 2-D, got " + shape_str(t.shape()));
}

}  // namespace detail

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError("matmul: inner dims " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  TensorT<S> out = TensorT<S>::zeros({m, n});
  detail::gemm_nn<false>(a.values().data(), b.values().data(),
                         out.mutable_values().data(), m, k, n);
  detail::check_finite(out.values(), "matmul");
  if (auto* tape = detail::tape_for<S>({&a, &b})) {
    const bool da = detail::live(a), db = detail::live(b);
    auto ah = a.handle(), bh = b.handle(), oh = out.handle();
    detail::record(tape, out, [da, db, ah, bh, oh, m, k, n]() {
      const S* g = oh->grad.data();
      if (da) {
        detail::ensure_grad(*ah);
        detail::gemm_nt<true>(g, bh->values.data(), ah->grad.data(), m, n, k);
      }
      if (db) {
        detail::ensure_grad(*bh);
        detail::gemm_tn<true>(ah->values.data(), g, bh->grad.data(), k, m, n);
      }
    });
  }
  return out;
}

// a[m x k] * b[n x k]^T without materializing the transpose.
template <class S>
TensorT<S> matmul_nt(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require_2d(a, "matmul_nt");
  detail::require_2d(b, "matmul_nt");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (k != b.dim(1))
    throw ShapeError("matmul_nt: inner dims " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  TensorT<S> out = TensorT<S>::zeros({m, n});
  detail::gemm_nt<false>(a.values().data(), b.values().data(),
                         out.mutable_values().data(), m, k, n);
  detail::check_finite(out.values(), "matmul_nt");
  if (auto* tape = detail::tape_for<S>({&a, &b})) {
    const bool da = detail::live(a), db = detail::live(b);
    auto ah = a.handle(), bh = b.handle(), oh = out.handle();
    detail::record(tape, out, [da, db, ah, bh, oh, m, k, n]() {
      const S* g = oh->grad.data();
      if (da) {
        detail::ensure_grad(*ah);
        detail::gemm_nn<true>(g, bh->values.data(), ah->grad.data(), m, n, k);
      }
      if (db) {
        detail::ensure_grad(*bh);
        detail::gemm_tn<true>(g, ah->values.data(), bh->grad.data(), n, m, k);
      }
    });
  }
  return out;
}

// Row-wise softmax with max subtraction.
template <class S>
TensorT<S> softmax_rows(const TensorT<S>& a) {
  detail::require_2d(a, "softmax_rows");
  const int m = a.dim(0), n = a.dim(1);
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  for (int i = 0; i < m; ++i) {
    const S* row = av.data() + static_cast<size_t>(i) * n;
    S* orow = ov.data() + static_cast<size_t>(i) * n;
    S mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    S sum = S(0);
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= sum;
  }
  detail::check_finite(ov, "softmax_rows");
  if (auto* tape = detail::tape_for<S>({&a})) {
    auto ah = a.handle();
    auto oh = out.handle();
    detail::record(tape, out, [ah, oh, m, n]() {
      detail::ensure_grad(*ah);
      for (int i = 0; i < m; ++i) {
        const S* y = oh->values.data() + static_cast<size_t>(i) * n;
        const S* gy = oh->grad.data() + static_cast<size_t>(i) * n;
        S* gx = ah->grad.data() + static_cast<size_t>(i) * n;
        S dot = S(0);
        for (int j = 0; j < n; ++j) dot += gy[j] * y[j];
        for (int j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dot);
      }
    });
  }
  return out;
}

// Normalize the last dimension to zero mean / unit variance, then apply an
// elementwise affine (gain, bias). gain and bias must have numel == last dim.
template <class S>
TensorT<S> layer_norm(const TensorT<S>& a, const TensorT<S>& gain, const TensorT<S>& bias,
                      double eps) {
  if (a.shape().empty()) throw ShapeError("layer_norm: empty shape");
  const int n = a.shape().back();
  if (n < 1) throw ShapeError("layer_norm: zero-length normalization axis");
  if (gain.numel() != n || bias.numel() != n)
    throw ShapeError("layer_norm: gain/bias must match last dimension " + std::to_string(n));
  const int rows = static_cast<int>(a.numel() / n);

  TensorT<S> out = TensorT<S>::zeros(a.shape());
  std::vector<S> xhat(a.numel());
  std::vector<S> inv_sigma(rows);
  const auto& av = a.values();
  auto& ov = out.mutable_values();
  for (int i = 0; i < rows; ++i) {
    const S* row = av.data() + static_cast<size_t>(i) * n;
    S mean = S(0);
    for (int j = 0; j < n; ++j) mean += row[j];
    mean /= S(n);
    S var = S(0);
    for (int j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= S(n);
    const S inv = S(1) / std::sqrt(var + static_cast<S>(eps));
    inv_sigma[i] = inv;
    S* xh = xhat.data() + static_cast<size_t>(i) * n;
    S* orow = ov.data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      xh[j] = (row[j] - mean) * inv;
      orow[j] = gain.values()[j] * xh[j] + bias.values()[j];
    }
  }
  detail::check_finite(ov, "layer_norm");
  if (auto* tape = detail::tape_for<S>({&a, &gain, &bias})) {
    const bool da = detail::live(a), dg = detail::live(gain), db = detail::live(bias);
    auto ah = a.handle(), gh = gain.handle(), bh = bias.handle(), oh = out.handle();
    detail::record(tape, out,
                   [da, dg, db, ah, gh, bh, oh, rows, n, xhat = std::move(xhat),
                    inv_sigma = std::move(inv_sigma)]() {
      if (da) detail::ensure_grad(*ah);
      if (dg) detail::ensure_grad(*gh);
      if (db) detail::ensure_grad(*bh);
      for (int i = 0; i < rows; ++i) {
        const S* gy = oh->grad.data() + static_cast<size_t>(i) * n;
        const S* xh = xhat.data() + static_cast<size_t>(i) * n;
        if (dg || db) {
          for (int j = 0; j < n; ++j) {
            if (dg) gh->grad[j] += gy[j] * xh[j];
            if (db) bh->grad[j] += gy[j];
          }
        }
        if (da) {
          // dL/dx = inv_sigma * (w - mean(w) - xhat * mean(w * xhat)),
          // where w = gy * gain.
          S mw = S(0), mwx = S(0);
          for (int j = 0; j < n; ++j) {
            const S w = gy[j] * gh->values[j];
            mw += w;
            mwx += w * xh[j];
          }
          mw /= S(n);
          mwx /= S(n);
          S* gx = ah->grad.data() + static_cast<size_t>(i) * n;
          for (int j = 0; j < n; ++j) {
            const S w = gy[j] * gh->values[j];
            gx[j] += inv_sigma[i] * (w - mw - xh[j] * mwx);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions, reshapes, gathers.
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> sum_all(const TensorT<S>& a) {
  TensorT<S> out = TensorT<S>::zeros({1});
  S s = S(0);
  for (S x : a.values()) s += x;
  out.mutable_values()[0] = s;
  detail::check_finite(out.values(), "sum_all");
  if (auto* tape = detail::tape_for<S>({&a})) {
    auto ah = a.handle();
    auto oh = out.handle();
    detail::record(tape, out, [ah, oh]() {
      detail::ensure_grad(*ah);
      const S g = oh->grad[0];
      for (S& x : ah->grad) x += g;
    });
  }
  return out;
}

template <class S>
TensorT<S> mean_all(const TensorT<S>& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

// Broadcast-add a row vector onto every row of a matrix.
template <class S>
TensorT<S> add_rows(const TensorT<S>& a, const TensorT<S>& row) {
  detail::require_2d(a, "add_rows");
  const int m = a.dim(0), n = a.dim(1);
  if (row.numel() != n)
    throw ShapeError("add_rows: row numel " + std::to_string(row.numel()) +
                     " vs cols " + std::to_string(n));
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  const auto& rv = row.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      ov[static_cast<size_t>(i) * n + j] = av[static_cast<size_t>(i) * n + j] + rv[j];
  detail::check_finite(ov, "add_rows");
  if (auto* tape = detail::tape_for<S>({&a, &row})) {
    const bool da = detail::live(a), dr = detail::live(row);
    auto ah = a.handle(), rh = row.handle(), oh = out.handle();
    detail::record(tape, out, [da, dr, ah, rh, oh, m, n]() {
      if (da) {
        detail::ensure_grad(*ah);
        for (size_t i = 0; i < oh->grad.size(); ++i) ah->grad[i] += oh->grad[i];
      }
      if (dr) {
        detail::ensure_grad(*rh);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) rh->grad[j] += oh->grad[static_cast<size_t>(i) * n + j];
      }
    });
  }
  return out;
}

// Gather rows of a table by index. Backward scatter-adds into the table.
template <class S>
TensorT<S> lookup_rows(const TensorT<S>& table, const std::vector<int>& ids) {
  detail::require_2d(table, "lookup_rows");
  if (ids.empty()) throw ShapeError("lookup_rows: empty id list");
  const int v = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      throw ValueError("lookup_rows: id " + std::to_string(id) + " outside table of " +
                       std::to_string(v));
  TensorT<S> out = TensorT<S>::zeros({static_cast<int>(ids.size()), d});
  auto& ov = out.mutable_values();
  const auto& tv = table.values();
  for (size_t i = 0; i < ids.size(); ++i)
    std::memcpy(ov.data() + i * d, tv.data() + static_cast<size_t>(ids[i]) * d,
                sizeof(S) * d);
  if (auto* tape = detail::tape_for<S>({&table})) {
    auto th = table.handle();
    auto oh = out.handle();
    detail::record(tape, out, [th, oh, ids, d]() {
      detail::ensure_grad(*th);
      for (size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < d; ++j)
          th->grad[static_cast<size_t>(ids[i]) * d + j] += oh->grad[i * d + j];
    });
  }
  return out;
}

// Stack matrices with equal column counts along the row axis.
template <class S>
TensorT<S> concat_rows(const std::vector<TensorT<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const int n = parts[0].dim(1);
  int rows = 0;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat_rows");
    if (p.dim(1) != n) throw ShapeError("concat_rows: column mismatch");
    rows += p.dim(0);
  }
  TensorT<S> out = TensorT<S>::zeros({rows, n});
  auto& ov = out.mutable_values();
  size_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(ov.data() + off, p.values().data(), sizeof(S) * p.values().size());
    off += p.values().size();
  }
  auto* tape = TapeT<S>::active();
  bool any_live = false;
  if (tape)
    for (const auto& p : parts) any_live = any_live || detail::live(p);
  if (tape && any_live) {
    std::vector<std::shared_ptr<TensorDataT<S>>> handles;
    std::vector<bool> lives;
    for (const auto& p : parts) {
      handles.push_back(p.handle());
      lives.push_back(detail::live(p));
    }
    auto oh = out.handle();
    detail::record(tape, out, [handles, lives, oh]() {
      size_t off2 = 0;
      for (size_t i = 0; i < handles.size(); ++i) {
        const size_t sz = handles[i]->values.size();
        if (lives[i]) {
          detail::ensure_grad(*handles[i]);
          for (size_t j = 0; j < sz; ++j) handles[i]->grad[j] += oh->grad[off2 + j];
        }
        off2 += sz;
      }
    });
  }
  return out;
}

// Concatenate matrices with equal row counts along the column axis.
template <class S>
TensorT<S> concat_cols(const std::vector<TensorT<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const int m = parts[0].dim(0);
  int cols = 0;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat_cols");
    if (p.dim(0) != m) throw ShapeError("concat_cols: row mismatch");
    cols += p.dim(1);
  }
  TensorT<S> out = TensorT<S>::zeros({m, cols});
  auto& ov = out.mutable_values();
  int col_off = 0;
  for (const auto& p : parts) {
    const int pn = p.dim(1);
    for (int i = 0; i < m; ++i)
      std::memcpy(ov.data() + static_cast<size_t>(i) * cols + col_off,
                  p.values().data() + static_cast<size_t>(i) * pn, sizeof(S) * pn);
    col_off += pn;
  }
  auto* tape = TapeT<S>::active();
  bool any_live = false;
  if (tape)
    for (const auto& p : parts) any_live = any_live || detail::live(p);
  if (tape && any_live) {
    std::vector<std::shared_ptr<TensorDataT<S>>> handles;
    std::vector<bool> lives;
    std::vector<int> widths;
    for (const auto& p : parts) {
      handles.push_back(p.handle());
      lives.push_back(detail::live(p));
      widths.push_back(p.dim(1));
    }
    auto oh = out.handle();
    detail::record(tape, out, [handles, lives, widths, oh, m, cols]() {
      int off2 = 0;
      for (size_t i = 0; i < handles.size(); ++i) {
        const int pn = widths[i];
        if (lives[i]) {
          detail::ensure_grad(*handles[i]);
          for (int r = 0; r < m; ++r)
            for (int j = 0; j < pn; ++j)
              handles[i]->grad[static_cast<size_t>(r) * pn + j] +=
                  oh->grad[static_cast<size_t>(r) * cols + off2 + j];
        }
        off2 += pn;
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> reshape(const TensorT<S>& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel())
    throw ShapeError("reshape: numel mismatch " + shape_str(a.shape()) + " -> " +
                     shape_str(new_shape));
  TensorT<S> out = TensorT<S>::from_values(std::move(new_shape), a.values());
  if (auto* tape = detail::tape_for<S>({&a})) {
    auto ah = a.handle();
    auto oh = out.handle();
    detail::record(tape, out, [ah, oh]() {
      detail::ensure_grad(*ah);
      for (size_t i = 0; i < oh->grad.size(); ++i) ah->grad[i] += oh->grad[i];
    });
  }
  return out;
}

// Split an H x W image into p x p patches: out[(H/p)*(W/p), p*p], patches in
// row-major block order.
template <class S>
TensorT<S> patchify(const TensorT<S>& a, int p) {
  detail::require_2d(a, "patchify");
  const int h = a.dim(0), w = a.dim(1);
  if (p <= 0 || h % p || w % p) throw ShapeError("patchify: patch size must divide image");
  const int bh = h / p, bw = w / p;
  TensorT<S> out = TensorT<S>::zeros({bh * bw, p * p});
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  for (int by = 0; by < bh; ++by)
    for (int bx = 0; bx < bw; ++bx)
      for (int iy = 0; iy < p; ++iy)
        for (int ix = 0; ix < p; ++ix)
          ov[static_cast<size_t>(by * bw + bx) * p * p + iy * p + ix] =
              av[static_cast<size_t>(by * p + iy) * w + bx * p + ix];
  if (auto* tape = detail::tape_for<S>({&a})) {
    auto ah = a.handle();
    auto oh = out.handle();
    detail::record(tape, out, [ah, oh, p, w, bh, bw]() {
      detail::ensure_grad(*ah);
      for (int by = 0; by < bh; ++by)
        for (int bx = 0; bx < bw; ++bx)
          for (int iy = 0; iy < p; ++iy)
            for (int ix = 0; ix < p; ++ix)
              ah->grad[static_cast<size_t>(by * p + iy) * w + bx * p + ix] +=
                  oh->grad[static_cast<size_t>(by * bw + bx) * p * p + iy * p + ix];
    });
  }
  return out;
}

// Inverse of patchify.
template <class S>
TensorT<S> unpatchify(const TensorT<S>& a, int p, int h, int w) {
  detail::require_2d(a, "unpatchify");
  if (p <= 0 || h % p || w % p) throw ShapeError("unpatchify: patch size must divide image");
  const int bh = h / p, bw = w / p;
  if (a.dim(0) != bh * bw || a.dim(1) != p * p)
    throw ShapeError("unpatchify: token shape " + shape_str(a.shape()) + " vs " +
                     std::to_string(bh * bw) + "x" + std::to_string(p * p));
  TensorT<S> out = TensorT<S>::zeros({h, w});
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  for (int by = 0; by < bh; ++by)
    for (int bx = 0; bx < bw; ++bx)
      for (int iy = 0; iy < p; ++iy)
        for (int ix = 0; ix < p; ++ix)
          ov[static_cast<size_t>(by * p + iy) * w + bx * p + ix] =
              av[static_cast<size_t>(by * bw + bx) * p * p + iy * p + ix];
  if (auto* tape = detail::tape_for<S>({&a})) {
    auto ah = a.handle();
    auto oh = out.handle();
    detail::record(tape, out, [ah, oh, p, w, bh, bw]() {
      detail::ensure_grad(*ah);
      for (int by = 0; by < bh; ++by)
        for (int bx = 0; bx < bw; ++bx)
          for (int iy = 0; iy < p; ++iy)
            for (int ix = 0; ix < p; ++ix)
              ah->grad[static_cast<size_t>(by * bw + bx) * p * p + iy * p + ix] +=
                  oh->grad[static_cast<size_t>(by * p + iy) * w + bx * p + ix];
    });
  }
  return out;
}

// Mean over non-overlapping b x b blocks of an H x W matrix.
template <class S>
TensorT<S> avg_pool(const TensorT<S>& a, int b) {
  detail::require_2d(a, "avg_pool");
  const int h = a.dim(0), w = a.dim(1);
  if (b <= 0 || h % b || w % b) throw ShapeError("avg_pool: block must divide image");
  const int oh_dim = h / b, ow_dim = w / b;
  const S inv = S(1) / static_cast<S>(b * b);
  TensorT<S> out = TensorT<S>::zeros({oh_dim, ow_dim});
  auto& ov = out.mutable_values();
  const auto& av = a.values();
  for (int oy = 0; oy < oh_dim; ++oy)
    for (int ox = 0; ox < ow_dim; ++ox) {
      S s = S(0);
      for (int iy = 0; iy < b; ++iy)
        for (int ix = 0; ix < b; ++ix)
          s += av[static_cast<size_t>(oy * b + iy) * w + ox * b + ix];
      ov[static_cast<size_t>(oy) * ow_dim + ox] = s * inv;
    }
  if (auto* tape = detail::tape_for<S>({&a})) {
    auto ah = a.handle();
    auto ohh = out.handle();
    detail::record(tape, out, [ah, ohh, b, w, oh_dim, ow_dim, inv]() {
      detail::ensure_grad(*ah);
      for (int oy = 0; oy < oh_dim; ++oy)
        for (int ox = 0; ox < ow_dim; ++ox) {
          const S g = ohh->grad[static_cast<size_t>(oy) * ow_dim + ox] * inv;
          for (int iy = 0; iy < b; ++iy)
            for (int ix = 0; ix < b; ++ix)
              ah->grad[static_cast<size_t>(oy * b + iy) * w + ox * b + ix] += g;
        }
    });
  }
  return out;
}

// Copy of the values with gradient tracking severed.
template <class S>
TensorT<S> detach(const TensorT<S>& a) {
  return TensorT<S>::from_values(a.shape(), a.values());
}

// Cast between scalar types (e.g. float model inputs into a double graph).
template <class To, class From>
TensorT<To> cast(const TensorT<From>& a) {
  std::vector<To> v(a.values().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<To>(a.values()[i]);
  return TensorT<To>::from_values(a.shape(), std::move(v));
}

}  // namespace agediff
