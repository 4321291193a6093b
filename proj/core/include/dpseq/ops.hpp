#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dpseq/tensor.hpp"

namespace dpseq {

namespace detail {

// C = A(m×k) · B(k×n), row-major
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C = A(m×k) · B(n×k)ᵀ
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] = acc;
    }
  }
}

// C = A(k×m)ᵀ · B(k×n)
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, T(0));
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
bool tracked(Tape<T>* tape, const Tensor<T>& t) {
  return t.requires_grad() || (tape && tape->on_tape(t));
}

// b broadcasts over a when its shape is a trailing suffix of a's shape
// (a scalar broadcasts everywhere). Returns b's element count.
template <typename T>
std::size_t broadcast_inner(const Tensor<T>& a, const Tensor<T>& b) {
  if (b.size() == 1) return 1;
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool ok = sb.size() <= sa.size();
  if (ok)
    for (std::size_t i = 0; i < sb.size(); ++i)
      if (sb[sb.size() - 1 - i] != sa[sa.size() - 1 - i]) ok = false;
  if (!ok)
    throw ShapeError("cannot broadcast " + shape_str(sb) + " over " + shape_str(sa));
  return b.size();
}

// grad of a broadcast operand: sum the full-size contribution over blocks
template <typename T>
void reduce_into(const std::vector<T>& full, std::vector<T>& slot) {
  const std::size_t inner = slot.size();
  for (std::size_t i = 0; i < full.size(); ++i) slot[i % inner] += full[i];
}

}  // namespace detail

// ---- binary elementwise ----------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  const std::size_t inner = detail::broadcast_inner(a, b);
  std::vector<T> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % inner];
  Tensor<T> r(a.shape(), std::move(out));
  if (tape && (detail::tracked(tape, a) || detail::tracked(tape, b))) {
    auto sa = a.storage(), sb = b.storage();
    tape->record(r.storage(), [sa, sb](Tape<T>& t, const std::vector<T>& g) {
      if (auto* ga = t.grad_slot(sa))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      if (auto* gb = t.grad_slot(sb)) detail::reduce_into(g, *gb);
    });
  }
  return r;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  const std::size_t inner = detail::broadcast_inner(a, b);
  std::vector<T> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i % inner];
  Tensor<T> r(a.shape(), std::move(out));
  if (tape && (detail::tracked(tape, a) || detail::tracked(tape, b))) {
    auto sa = a.storage(), sb = b.storage();
    tape->record(r.storage(), [sa, sb](Tape<T>& t, const std::vector<T>& g) {
      if (auto* ga = t.grad_slot(sa))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      if (auto* gb = t.grad_slot(sb)) {
        const std::size_t inner2 = gb->size();
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % inner2] -= g[i];
      }
    });
  }
  return r;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  const std::size_t inner = detail::broadcast_inner(a, b);
  std::vector<T> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i % inner];
  Tensor<T> r(a.shape(), std::move(out));
  if (tape && (detail::tracked(tape, a) || detail::tracked(tape, b))) {
    auto sa = a.storage(), sb = b.storage();
    tape->record(r.storage(), [sa, sb, inner](Tape<T>& t, const std::vector<T>& g) {
      const auto& av2 = sa->values;
      const auto& bv2 = sb->values;
      if (auto* ga = t.grad_slot(sa))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv2[i % inner];
      if (auto* gb = t.grad_slot(sb))
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % inner] += g[i] * av2[i];
    });
  }
  return r;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c, Tape<T>* tape = nullptr) {
  std::vector<T> out(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  Tensor<T> r(a.shape(), std::move(out));
  if (tape && detail::tracked(tape, a)) {
    auto sa = a.storage();
    tape->record(r.storage(), [sa, c](Tape<T>& t, const std::vector<T>& g) {
      if (auto* ga = t.grad_slot(sa))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * c;
    });
  }
  return r;
}

// ---- matmul ----------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul expects matrices, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<T> out(m * n);
  detail::gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  Tensor<T> r({m, n}, std::move(out));
  if (tape && (detail::tracked(tape, a) || detail::tracked(tape, b))) {
    auto sa = a.storage(), sb = b.storage();
    tape->record(r.storage(), [sa, sb, m, k, n](Tape<T>& t, const std::vector<T>& g) {
      if (auto* ga = t.grad_slot(sa)) {
        std::vector<T> tmp(m * k);
        detail::gemm_nt(g.data(), sb->values.data(), tmp.data(), m, n, k);
        for (std::size_t i = 0; i < tmp.size(); ++i) (*ga)[i] += tmp[i];
      }
      if (auto* gb = t.grad_slot(sb)) {
        std::vector<T> tmp(k * n);
        detail::gemm_tn(sa->values.data(), g.data(), tmp.data(), k, m, n);
        for (std::size_t i = 0; i < tmp.size(); ++i) (*gb)[i] += tmp[i];
      }
    });
  }
  return r;
}

// ---- shape manipulation ----------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape, Tape<T>* tape = nullptr) {
  if (numel(shape) != a.size())
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  Tensor<T> r(std::move(shape), a.values());
  if (tape && detail::tracked(tape, a)) {
    auto sa = a.storage();
    tape->record(r.storage(), [sa](Tape<T>& t, const std::vector<T>& g) {
      if (auto* ga = t.grad_slot(sa))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    });
  }
  return r;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a, Tape<T>* tape = nullptr) {
  if (a.rank() != 2) throw ShapeError("transpose2d expects a matrix, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  const auto& av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  Tensor<T> r({n, m}, std::move(out));
  if (tape && detail::tracked(tape, a)) {
    auto sa = a.storage();
    tape->record(r.storage(), [sa, m, n](Tape<T>& t, const std::vector<T>& g) {
      if (auto* ga = t.grad_slot(sa))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += g[j * m + i];
    });
  }
  return r;
}

// swap the first two axes, inner axes flattened
template <typename T>
Tensor<T> transpose01(const Tensor<T>& a, Tape<T>* tape = nullptr) {
  if (a.rank() < 2) throw ShapeError("transpose01 expects rank >= 2, got " + shape_str(a.shape()));
  const std::size_t d0 = a.dim(0), d1 = a.dim(1), inner = a.size() / (d0 * d1);
  Shape out_shape = a.shape();
  std::swap(out_shape[0], out_shape[1]);
  std::vector<T> out(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < d0; ++i)
    for (std::size_t j = 0; j < d1; ++j) {
      const T* src = av.data() + (i * d1 + j) * inner;
      T* dst = out.data() + (j * d0 + i) * inner;
      std::copy(src, src + inner, dst);
    }
  Tensor<T> r(std::move(out_shape), std::move(out));
  if (tape && detail::tracked(tape, a)) {
    auto sa = a.storage();
    tape->record(r.storage(), [sa, d0, d1, inner](Tape<T>& t, const std::vector<T>& g) {
      if (auto* ga = t.grad_slot(sa))
        for (std::size_t i = 0; i < d0; ++i)
          for (std::size_t j = 0; j < d1; ++j) {
            const T* src = g.data() + (j * d0 + i) * inner;
            T* dst = ga->data() + (i * d1 + j) * inner;
            for (std::size_t p = 0; p < inner; ++p) dst[p] += src[p];
          }
    });
  }
  return r;
}

template <typename T>
Tensor<T> slice_axis0(const Tensor<T>& a, std::size_t start, std::size_t len,
                      Tape<T>* tape = nullptr) {
  if (a.rank() < 1 || start + len > a.dim(0))
    throw ShapeError("slice_axis0 [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of range for " + shape_str(a.shape()));
  const std::size_t inner = a.size() / a.dim(0);
  Shape out_shape = a.shape();
  out_shape[0] = len;
  std::vector<T> out(a.values().begin() + start * inner,
                     a.values().begin() + (start + len) * inner);
  Tensor<T> r(std::move(out_shape), std::move(out));
  if (tape && detail::tracked(tape, a)) {
    auto sa = a.storage();
    tape->record(r.storage(), [sa, start, inner](Tape<T>& t, const std::vector<T>& g) {
      if (auto* ga = t.grad_slot(sa))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[start * inner + i] += g[i];
    });
  }
  return r;
}

template <typename T>
Tensor<T> concat_axis0(const std::vector<Tensor<T>>& parts, Tape<T>* tape = nullptr) {
  if (parts.empty()) throw ShapeError("concat_axis0 of zero tensors");
  Shape out_shape = parts[0].shape();
  const std::size_t inner = parts[0].size() / parts[0].dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    s[0] = out_shape[0];
    if (s != out_shape)
      throw ShapeError("concat_axis0 trailing shape mismatch: " + shape_str(p.shape()) + " vs " +
                       shape_str(out_shape));
    total += p.dim(0);
  }
  out_shape[0] = total;
  std::vector<T> out;
  out.reserve(total * inner);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  Tensor<T> r(std::move(out_shape), std::move(out));
  bool any = false;
  for (const auto& p : parts) any = any || detail::tracked(tape, p);
  if (tape && any) {
    std::vector<typename Tensor<T>::StoragePtr> storages;
    for (const auto& p : parts) storages.push_back(p.storage());
    tape->record(r.storage(), [storages](Tape<T>& t, const std::vector<T>& g) {
      std::size_t off = 0;
      for (const auto& s : storages) {
        if (auto* gs = t.grad_slot(s))
          for (std::size_t i = 0; i < s->values.size(); ++i) (*gs)[i] += g[off + i];
        off += s->values.size();
      }
    });
  }
  return r;
}

template <typename T>
Tensor<T> slice_last(const Tensor<T>& a, std::size_t start, std::size_t len,
                     Tape<T>* tape = nullptr) {
  const std::size_t last = a.shape().back();
  if (start + len > last)
    throw ShapeError("slice_last [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of range for " + shape_str(a.shape()));
  const std::size_t rows = a.size() / last;
  Shape out_shape = a.shape();
  out_shape.back() = len;
  std::vector<T> out(rows * len);
  const auto& av = a.values();
  for (std::size_t rr = 0; rr < rows; ++rr)
    std::copy(av.begin() + rr * last + start, av.begin() + rr * last + start + len,
              out.begin() + rr * len);
  Tensor<T> r(std::move(out_shape), std::move(out));
  if (tape && detail::tracked(tape, a)) {
    auto sa = a.storage();
    tape->record(r.storage(), [sa, start, len, last, rows](Tape<T>& t, const std::vector<T>& g) {
      if (auto* ga = t.grad_slot(sa))
        for (std::size_t rr = 0; rr < rows; ++rr)
          for (std::size_t j = 0; j < len; ++j) (*ga)[rr * last + start + j] += g[rr * len + j];
    });
  }
  return r;
}

template <typename T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts, Tape<T>* tape = nullptr) {
  if (parts.empty()) throw ShapeError("concat_last of zero tensors");
  const std::size_t rows = parts[0].size() / parts[0].shape().back();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.size() / p.shape().back() != rows ||
        Shape(p.shape().begin(), p.shape().end() - 1) !=
            Shape(parts[0].shape().begin(), parts[0].shape().end() - 1))
      throw ShapeError("concat_last leading shape mismatch: " + shape_str(p.shape()) + " vs " +
                       shape_str(parts[0].shape()));
    total += p.shape().back();
  }
  Shape out_shape = parts[0].shape();
  out_shape.back() = total;
  std::vector<T> out(rows * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape().back();
    const auto& pv = p.values();
    for (std::size_t rr = 0; rr < rows; ++rr)
      std::copy(pv.begin() + rr * w, pv.begin() + (rr + 1) * w, out.begin() + rr * total + off);
    off += w;
  }
  Tensor<T> r(std::move(out_shape), std::move(out));
  bool any = false;
  for (const auto& p : parts) any = any || detail::tracked(tape, p);
  if (tape && any) {
    std::vector<typename Tensor<T>::StoragePtr> storages;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
      storages.push_back(p.storage());
      widths.push_back(p.shape().back());
    }
    tape->record(r.storage(), [storages, widths, rows, total](Tape<T>& t,
                                                              const std::vector<T>& g) {
      std::size_t off2 = 0;
      for (std::size_t pi = 0; pi < storages.size(); ++pi) {
        if (auto* gs = t.grad_slot(storages[pi]))
          for (std::size_t rr = 0; rr < rows; ++rr)
            for (std::size_t j = 0; j < widths[pi]; ++j)
              (*gs)[rr * widths[pi] + j] += g[rr * total + off2 + j];
        off2 += widths[pi];
      }
    });
  }
  return r;
}

// (H,W,C) -> (H/p * W/p, p*p*C): non-overlapping p×p patches, row-major over
// the patch grid, pixels row-major within a patch.
template <typename T>
Tensor<T> patchify(const Tensor<T>& x, std::size_t p, Tape<T>* tape = nullptr) {
  if (x.rank() != 3) throw ShapeError("patchify expects (H,W,C), got " + shape_str(x.shape()));
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (p == 0 || h % p != 0 || w % p != 0)
    throw ShapeError("patch edge " + std::to_string(p) + " does not divide " +
                     shape_str(x.shape()));
  const std::size_t gh = h / p, gw = w / p, pw = p * p * c;
  std::vector<T> out(gh * gw * pw);
  const auto& xv = x.values();
  for (std::size_t bi = 0; bi < gh; ++bi)
    for (std::size_t bj = 0; bj < gw; ++bj) {
      T* dst = out.data() + (bi * gw + bj) * pw;
      for (std::size_t di = 0; di < p; ++di) {
        const T* src = xv.data() + ((bi * p + di) * w + bj * p) * c;
        std::copy(src, src + p * c, dst + di * p * c);
      }
    }
  Tensor<T> r({gh * gw, pw}, std::move(out));
  if (tape && detail::tracked(tape, x)) {
    auto sx = x.storage();
    tape->record(r.storage(), [sx, p, w, c, gh, gw, pw](Tape<T>& t, const std::vector<T>& g) {
      if (auto* gx = t.grad_slot(sx))
        for (std::size_t bi = 0; bi < gh; ++bi)
          for (std::size_t bj = 0; bj < gw; ++bj) {
            const T* src = g.data() + (bi * gw + bj) * pw;
            for (std::size_t di = 0; di < p; ++di) {
              T* dst = gx->data() + ((bi * p + di) * w + bj * p) * c;
              for (std::size_t q = 0; q < p * c; ++q) dst[q] += src[di * p * c + q];
            }
          }
    });
  }
  return r;
}

// ---- activations -----------------------------------------------------------

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  std::vector<T> out(x.size());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-xv[i]));
  Tensor<T> r(x.shape(), std::move(out));
  if (tape && detail::tracked(tape, x)) {
    auto sx = x.storage();
    auto sy = r.storage();
    tape->record(r.storage(), [sx, sy](Tape<T>& t, const std::vector<T>& g) {
      if (auto* gx = t.grad_slot(sx)) {
        const auto& y = sy->values;
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i] * (T(1) - y[i]);
      }
    });
  }
  return r;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  std::vector<T> out(x.size());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
  Tensor<T> r(x.shape(), std::move(out));
  if (tape && detail::tracked(tape, x)) {
    auto sx = x.storage();
    auto sy = r.storage();
    tape->record(r.storage(), [sx, sy](Tape<T>& t, const std::vector<T>& g) {
      if (auto* gx = t.grad_slot(sx)) {
        const auto& y = sy->values;
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (T(1) - y[i] * y[i]);
      }
    });
  }
  return r;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  std::vector<T> out(x.size());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
  Tensor<T> r(x.shape(), std::move(out));
  if (tape && detail::tracked(tape, x)) {
    auto sx = x.storage();
    tape->record(r.storage(), [sx](Tape<T>& t, const std::vector<T>& g) {
      if (auto* gx = t.grad_slot(sx)) {
        const auto& xv2 = sx->values;
        for (std::size_t i = 0; i < g.size(); ++i)
          if (xv2[i] > T(0)) (*gx)[i] += g[i];
      }
    });
  }
  return r;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.size() / c;
  std::vector<T> out(x.size());
  const auto& xv = x.values();
  for (std::size_t rr = 0; rr < rows; ++rr) {
    const T* row = xv.data() + rr * c;
    T* orow = out.data() + rr * c;
    T mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (std::size_t j = 0; j < c; ++j) orow[j] /= sum;
  }
  Tensor<T> r(x.shape(), std::move(out));
  if (tape && detail::tracked(tape, x)) {
    auto sx = x.storage();
    auto sy = r.storage();
    tape->record(r.storage(), [sx, sy, rows, c](Tape<T>& t, const std::vector<T>& g) {
      if (auto* gx = t.grad_slot(sx)) {
        const auto& y = sy->values;
        for (std::size_t rr = 0; rr < rows; ++rr) {
          T dot = T(0);
          for (std::size_t j = 0; j < c; ++j) dot += g[rr * c + j] * y[rr * c + j];
          for (std::size_t j = 0; j < c; ++j)
            (*gx)[rr * c + j] += y[rr * c + j] * (g[rr * c + j] - dot);
        }
      }
    });
  }
  return r;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.size() / c;
  std::vector<T> out(x.size());
  const auto& xv = x.values();
  for (std::size_t rr = 0; rr < rows; ++rr) {
    const T* row = xv.data() + rr * c;
    T* orow = out.data() + rr * c;
    T mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    const T lse = mx + std::log(sum);
    for (std::size_t j = 0; j < c; ++j) orow[j] = row[j] - lse;
  }
  Tensor<T> r(x.shape(), std::move(out));
  if (tape && detail::tracked(tape, x)) {
    auto sx = x.storage();
    auto sy = r.storage();
    tape->record(r.storage(), [sx, sy, rows, c](Tape<T>& t, const std::vector<T>& g) {
      if (auto* gx = t.grad_slot(sx)) {
        const auto& y = sy->values;
        for (std::size_t rr = 0; rr < rows; ++rr) {
          T gsum = T(0);
          for (std::size_t j = 0; j < c; ++j) gsum += g[rr * c + j];
          for (std::size_t j = 0; j < c; ++j)
            (*gx)[rr * c + j] += g[rr * c + j] - std::exp(y[rr * c + j]) * gsum;
        }
      }
    });
  }
  return r;
}

// ---- layer norm ------------------------------------------------------------

// normalizes over the final axis, then applies the gamma/beta affine
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                     Tape<T>* tape = nullptr) {
  const std::size_t c = x.shape().back();
  if (gamma.size() != c || beta.size() != c)
    throw ShapeError("layer_norm affine size " + std::to_string(gamma.size()) +
                     " does not match channel extent " + std::to_string(c));
  if (eps <= T(0)) throw ShapeError("layer_norm eps must be positive");
  const std::size_t rows = x.size() / c;
  std::vector<T> out(x.size());
  std::vector<T> norm(x.size());   // pre-affine normalized values, kept for backward
  std::vector<T> inv_sd(rows);
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (std::size_t rr = 0; rr < rows; ++rr) {
    const T* row = xv.data() + rr * c;
    T mean = T(0);
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= T(c);
    T var = T(0);
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(c);
    const T isd = T(1) / std::sqrt(var + eps);
    inv_sd[rr] = isd;
    for (std::size_t j = 0; j < c; ++j) {
      norm[rr * c + j] = (row[j] - mean) * isd;
      out[rr * c + j] = gv[j] * norm[rr * c + j] + bv[j];
    }
  }
  Tensor<T> r(x.shape(), std::move(out));
  if (tape && (detail::tracked(tape, x) || detail::tracked(tape, gamma) ||
               detail::tracked(tape, beta))) {
    auto sx = x.storage();
    auto sg = gamma.storage();
    auto sb = beta.storage();
    tape->record(r.storage(), [sx, sg, sb, rows, c, norm = std::move(norm),
                               inv_sd = std::move(inv_sd)](Tape<T>& t, const std::vector<T>& g) {
      const auto& gv2 = sg->values;
      auto* gx = t.grad_slot(sx);
      auto* gg = t.grad_slot(sg);
      auto* gb = t.grad_slot(sb);
      for (std::size_t rr = 0; rr < rows; ++rr) {
        const T* grow = g.data() + rr * c;
        const T* nrow = norm.data() + rr * c;
        if (gg)
          for (std::size_t j = 0; j < c; ++j) (*gg)[j] += grow[j] * nrow[j];
        if (gb)
          for (std::size_t j = 0; j < c; ++j) (*gb)[j] += grow[j];
        if (gx) {
          T mean_dy = T(0), mean_dyn = T(0);
          for (std::size_t j = 0; j < c; ++j) {
            const T dy = grow[j] * gv2[j];
            mean_dy += dy;
            mean_dyn += dy * nrow[j];
          }
          mean_dy /= T(c);
          mean_dyn /= T(c);
          for (std::size_t j = 0; j < c; ++j) {
            const T dy = grow[j] * gv2[j];
            (*gx)[rr * c + j] += inv_sd[rr] * (dy - mean_dy - nrow[j] * mean_dyn);
          }
        }
      }
    });
  }
  return r;
}

// ---- reductions ------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  T s = T(0);
  for (T v : x.values()) s += v;
  Tensor<T> r = Tensor<T>::scalar(s);
  if (tape && detail::tracked(tape, x)) {
    auto sx = x.storage();
    tape->record(r.storage(), [sx](Tape<T>& t, const std::vector<T>& g) {
      if (auto* gx = t.grad_slot(sx))
        for (auto& v : *gx) v += g[0];
    });
  }
  return r;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  return scale(sum_all(x, tape), T(1) / T(x.size()), tape);
}

// (N,C) -> (C,) column means; used for global average pooling
template <typename T>
Tensor<T> mean_axis0(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  if (x.rank() != 2) throw ShapeError("mean_axis0 expects a matrix, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  std::vector<T> out(c, T(0));
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += xv[i * c + j];
  for (auto& v : out) v /= T(n);
  Tensor<T> r({c}, std::move(out));
  if (tape && detail::tracked(tape, x)) {
    auto sx = x.storage();
    tape->record(r.storage(), [sx, n, c](Tape<T>& t, const std::vector<T>& g) {
      if (auto* gx = t.grad_slot(sx))
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += g[j] / T(n);
    });
  }
  return r;
}

// elementwise kinds, kept behind one entry point for callers that select by tag
enum class EwKind { add, mul, matmul };
enum class ActKind { sigmoid, tanh, relu, softmax, log_softmax };

template <typename T>
Tensor<T> ew_and_matmul(const Tensor<T>& a, const Tensor<T>& b, EwKind kind,
                        Tape<T>* tape = nullptr) {
  switch (kind) {
    case EwKind::add: return add(a, b, tape);
    case EwKind::mul: return mul(a, b, tape);
    case EwKind::matmul: return matmul(a, b, tape);
  }
  throw std::invalid_argument("unknown elementwise kind");
}

template <typename T>
Tensor<T> activations(const Tensor<T>& x, ActKind kind, Tape<T>* tape = nullptr) {
  switch (kind) {
    case ActKind::sigmoid: return sigmoid(x, tape);
    case ActKind::tanh: return tanh(x, tape);
    case ActKind::relu: return relu(x, tape);
    case ActKind::softmax: return softmax(x, tape);
    case ActKind::log_softmax: return log_softmax(x, tape);
  }
  throw std::invalid_argument("unknown activation kind");
}

}  // namespace dpseq
