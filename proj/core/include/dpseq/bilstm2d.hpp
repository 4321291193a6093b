#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dpseq/ops.hpp"
#include "dpseq/rng.hpp"
#include "dpseq/tensor.hpp"

namespace dpseq {

// Single LSTM cell, one bias per gate. Gate order throughout: i, f, g, o.
template <typename T>
struct LstmCellParams {
  Tensor<T> Wi, Wf, Wg, Wo;  // D × C_in
  Tensor<T> Ui, Uf, Ug, Uo;  // D × D
  Tensor<T> bi, bf, bg, bo;  // D

  std::size_t hidden() const { return Wi.dim(0); }
  std::size_t input() const { return Wi.dim(1); }
};

template <typename T>
struct BiLstmParams {
  LstmCellParams<T> fwd, bwd;

  std::size_t hidden() const { return fwd.hidden(); }
  std::size_t input() const { return fwd.input(); }
};

template <typename T>
struct BiLstm2dParams {
  BiLstmParams<T> vertical, horizontal;
  Tensor<T> fusion_w;  // C × 4D
  Tensor<T> fusion_b;  // C

  std::size_t hidden() const { return vertical.hidden(); }
  std::size_t channels() const { return fusion_b.size(); }
};

template <typename T>
LstmCellParams<T> init_lstm_cell(std::size_t c_in, std::size_t d, Rng& rng) {
  const T bound = T(1) / std::sqrt(T(d));
  auto mat = [&](std::size_t r, std::size_t c) {
    std::vector<T> v(r * c);
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>({r, c}, std::move(v), true);
  };
  LstmCellParams<T> p;
  p.Wi = mat(d, c_in);
  p.Wf = mat(d, c_in);
  p.Wg = mat(d, c_in);
  p.Wo = mat(d, c_in);
  p.Ui = mat(d, d);
  p.Uf = mat(d, d);
  p.Ug = mat(d, d);
  p.Uo = mat(d, d);
  p.bi = Tensor<T>::zeros({d}, true);
  p.bf = Tensor<T>::zeros({d}, true);
  p.bg = Tensor<T>::zeros({d}, true);
  p.bo = Tensor<T>::zeros({d}, true);
  return p;
}

template <typename T>
BiLstm2dParams<T> init_bilstm2d(std::size_t channels, std::size_t d, Rng& rng) {
  BiLstm2dParams<T> p;
  p.vertical = {init_lstm_cell<T>(channels, d, rng), init_lstm_cell<T>(channels, d, rng)};
  p.horizontal = {init_lstm_cell<T>(channels, d, rng), init_lstm_cell<T>(channels, d, rng)};
  const T bound = T(1) / std::sqrt(T(d));
  std::vector<T> w(channels * 4 * d);
  for (auto& x : w) x = static_cast<T>(rng.uniform(-bound, bound));
  p.fusion_w = Tensor<T>({channels, 4 * d}, std::move(w), true);
  p.fusion_b = Tensor<T>::zeros({channels}, true);
  return p;
}

template <typename T, typename Fn>
void visit_params(LstmCellParams<T>& p, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".Wi", p.Wi);
  fn(prefix + ".Wf", p.Wf);
  fn(prefix + ".Wg", p.Wg);
  fn(prefix + ".Wo", p.Wo);
  fn(prefix + ".Ui", p.Ui);
  fn(prefix + ".Uf", p.Uf);
  fn(prefix + ".Ug", p.Ug);
  fn(prefix + ".Uo", p.Uo);
  fn(prefix + ".bi", p.bi);
  fn(prefix + ".bf", p.bf);
  fn(prefix + ".bg", p.bg);
  fn(prefix + ".bo", p.bo);
}

template <typename T, typename Fn>
void visit_params(BiLstm2dParams<T>& p, const std::string& prefix, Fn&& fn) {
  visit_params(p.vertical.fwd, prefix + ".ver.fwd", fn);
  visit_params(p.vertical.bwd, prefix + ".ver.bwd", fn);
  visit_params(p.horizontal.fwd, prefix + ".hor.fwd", fn);
  visit_params(p.horizontal.bwd, prefix + ".hor.bwd", fn);
  fn(prefix + ".fusion.W", p.fusion_w);
  fn(prefix + ".fusion.b", p.fusion_b);
}

namespace detail {

// Gate matrices fused to single (C_in × 4D) / (D × 4D) operands so one gemm
// covers all four gates of a step.
template <typename T>
struct FusedCell {
  Tensor<T> w_in;   // C_in × 4D
  Tensor<T> u_rec;  // D × 4D
  Tensor<T> bias;   // 4D
  std::size_t d;
};

template <typename T>
FusedCell<T> fuse_cell(const LstmCellParams<T>& p, Tape<T>* tape) {
  FusedCell<T> f;
  f.d = p.hidden();
  f.w_in = transpose2d(concat_axis0<T>({p.Wi, p.Wf, p.Wg, p.Wo}, tape), tape);
  f.u_rec = transpose2d(concat_axis0<T>({p.Ui, p.Uf, p.Ug, p.Uo}, tape), tape);
  f.bias = concat_axis0<T>({p.bi, p.bf, p.bg, p.bo}, tape);
  return f;
}

// One recurrence step on a batch of independent sequences.
// gates (N × 4D) already contains W·x + b [+ U·h_prev].
template <typename T>
std::pair<Tensor<T>, Tensor<T>> cell_update(const Tensor<T>& gates, const Tensor<T>& c_prev,
                                            std::size_t d, Tape<T>* tape) {
  Tensor<T> i = sigmoid(slice_last(gates, 0, d, tape), tape);
  Tensor<T> f = sigmoid(slice_last(gates, d, d, tape), tape);
  Tensor<T> g = dpseq::tanh(slice_last(gates, 2 * d, d, tape), tape);
  Tensor<T> o = sigmoid(slice_last(gates, 3 * d, d, tape), tape);
  Tensor<T> c = c_prev.defined() ? add(mul(f, c_prev, tape), mul(i, g, tape), tape)
                                 : mul(i, g, tape);
  Tensor<T> h = mul(o, dpseq::tanh(c, tape), tape);
  return {h, c};
}

// Runs one direction over x (steps*batch × C_in), rows grouped by step.
// reverse=true consumes steps back to front; output rows stay in forward
// step order either way.
template <typename T>
Tensor<T> run_direction(const Tensor<T>& x, std::size_t steps, std::size_t batch,
                        const LstmCellParams<T>& cell, bool reverse, Tape<T>* tape) {
  FusedCell<T> f = fuse_cell(cell, tape);
  Tensor<T> pre = add(matmul(x, f.w_in, tape), f.bias, tape);
  Tensor<T> h, c;
  std::vector<Tensor<T>> hs(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    Tensor<T> gates = slice_axis0(pre, t * batch, batch, tape);
    if (h.defined()) gates = add(gates, matmul(h, f.u_rec, tape), tape);
    auto [hn, cn] = cell_update(gates, c, f.d, tape);
    h = hn;
    c = cn;
    hs[t] = h;
  }
  return concat_axis0(hs, tape);
}

}  // namespace detail

// (h, c) for one step of the recurrence:
//   i = σ(Wi·x + Ui·h + bi), f/o analogous, g = tanh(Wg·x + Ug·h + bg),
//   c = f⊙c_prev + i⊙g, h = o⊙tanh(c)
template <typename T>
std::pair<Tensor<T>, Tensor<T>> lstm_step(const Tensor<T>& x, const Tensor<T>& h_prev,
                                          const Tensor<T>& c_prev, const LstmCellParams<T>& p,
                                          Tape<T>* tape = nullptr) {
  const std::size_t d = p.hidden();
  if (x.size() != p.input() || h_prev.size() != d || c_prev.size() != d)
    throw ShapeError("lstm_step state/input shapes " + shape_str(x.shape()) + "," +
                     shape_str(h_prev.shape()) + " do not match cell (D=" + std::to_string(d) +
                     ", C_in=" + std::to_string(p.input()) + ")");
  detail::FusedCell<T> f = detail::fuse_cell(p, tape);
  Tensor<T> xm = reshape(x, {1, p.input()}, tape);
  Tensor<T> hm = reshape(h_prev, {1, d}, tape);
  Tensor<T> gates =
      add(add(matmul(xm, f.w_in, tape), matmul(hm, f.u_rec, tape), tape), f.bias, tape);
  auto [h, c] = detail::cell_update(gates, reshape(c_prev, {1, d}, tape), d, tape);
  return {reshape(h, {d}, tape), reshape(c, {d}, tape)};
}

// seq (T × C_in) -> (T × 2D); zero initial states, backward half re-aligned
// to forward time order.
template <typename T>
Tensor<T> bilstm_forward(const Tensor<T>& seq, const BiLstmParams<T>& p, Tape<T>* tape = nullptr) {
  if (seq.rank() != 2) throw ShapeError("bilstm_forward expects (T,C), got " + shape_str(seq.shape()));
  if (seq.dim(0) == 0) throw ShapeError("bilstm_forward on an empty sequence");
  if (seq.dim(1) != p.input())
    throw ShapeError("sequence channels " + std::to_string(seq.dim(1)) + " do not match cell C_in " +
                     std::to_string(p.input()));
  Tensor<T> fwd = detail::run_direction(seq, seq.dim(0), 1, p.fwd, false, tape);
  Tensor<T> bwd = detail::run_direction(seq, seq.dim(0), 1, p.bwd, true, tape);
  return concat_last<T>({fwd, bwd}, tape);
}

// Branch intermediates, exposed for equivariance checks.
template <typename T>
struct BiLstm2dTrace {
  Tensor<T> vertical;    // H × W × 2D
  Tensor<T> horizontal;  // H × W × 2D
};

// I (H×W×C) -> (H×W×C). Shared-weight vertical BiLSTM over every column,
// shared-weight horizontal BiLSTM over every row, per-position concat to 4D,
// point-wise affine fusion back to C. All columns (rows) run batched through
// one recurrence, which is equivalent to independent per-sequence runs.
template <typename T>
Tensor<T> bilstm2d_forward(const Tensor<T>& image, const BiLstm2dParams<T>& p,
                           Tape<T>* tape = nullptr, BiLstm2dTrace<T>* trace = nullptr) {
  if (image.rank() != 3)
    throw ShapeError("bilstm2d_forward expects (H,W,C), got " + shape_str(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (c != p.channels())
    throw ShapeError("image channels " + std::to_string(c) + " do not match fusion width " +
                     std::to_string(p.channels()));
  const std::size_t d = p.hidden();

  // vertical: sequences run down each column; row-major layout already groups
  // rows by the step index h with the W columns as the batch
  Tensor<T> flat = reshape(image, {h * w, c}, tape);
  Tensor<T> vert_f = detail::run_direction(flat, h, w, p.vertical.fwd, false, tape);
  Tensor<T> vert_b = detail::run_direction(flat, h, w, p.vertical.bwd, true, tape);
  Tensor<T> vert = concat_last<T>({vert_f, vert_b}, tape);  // (H*W) × 2D

  // horizontal: transpose so rows become the step axis
  Tensor<T> flipped = reshape(transpose01(image, tape), {w * h, c}, tape);
  Tensor<T> hor_f = detail::run_direction(flipped, w, h, p.horizontal.fwd, false, tape);
  Tensor<T> hor_b = detail::run_direction(flipped, w, h, p.horizontal.bwd, true, tape);
  Tensor<T> hor_t = concat_last<T>({hor_f, hor_b}, tape);  // (W*H) × 2D, (w,h) order
  Tensor<T> hor =
      reshape(transpose01(reshape(hor_t, {w, h, 2 * d}, tape), tape), {h * w, 2 * d}, tape);

  if (trace) {
    trace->vertical = reshape(vert, {h, w, 2 * d}, tape);
    trace->horizontal = reshape(hor, {h, w, 2 * d}, tape);
  }

  Tensor<T> hall = concat_last<T>({vert, hor}, tape);  // (H*W) × 4D
  Tensor<T> fused = add(matmul(hall, transpose2d(p.fusion_w, tape), tape), p.fusion_b, tape);
  return reshape(fused, {h, w, c}, tape);
}

}  // namespace dpseq
