// SPDX-License-Identifier: Apache-2.0
//
// Dense float tensors with reverse-mode automatic differentiation on an
// explicit tape. The scalar type is a template parameter: the toolkit trains
// in 32-bit, and the 64-bit instantiation exists for gradient verification.
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "trisim/common.hpp"
#include "trisim/gemm.hpp"
#include "trisim/half.hpp"

namespace trisim {

enum class Mode { train, eval };

inline constexpr int kNoNode = -1;

template <typename S>
struct TensorT {
  Shape shape;
  std::vector<S> values;
  int node = kNoNode;             // handle into the active tape
  std::uint64_t tape_id = 0;      // which tape the handle belongs to
  bool grad_enabled = false;

  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
  bool is_scalar() const { return values.size() == 1; }
  S scalar() const {
    require(is_scalar(), "scalar() on tensor of shape ", shape_str(shape));
    return values[0];
  }
  bool on_tape(std::uint64_t id) const { return node >= 0 && tape_id == id; }
};

using Tensor = TensorT<float>;

template <typename S>
TensorT<S> make_tensor(Shape shape, std::vector<S> values) {
  require(numel(shape) == static_cast<std::int64_t>(values.size()), "tensor shape ",
          shape_str(shape), " does not match value count ", values.size());
  TensorT<S> t;
  t.shape = std::move(shape);
  t.values = std::move(values);
  return t;
}

template <typename S>
TensorT<S> zeros(const Shape& shape) {
  TensorT<S> t;
  t.shape = shape;
  t.values.assign(static_cast<std::size_t>(numel(shape)), S(0));
  return t;
}

template <typename S>
TensorT<S> full(const Shape& shape, S v) {
  TensorT<S> t;
  t.shape = shape;
  t.values.assign(static_cast<std::size_t>(numel(shape)), v);
  return t;
}

// Saved forward context. In reduced-precision mode (float tapes only) the
// payload is stored as binary16 and decoded on demand; the byte counter feeds
// the activation-storage instrumentation.
template <typename S>
struct Saved {
  std::vector<S> full;
  std::vector<std::uint16_t> half;
  bool reduced = false;

  std::size_t bytes() const {
    return reduced ? half.size() * sizeof(std::uint16_t) : full.size() * sizeof(S);
  }
  std::vector<S> restore() const {
    if (!reduced) return full;
    std::vector<S> out(half.size());
    for (std::size_t i = 0; i < half.size(); ++i) out[i] = static_cast<S>(half_to_float(half[i]));
    return out;
  }
};

inline std::atomic<std::uint64_t>& tape_id_counter() {
  static std::atomic<std::uint64_t> counter{1};
  return counter;
}

template <typename S>
class TapeT {
 public:
  using BackFn = std::function<void(TapeT&, const std::vector<S>&)>;

  TapeT() : id_(tape_id_counter().fetch_add(1)) {}
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  std::uint64_t id() const { return id_; }

  // Registers a leaf so gradients can be collected for it.
  int watch(TensorT<S>& t) {
    require(!backward_run_, "watch() after backward(); reset the tape first");
    Node node;
    node.size = t.numel();
    nodes_.push_back(std::move(node));
    t.node = static_cast<int>(nodes_.size()) - 1;
    t.tape_id = id_;
    t.grad_enabled = true;
    return t.node;
  }

  int record(std::int64_t out_size, BackFn back) {
    Node node;
    node.size = out_size;
    node.back = std::move(back);
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void accumulate(int node, const S* g, std::int64_t n) {
    Node& dst = nodes_[static_cast<std::size_t>(node)];
    if (dst.grad.empty()) dst.grad.assign(static_cast<std::size_t>(dst.size), S(0));
    require(dst.size == n, "gradient size mismatch on tape node");
    for (std::int64_t i = 0; i < n; ++i) dst.grad[static_cast<std::size_t>(i)] += g[i];
  }

  std::shared_ptr<const Saved<S>> save(const std::vector<S>& v) {
    auto buf = std::make_shared<Saved<S>>();
    if (reduced_) {
      buf->reduced = true;
      buf->half.resize(v.size());
      for (std::size_t i = 0; i < v.size(); ++i)
        buf->half[i] = float_to_half(static_cast<float>(v[i]));
    } else {
      buf->full = v;
    }
    saved_bytes_ += buf->bytes();
    return buf;
  }

  // Rounds values through the binary16 grid in reduced mode (no-op otherwise).
  void quantize(std::vector<S>& v) const {
    if (!reduced_) return;
    for (auto& x : v) x = static_cast<S>(half_round_trip(static_cast<float>(x)));
  }

  void backward(const TensorT<S>& loss, S seed = S(1)) {
    require(loss.is_scalar(), "backward() requires a scalar loss, got shape ",
            shape_str(loss.shape));
    require(!backward_run_, "backward() already run on this tape; reset it first");
    if (loss.node >= 0) {
      require(loss.on_tape(id_), "backward() loss belongs to a different tape");
      nodes_[static_cast<std::size_t>(loss.node)].grad.assign(1, seed);
      for (std::int64_t i = loss.node; i >= 0; --i) {
        Node& node = nodes_[static_cast<std::size_t>(i)];
        if (node.grad.empty()) continue;
        quantize(node.grad);
        if (node.back) node.back(*this, node.grad);
      }
    }
    // A loss with no tape handle is a constant: every gradient is zero.
    backward_run_ = true;
  }

  bool backward_run() const { return backward_run_; }

  // Gradient of a watched or recorded tensor after backward(); zero if no
  // gradient reached it.
  TensorT<S> grad(const TensorT<S>& t) const {
    require(backward_run_, "grad() before backward()");
    require(t.on_tape(id_), "grad() of a tensor that is not on this tape");
    const Node& node = nodes_[static_cast<std::size_t>(t.node)];
    TensorT<S> g;
    g.shape = t.shape;
    if (node.grad.empty()) {
      g.values.assign(t.values.size(), S(0));
    } else {
      g.values = node.grad;
    }
    return g;
  }

  void reset() {
    nodes_.clear();
    backward_run_ = false;
    saved_bytes_ = 0;
  }

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t saved_bytes() const { return saved_bytes_; }

  void set_reduced(bool on) {
    require(!on || std::is_same_v<S, float>, "reduced precision is a float-tape mode");
    reduced_ = on;
  }
  bool reduced() const { return reduced_; }

 private:
  struct Node {
    std::int64_t size = 0;
    std::vector<S> grad;
    BackFn back;
  };
  std::vector<Node> nodes_;
  std::uint64_t id_ = 0;
  bool backward_run_ = false;
  bool reduced_ = false;
  std::size_t saved_bytes_ = 0;
};

using Tape = TapeT<float>;

namespace detail {

template <typename S>
TensorT<S> finish_op(TapeT<S>& tape, TensorT<S> out, bool recorded, int node) {
  tape.quantize(out.values);
  if (recorded) {
    out.node = node;
    out.tape_id = tape.id();
    out.grad_enabled = true;
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise primitives
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> add(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
  require(a.shape == b.shape, "add: shape mismatch ", shape_str(a.shape), " vs ",
          shape_str(b.shape));
  TensorT<S> out;
  out.shape = a.shape;
  out.values.resize(a.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) out.values[i] = a.values[i] + b.values[i];
  const int na = a.on_tape(tape.id()) ? a.node : kNoNode;
  const int nb = b.on_tape(tape.id()) ? b.node : kNoNode;
  if (na < 0 && nb < 0) return detail::finish_op(tape, std::move(out), false, 0);
  int node = tape.record(out.numel(), [na, nb](TapeT<S>& t, const std::vector<S>& g) {
    if (na >= 0) t.accumulate(na, g.data(), static_cast<std::int64_t>(g.size()));
    if (nb >= 0) t.accumulate(nb, g.data(), static_cast<std::int64_t>(g.size()));
  });
  return detail::finish_op(tape, std::move(out), true, node);
}

template <typename S>
TensorT<S> sub(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
  require(a.shape == b.shape, "sub: shape mismatch ", shape_str(a.shape), " vs ",
          shape_str(b.shape));
  TensorT<S> out;
  out.shape = a.shape;
  out.values.resize(a.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) out.values[i] = a.values[i] - b.values[i];
  const int na = a.on_tape(tape.id()) ? a.node : kNoNode;
  const int nb = b.on_tape(tape.id()) ? b.node : kNoNode;
  if (na < 0 && nb < 0) return detail::finish_op(tape, std::move(out), false, 0);
  int node = tape.record(out.numel(), [na, nb](TapeT<S>& t, const std::vector<S>& g) {
    if (na >= 0) t.accumulate(na, g.data(), static_cast<std::int64_t>(g.size()));
    if (nb >= 0) {
      std::vector<S> neg(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
      t.accumulate(nb, neg.data(), static_cast<std::int64_t>(neg.size()));
    }
  });
  return detail::finish_op(tape, std::move(out), true, node);
}

template <typename S>
TensorT<S> mul(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
  require(a.shape == b.shape, "mul: shape mismatch ", shape_str(a.shape), " vs ",
          shape_str(b.shape));
  TensorT<S> out;
  out.shape = a.shape;
  out.values.resize(a.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) out.values[i] = a.values[i] * b.values[i];
  const int na = a.on_tape(tape.id()) ? a.node : kNoNode;
  const int nb = b.on_tape(tape.id()) ? b.node : kNoNode;
  if (na < 0 && nb < 0) return detail::finish_op(tape, std::move(out), false, 0);
  auto saved_a = nb >= 0 ? tape.save(a.values) : nullptr;
  auto saved_b = na >= 0 ? tape.save(b.values) : nullptr;
  int node =
      tape.record(out.numel(), [na, nb, saved_a, saved_b](TapeT<S>& t, const std::vector<S>& g) {
        if (na >= 0) {
          std::vector<S> bv = saved_b->restore();
          for (std::size_t i = 0; i < g.size(); ++i) bv[i] *= g[i];
          t.accumulate(na, bv.data(), static_cast<std::int64_t>(bv.size()));
        }
        if (nb >= 0) {
          std::vector<S> av = saved_a->restore();
          for (std::size_t i = 0; i < g.size(); ++i) av[i] *= g[i];
          t.accumulate(nb, av.data(), static_cast<std::int64_t>(av.size()));
        }
      });
  return detail::finish_op(tape, std::move(out), true, node);
}

template <typename S>
TensorT<S> scalar_mul(TapeT<S>& tape, const TensorT<S>& a, S c) {
  TensorT<S> out;
  out.shape = a.shape;
  out.values.resize(a.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) out.values[i] = a.values[i] * c;
  if (!a.on_tape(tape.id())) return detail::finish_op(tape, std::move(out), false, 0);
  const int na = a.node;
  int node = tape.record(out.numel(), [na, c](TapeT<S>& t, const std::vector<S>& g) {
    std::vector<S> gi(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] = g[i] * c;
    t.accumulate(na, gi.data(), static_cast<std::int64_t>(gi.size()));
  });
  return detail::finish_op(tape, std::move(out), true, node);
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> matmul(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
  require(a.shape.size() == 2 && b.shape.size() == 2, "matmul expects 2-D tensors, got ",
          shape_str(a.shape), " and ", shape_str(b.shape));
  require(a.shape[1] == b.shape[0], "matmul: inner dimensions disagree: ", shape_str(a.shape),
          " vs ", shape_str(b.shape));
  const std::int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  TensorT<S> out = zeros<S>({m, n});
  gemm_nn<S>(m, n, k, a.values.data(), b.values.data(), out.values.data());
  const int na = a.on_tape(tape.id()) ? a.node : kNoNode;
  const int nb = b.on_tape(tape.id()) ? b.node : kNoNode;
  if (na < 0 && nb < 0) return detail::finish_op(tape, std::move(out), false, 0);
  auto saved_a = nb >= 0 ? tape.save(a.values) : nullptr;
  auto saved_b = na >= 0 ? tape.save(b.values) : nullptr;
  int node = tape.record(
      out.numel(), [na, nb, saved_a, saved_b, m, k, n](TapeT<S>& t, const std::vector<S>& g) {
        if (na >= 0) {
          std::vector<S> bv = saved_b->restore();
          std::vector<S> ga(static_cast<std::size_t>(m * k));
          gemm_nt<S>(m, k, n, g.data(), bv.data(), ga.data());
          t.accumulate(na, ga.data(), m * k);
        }
        if (nb >= 0) {
          std::vector<S> av = saved_a->restore();
          std::vector<S> gb(static_cast<std::size_t>(k * n));
          gemm_tn<S>(k, n, m, av.data(), g.data(), gb.data());
          t.accumulate(nb, gb.data(), k * n);
        }
      });
  return detail::finish_op(tape, std::move(out), true, node);
}

template <typename S>
TensorT<S> affine(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& w, const TensorT<S>& b) {
  require(a.shape.size() == 2 && w.shape.size() == 2 && b.shape.size() == 1,
          "affine expects a[BxK], w[KxN], b[N]");
  require(a.shape[1] == w.shape[0], "affine: input dim ", a.shape[1],
          " does not match weight rows ", w.shape[0]);
  require(w.shape[1] == b.shape[0], "affine: bias dim ", b.shape[0],
          " does not match weight cols ", w.shape[1]);
  const std::int64_t bs = a.shape[0], k = a.shape[1], n = w.shape[1];
  TensorT<S> out = zeros<S>({bs, n});
  gemm_nn<S>(bs, n, k, a.values.data(), w.values.data(), out.values.data());
  for (std::int64_t i = 0; i < bs; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      out.values[static_cast<std::size_t>(i * n + j)] += b.values[static_cast<std::size_t>(j)];
  const int na = a.on_tape(tape.id()) ? a.node : kNoNode;
  const int nw = w.on_tape(tape.id()) ? w.node : kNoNode;
  const int nb = b.on_tape(tape.id()) ? b.node : kNoNode;
  if (na < 0 && nw < 0 && nb < 0) return detail::finish_op(tape, std::move(out), false, 0);
  auto saved_a = nw >= 0 ? tape.save(a.values) : nullptr;
  auto saved_w = na >= 0 ? tape.save(w.values) : nullptr;
  int node = tape.record(
      out.numel(),
      [na, nw, nb, saved_a, saved_w, bs, k, n](TapeT<S>& t, const std::vector<S>& g) {
        if (na >= 0) {
          std::vector<S> wv = saved_w->restore();
          std::vector<S> ga(static_cast<std::size_t>(bs * k));
          gemm_nt<S>(bs, k, n, g.data(), wv.data(), ga.data());
          t.accumulate(na, ga.data(), bs * k);
        }
        if (nw >= 0) {
          std::vector<S> av = saved_a->restore();
          std::vector<S> gw(static_cast<std::size_t>(k * n));
          gemm_tn<S>(k, n, bs, av.data(), g.data(), gw.data());
          t.accumulate(nw, gw.data(), k * n);
        }
        if (nb >= 0) {
          std::vector<S> gb(static_cast<std::size_t>(n), S(0));
          for (std::int64_t i = 0; i < bs; ++i)
            for (std::int64_t j = 0; j < n; ++j)
              gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i * n + j)];
          t.accumulate(nb, gb.data(), n);
        }
      });
  return detail::finish_op(tape, std::move(out), true, node);
}

// ---------------------------------------------------------------------------
// Convolution (im2col + matmul, cross-correlation convention)
// ---------------------------------------------------------------------------

namespace detail {

// First ox with ox*stride + kj - pad >= 0, and one past the last ox with
// ox*stride + kj - pad < w, clamped to [0, wo].
inline std::pair<std::int64_t, std::int64_t> valid_out_range(std::int64_t extent,
                                                             std::int64_t out_len,
                                                             std::int64_t stride,
                                                             std::int64_t offset) {
  std::int64_t lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  std::int64_t hi = (extent - 1 - offset) / stride + 1;
  if (offset > extent - 1) hi = 0;
  lo = std::min(lo, out_len);
  hi = std::max(lo, std::min(hi, out_len));
  return {lo, hi};
}

}  // namespace detail

// Lowers one image into `col` with an arbitrary row stride, so per-image
// blocks can sit side by side in a batch-wide matrix.
template <typename S>
void im2col_strided(const S* img, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t kh,
                    std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t ho,
                    std::int64_t wo, S* col, std::int64_t row_stride) {
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t ki = 0; ki < kh; ++ki) {
      for (std::int64_t kj = 0; kj < kw; ++kj) {
        S* row = col + ((ch * kh + ki) * kw + kj) * row_stride;
        const auto [x_lo, x_hi] = detail::valid_out_range(w, wo, stride, kj - pad);
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          const std::int64_t iy = oy * stride + ki - pad;
          S* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            for (std::int64_t ox = 0; ox < wo; ++ox) dst[ox] = S(0);
            continue;
          }
          const S* src = img + (ch * h + iy) * w + kj - pad;
          for (std::int64_t ox = 0; ox < x_lo; ++ox) dst[ox] = S(0);
          if (stride == 1) {
            for (std::int64_t ox = x_lo; ox < x_hi; ++ox) dst[ox] = src[ox];
          } else {
            for (std::int64_t ox = x_lo; ox < x_hi; ++ox) dst[ox] = src[ox * stride];
          }
          for (std::int64_t ox = x_hi; ox < wo; ++ox) dst[ox] = S(0);
        }
      }
    }
  }
}

template <typename S>
void im2col(const S* img, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t kh,
            std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t ho,
            std::int64_t wo, S* col) {
  im2col_strided<S>(img, c, h, w, kh, kw, stride, pad, ho, wo, col, ho * wo);
}

template <typename S>
void col2im_add(const S* col, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t kh,
                std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t ho,
                std::int64_t wo, S* img) {
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t ki = 0; ki < kh; ++ki) {
      for (std::int64_t kj = 0; kj < kw; ++kj) {
        const S* row = col + ((ch * kh + ki) * kw + kj) * (ho * wo);
        const auto [x_lo, x_hi] = detail::valid_out_range(w, wo, stride, kj - pad);
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          const std::int64_t iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= h) continue;
          S* dst = img + (ch * h + iy) * w + kj - pad;
          const S* src = row + oy * wo;
          if (stride == 1) {
            for (std::int64_t ox = x_lo; ox < x_hi; ++ox) dst[ox] += src[ox];
          } else {
            for (std::int64_t ox = x_lo; ox < x_hi; ++ox) dst[ox * stride] += src[ox];
          }
        }
      }
    }
  }
}

template <typename S>
TensorT<S> conv2d(TapeT<S>& tape, const TensorT<S>& input, const TensorT<S>& kernel,
                  std::int64_t stride, std::int64_t pad) {
  require(input.shape.size() == 4, "conv2d: input must be BxCxHxW, got ", shape_str(input.shape));
  require(kernel.shape.size() == 4, "conv2d: kernel must be FxCxkHxkW, got ",
          shape_str(kernel.shape));
  require(stride >= 1 && pad >= 0, "conv2d: stride must be >= 1 and padding >= 0");
  const std::int64_t b = input.shape[0], c = input.shape[1], h = input.shape[2],
                     w = input.shape[3];
  const std::int64_t f = kernel.shape[0], kc = kernel.shape[1], kh = kernel.shape[2],
                     kw = kernel.shape[3];
  require(kc == c, "conv2d: kernel channels ", kc, " differ from input channels ", c);
  require(kh <= h + 2 * pad && kw <= w + 2 * pad, "conv2d: kernel ", kh, "x", kw,
          " larger than padded input ", h + 2 * pad, "x", w + 2 * pad);
  const std::int64_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::int64_t wo = (w + 2 * pad - kw) / stride + 1;
  const std::int64_t ckk = c * kh * kw;
  const std::int64_t hw = ho * wo;

  // The whole batch shares one lowered matrix: col rows are kernel taps, col
  // columns are (image, output position). One wide matmul covers every image.
  std::vector<S> col(static_cast<std::size_t>(ckk * b * hw));
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) if (b > 1)
#endif
  for (std::int64_t i = 0; i < b; ++i)
    im2col_strided<S>(input.values.data() + i * c * h * w, c, h, w, kh, kw, stride, pad, ho, wo,
                      col.data() + i * hw, b * hw);

  TensorT<S> out = zeros<S>({b, f, ho, wo});
  std::vector<S> big(static_cast<std::size_t>(f * b * hw));
  gemm_nn<S>(f, b * hw, ckk, kernel.values.data(), col.data(), big.data());
  for (std::int64_t j = 0; j < f; ++j)
    for (std::int64_t i = 0; i < b; ++i)
      std::copy_n(big.data() + j * b * hw + i * hw, hw, out.values.data() + (i * f + j) * hw);
  col.clear();
  col.shrink_to_fit();

  const int ni = input.on_tape(tape.id()) ? input.node : kNoNode;
  const int nk = kernel.on_tape(tape.id()) ? kernel.node : kNoNode;
  if (ni < 0 && nk < 0) return detail::finish_op(tape, std::move(out), false, 0);
  auto saved_in = nk >= 0 ? tape.save(input.values) : nullptr;
  auto saved_k = ni >= 0 ? tape.save(kernel.values) : nullptr;
  int node = tape.record(
      out.numel(), [=](TapeT<S>& t, const std::vector<S>& g) {
        // Gradient in the [F x B*HW] layout used by the lowered matmul.
        std::vector<S> gbig(static_cast<std::size_t>(f * b * hw));
        for (std::int64_t i = 0; i < b; ++i)
          for (std::int64_t j = 0; j < f; ++j)
            std::copy_n(g.data() + (i * f + j) * hw, hw, gbig.data() + j * b * hw + i * hw);
        if (nk >= 0) {
          std::vector<S> in = saved_in->restore();
          std::vector<S> colbuf(static_cast<std::size_t>(ckk * b * hw));
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) if (b > 1)
#endif
          for (std::int64_t i = 0; i < b; ++i)
            im2col_strided<S>(in.data() + i * c * h * w, c, h, w, kh, kw, stride, pad, ho, wo,
                              colbuf.data() + i * hw, b * hw);
          std::vector<S> gk(static_cast<std::size_t>(f * ckk));
          gemm_nt<S>(f, ckk, b * hw, gbig.data(), colbuf.data(), gk.data());
          t.accumulate(nk, gk.data(), f * ckk);
        }
        if (ni >= 0) {
          std::vector<S> kv = saved_k->restore();
          std::vector<S> gcol(static_cast<std::size_t>(ckk * b * hw));
          gemm_tn<S>(ckk, b * hw, f, kv.data(), gbig.data(), gcol.data());
          std::vector<S> gi(static_cast<std::size_t>(b * c * h * w), S(0));
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) if (b > 1)
#endif
          for (std::int64_t i = 0; i < b; ++i) {
            std::vector<S> slice(static_cast<std::size_t>(ckk * hw));
            for (std::int64_t r = 0; r < ckk; ++r)
              std::copy_n(gcol.data() + r * b * hw + i * hw, hw, slice.data() + r * hw);
            col2im_add<S>(slice.data(), c, h, w, kh, kw, stride, pad, ho, wo,
                          gi.data() + i * c * h * w);
          }
          t.accumulate(ni, gi.data(), b * c * h * w);
        }
      });
  return detail::finish_op(tape, std::move(out), true, node);
}

// ---------------------------------------------------------------------------
// Nonlinearities, pooling, normalization
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> relu(TapeT<S>& tape, const TensorT<S>& a) {
  TensorT<S> out;
  out.shape = a.shape;
  out.values.resize(a.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i)
    out.values[i] = a.values[i] > S(0) ? a.values[i] : S(0);
  if (!a.on_tape(tape.id())) return detail::finish_op(tape, std::move(out), false, 0);
  const int na = a.node;
  auto saved = tape.save(a.values);
  int node = tape.record(out.numel(), [na, saved](TapeT<S>& t, const std::vector<S>& g) {
    std::vector<S> in = saved->restore();
    for (std::size_t i = 0; i < g.size(); ++i) in[i] = in[i] > S(0) ? g[i] : S(0);
    t.accumulate(na, in.data(), static_cast<std::int64_t>(in.size()));
  });
  return detail::finish_op(tape, std::move(out), true, node);
}

template <typename S>
TensorT<S> global_average_pool(TapeT<S>& tape, const TensorT<S>& a) {
  require(a.shape.size() == 4, "global_average_pool expects BxCxHxW, got ", shape_str(a.shape));
  const std::int64_t b = a.shape[0], c = a.shape[1], h = a.shape[2], w = a.shape[3];
  const std::int64_t hw = h * w;
  TensorT<S> out = zeros<S>({b, c});
  for (std::int64_t i = 0; i < b; ++i) {
    for (std::int64_t j = 0; j < c; ++j) {
      S acc = S(0);
      const S* p = a.values.data() + (i * c + j) * hw;
      for (std::int64_t t = 0; t < hw; ++t) acc += p[t];
      out.values[static_cast<std::size_t>(i * c + j)] = acc / static_cast<S>(hw);
    }
  }
  if (!a.on_tape(tape.id())) return detail::finish_op(tape, std::move(out), false, 0);
  const int na = a.node;
  int node = tape.record(out.numel(), [na, b, c, hw](TapeT<S>& t, const std::vector<S>& g) {
    std::vector<S> gi(static_cast<std::size_t>(b * c * hw));
    for (std::int64_t i = 0; i < b * c; ++i) {
      const S v = g[static_cast<std::size_t>(i)] / static_cast<S>(hw);
      for (std::int64_t p = 0; p < hw; ++p) gi[static_cast<std::size_t>(i * hw + p)] = v;
    }
    t.accumulate(na, gi.data(), b * c * hw);
  });
  return detail::finish_op(tape, std::move(out), true, node);
}

// Batch normalization over 2-D [BxK] (per feature) or 4-D [BxCxHxW] (per
// channel) activations. Running statistics are plain buffers owned by the
// model; they are updated in train mode and consumed in eval mode.
template <typename S>
TensorT<S> batch_norm(TapeT<S>& tape, const TensorT<S>& x, const TensorT<S>& gamma,
                      const TensorT<S>& beta, TensorT<S>& running_mean, TensorT<S>& running_var,
                      Mode mode, S momentum = S(0.9), S eps = S(1e-5)) {
  require(x.shape.size() == 2 || x.shape.size() == 4, "batch_norm expects 2-D or 4-D input, got ",
          shape_str(x.shape));
  const std::int64_t batch = x.shape[0];
  const std::int64_t channels = x.shape[1];
  const std::int64_t spatial = x.shape.size() == 4 ? x.shape[2] * x.shape[3] : 1;
  require(gamma.shape == Shape{channels} && beta.shape == Shape{channels},
          "batch_norm: gamma/beta must have shape [", channels, "]");
  require(running_mean.shape == Shape{channels} && running_var.shape == Shape{channels},
          "batch_norm: running stats must have shape [", channels, "]");
  if (mode == Mode::train)
    require(batch >= 2, "batch_norm: train mode needs batch >= 2, got ", batch);

  const std::int64_t count = batch * spatial;
  std::vector<S> mean(static_cast<std::size_t>(channels), S(0));
  std::vector<S> inv_std(static_cast<std::size_t>(channels), S(0));
  auto at = [&](std::int64_t b, std::int64_t c, std::int64_t s) -> std::int64_t {
    return (b * channels + c) * spatial + s;
  };

  if (mode == Mode::train) {
    std::vector<S> var(static_cast<std::size_t>(channels), S(0));
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) if (count * channels > 16384)
#endif
    for (std::int64_t c = 0; c < channels; ++c) {
      S acc = S(0);
      for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t s = 0; s < spatial; ++s) acc += x.values[static_cast<std::size_t>(at(b, c, s))];
      mean[static_cast<std::size_t>(c)] = acc / static_cast<S>(count);
      S vacc = S(0);
      for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t s = 0; s < spatial; ++s) {
          const S d = x.values[static_cast<std::size_t>(at(b, c, s))] - mean[static_cast<std::size_t>(c)];
          vacc += d * d;
        }
      var[static_cast<std::size_t>(c)] = vacc / static_cast<S>(count);
      inv_std[static_cast<std::size_t>(c)] = S(1) / std::sqrt(var[static_cast<std::size_t>(c)] + eps);
      running_mean.values[static_cast<std::size_t>(c)] =
          momentum * running_mean.values[static_cast<std::size_t>(c)] +
          (S(1) - momentum) * mean[static_cast<std::size_t>(c)];
      running_var.values[static_cast<std::size_t>(c)] =
          momentum * running_var.values[static_cast<std::size_t>(c)] +
          (S(1) - momentum) * var[static_cast<std::size_t>(c)];
    }
  } else {
    for (std::int64_t c = 0; c < channels; ++c) {
      mean[static_cast<std::size_t>(c)] = running_mean.values[static_cast<std::size_t>(c)];
      inv_std[static_cast<std::size_t>(c)] =
          S(1) / std::sqrt(running_var.values[static_cast<std::size_t>(c)] + eps);
    }
  }

  TensorT<S> out;
  out.shape = x.shape;
  out.values.resize(x.values.size());
  std::vector<S> xhat(x.values.size());
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) if (count * channels > 16384)
#endif
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t c = 0; c < channels; ++c)
      for (std::int64_t s = 0; s < spatial; ++s) {
        const std::size_t i = static_cast<std::size_t>(at(b, c, s));
        xhat[i] = (x.values[i] - mean[static_cast<std::size_t>(c)]) * inv_std[static_cast<std::size_t>(c)];
        out.values[i] = gamma.values[static_cast<std::size_t>(c)] * xhat[i] +
                        beta.values[static_cast<std::size_t>(c)];
      }

  const int nx = x.on_tape(tape.id()) ? x.node : kNoNode;
  const int ng = gamma.on_tape(tape.id()) ? gamma.node : kNoNode;
  const int nb = beta.on_tape(tape.id()) ? beta.node : kNoNode;
  if (nx < 0 && ng < 0 && nb < 0) return detail::finish_op(tape, std::move(out), false, 0);

  auto saved_xhat = tape.save(xhat);
  auto saved_inv = tape.save(inv_std);
  auto saved_gamma = nx >= 0 ? tape.save(gamma.values) : nullptr;
  const bool train = mode == Mode::train;
  int node = tape.record(
      out.numel(),
      [saved_xhat, saved_inv, saved_gamma, nx, ng, nb, batch, channels, spatial, count,
       train](TapeT<S>& t, const std::vector<S>& g) {
        auto at = [channels, spatial](std::int64_t b, std::int64_t c, std::int64_t s) {
          return static_cast<std::size_t>((b * channels + c) * spatial + s);
        };
        std::vector<S> xh = saved_xhat->restore();
        std::vector<S> inv = saved_inv->restore();
        if (ng >= 0 || nb >= 0) {
          std::vector<S> ggamma(static_cast<std::size_t>(channels), S(0));
          std::vector<S> gbeta(static_cast<std::size_t>(channels), S(0));
          for (std::int64_t b = 0; b < batch; ++b)
            for (std::int64_t c = 0; c < channels; ++c)
              for (std::int64_t s = 0; s < spatial; ++s) {
                const std::size_t i = at(b, c, s);
                ggamma[static_cast<std::size_t>(c)] += g[i] * xh[i];
                gbeta[static_cast<std::size_t>(c)] += g[i];
              }
          if (ng >= 0) t.accumulate(ng, ggamma.data(), channels);
          if (nb >= 0) t.accumulate(nb, gbeta.data(), channels);
        }
        if (nx >= 0) {
          std::vector<S> gm = saved_gamma->restore();
          std::vector<S> gx(g.size());
          if (train) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) if (count* channels > 16384)
#endif
            for (std::int64_t c = 0; c < channels; ++c) {
              S sum_gxhat = S(0), sum_gxhat_xhat = S(0);
              for (std::int64_t b = 0; b < batch; ++b)
                for (std::int64_t s = 0; s < spatial; ++s) {
                  const std::size_t i = at(b, c, s);
                  const S gxh = g[i] * gm[static_cast<std::size_t>(c)];
                  sum_gxhat += gxh;
                  sum_gxhat_xhat += gxh * xh[i];
                }
              const S m1 = sum_gxhat / static_cast<S>(count);
              const S m2 = sum_gxhat_xhat / static_cast<S>(count);
              for (std::int64_t b = 0; b < batch; ++b)
                for (std::int64_t s = 0; s < spatial; ++s) {
                  const std::size_t i = at(b, c, s);
                  const S gxh = g[i] * gm[static_cast<std::size_t>(c)];
                  gx[i] = inv[static_cast<std::size_t>(c)] * (gxh - m1 - xh[i] * m2);
                }
            }
          } else {
            for (std::int64_t b = 0; b < batch; ++b)
              for (std::int64_t c = 0; c < channels; ++c)
                for (std::int64_t s = 0; s < spatial; ++s) {
                  const std::size_t i = at(b, c, s);
                  gx[i] = g[i] * gm[static_cast<std::size_t>(c)] * inv[static_cast<std::size_t>(c)];
                }
          }
          t.accumulate(nx, gx.data(), static_cast<std::int64_t>(gx.size()));
        }
      });
  return detail::finish_op(tape, std::move(out), true, node);
}

// ---------------------------------------------------------------------------
// Normalization and reductions
// ---------------------------------------------------------------------------

inline constexpr double kL2NormalizeEps = 1e-12;

template <typename S>
TensorT<S> l2_normalize(TapeT<S>& tape, const TensorT<S>& a) {
  require(a.shape.size() == 2, "l2_normalize expects BxD, got ", shape_str(a.shape));
  const std::int64_t b = a.shape[0], d = a.shape[1];
  TensorT<S> out;
  out.shape = a.shape;
  out.values.resize(a.values.size());
  std::vector<S> norms(static_cast<std::size_t>(b));
  for (std::int64_t i = 0; i < b; ++i) {
    const S* row = a.values.data() + i * d;
    S s = S(0);
    bool all_zero = true;
    for (std::int64_t j = 0; j < d; ++j) {
      s += row[j] * row[j];
      if (row[j] != S(0)) all_zero = false;
    }
    require(!all_zero, "l2_normalize: row ", i, " is exactly zero");
    const S n = std::sqrt(s + static_cast<S>(kL2NormalizeEps));
    norms[static_cast<std::size_t>(i)] = n;
    for (std::int64_t j = 0; j < d; ++j)
      out.values[static_cast<std::size_t>(i * d + j)] = row[j] / n;
  }
  if (!a.on_tape(tape.id())) return detail::finish_op(tape, std::move(out), false, 0);
  const int na = a.node;
  auto saved_x = tape.save(a.values);
  int node = tape.record(
      out.numel(), [na, saved_x, b, d](TapeT<S>& t, const std::vector<S>& g) {
        std::vector<S> x = saved_x->restore();
        std::vector<S> gx(x.size());
        for (std::int64_t i = 0; i < b; ++i) {
          const S* row = x.data() + i * d;
          const S* grow = g.data() + i * d;
          S s = S(0), dot = S(0);
          for (std::int64_t j = 0; j < d; ++j) {
            s += row[j] * row[j];
            dot += row[j] * grow[j];
          }
          const S n = std::sqrt(s + static_cast<S>(kL2NormalizeEps));
          const S n3 = n * n * n;
          for (std::int64_t j = 0; j < d; ++j)
            gx[static_cast<std::size_t>(i * d + j)] = grow[j] / n - row[j] * dot / n3;
        }
        t.accumulate(na, gx.data(), static_cast<std::int64_t>(gx.size()));
      });
  return detail::finish_op(tape, std::move(out), true, node);
}

// Forward identity whose backward contributes exactly nothing: the result is
// detached from every tape.
template <typename S>
TensorT<S> stop_gradient(const TensorT<S>& a) {
  TensorT<S> out;
  out.shape = a.shape;
  out.values = a.values;
  out.node = kNoNode;
  out.tape_id = 0;
  out.grad_enabled = false;
  return out;
}

template <typename S>
TensorT<S> sum(TapeT<S>& tape, const TensorT<S>& a) {
  TensorT<S> out = zeros<S>({1});
  S acc = S(0);
  for (S v : a.values) acc += v;
  out.values[0] = acc;
  if (!a.on_tape(tape.id())) return detail::finish_op(tape, std::move(out), false, 0);
  const int na = a.node;
  const std::int64_t n = a.numel();
  int node = tape.record(1, [na, n](TapeT<S>& t, const std::vector<S>& g) {
    std::vector<S> gi(static_cast<std::size_t>(n), g[0]);
    t.accumulate(na, gi.data(), n);
  });
  return detail::finish_op(tape, std::move(out), true, node);
}

template <typename S>
TensorT<S> mean_all(TapeT<S>& tape, const TensorT<S>& a) {
  return scalar_mul(tape, sum(tape, a), S(1) / static_cast<S>(a.numel()));
}

// Mean cross-entropy of softmax(logits) against integer labels.
template <typename S>
TensorT<S> softmax_cross_entropy(TapeT<S>& tape, const TensorT<S>& logits,
                                 const std::vector<int>& labels) {
  require(logits.shape.size() == 2, "softmax_cross_entropy expects BxK logits, got ",
          shape_str(logits.shape));
  const std::int64_t b = logits.shape[0], k = logits.shape[1];
  require(static_cast<std::int64_t>(labels.size()) == b, "softmax_cross_entropy: ", labels.size(),
          " labels for batch ", b);
  std::vector<S> probs(logits.values.size());
  S loss = S(0);
  for (std::int64_t i = 0; i < b; ++i) {
    require(labels[static_cast<std::size_t>(i)] >= 0 && labels[static_cast<std::size_t>(i)] < k,
            "softmax_cross_entropy: label out of range at row ", i);
    const S* row = logits.values.data() + i * k;
    S m = row[0];
    for (std::int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    S z = S(0);
    for (std::int64_t j = 0; j < k; ++j) z += std::exp(row[j] - m);
    const S logz = std::log(z);
    for (std::int64_t j = 0; j < k; ++j)
      probs[static_cast<std::size_t>(i * k + j)] = std::exp(row[j] - m - logz);
    loss -= (row[labels[static_cast<std::size_t>(i)]] - m - logz);
  }
  TensorT<S> out = zeros<S>({1});
  out.values[0] = loss / static_cast<S>(b);
  if (!logits.on_tape(tape.id())) return detail::finish_op(tape, std::move(out), false, 0);
  const int nl = logits.node;
  auto saved_probs = tape.save(probs);
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  int node = tape.record(1, [nl, saved_probs, labels_copy, b, k](TapeT<S>& t,
                                                                 const std::vector<S>& g) {
    std::vector<S> p = saved_probs->restore();
    const S scale = g[0] / static_cast<S>(b);
    for (std::int64_t i = 0; i < b; ++i) {
      p[static_cast<std::size_t>(i * k + (*labels_copy)[static_cast<std::size_t>(i)])] -= S(1);
    }
    for (auto& v : p) v *= scale;
    t.accumulate(nl, p.data(), b * k);
  });
  return detail::finish_op(tape, std::move(out), true, node);
}

}  // namespace trisim
