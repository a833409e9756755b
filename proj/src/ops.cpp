#include "mnetsat/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mnetsat::ops {
namespace {

// Shapes are handled internally as rank-4 with leading 1s so NHWC axes keep
// their trailing position.
struct D4 {
  int64_t d[4] = {1, 1, 1, 1};
};

D4 pad4(const Shape& s) {
  D4 r;
  const int off = 4 - static_cast<int>(s.size());
  for (size_t i = 0; i < s.size(); ++i) r.d[off + i] = s[i];
  return r;
}

int axis4(int axis, int rank) { return axis + (4 - rank); }

struct Strides4 {
  int64_t s[4] = {0, 0, 0, 0};
};

// Row-major strides; axes of extent 1 get stride 0 so the same index
// arithmetic covers broadcast reads.
Strides4 bstrides(const D4& d) {
  Strides4 r;
  int64_t acc = 1;
  for (int i = 3; i >= 0; --i) {
    r.s[i] = (d.d[i] == 1) ? 0 : acc;
    acc *= d.d[i];
  }
  return r;
}

Strides4 nstrides(const D4& d) {
  Strides4 r;
  int64_t acc = 1;
  for (int i = 3; i >= 0; --i) {
    r.s[i] = acc;
    acc *= d.d[i];
  }
  return r;
}

template <typename T, typename F>
Tensor<T> broadcast_apply(const Tensor<T>& a, const Tensor<T>& b, F f, const char* name) {
  if (!broadcastable_to(b.shape(), a.shape()))
    throw std::invalid_argument(std::string(name) + ": shape " + shape_str(b.shape()) +
                                " is not broadcastable to " + shape_str(a.shape()));
  Tensor<T> out(a.shape());
  const D4 od = pad4(a.shape());
  const Strides4 bs = bstrides(pad4(b.shape()));
  const T* pa = a.cdata();
  const T* pb = b.cdata();
  T* po = out.data();
  int64_t k = 0;
  for (int64_t i0 = 0; i0 < od.d[0]; ++i0)
    for (int64_t i1 = 0; i1 < od.d[1]; ++i1)
      for (int64_t i2 = 0; i2 < od.d[2]; ++i2) {
        const int64_t base = i0 * bs.s[0] + i1 * bs.s[1] + i2 * bs.s[2];
        for (int64_t i3 = 0; i3 < od.d[3]; ++i3, ++k)
          po[k] = f(pa[k], pb[base + i3 * bs.s[3]]);
      }
  return out;
}

template <typename T, typename F>
Tensor<T> unary_apply(const Tensor<T>& x, F f) {
  Tensor<T> out(x.shape());
  const T* px = x.cdata();
  T* po = out.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = f(px[i]);
  return out;
}

template <typename T>
Var<T> binary_op(const char* name, Var<T> a, Var<T> b, Tensor<T> out,
                 typename Tape<T>::BackwardFn backward) {
  if (a.tape != b.tape) throw std::invalid_argument(std::string(name) + ": operands on different tapes");
  return a.tape->record(name, std::move(out), {a.id, b.id}, std::move(backward));
}

void check_axes(const std::vector<int>& axes, int rank) {
  for (int ax : axes)
    if (ax < 0 || ax >= rank)
      throw std::invalid_argument("axis " + std::to_string(ax) + " out of range for rank " +
                                  std::to_string(rank));
}

}  // namespace

namespace kernels {

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: expected rank-2 tensors, got " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  const int64_t m = trans_a ? a.dim(1) : a.dim(0);
  const int64_t k = trans_a ? a.dim(0) : a.dim(1);
  const int64_t k2 = trans_b ? b.dim(1) : b.dim(0);
  const int64_t n = trans_b ? b.dim(0) : b.dim(1);
  if (k != k2)
    throw std::invalid_argument("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                (trans_a ? "^T" : "") + " x " + shape_str(b.shape()) +
                                (trans_b ? "^T" : ""));
  Tensor<T> out({m, n});
  const T* pa = a.cdata();
  const T* pb = b.cdata();
  T* po = out.data();
  const bool par = m * n * k > 32768;
  if (!trans_a && !trans_b) {
#pragma omp parallel for if (par) schedule(static)
    for (int64_t i = 0; i < m; ++i) {
      T* orow = po + i * n;
      for (int64_t p = 0; p < k; ++p) {
        const T aip = pa[i * k + p];
        const T* brow = pb + p * n;
        for (int64_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
      }
    }
  } else if (!trans_a && trans_b) {
#pragma omp parallel for if (par) schedule(static)
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) {
        T acc = 0;
        const T* arow = pa + i * k;
        const T* brow = pb + j * k;
        for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        po[i * n + j] = acc;
      }
  } else if (trans_a && !trans_b) {
#pragma omp parallel for if (par) schedule(static)
    for (int64_t i = 0; i < m; ++i) {
      T* orow = po + i * n;
      for (int64_t p = 0; p < k; ++p) {
        const T api = pa[p * m + i];
        const T* brow = pb + p * n;
        for (int64_t j = 0; j < n; ++j) orow[j] += api * brow[j];
      }
    }
  } else {
#pragma omp parallel for if (par) schedule(static)
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) {
        T acc = 0;
        for (int64_t p = 0; p < k; ++p) acc += pa[p * m + i] * pb[j * k + p];
        po[i * n + j] = acc;
      }
  }
  return out;
}

template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T>& g, const Shape& target) {
  if (g.shape() == target) return g;
  if (!broadcastable_to(target, g.shape()))
    throw std::logic_error("reduce_to_shape: " + shape_str(g.shape()) + " -> " + shape_str(target));
  Tensor<T> out(target);
  const D4 gd = pad4(g.shape());
  const Strides4 ts = bstrides(pad4(target));
  const T* pg = g.cdata();
  T* po = out.data();
  int64_t k = 0;
  for (int64_t i0 = 0; i0 < gd.d[0]; ++i0)
    for (int64_t i1 = 0; i1 < gd.d[1]; ++i1)
      for (int64_t i2 = 0; i2 < gd.d[2]; ++i2) {
        const int64_t base = i0 * ts.s[0] + i1 * ts.s[1] + i2 * ts.s[2];
        for (int64_t i3 = 0; i3 < gd.d[3]; ++i3, ++k) po[base + i3 * ts.s[3]] += pg[k];
      }
  return out;
}

}  // namespace kernels

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tensor<T> out = broadcast_apply(a.val(), b.val(), [](T x, T y) { return x + y; }, "add");
  const Shape bshape = b.val().shape();
  return binary_op("add", a, b, std::move(out), [a, b, bshape](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, kernels::reduce_to_shape(g, bshape));
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tensor<T> out = broadcast_apply(a.val(), b.val(), [](T x, T y) { return x - y; }, "sub");
  const Shape bshape = b.val().shape();
  return binary_op("sub", a, b, std::move(out), [a, b, bshape](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a.id, g);
    Tensor<T> gb = kernels::reduce_to_shape(unary_apply(g, [](T v) { return -v; }), bshape);
    t.accumulate(b.id, std::move(gb));
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  const Tensor<T> av = a.val();
  const Tensor<T> bv = b.val();
  Tensor<T> out = broadcast_apply(av, bv, [](T x, T y) { return x * y; }, "mul");
  return binary_op("mul", a, b, std::move(out), [a, b, av, bv](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a.id, broadcast_apply(g, bv, [](T x, T y) { return x * y; }, "mul_bwd"));
    Tensor<T> gb_full = broadcast_apply(g, av, [](T x, T y) { return x * y; }, "mul_bwd");
    t.accumulate(b.id, kernels::reduce_to_shape(gb_full, bv.shape()));
  });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  const Tensor<T> bv = b.val();
  Tensor<T> out = broadcast_apply(a.val(), bv, [](T x, T y) { return x / y; }, "div");
  const Tensor<T> ov = out;
  return binary_op("div", a, b, std::move(out), [a, b, bv, ov](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> ga = broadcast_apply(g, bv, [](T x, T y) { return x / y; }, "div_bwd");
    // d/db (a/b) = -a/b^2 = -out/b, so gb = -ga * out elementwise.
    Tensor<T> gb_full = broadcast_apply(ga, ov, [](T x, T y) { return -x * y; }, "div_bwd");
    t.accumulate(a.id, std::move(ga));
    t.accumulate(b.id, kernels::reduce_to_shape(gb_full, bv.shape()));
  });
}

template <typename T>
Var<T> add_scalar(Var<T> x, T c) {
  Tensor<T> out = unary_apply(x.val(), [c](T v) { return v + c; });
  return x.tape->record("add_scalar", std::move(out), {x.id},
                        [x](Tape<T>& t, const Tensor<T>& g) { t.accumulate(x.id, g); });
}

template <typename T>
Var<T> mul_scalar(Var<T> x, T c) {
  Tensor<T> out = unary_apply(x.val(), [c](T v) { return v * c; });
  return x.tape->record("mul_scalar", std::move(out), {x.id},
                        [x, c](Tape<T>& t, const Tensor<T>& g) {
                          t.accumulate(x.id, unary_apply(g, [c](T v) { return v * c; }));
                        });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Tensor<T> av = a.val();
  const Tensor<T> bv = b.val();
  Tensor<T> out = kernels::matmul(av, bv, false, false);
  return binary_op("matmul", a, b, std::move(out), [a, b, av, bv](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a.id, kernels::matmul(g, bv, false, true));
    t.accumulate(b.id, kernels::matmul(av, g, true, false));
  });
}

template <typename T>
Var<T> transpose2d(Var<T> x) {
  const Tensor<T>& xv = x.val();
  if (xv.rank() != 2) throw std::invalid_argument("transpose2d: expected rank 2, got " + shape_str(xv.shape()));
  const int64_t m = xv.dim(0), n = xv.dim(1);
  Tensor<T> out({n, m});
  const T* px = xv.cdata();
  T* po = out.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) po[j * m + i] = px[i * n + j];
  return x.tape->record("transpose2d", std::move(out), {x.id},
                        [x, m, n](Tape<T>& t, const Tensor<T>& g) {
                          Tensor<T> gx({m, n});
                          const T* pg = g.cdata();
                          T* pgx = gx.data();
                          for (int64_t j = 0; j < n; ++j)
                            for (int64_t i = 0; i < m; ++i) pgx[i * n + j] = pg[j * m + i];
                          t.accumulate(x.id, std::move(gx));
                        });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  const Shape orig = x.val().shape();
  Tensor<T> out = x.val().reshaped(std::move(shape));
  return x.tape->record("reshape", std::move(out), {x.id},
                        [x, orig](Tape<T>& t, const Tensor<T>& g) {
                          t.accumulate(x.id, g.reshaped(orig));
                        });
}

template <typename T>
Var<T> slice(Var<T> x, const std::vector<int64_t>& starts, const std::vector<int64_t>& sizes) {
  const Tensor<T>& xv = x.val();
  const int rank = xv.rank();
  if (static_cast<int>(starts.size()) != rank || static_cast<int>(sizes.size()) != rank)
    throw std::invalid_argument("slice: starts/sizes rank mismatch");
  for (int i = 0; i < rank; ++i)
    if (starts[i] < 0 || sizes[i] < 0 || starts[i] + sizes[i] > xv.dim(i))
      throw std::invalid_argument("slice: range out of bounds on axis " + std::to_string(i) +
                                  " for shape " + shape_str(xv.shape()));
  Shape oshape(sizes.begin(), sizes.end());
  Tensor<T> out(oshape);
  const D4 xd = pad4(xv.shape());
  const D4 od = pad4(oshape);
  D4 st;
  {
    const int off = 4 - rank;
    for (int i = 0; i < rank; ++i) st.d[off + i] = starts[i];
  }
  const Strides4 xs = nstrides(xd);
  const T* px = xv.cdata();
  T* po = out.data();
  int64_t k = 0;
  for (int64_t i0 = 0; i0 < od.d[0]; ++i0)
    for (int64_t i1 = 0; i1 < od.d[1]; ++i1)
      for (int64_t i2 = 0; i2 < od.d[2]; ++i2) {
        const int64_t base = (i0 + st.d[0]) * xs.s[0] + (i1 + st.d[1]) * xs.s[1] +
                             (i2 + st.d[2]) * xs.s[2] + st.d[3];
        std::memcpy(po + k, px + base, sizeof(T) * static_cast<size_t>(od.d[3]));
        k += od.d[3];
      }
  const Shape xshape = xv.shape();
  return x.tape->record("slice", std::move(out), {x.id},
                        [x, xshape, st, od](Tape<T>& t, const Tensor<T>& g) {
                          Tensor<T> gx(xshape);
                          const Strides4 xs2 = nstrides(pad4(xshape));
                          const T* pg = g.cdata();
                          T* pgx = gx.data();
                          int64_t kk = 0;
                          for (int64_t i0 = 0; i0 < od.d[0]; ++i0)
                            for (int64_t i1 = 0; i1 < od.d[1]; ++i1)
                              for (int64_t i2 = 0; i2 < od.d[2]; ++i2) {
                                const int64_t base = (i0 + st.d[0]) * xs2.s[0] +
                                                     (i1 + st.d[1]) * xs2.s[1] +
                                                     (i2 + st.d[2]) * xs2.s[2] + st.d[3];
                                std::memcpy(pgx + base, pg + kk, sizeof(T) * static_cast<size_t>(od.d[3]));
                                kk += od.d[3];
                              }
                          t.accumulate(x.id, std::move(gx));
                        });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  const int rank = xs[0].val().rank();
  if (axis < 0 || axis >= rank)
    throw std::invalid_argument("concat: axis " + std::to_string(axis) + " out of range");
  Shape oshape = xs[0].val().shape();
  for (size_t i = 1; i < xs.size(); ++i) {
    const Shape& s = xs[i].val().shape();
    if (static_cast<int>(s.size()) != rank)
      throw std::invalid_argument("concat: rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis && s[d] != oshape[d])
        throw std::invalid_argument("concat: shapes " + shape_str(oshape) + " and " +
                                    shape_str(s) + " differ off-axis");
    oshape[axis] += s[axis];
  }
  const int ax = axis4(axis, rank);
  const D4 od = pad4(oshape);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= od.d[i];
  for (int i = ax + 1; i < 4; ++i) inner *= od.d[i];

  Tensor<T> out(oshape);
  T* po = out.data();
  const int64_t out_step = od.d[ax] * inner;
  std::vector<int64_t> extents;
  int64_t cursor = 0;
  for (const Var<T>& v : xs) {
    const Tensor<T>& xv = v.val();
    const int64_t e = pad4(xv.shape()).d[ax];
    const int64_t in_step = e * inner;
    const T* px = xv.cdata();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(po + o * out_step + cursor, px + o * in_step,
                  sizeof(T) * static_cast<size_t>(in_step));
    cursor += in_step;
    extents.push_back(e);
  }
  std::vector<int32_t> parents;
  for (const Var<T>& v : xs) parents.push_back(v.id);
  std::vector<Var<T>> vars = xs;
  return xs[0].tape->record(
      "concat", std::move(out), std::move(parents),
      [vars, extents, outer, inner, out_step](Tape<T>& t, const Tensor<T>& g) {
        const T* pg = g.cdata();
        int64_t cur = 0;
        for (size_t i = 0; i < vars.size(); ++i) {
          const int64_t in_step = extents[i] * inner;
          Tensor<T> gx(vars[i].val().shape());
          T* pgx = gx.data();
          for (int64_t o = 0; o < outer; ++o)
            std::memcpy(pgx + o * in_step, pg + o * out_step + cur,
                        sizeof(T) * static_cast<size_t>(in_step));
          cur += in_step;
          t.accumulate(vars[i].id, std::move(gx));
        }
      });
}

namespace {

// Common machinery for axis reductions: output strides with 0 on reduced axes.
struct ReducePlan {
  Shape keep_shape;   // reduced axes kept as extent 1
  Shape final_shape;  // keepdims ? keep_shape : axes removed
  Strides4 ostrides;
  int64_t count = 1;  // elements folded into each output cell
};

ReducePlan make_plan(const Shape& in, std::vector<int> axes, bool keepdims) {
  const int rank = static_cast<int>(in.size());
  if (axes.empty())
    for (int i = 0; i < rank; ++i) axes.push_back(i);
  check_axes(axes, rank);
  std::vector<char> reduced(static_cast<size_t>(rank), 0);
  for (int ax : axes) {
    if (reduced[static_cast<size_t>(ax)])
      throw std::invalid_argument("duplicate reduction axis " + std::to_string(ax));
    reduced[static_cast<size_t>(ax)] = 1;
  }
  ReducePlan p;
  p.keep_shape = in;
  for (int i = 0; i < rank; ++i) {
    if (reduced[static_cast<size_t>(i)]) {
      p.count *= in[static_cast<size_t>(i)];
      p.keep_shape[static_cast<size_t>(i)] = 1;
    }
  }
  if (p.count == 0) throw std::invalid_argument("reduce over an empty axis");
  if (keepdims) {
    p.final_shape = p.keep_shape;
  } else {
    for (int i = 0; i < rank; ++i)
      if (!reduced[static_cast<size_t>(i)]) p.final_shape.push_back(in[static_cast<size_t>(i)]);
  }
  p.ostrides = bstrides(pad4(p.keep_shape));
  return p;
}

}  // namespace

template <typename T>
Var<T> reduce(Reduce op, Var<T> x, std::vector<int> axes, bool keepdims) {
  const Tensor<T>& xv = x.val();
  const ReducePlan p = make_plan(xv.shape(), std::move(axes), keepdims);
  const D4 xd = pad4(xv.shape());
  const T* px = xv.cdata();
  Tensor<T> acc(p.keep_shape);
  T* pa = acc.data();

  if (op == Reduce::kSum || op == Reduce::kMean) {
    int64_t k = 0;
    for (int64_t i0 = 0; i0 < xd.d[0]; ++i0)
      for (int64_t i1 = 0; i1 < xd.d[1]; ++i1)
        for (int64_t i2 = 0; i2 < xd.d[2]; ++i2) {
          const int64_t base =
              i0 * p.ostrides.s[0] + i1 * p.ostrides.s[1] + i2 * p.ostrides.s[2];
          for (int64_t i3 = 0; i3 < xd.d[3]; ++i3, ++k) pa[base + i3 * p.ostrides.s[3]] += px[k];
        }
    if (op == Reduce::kMean) {
      const T inv = T(1) / static_cast<T>(p.count);
      for (int64_t i = 0; i < acc.numel(); ++i) pa[i] *= inv;
    }
    Tensor<T> out = acc.reshaped(p.final_shape);
    const Shape xshape = xv.shape();
    const T scale = op == Reduce::kMean ? T(1) / static_cast<T>(p.count) : T(1);
    return x.tape->record(op == Reduce::kMean ? "mean" : "sum", std::move(out), {x.id},
                          [x, xshape, p, scale](Tape<T>& t, const Tensor<T>& g) {
                            Tensor<T> gx(xshape);
                            const D4 gd = pad4(xshape);
                            const T* pg = g.cdata();
                            T* pgx = gx.data();
                            int64_t k = 0;
                            for (int64_t i0 = 0; i0 < gd.d[0]; ++i0)
                              for (int64_t i1 = 0; i1 < gd.d[1]; ++i1)
                                for (int64_t i2 = 0; i2 < gd.d[2]; ++i2) {
                                  const int64_t base = i0 * p.ostrides.s[0] +
                                                       i1 * p.ostrides.s[1] +
                                                       i2 * p.ostrides.s[2];
                                  for (int64_t i3 = 0; i3 < gd.d[3]; ++i3, ++k)
                                    pgx[k] = pg[base + i3 * p.ostrides.s[3]] * scale;
                                }
                            t.accumulate(x.id, std::move(gx));
                          });
  }

  // max: remember the first flat index attaining each cell's maximum.
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(acc.numel()), -1);
  std::fill(pa, pa + acc.numel(), std::numeric_limits<T>::lowest());
  {
    int64_t k = 0;
    for (int64_t i0 = 0; i0 < xd.d[0]; ++i0)
      for (int64_t i1 = 0; i1 < xd.d[1]; ++i1)
        for (int64_t i2 = 0; i2 < xd.d[2]; ++i2) {
          const int64_t base =
              i0 * p.ostrides.s[0] + i1 * p.ostrides.s[1] + i2 * p.ostrides.s[2];
          for (int64_t i3 = 0; i3 < xd.d[3]; ++i3, ++k) {
            const int64_t o = base + i3 * p.ostrides.s[3];
            if (px[k] > pa[o]) {
              pa[o] = px[k];
              (*argmax)[static_cast<size_t>(o)] = k;
            }
          }
        }
  }
  Tensor<T> out = acc.reshaped(p.final_shape);
  const Shape xshape = xv.shape();
  return x.tape->record("max", std::move(out), {x.id},
                        [x, xshape, argmax](Tape<T>& t, const Tensor<T>& g) {
                          Tensor<T> gx(xshape);
                          T* pgx = gx.data();
                          const T* pg = g.cdata();
                          for (size_t o = 0; o < argmax->size(); ++o)
                            pgx[(*argmax)[o]] += pg[o];
                          t.accumulate(x.id, std::move(gx));
                        });
}

template <typename T>
Var<T> reduce_all(Reduce op, Var<T> x) {
  return reduce(op, x, {}, false);
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = unary_apply(x.val(), [](T v) { return v > T(0) ? v : T(0); });
  const Tensor<T> ov = out;
  return x.tape->record("relu", std::move(out), {x.id},
                        [x, ov](Tape<T>& t, const Tensor<T>& g) {
                          Tensor<T> gx(ov.shape());
                          const T* po = ov.cdata();
                          const T* pg = g.cdata();
                          T* pgx = gx.data();
                          const int64_t n = ov.numel();
                          for (int64_t i = 0; i < n; ++i) pgx[i] = po[i] > T(0) ? pg[i] : T(0);
                          t.accumulate(x.id, std::move(gx));
                        });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> out = unary_apply(x.val(), [](T v) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
  });
  const Tensor<T> ov = out;
  return x.tape->record("sigmoid", std::move(out), {x.id},
                        [x, ov](Tape<T>& t, const Tensor<T>& g) {
                          Tensor<T> gx(ov.shape());
                          const T* po = ov.cdata();
                          const T* pg = g.cdata();
                          T* pgx = gx.data();
                          const int64_t n = ov.numel();
                          for (int64_t i = 0; i < n; ++i) pgx[i] = pg[i] * po[i] * (T(1) - po[i]);
                          t.accumulate(x.id, std::move(gx));
                        });
}

template <typename T>
Var<T> sqrt(Var<T> x) {
  Tensor<T> out = unary_apply(x.val(), [](T v) { return std::sqrt(v); });
  const Tensor<T> ov = out;
  return x.tape->record("sqrt", std::move(out), {x.id},
                        [x, ov](Tape<T>& t, const Tensor<T>& g) {
                          Tensor<T> gx(ov.shape());
                          const T* po = ov.cdata();
                          const T* pg = g.cdata();
                          T* pgx = gx.data();
                          const int64_t n = ov.numel();
                          for (int64_t i = 0; i < n; ++i) pgx[i] = pg[i] * T(0.5) / po[i];
                          t.accumulate(x.id, std::move(gx));
                        });
}

template <typename T>
Var<T> log(Var<T> x) {
  const Tensor<T> xv = x.val();
  Tensor<T> out = unary_apply(xv, [](T v) { return std::log(v); });
  return x.tape->record("log", std::move(out), {x.id},
                        [x, xv](Tape<T>& t, const Tensor<T>& g) {
                          Tensor<T> gx(xv.shape());
                          const T* px = xv.cdata();
                          const T* pg = g.cdata();
                          T* pgx = gx.data();
                          const int64_t n = xv.numel();
                          for (int64_t i = 0; i < n; ++i) pgx[i] = pg[i] / px[i];
                          t.accumulate(x.id, std::move(gx));
                        });
}

template <typename T>
Var<T> clamp(Var<T> x, T lo, T hi) {
  const Tensor<T> xv = x.val();
  Tensor<T> out = unary_apply(xv, [lo, hi](T v) { return std::min(std::max(v, lo), hi); });
  return x.tape->record("clamp", std::move(out), {x.id},
                        [x, xv, lo, hi](Tape<T>& t, const Tensor<T>& g) {
                          Tensor<T> gx(xv.shape());
                          const T* px = xv.cdata();
                          const T* pg = g.cdata();
                          T* pgx = gx.data();
                          const int64_t n = xv.numel();
                          for (int64_t i = 0; i < n; ++i)
                            pgx[i] = (px[i] > lo && px[i] < hi) ? pg[i] : T(0);
                          t.accumulate(x.id, std::move(gx));
                        });
}

template <typename T>
Var<T> softmax(Var<T> x, int axis) {
  const Tensor<T>& xv = x.val();
  const int rank = xv.rank();
  if (axis < 0 || axis >= rank)
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " out of range");
  const int ax = axis4(axis, rank);
  const D4 xd = pad4(xv.shape());
  const Strides4 xs = nstrides(xd);
  const int64_t lane_n = xd.d[ax];
  const int64_t lane_stride = xs.s[ax];

  Tensor<T> out(xv.shape());
  const T* px = xv.cdata();
  T* po = out.data();
  D4 iter = xd;
  iter.d[ax] = 1;
  for (int64_t i0 = 0; i0 < iter.d[0]; ++i0)
    for (int64_t i1 = 0; i1 < iter.d[1]; ++i1)
      for (int64_t i2 = 0; i2 < iter.d[2]; ++i2)
        for (int64_t i3 = 0; i3 < iter.d[3]; ++i3) {
          const int64_t base = i0 * xs.s[0] + i1 * xs.s[1] + i2 * xs.s[2] + i3 * xs.s[3];
          T m = px[base];
          for (int64_t t = 1; t < lane_n; ++t) m = std::max(m, px[base + t * lane_stride]);
          T sum = 0;
          for (int64_t t = 0; t < lane_n; ++t) {
            const T e = std::exp(px[base + t * lane_stride] - m);
            po[base + t * lane_stride] = e;
            sum += e;
          }
          const T inv = T(1) / sum;
          for (int64_t t = 0; t < lane_n; ++t) po[base + t * lane_stride] *= inv;
        }
  const Tensor<T> ov = out;
  return x.tape->record(
      "softmax", std::move(out), {x.id},
      [x, ov, iter, xs, lane_n, lane_stride](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T> gx(ov.shape());
        const T* po2 = ov.cdata();
        const T* pg = g.cdata();
        T* pgx = gx.data();
        for (int64_t i0 = 0; i0 < iter.d[0]; ++i0)
          for (int64_t i1 = 0; i1 < iter.d[1]; ++i1)
            for (int64_t i2 = 0; i2 < iter.d[2]; ++i2)
              for (int64_t i3 = 0; i3 < iter.d[3]; ++i3) {
                const int64_t base = i0 * xs.s[0] + i1 * xs.s[1] + i2 * xs.s[2] + i3 * xs.s[3];
                T dot = 0;
                for (int64_t q = 0; q < lane_n; ++q)
                  dot += pg[base + q * lane_stride] * po2[base + q * lane_stride];
                for (int64_t q = 0; q < lane_n; ++q) {
                  const int64_t i = base + q * lane_stride;
                  pgx[i] = po2[i] * (pg[i] - dot);
                }
              }
        t.accumulate(x.id, std::move(gx));
      });
}

#define MNETSAT_INSTANTIATE_OPS(T)                                                        \
  template Var<T> add<T>(Var<T>, Var<T>);                                                 \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                 \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                 \
  template Var<T> div<T>(Var<T>, Var<T>);                                                 \
  template Var<T> add_scalar<T>(Var<T>, T);                                               \
  template Var<T> mul_scalar<T>(Var<T>, T);                                               \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                              \
  template Var<T> transpose2d<T>(Var<T>);                                                 \
  template Var<T> reshape<T>(Var<T>, Shape);                                              \
  template Var<T> slice<T>(Var<T>, const std::vector<int64_t>&, const std::vector<int64_t>&); \
  template Var<T> concat<T>(const std::vector<Var<T>>&, int);                             \
  template Var<T> reduce<T>(Reduce, Var<T>, std::vector<int>, bool);                      \
  template Var<T> reduce_all<T>(Reduce, Var<T>);                                          \
  template Var<T> relu<T>(Var<T>);                                                        \
  template Var<T> sigmoid<T>(Var<T>);                                                     \
  template Var<T> softmax<T>(Var<T>, int);                                                \
  template Var<T> sqrt<T>(Var<T>);                                                        \
  template Var<T> log<T>(Var<T>);                                                         \
  template Var<T> clamp<T>(Var<T>, T, T);                                                 \
  template Tensor<T> kernels::matmul<T>(const Tensor<T>&, const Tensor<T>&, bool, bool);  \
  template Tensor<T> kernels::reduce_to_shape<T>(const Tensor<T>&, const Shape&);

MNETSAT_INSTANTIATE_OPS(float)
MNETSAT_INSTANTIATE_OPS(double)

}  // namespace mnetsat::ops
