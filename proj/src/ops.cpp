#include "coroi/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>

namespace coroi {
namespace ops {

namespace {

template <typename T>
using CMat = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using MMat =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

#define COROI_DISPATCH(DT, T, ...)                  \
  do {                                              \
    if ((DT) == DType::F32) {                       \
      using T = float;                              \
      __VA_ARGS__                                   \
    } else {                                        \
      using T = double;                             \
      __VA_ARGS__                                   \
    }                                               \
  } while (0)

bool rg(const Tensor& t) { return grad_enabled() && t.requires_grad(); }

Tensor make_out(std::vector<int64_t> shape, DType dt, bool requires_grad) {
  return Tensor::zeros(std::move(shape), dt, requires_grad);
}

void attach(Tensor& out, std::vector<Tensor> parents,
            std::function<void(Tensor&)> fn) {
  if (!out.requires_grad()) return;
  auto nd = std::make_shared<Node>();
  nd->parents = std::move(parents);
  nd->backward = std::move(fn);
  out.node() = nd;
}

void same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype())
    throw DimError(std::string(op) + ": dtype mismatch");
}

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimError(std::string(op) + ": shape mismatch");
}

void want_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimError(std::string(op) + ": expected rank-2 tensor");
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  same_dtype(a, b, "add");
  same_shape(a, b, "add");
  Tensor out = make_out(a.shape(), a.dtype(), rg(a) || rg(b));
  int64_t n = a.numel();
  COROI_DISPATCH(a.dtype(), T, {
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.data<T>();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  });
  check_finite(out, "add");
  attach(out, {a, b}, [a, b, n](Tensor& o) mutable {
    COROI_DISPATCH(o.dtype(), T, {
      const T* go = o.grad_data<T>();
      if (a.requires_grad()) {
        a.ensure_grad();
        T* ga = a.grad_data<T>();
        for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        T* gb = b.grad_data<T>();
        for (int64_t i = 0; i < n; ++i) gb[i] += go[i];
      }
    });
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  same_dtype(a, b, "sub");
  same_shape(a, b, "sub");
  Tensor out = make_out(a.shape(), a.dtype(), rg(a) || rg(b));
  int64_t n = a.numel();
  COROI_DISPATCH(a.dtype(), T, {
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.data<T>();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  });
  check_finite(out, "sub");
  attach(out, {a, b}, [a, b, n](Tensor& o) mutable {
    COROI_DISPATCH(o.dtype(), T, {
      const T* go = o.grad_data<T>();
      if (a.requires_grad()) {
        a.ensure_grad();
        T* ga = a.grad_data<T>();
        for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        T* gb = b.grad_data<T>();
        for (int64_t i = 0; i < n; ++i) gb[i] -= go[i];
      }
    });
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  same_dtype(a, b, "mul");
  same_shape(a, b, "mul");
  Tensor out = make_out(a.shape(), a.dtype(), rg(a) || rg(b));
  int64_t n = a.numel();
  COROI_DISPATCH(a.dtype(), T, {
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.data<T>();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  });
  check_finite(out, "mul");
  attach(out, {a, b}, [a, b, n](Tensor& o) mutable {
    COROI_DISPATCH(o.dtype(), T, {
      const T* go = o.grad_data<T>();
      if (a.requires_grad()) {
        a.ensure_grad();
        T* ga = a.grad_data<T>();
        const T* pb = b.data<T>();
        for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * pb[i];
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        T* gb = b.grad_data<T>();
        const T* pa = a.data<T>();
        for (int64_t i = 0; i < n; ++i) gb[i] += go[i] * pa[i];
      }
    });
  });
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = make_out(a.shape(), a.dtype(), rg(a));
  int64_t n = a.numel();
  COROI_DISPATCH(a.dtype(), T, {
    const T* pa = a.data<T>();
    T* po = out.data<T>();
    T ts = static_cast<T>(s);
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * ts;
  });
  check_finite(out, "scale");
  attach(out, {a}, [a, s, n](Tensor& o) mutable {
    COROI_DISPATCH(o.dtype(), T, {
      const T* go = o.grad_data<T>();
      a.ensure_grad();
      T* ga = a.grad_data<T>();
      T ts = static_cast<T>(s);
      for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * ts;
    });
  });
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  want_2d(x, "add_rowvec");
  same_dtype(x, b, "add_rowvec");
  if (b.rank() != 1 || b.dim(0) != x.dim(1))
    throw DimError("add_rowvec: bias extent must match columns");
  Tensor out = make_out(x.shape(), x.dtype(), rg(x) || rg(b));
  int64_t R = x.dim(0), C = x.dim(1);
  COROI_DISPATCH(x.dtype(), T, {
    const T* px = x.data<T>();
    const T* pb = b.data<T>();
    T* po = out.data<T>();
    for (int64_t r = 0; r < R; ++r)
      for (int64_t c = 0; c < C; ++c) po[r * C + c] = px[r * C + c] + pb[c];
  });
  check_finite(out, "add_rowvec");
  attach(out, {x, b}, [x, b, R, C](Tensor& o) mutable {
    COROI_DISPATCH(o.dtype(), T, {
      const T* go = o.grad_data<T>();
      if (x.requires_grad()) {
        x.ensure_grad();
        T* gx = x.grad_data<T>();
        for (int64_t i = 0; i < R * C; ++i) gx[i] += go[i];
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        T* gb = b.grad_data<T>();
        for (int64_t r = 0; r < R; ++r)
          for (int64_t c = 0; c < C; ++c) gb[c] += go[r * C + c];
      }
    });
  });
  return out;
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  same_dtype(x, s, "scale_by");
  if (s.numel() != 1) throw DimError("scale_by: scale must be a single element");
  Tensor out = make_out(x.shape(), x.dtype(), rg(x) || rg(s));
  int64_t n = x.numel();
  COROI_DISPATCH(x.dtype(), T, {
    const T* px = x.data<T>();
    T* po = out.data<T>();
    T ts = s.data<T>()[0];
    for (int64_t i = 0; i < n; ++i) po[i] = px[i] * ts;
  });
  check_finite(out, "scale_by");
  attach(out, {x, s}, [x, s, n](Tensor& o) mutable {
    COROI_DISPATCH(o.dtype(), T, {
      const T* go = o.grad_data<T>();
      if (x.requires_grad()) {
        x.ensure_grad();
        T* gx = x.grad_data<T>();
        T ts = s.data<T>()[0];
        for (int64_t i = 0; i < n; ++i) gx[i] += go[i] * ts;
      }
      if (s.requires_grad()) {
        s.ensure_grad();
        T* gs = s.grad_data<T>();
        const T* px = x.data<T>();
        T acc = 0;
        for (int64_t i = 0; i < n; ++i) acc += go[i] * px[i];
        gs[0] += acc;
      }
    });
  });
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = make_out(x.shape(), x.dtype(), rg(x));
  int64_t n = x.numel();
  COROI_DISPATCH(x.dtype(), T, {
    const T* px = x.data<T>();
    T* po = out.data<T>();
    const T c0 = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    const T c1 = static_cast<T>(0.044715);
    for (int64_t i = 0; i < n; ++i) {
      T xi = px[i];
      T u = c0 * (xi + c1 * xi * xi * xi);
      po[i] = static_cast<T>(0.5) * xi * (static_cast<T>(1) + std::tanh(u));
    }
  });
  check_finite(out, "gelu");
  attach(out, {x}, [x, n](Tensor& o) mutable {
    COROI_DISPATCH(o.dtype(), T, {
      const T* go = o.grad_data<T>();
      x.ensure_grad();
      T* gx = x.grad_data<T>();
      const T* px = x.data<T>();
      const T c0 = static_cast<T>(0.7978845608028654);
      const T c1 = static_cast<T>(0.044715);
      for (int64_t i = 0; i < n; ++i) {
        T xi = px[i];
        T u = c0 * (xi + c1 * xi * xi * xi);
        T th = std::tanh(u);
        T du = c0 * (static_cast<T>(1) + static_cast<T>(3) * c1 * xi * xi);
        T d = static_cast<T>(0.5) * (static_cast<T>(1) + th) +
              static_cast<T>(0.5) * xi * (static_cast<T>(1) - th * th) * du;
        gx[i] += go[i] * d;
      }
    });
  });
  return out;
}

Tensor reshape(const Tensor& x, std::vector<int64_t> shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  if (n != x.numel()) throw DimError("reshape: element count mismatch");
  Tensor out = make_out(std::move(shape), x.dtype(), rg(x));
  COROI_DISPATCH(x.dtype(), T, {
    std::memcpy(out.data<T>(), x.data<T>(), sizeof(T) * static_cast<size_t>(n));
  });
  attach(out, {x}, [x, n](Tensor& o) mutable {
    COROI_DISPATCH(o.dtype(), T, {
      const T* go = o.grad_data<T>();
      x.ensure_grad();
      T* gx = x.grad_data<T>();
      for (int64_t i = 0; i < n; ++i) gx[i] += go[i];
    });
  });
  return out;
}

Tensor transpose(const Tensor& x) {
  want_2d(x, "transpose");
  int64_t R = x.dim(0), C = x.dim(1);
  Tensor out = make_out({C, R}, x.dtype(), rg(x));
  COROI_DISPATCH(x.dtype(), T, {
    const T* px = x.data<T>();
    T* po = out.data<T>();
    for (int64_t r = 0; r < R; ++r)
      for (int64_t c = 0; c < C; ++c) po[c * R + r] = px[r * C + c];
  });
  attach(out, {x}, [x, R, C](Tensor& o) mutable {
    COROI_DISPATCH(o.dtype(), T, {
      const T* go = o.grad_data<T>();
      x.ensure_grad();
      T* gx = x.grad_data<T>();
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) gx[r * C + c] += go[c * R + r];
    });
  });
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimError("concat_rows: empty part list");
  int64_t C = parts[0].dim(1), R = 0;
  bool any_rg = false;
  for (const auto& p : parts) {
    want_2d(p, "concat_rows");
    same_dtype(parts[0], p, "concat_rows");
    if (p.dim(1) != C) throw DimError("concat_rows: column mismatch");
    R += p.dim(0);
    any_rg = any_rg || rg(p);
  }
  Tensor out = make_out({R, C}, parts[0].dtype(), any_rg);
  COROI_DISPATCH(out.dtype(), T, {
    T* po = out.data<T>();
    int64_t off = 0;
    for (const auto& p : parts) {
      std::memcpy(po + off, p.data<T>(),
                  sizeof(T) * static_cast<size_t>(p.numel()));
      off += p.numel();
    }
  });
  std::vector<Tensor> ps = parts;
  attach(out, ps, [ps, C](Tensor& o) mutable {
    COROI_DISPATCH(o.dtype(), T, {
      const T* go = o.grad_data<T>();
      int64_t off = 0;
      for (auto& p : ps) {
        int64_t n = p.numel();
        if (p.requires_grad()) {
          p.ensure_grad();
          T* gp = p.grad_data<T>();
          for (int64_t i = 0; i < n; ++i) gp[i] += go[off + i];
        }
        off += n;
      }
    });
  });
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimError("concat_cols: empty part list");
  int64_t R = parts[0].dim(0), C = 0;
  bool any_rg = false;
  for (const auto& p : parts) {
    want_2d(p, "concat_cols");
    same_dtype(parts[0], p, "concat_cols");
    if (p.dim(0) != R) throw DimError("concat_cols: row mismatch");
    C += p.dim(1);
    any_rg = any_rg || rg(p);
  }
  Tensor out = make_out({R, C}, parts[0].dtype(), any_rg);
  COROI_DISPATCH(out.dtype(), T, {
    T* po = out.data<T>();
    int64_t coff = 0;
    for (const auto& p : parts) {
      const T* pp = p.data<T>();
      int64_t pc = p.dim(1);
      for (int64_t r = 0; r < R; ++r)
        std::memcpy(po + r * C + coff, pp + r * pc,
                    sizeof(T) * static_cast<size_t>(pc));
      coff += pc;
    }
  });
  std::vector<Tensor> ps = parts;
  attach(out, ps, [ps, R, C](Tensor& o) mutable {
    COROI_DISPATCH(o.dtype(), T, {
      const T* go = o.grad_data<T>();
      int64_t coff = 0;
      for (auto& p : ps) {
        int64_t pc = p.dim(1);
        if (p.requires_grad()) {
          p.ensure_grad();
          T* gp = p.grad_data<T>();
          for (int64_t r = 0; r < R; ++r)
            for (int64_t c = 0; c < pc; ++c)
              gp[r * pc + c] += go[r * C + coff + c];
        }
        coff += pc;
      }
    });
  });
  return out;
}

Tensor slice_rows(const Tensor& x, int64_t begin, int64_t count) {
  if (x.rank() != 1 && x.rank() != 2)
    throw DimError("slice_rows: expected rank-1 or rank-2");
  int64_t R = x.dim(0);
  int64_t C = x.rank() == 2 ? x.dim(1) : 1;
  if (begin < 0 || count <= 0 || begin + count > R)
    throw DimError("slice_rows: range out of bounds");
  std::vector<int64_t> oshape =
      x.rank() == 2 ? std::vector<int64_t>{count, C} : std::vector<int64_t>{count};
  Tensor out = make_out(oshape, x.dtype(), rg(x));
  COROI_DISPATCH(x.dtype(), T, {
    std::memcpy(out.data<T>(), x.data<T>() + begin * C,
                sizeof(T) * static_cast<size_t>(count * C));
  });
  attach(out, {x}, [x, begin, count, C](Tensor& o) mutable {
    COROI_DISPATCH(o.dtype(), T, {
      const T* go = o.grad_data<T>();
      x.ensure_grad();
      T* gx = x.grad_data<T>();
      for (int64_t i = 0; i < count * C; ++i) gx[begin * C + i] += go[i];
    });
  });
  return out;
}

Tensor slice_cols(const Tensor& x, int64_t begin, int64_t count) {
  want_2d(x, "slice_cols");
  int64_t R = x.dim(0), C = x.dim(1);
  if (begin < 0 || count <= 0 || begin + count > C)
    throw DimError("slice_cols: range out of bounds");
  Tensor out = make_out({R, count}, x.dtype(), rg(x));
  COROI_DISPATCH(x.dtype(), T, {
    const T* px = x.data<T>();
    T* po = out.data<T>();
    for (int64_t r = 0; r < R; ++r)
      std::memcpy(po + r * count, px + r * C + begin,
                  sizeof(T) * static_cast<size_t>(count));
  });
  attach(out, {x}, [x, begin, count, R, C](Tensor& o) mutable {
    COROI_DISPATCH(o.dtype(), T, {
      const T* go = o.grad_data<T>();
      x.ensure_grad();
      T* gx = x.grad_data<T>();
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < count; ++c)
          gx[r * C + begin + c] += go[r * count + c];
    });
  });
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx) {
  if (x.rank() != 1 && x.rank() != 2)
    throw DimError("gather_rows: expected rank-1 or rank-2");
  if (idx.empty()) throw DimError("gather_rows: empty index list");
  int64_t R = x.dim(0);
  int64_t C = x.rank() == 2 ? x.dim(1) : 1;
  for (int64_t i : idx)
    if (i < 0 || i >= R) throw DimError("gather_rows: index out of range");
  int64_t K = static_cast<int64_t>(idx.size());
  std::vector<int64_t> oshape =
      x.rank() == 2 ? std::vector<int64_t>{K, C} : std::vector<int64_t>{K};
  Tensor out = make_out(oshape, x.dtype(), rg(x));
  COROI_DISPATCH(x.dtype(), T, {
    const T* px = x.data<T>();
    T* po = out.data<T>();
    for (int64_t i = 0; i < K; ++i)
      std::memcpy(po + i * C, px + idx[static_cast<size_t>(i)] * C,
                  sizeof(T) * static_cast<size_t>(C));
  });
  attach(out, {x}, [x, idx, C](Tensor& o) mutable {
    COROI_DISPATCH(o.dtype(), T, {
      const T* go = o.grad_data<T>();
      x.ensure_grad();
      T* gx = x.grad_data<T>();
      int64_t K = static_cast<int64_t>(idx.size());
      for (int64_t i = 0; i < K; ++i)
        for (int64_t c = 0; c < C; ++c)
          gx[idx[static_cast<size_t>(i)] * C + c] += go[i * C + c];
    });
  });
  return out;
}

Tensor add_at_rows(const Tensor& base, const std::vector<int64_t>& idx,
                   const Tensor& delta) {
  want_2d(base, "add_at_rows");
  want_2d(delta, "add_at_rows");
  same_dtype(base, delta, "add_at_rows");
  int64_t R = base.dim(0), C = base.dim(1);
  if (delta.dim(0) != static_cast<int64_t>(idx.size()) || delta.dim(1) != C)
    throw DimError("add_at_rows: delta shape mismatch");
  std::vector<uint8_t> seen(static_cast<size_t>(R), 0);
  for (int64_t i : idx) {
    if (i < 0 || i >= R) throw ContractError("add_at_rows: index out of range");
    if (seen[static_cast<size_t>(i)])
      throw ContractError("add_at_rows: duplicate row index");
    seen[static_cast<size_t>(i)] = 1;
  }
  Tensor out = make_out(base.shape(), base.dtype(), rg(base) || rg(delta));
  COROI_DISPATCH(base.dtype(), T, {
    const T* pb = base.data<T>();
    const T* pd = delta.data<T>();
    T* po = out.data<T>();
    std::memcpy(po, pb, sizeof(T) * static_cast<size_t>(R * C));
    int64_t K = static_cast<int64_t>(idx.size());
    for (int64_t i = 0; i < K; ++i) {
      int64_t r = idx[static_cast<size_t>(i)];
      for (int64_t c = 0; c < C; ++c) {
        T d = pd[i * C + c];
        // adding an exact zero keeps the base bit pattern (incl. -0.0)
        if (d != static_cast<T>(0)) po[r * C + c] = pb[r * C + c] + d;
      }
    }
  });
  check_finite(out, "add_at_rows");
  attach(out, {base, delta}, [base, delta, idx, R, C](Tensor& o) mutable {
    COROI_DISPATCH(o.dtype(), T, {
      const T* go = o.grad_data<T>();
      if (base.requires_grad()) {
        base.ensure_grad();
        T* gb = base.grad_data<T>();
        for (int64_t i = 0; i < R * C; ++i) gb[i] += go[i];
      }
      if (delta.requires_grad()) {
        delta.ensure_grad();
        T* gd = delta.grad_data<T>();
        int64_t K = static_cast<int64_t>(idx.size());
        for (int64_t i = 0; i < K; ++i) {
          int64_t r = idx[static_cast<size_t>(i)];
          for (int64_t c = 0; c < C; ++c) gd[i * C + c] += go[r * C + c];
        }
      }
    });
  });
  return out;
}

Tensor sum_all(const Tensor& x) {
  Tensor out = make_out({1}, x.dtype(), rg(x));
  int64_t n = x.numel();
  COROI_DISPATCH(x.dtype(), T, {
    const T* px = x.data<T>();
    T acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += px[i];
    out.data<T>()[0] = acc;
  });
  check_finite(out, "sum_all");
  attach(out, {x}, [x, n](Tensor& o) mutable {
    COROI_DISPATCH(o.dtype(), T, {
      T g = o.grad_data<T>()[0];
      x.ensure_grad();
      T* gx = x.grad_data<T>();
      for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  });
  return out;
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / x.numel()); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  want_2d(a, "matmul");
  want_2d(b, "matmul");
  same_dtype(a, b, "matmul");
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw DimError("matmul: inner extents differ");
  Tensor out = make_out({m, n}, a.dtype(), rg(a) || rg(b));
  COROI_DISPATCH(a.dtype(), T, {
    CMat<T> A(a.data<T>(), m, k);
    CMat<T> B(b.data<T>(), k, n);
    MMat<T> C(out.data<T>(), m, n);
    C.noalias() = A * B;
  });
  check_finite(out, "matmul");
  attach(out, {a, b}, [a, b, m, k, n](Tensor& o) mutable {
    COROI_DISPATCH(o.dtype(), T, {
      CMat<T> G(o.grad_data<T>(), m, n);
      if (a.requires_grad()) {
        a.ensure_grad();
        MMat<T> GA(a.grad_data<T>(), m, k);
        CMat<T> B(b.data<T>(), k, n);
        GA.noalias() += G * B.transpose();
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        MMat<T> GB(b.grad_data<T>(), k, n);
        CMat<T> A(a.data<T>(), m, k);
        GB.noalias() += A.transpose() * G;
      }
    });
  });
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimError("softmax: axis out of range");
  int64_t n = x.dim(axis);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  Tensor out = make_out(x.shape(), x.dtype(), rg(x));
  COROI_DISPATCH(x.dtype(), T, {
    const T* px = x.data<T>();
    T* po = out.data<T>();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        const T* row = px + o * n * inner + i;
        T* orow = po + o * n * inner + i;
        T mx = row[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j * inner]);
        T sum = 0;
        for (int64_t j = 0; j < n; ++j) {
          T e = std::exp(row[j * inner] - mx);
          orow[j * inner] = e;
          sum += e;
        }
        T inv = static_cast<T>(1) / sum;
        for (int64_t j = 0; j < n; ++j) orow[j * inner] *= inv;
      }
  });
  check_finite(out, "softmax");
  attach(out, {x}, [x, outer, n, inner](Tensor& o) mutable {
    COROI_DISPATCH(o.dtype(), T, {
      const T* py = o.data<T>();
      const T* go = o.grad_data<T>();
      x.ensure_grad();
      T* gx = x.grad_data<T>();
      for (int64_t ot = 0; ot < outer; ++ot)
        for (int64_t i = 0; i < inner; ++i) {
          int64_t base = ot * n * inner + i;
          T dot = 0;
          for (int64_t j = 0; j < n; ++j)
            dot += go[base + j * inner] * py[base + j * inner];
          for (int64_t j = 0; j < n; ++j)
            gx[base + j * inner] +=
                py[base + j * inner] * (go[base + j * inner] - dot);
        }
    });
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (x.rank() < 1) throw DimError("layer_norm: rank must be >= 1");
  int64_t d = x.dim(-1);
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 ||
      beta.dim(0) != d)
    throw DimError("layer_norm: gamma/beta extent must match last axis");
  same_dtype(x, gamma, "layer_norm");
  same_dtype(x, beta, "layer_norm");
  int64_t R = x.numel() / d;
  Tensor out = make_out(x.shape(), x.dtype(), rg(x) || rg(gamma) || rg(beta));
  COROI_DISPATCH(x.dtype(), T, {
    const T* px = x.data<T>();
    const T* pg = gamma.data<T>();
    const T* pb = beta.data<T>();
    T* po = out.data<T>();
    for (int64_t rI = 0; rI < R; ++rI) {
      const T* row = px + rI * d;
      T* orow = po + rI * d;
      T mu = 0;
      for (int64_t c = 0; c < d; ++c) mu += row[c];
      mu /= static_cast<T>(d);
      T var = 0;
      for (int64_t c = 0; c < d; ++c) {
        T v = row[c] - mu;
        var += v * v;
      }
      var /= static_cast<T>(d);
      T inv = static_cast<T>(1) / std::sqrt(var + static_cast<T>(eps));
      for (int64_t c = 0; c < d; ++c)
        orow[c] = (row[c] - mu) * inv * pg[c] + pb[c];
    }
  });
  check_finite(out, "layer_norm");
  attach(out, {x, gamma, beta}, [x, gamma, beta, R, d, eps](Tensor& o) mutable {
    COROI_DISPATCH(o.dtype(), T, {
      const T* px = x.data<T>();
      const T* pg = gamma.data<T>();
      const T* go = o.grad_data<T>();
      std::vector<T> xhat(static_cast<size_t>(d));
      for (int64_t rI = 0; rI < R; ++rI) {
        const T* row = px + rI * d;
        const T* grow = go + rI * d;
        T mu = 0;
        for (int64_t c = 0; c < d; ++c) mu += row[c];
        mu /= static_cast<T>(d);
        T var = 0;
        for (int64_t c = 0; c < d; ++c) {
          T v = row[c] - mu;
          var += v * v;
        }
        var /= static_cast<T>(d);
        T inv = static_cast<T>(1) / std::sqrt(var + static_cast<T>(eps));
        for (int64_t c = 0; c < d; ++c) xhat[static_cast<size_t>(c)] = (row[c] - mu) * inv;
        if (gamma.requires_grad()) {
          gamma.ensure_grad();
          T* gg = gamma.grad_data<T>();
          for (int64_t c = 0; c < d; ++c)
            gg[c] += grow[c] * xhat[static_cast<size_t>(c)];
        }
        if (beta.requires_grad()) {
          beta.ensure_grad();
          T* gb = beta.grad_data<T>();
          for (int64_t c = 0; c < d; ++c) gb[c] += grow[c];
        }
        if (x.requires_grad()) {
          x.ensure_grad();
          T* gx = x.grad_data<T>() + rI * d;
          T sum1 = 0, sum2 = 0;
          for (int64_t c = 0; c < d; ++c) {
            T dxh = grow[c] * pg[c];
            sum1 += dxh;
            sum2 += dxh * xhat[static_cast<size_t>(c)];
          }
          sum1 /= static_cast<T>(d);
          sum2 /= static_cast<T>(d);
          for (int64_t c = 0; c < d; ++c) {
            T dxh = grow[c] * pg[c];
            gx[c] += inv * (dxh - sum1 - xhat[static_cast<size_t>(c)] * sum2);
          }
        }
      }
    });
  });
  return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const Tensor* blocked) {
  want_2d(q, "attention");
  want_2d(k, "attention");
  want_2d(v, "attention");
  if (q.dim(1) != k.dim(1)) throw DimError("attention: q/k width mismatch");
  if (k.dim(0) != v.dim(0)) throw DimError("attention: k/v row mismatch");
  if (k.dim(0) == 0) throw DimError("attention: empty key set");
  int64_t d = q.dim(1);
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(double(d)));
  if (blocked) {
    if (blocked->rank() != 2 || blocked->dim(0) != q.dim(0) ||
        blocked->dim(1) != k.dim(0))
      throw DimError("attention: mask shape mismatch");
    // additive mask: blocked position -> large negative, underflows to
    // exactly zero weight after max-subtracted softmax
    Tensor add_mask = Tensor::zeros(scores.shape(), scores.dtype());
    double big = scores.dtype() == DType::F32 ? 1e9 : 1e30;
    for (int64_t i = 0; i < add_mask.numel(); ++i)
      if (blocked->at(i) != 0.0) add_mask.set(i, -big);
    scores = add(scores, add_mask);
  }
  Tensor a = softmax(scores, 1);
  return matmul(a, v);
}

Tensor window_mean_pool(const Tensor& s, int64_t win) {
  want_2d(s, "window_mean_pool");
  int64_t h = s.dim(0), w = s.dim(1);
  if (win <= 0) throw DimError("window_mean_pool: window must be positive");
  if (win > h || win > w)
    throw DimError("window_mean_pool: window exceeds map extent");
  int64_t oh = h - win + 1, ow = w - win + 1;
  Tensor out = make_out({oh, ow}, s.dtype(), rg(s));
  COROI_DISPATCH(s.dtype(), T, {
    const T* ps = s.data<T>();
    T* po = out.data<T>();
    T inv = static_cast<T>(1) / static_cast<T>(win * win);
    for (int64_t r = 0; r < oh; ++r)
      for (int64_t c = 0; c < ow; ++c) {
        T acc = 0;
        for (int64_t i = 0; i < win; ++i)
          for (int64_t j = 0; j < win; ++j) acc += ps[(r + i) * w + (c + j)];
        po[r * ow + c] = acc * inv;
      }
  });
  check_finite(out, "window_mean_pool");
  attach(out, {s}, [s, win, h, w, oh, ow](Tensor& o) mutable {
    (void)h;
    COROI_DISPATCH(o.dtype(), T, {
      const T* go = o.grad_data<T>();
      s.ensure_grad();
      T* gs = s.grad_data<T>();
      T inv = static_cast<T>(1) / static_cast<T>(win * win);
      for (int64_t r = 0; r < oh; ++r)
        for (int64_t c = 0; c < ow; ++c) {
          T g = go[r * ow + c] * inv;
          for (int64_t i = 0; i < win; ++i)
            for (int64_t j = 0; j < win; ++j) gs[(r + i) * w + (c + j)] += g;
        }
    });
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& targets,
                     const std::vector<uint8_t>& ignore_mask) {
  want_2d(logits, "cross_entropy");
  int64_t T_ = logits.dim(0), V = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != T_ ||
      static_cast<int64_t>(ignore_mask.size()) != T_)
    throw DimError("cross_entropy: targets/mask length mismatch");
  int64_t count = 0;
  for (int64_t t = 0; t < T_; ++t) {
    if (ignore_mask[static_cast<size_t>(t)]) continue;
    if (targets[static_cast<size_t>(t)] < 0 ||
        targets[static_cast<size_t>(t)] >= V)
      throw ContractError("cross_entropy: target id out of vocabulary");
    ++count;
  }
  if (count == 0)
    throw ContractError("cross_entropy: all positions masked (degenerate batch)");
  Tensor out = make_out({1}, logits.dtype(), rg(logits));
  COROI_DISPATCH(logits.dtype(), T, {
    const T* pl = logits.data<T>();
    double acc = 0;
    for (int64_t t = 0; t < T_; ++t) {
      if (ignore_mask[static_cast<size_t>(t)]) continue;
      const T* row = pl + t * V;
      T mx = row[0];
      for (int64_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
      double sum = 0;
      for (int64_t j = 0; j < V; ++j)
        sum += std::exp(static_cast<double>(row[j] - mx));
      double lse = std::log(sum) + static_cast<double>(mx);
      acc += lse - static_cast<double>(row[targets[static_cast<size_t>(t)]]);
    }
    out.data<T>()[0] = static_cast<T>(acc / static_cast<double>(count));
  });
  check_finite(out, "cross_entropy");
  attach(out, {logits},
         [logits, targets, ignore_mask, T_, V, count](Tensor& o) mutable {
           COROI_DISPATCH(o.dtype(), T, {
             T g = o.grad_data<T>()[0];
             logits.ensure_grad();
             T* gl = logits.grad_data<T>();
             const T* pl = logits.data<T>();
             T invc = static_cast<T>(1) / static_cast<T>(count);
             for (int64_t t = 0; t < T_; ++t) {
               if (ignore_mask[static_cast<size_t>(t)]) continue;
               const T* row = pl + t * V;
               T mx = row[0];
               for (int64_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
               T sum = 0;
               for (int64_t j = 0; j < V; ++j) sum += std::exp(row[j] - mx);
               T inv = static_cast<T>(1) / sum;
               int64_t y = targets[static_cast<size_t>(t)];
               for (int64_t j = 0; j < V; ++j) {
                 T p = std::exp(row[j] - mx) * inv;
                 T d = p - (j == y ? static_cast<T>(1) : static_cast<T>(0));
                 gl[t * V + j] += g * d * invc;
               }
             }
           });
         });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(x, w), b);
}

int64_t argmax_index(const Tensor& x) {
  int64_t n = x.numel(), best = 0;
  double bv = x.at(0);
  for (int64_t i = 1; i < n; ++i) {
    double v = x.at(i);
    if (v > bv) {
      bv = v;
      best = i;
    }
  }
  return best;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimError("max_abs_diff: shape mismatch");
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs(a.at(i) - b.at(i)));
  return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
  size_t bytes = static_cast<size_t>(a.numel()) * dtype_size(a.dtype());
  const void* pa = a.dtype() == DType::F32
                       ? static_cast<const void*>(a.data<float>())
                       : static_cast<const void*>(a.data<double>());
  const void* pb = b.dtype() == DType::F32
                       ? static_cast<const void*>(b.data<float>())
                       : static_cast<const void*>(b.data<double>());
  return std::memcmp(pa, pb, bytes) == 0;
}

}  // namespace ops
}  // namespace coroi
