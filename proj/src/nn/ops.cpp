#include "sketchdiff/nn/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "sketchdiff/error.hpp"

namespace sketchdiff::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Eigen's kernels peel scalar iterations up to an aligned address, so results
// on raw buffers depend on where they were allocated. Products run on aligned
// copies to keep every run bit-identical.
RowMatrix load(const double* p, std::size_t r, std::size_t c) {
  return Eigen::Map<const RowMatrix>(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

void assign(double* p, std::size_t r, std::size_t c, const RowMatrix& v) {
  std::copy(v.data(), v.data() + r * c, p);
}

void accumulate(double* p, std::size_t r, std::size_t c, const RowMatrix& v) {
  const double* q = v.data();
  for (std::size_t i = 0; i < r * c; ++i) p[i] += q[i];
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

// ---------------------------------------------------------------------------
// Broadcasting

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;  // per output axis, 0 where broadcast
};

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  BroadcastPlan p;
  p.out.resize(r);
  p.stride_a.assign(r, 0);
  p.stride_b.assign(r, 0);
  auto sa = contiguous_strides(a);
  auto sb = contiguous_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ia = i + a.size() >= r ? i + a.size() - r : SIZE_MAX;
    const std::size_t ib = i + b.size() >= r ? i + b.size() - r : SIZE_MAX;
    const std::size_t da = ia == SIZE_MAX ? 1 : a[ia];
    const std::size_t db = ib == SIZE_MAX ? 1 : b[ib];
    if (da != db && da != 1 && db != 1) {
      throw ConfigError("broadcast: incompatible shapes " + shape_str(a) + " and " + shape_str(b));
    }
    p.out[i] = std::max(da, db);
    if (da != 1) p.stride_a[i] = sa[ia];
    if (db != 1) p.stride_b[i] = sb[ib];
  }
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t r = p.out.size();
  const std::size_t total = numel(p.out);
  if (total == 0) return;
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  const std::size_t inner = p.out[r - 1];
  const std::size_t sa = p.stride_a[r - 1], sb = p.stride_b[r - 1];
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t k = 0; k < inner; ++k) f(o + k, ia + k * sa, ib + k * sb);
    // advance the outer multi-index
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.stride_a[d] * idx[d];
      ib -= p.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
  if (a.shape() == b.shape()) {
    const std::size_t n = a.size();
    std::vector<double> out(n);
    const double* x = a.data().data();
    const double* y = b.data().data();
    switch (op) {
      case BinOp::Add: for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i]; break;
      case BinOp::Sub: for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - y[i]; break;
      case BinOp::Mul: for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i]; break;
    }
    return make_result(a.shape(), std::move(out), {a, b}, [op](Node& self) {
      Node& pa = parent(self, 0);
      Node& pb = parent(self, 1);
      const std::size_t n = self.value.size();
      const double* g = self.grad.data();
      if (pa.requires_grad) {
        double* ga = pa.grad.data();
        if (op == BinOp::Mul) {
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * pb.value[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
      }
      if (pb.requires_grad) {
        double* gb = pb.grad.data();
        switch (op) {
          case BinOp::Add: for (std::size_t i = 0; i < n; ++i) gb[i] += g[i]; break;
          case BinOp::Sub: for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i]; break;
          case BinOp::Mul: for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * pa.value[i]; break;
        }
      }
    });
  }
  auto plan = plan_broadcast(a.shape(), b.shape());
  std::vector<double> out(numel(plan.out));
  const double* x = a.data().data();
  const double* y = b.data().data();
  switch (op) {
    case BinOp::Add: for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = x[i] + y[j]; }); break;
    case BinOp::Sub: for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = x[i] - y[j]; }); break;
    case BinOp::Mul: for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = x[i] * y[j]; }); break;
  }
  Shape shape = plan.out;
  return make_result(std::move(shape), std::move(out), {a, b}, [op, plan](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const double* g = self.grad.data();
    if (pa.requires_grad) {
      double* ga = pa.grad.data();
      const double* yb = pb.value.data();
      if (op == BinOp::Mul) {
        for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { ga[i] += g[o] * yb[j]; });
      } else {
        for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t) { ga[i] += g[o]; });
      }
    }
    if (pb.requires_grad) {
      double* gb = pb.grad.data();
      const double* xa = pa.value.data();
      switch (op) {
        case BinOp::Add: for_each_broadcast(plan, [&](std::size_t o, std::size_t, std::size_t j) { gb[j] += g[o]; }); break;
        case BinOp::Sub: for_each_broadcast(plan, [&](std::size_t o, std::size_t, std::size_t j) { gb[j] -= g[o]; }); break;
        case BinOp::Mul: for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { gb[j] += g[o] * xa[i]; }); break;
      }
    }
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  const double* v = x.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(v[i]);
  return make_result(x.shape(), std::move(out), {x}, [deriv](Node& self) {
    Node& p = parent(self, 0);
    const std::size_t n = self.value.size();
    for (std::size_t i = 0; i < n; ++i) p.grad[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
  });
}

// Splits a shape around `axis` into outer * len * inner.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ConfigError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul); }

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

// Vectorized and scalar exp differ in the last bit; see load().
static Eigen::ArrayXd aligned_copy(const double* p, std::size_t n) {
  return Eigen::Map<const Eigen::ArrayXd>(p, static_cast<Eigen::Index>(n));
}

Tensor silu(const Tensor& x) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  const Eigen::ArrayXd v = aligned_copy(x.data().data(), n);
  const Eigen::ArrayXd y = v / (1.0 + (-v).exp());
  std::copy(y.data(), y.data() + n, out.data());
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    Node& p = parent(self, 0);
    const std::size_t n = self.value.size();
    const Eigen::ArrayXd v = aligned_copy(p.value.data(), n);
    const Eigen::ArrayXd s = 1.0 / (1.0 + (-v).exp());
    const Eigen::ArrayXd d = aligned_copy(self.grad.data(), n) * s * (1.0 + v * (1.0 - s));
    for (std::size_t i = 0; i < n; ++i) p.grad[i] += d[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  const Eigen::ArrayXd v = aligned_copy(x.data().data(), n);
  const Eigen::ArrayXd y = 1.0 / (1.0 + (-v).exp());
  std::copy(y.data(), y.data() + n, out.data());
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    Node& p = parent(self, 0);
    const std::size_t n = self.value.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double y = self.value[i];
      p.grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
  const auto sp = split_axis(x.shape(), axis);
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  const double* v = x.data().data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += v[(o * sp.len + l) * sp.inner + i];
  Shape shape = x.shape();
  if (keepdim) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return make_result(std::move(shape), std::move(out), {x}, [sp](Node& self) {
    Node& p = parent(self, 0);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t l = 0; l < sp.len; ++l)
        for (std::size_t i = 0; i < sp.inner; ++i) p.grad[(o * sp.len + l) * sp.inner + i] += self.grad[o * sp.inner + i];
  });
}

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
  return scale(sum(x, axis, keepdim), 1.0 / static_cast<double>(x.dim(axis)));
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({}, {s}, {x}, [](Node& self) {
    Node& p = parent(self, 0);
    const double g = self.grad[0];
    for (auto& gi : p.grad) gi += g;
  });
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.size())); }

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ConfigError("mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t n = a.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return make_result({}, {s / static_cast<double>(n)}, {a, b}, [n](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const double g = 2.0 * self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = g * (pa.value[i] - pb.value[i]);
      if (pa.requires_grad) pa.grad[i] += d;
      if (pb.requires_grad) pb.grad[i] -= d;
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis);
  std::vector<double> out(x.size());
  const double* v = x.data().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      double mx = -INFINITY;
      for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, v[base + l * sp.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        const double e = std::exp(v[base + l * sp.inner] - mx);
        out[base + l * sp.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] /= z;
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [sp](Node& self) {
    Node& p = parent(self, 0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.len * sp.inner + i;
        double dot = 0.0;
        for (std::size_t l = 0; l < sp.len; ++l) dot += self.grad[base + l * sp.inner] * self.value[base + l * sp.inner];
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t k = base + l * sp.inner;
          p.grad[k] += self.value[k] * (self.grad[k] - dot);
        }
      }
    }
  });
}

Tensor squash(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis);
  std::vector<double> out(x.size());
  const double* v = x.data().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      double n2 = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) n2 += v[base + l * sp.inner] * v[base + l * sp.inner];
      const double factor = std::sqrt(n2) / (1.0 + n2);
      for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] = factor * v[base + l * sp.inner];
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [sp](Node& self) {
    Node& p = parent(self, 0);
    const double* v = p.value.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.len * sp.inner + i;
        double n2 = 0.0, gv = 0.0;
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t k = base + l * sp.inner;
          n2 += v[k] * v[k];
          gv += self.grad[k] * v[k];
        }
        if (n2 == 0.0) continue;  // Jacobian of squash vanishes at the origin
        const double n = std::sqrt(n2);
        const double factor = n / (1.0 + n2);
        // d factor / d v = (1 - n^2) / (1 + n^2)^2 * v / n
        const double radial = gv * (1.0 - n2) / ((1.0 + n2) * (1.0 + n2) * n);
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t k = base + l * sp.inner;
          p.grad[k] += factor * self.grad[k] + radial * v[k];
        }
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ConfigError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return make_result(std::move(shape), x.values(), {x}, [](Node& self) {
    Node& p = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  if (perm.size() != r) throw ConfigError("permute: rank mismatch");
  Shape out_shape(r);
  auto in_strides = contiguous_strides(in);
  std::vector<std::size_t> gather_strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in[perm[i]];
    gather_strides[i] = in_strides[perm[i]];
  }
  // source offset for every output element
  const std::size_t total = x.size();
  std::vector<std::size_t> src(total);
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t o = 0; o < total; ++o) {
      src[o] = off;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        off += gather_strides[d];
        if (idx[d] < out_shape[d]) break;
        off -= gather_strides[d] * idx[d];
        idx[d] = 0;
      }
    }
  }
  std::vector<double> out(total);
  const double* v = x.data().data();
  for (std::size_t o = 0; o < total; ++o) out[o] = v[src[o]];
  return make_result(std::move(out_shape), std::move(out), {x}, [src = std::move(src)](Node& self) {
    Node& p = parent(self, 0);
    for (std::size_t o = 0; o < src.size(); ++o) p.grad[src[o]] += self.grad[o];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ConfigError("concat: no inputs");
  Shape shape = parts.front().shape();
  std::vector<std::size_t> lens;
  std::size_t total_len = 0;
  for (const auto& t : parts) {
    Shape s = t.shape();
    if (s.size() != shape.size()) throw ConfigError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != shape[i]) throw ConfigError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(shape));
    }
    lens.push_back(s[axis]);
    total_len += s[axis];
  }
  shape[axis] = total_len;
  const auto sp = split_axis(shape, axis);
  std::vector<double> out(numel(shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double* v = parts[k].data().data();
    const std::size_t chunk = lens[k] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy(v + o * chunk, v + (o + 1) * chunk, out.begin() + static_cast<std::ptrdiff_t>(o * total_len * sp.inner + offset * sp.inner));
    }
    offset += lens[k];
  }
  return make_result(std::move(shape), std::move(out), parts, [sp, lens, total_len](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < lens.size(); ++k) {
      Node& p = parent(self, k);
      const std::size_t chunk = lens[k] * sp.inner;
      if (p.requires_grad) {
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const double* g = self.grad.data() + o * total_len * sp.inner + offset * sp.inner;
          double* pg = p.grad.data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) pg[i] += g[i];
        }
      }
      offset += lens[k];
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto sp = split_axis(x.shape(), axis);
  if (start + length > sp.len) throw ConfigError("slice: range out of bounds");
  Shape shape = x.shape();
  shape[axis] = length;
  std::vector<double> out(sp.outer * length * sp.inner);
  const double* v = x.data().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const double* src = v + (o * sp.len + start) * sp.inner;
    std::copy(src, src + length * sp.inner, out.begin() + static_cast<std::ptrdiff_t>(o * length * sp.inner));
  }
  return make_result(std::move(shape), std::move(out), {x}, [sp, start, length](Node& self) {
    Node& p = parent(self, 0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      double* dst = p.grad.data() + (o * sp.len + start) * sp.inner;
      const double* g = self.grad.data() + o * length * sp.inner;
      for (std::size_t i = 0; i < length * sp.inner; ++i) dst[i] += g[i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ConfigError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  assign(out.data(), m, n, load(a.data().data(), m, k) * load(b.data().data(), k, n));
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const RowMatrix g = load(self.grad.data(), m, n);
    if (pa.requires_grad) accumulate(pa.grad.data(), m, k, g * load(pb.value.data(), k, n).transpose());
    if (pb.requires_grad) accumulate(pb.grad.data(), k, n, load(pa.value.data(), m, k).transpose() * g);
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (w.rank() != 2 || x.rank() == 0 || x.shape().back() != w.dim(0)) {
    throw ConfigError("linear: input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
  }
  const std::size_t in = w.dim(0), outd = w.dim(1);
  const std::size_t rows = x.size() / in;
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != outd) throw ConfigError("linear: bias size mismatch");
  std::vector<double> out(rows * outd);
  assign(out.data(), rows, outd, load(x.data().data(), rows, in) * load(w.data().data(), in, outd));
  if (has_bias) {
    const double* bv = bias.data().data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < outd; ++j) out[r * outd + j] += bv[j];
  }
  Shape shape = x.shape();
  shape.back() = outd;
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return make_result(std::move(shape), std::move(out), std::move(inputs), [rows, in, outd, has_bias](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    const RowMatrix g = load(self.grad.data(), rows, outd);
    if (px.requires_grad) accumulate(px.grad.data(), rows, in, g * load(pw.value.data(), in, outd).transpose());
    if (pw.requires_grad) accumulate(pw.grad.data(), in, outd, load(px.value.data(), rows, in).transpose() * g);
    if (has_bias) {
      Node& pb = parent(self, 2);
      if (pb.requires_grad)
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < outd; ++j) pb.grad[j] += self.grad[r * outd + j];
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    throw ConfigError("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = trans_b ? b.dim(1) : b.dim(2);
  if ((trans_b ? b.dim(2) : b.dim(1)) != k) throw ConfigError("bmm: inner dimension mismatch");
  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    const RowMatrix A = load(a.data().data() + i * m * k, m, k);
    if (trans_b) {
      assign(out.data() + i * m * n, m, n, A * load(b.data().data() + i * n * k, n, k).transpose());
    } else {
      assign(out.data() + i * m * n, m, n, A * load(b.data().data() + i * k * n, k, n));
    }
  }
  return make_result({batch, m, n}, std::move(out), {a, b}, [batch, m, k, n, trans_b](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    for (std::size_t i = 0; i < batch; ++i) {
      const RowMatrix G = load(self.grad.data() + i * m * n, m, n);
      const RowMatrix A = load(pa.value.data() + i * m * k, m, k);
      if (trans_b) {
        const RowMatrix B = load(pb.value.data() + i * n * k, n, k);
        if (pa.requires_grad) accumulate(pa.grad.data() + i * m * k, m, k, G * B);
        if (pb.requires_grad) accumulate(pb.grad.data() + i * n * k, n, k, G.transpose() * A);
      } else {
        const RowMatrix B = load(pb.value.data() + i * k * n, k, n);
        if (pa.requires_grad) accumulate(pa.grad.data() + i * m * k, m, k, G * B.transpose());
        if (pb.requires_grad) accumulate(pb.grad.data() + i * k * n, k, n, A.transpose() * G);
      }
    }
  });
}

Tensor add_grouped(const Tensor& x, const Tensor& z) {
  if (x.rank() != 2 || z.rank() != 2 || x.dim(1) != z.dim(1) || z.dim(0) == 0 || x.dim(0) % z.dim(0) != 0) {
    throw ConfigError("add_grouped: " + shape_str(x.shape()) + " + " + shape_str(z.shape()));
  }
  const std::size_t groups = z.dim(0), n = x.dim(1), per = x.dim(0) / groups;
  std::vector<double> out(x.values());
  for (std::size_t g = 0; g < groups; ++g) {
    const double* zr = z.data().data() + g * n;
    for (std::size_t p = 0; p < per; ++p) {
      double* row = out.data() + (g * per + p) * n;
      for (std::size_t c = 0; c < n; ++c) row[c] += zr[c];
    }
  }
  return make_result(x.shape(), std::move(out), {x, z}, [groups, n, per](Node& self) {
    Node& px = parent(self, 0);
    Node& pz = parent(self, 1);
    if (px.requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
    }
    if (pz.requires_grad) {
      for (std::size_t g = 0; g < groups; ++g) {
        double* zr = pz.grad.data() + g * n;
        for (std::size_t p = 0; p < per; ++p) {
          const double* row = self.grad.data() + (g * per + p) * n;
          for (std::size_t c = 0; c < n; ++c) zr[c] += row[c];
        }
      }
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1) || w.dim(2) != w.dim(3)) {
    throw ConfigError("conv2d: input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
  }
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (h + 2 * pad < k || wd + 2 * pad < k) throw ConfigError("conv2d: kernel larger than padded input");
  const std::size_t ho = (h + 2 * pad - k) / stride + 1;
  const std::size_t wo = (wd + 2 * pad - k) / stride + 1;
  const std::size_t ckk = cin * k * k, hw = ho * wo;
  const bool has_bias = bias.defined();

  // Source pixel of every im2col entry (replicate padding clamps to the border).
  std::vector<std::size_t> src(ckk * hw);
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const std::size_t row = (c * k + ky) * k + kx;
        for (std::size_t oy = 0; oy < ho; ++oy)
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            const auto cy = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(iy, 0, static_cast<std::ptrdiff_t>(h) - 1));
            const auto cx = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(ix, 0, static_cast<std::ptrdiff_t>(wd) - 1));
            src[row * hw + oy * wo + ox] = (c * h + cy) * wd + cx;
          }
      }

  std::vector<double> out(batch * cout * hw);
  std::vector<double> cols(ckk * hw);
  const RowMatrix W = load(w.data().data(), cout, ckk);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = x.data().data() + b * cin * h * wd;
    for (std::size_t i = 0; i < cols.size(); ++i) cols[i] = xb[src[i]];
    double* yb = out.data() + b * cout * hw;
    assign(yb, cout, hw, W * load(cols.data(), ckk, hw));
    if (has_bias)
      for (std::size_t c = 0; c < cout; ++c)
        for (std::size_t i = 0; i < hw; ++i) yb[c * hw + i] += bias.data()[c];
  }
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return make_result({batch, cout, ho, wo}, std::move(out), std::move(inputs),
                     [src = std::move(src), batch, cin, h, wd, cout, ckk, hw, has_bias](Node& self) {
                       Node& px = parent(self, 0);
                       Node& pw = parent(self, 1);
                       std::vector<double> cols(ckk * hw);
                       RowMatrix dcols(ckk, hw);
                       for (std::size_t b = 0; b < batch; ++b) {
                         const RowMatrix G = load(self.grad.data() + b * cout * hw, cout, hw);
                         if (pw.requires_grad) {
                           const double* xb = px.value.data() + b * cin * h * wd;
                           for (std::size_t i = 0; i < cols.size(); ++i) cols[i] = xb[src[i]];
                           accumulate(pw.grad.data(), cout, ckk, G * load(cols.data(), ckk, hw).transpose());
                         }
                         if (px.requires_grad) {
                           dcols.noalias() = load(pw.value.data(), cout, ckk).transpose() * G;
                           double* gx = px.grad.data() + b * cin * h * wd;
                           for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += dcols.data()[i];
                         }
                         if (has_bias) {
                           Node& pb = parent(self, 2);
                           if (pb.requires_grad)
                             for (std::size_t c = 0; c < cout; ++c)
                               for (std::size_t i = 0; i < hw; ++i) pb.grad[c] += G(c, i);
                         }
                       }
                     });
}

Tensor maxpool2d(const Tensor& x, std::size_t window) {
  if (x.rank() != 4 || window == 0 || x.dim(2) % window || x.dim(3) % window) {
    throw ConfigError("maxpool2d: input " + shape_str(x.shape()) + " window " + std::to_string(window));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t ho = h / window, wo = wd / window;
  std::vector<double> out(planes * ho * wo);
  std::vector<std::size_t> arg(out.size());
  const double* v = x.data().data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = p * h * wd + oy * window * wd + ox * window;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = p * h * wd + (oy * window + dy) * wd + ox * window + dx;
            if (v[idx] > v[best]) best = idx;
          }
        const std::size_t o = (p * ho + oy) * wo + ox;
        out[o] = v[best];
        arg[o] = best;
      }
  return make_result({x.dim(0), x.dim(1), ho, wo}, std::move(out), {x}, [arg = std::move(arg)](Node& self) {
    Node& p = parent(self, 0);
    for (std::size_t o = 0; o < arg.size(); ++o) p.grad[arg[o]] += self.grad[o];
  });
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool training) {
  if (x.rank() != 4 || gamma.size() != x.dim(1) || beta.size() != x.dim(1)) {
    throw ConfigError("batchnorm2d: input " + shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::size_t count = batch * hw;
  const double* v = x.data().data();
  std::vector<double> mu(ch), inv_std(ch);
  if (training) {
    for (std::size_t c = 0; c < ch; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < hw; ++i) s += v[(b * ch + c) * hw + i];
      mu[c] = s / static_cast<double>(count);
      double q = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = v[(b * ch + c) * hw + i] - mu[c];
          q += d * d;
        }
      const double var = q / static_cast<double>(count);
      inv_std[c] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = count > 1 ? q / static_cast<double>(count - 1) : var;
      state.running_mean.values()[c] = state.momentum * state.running_mean[c] + (1.0 - state.momentum) * mu[c];
      state.running_var.values()[c] = state.momentum * state.running_var[c] + (1.0 - state.momentum) * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < ch; ++c) {
      mu[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
  }
  std::vector<double> xhat(x.size()), out(x.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t k = (b * ch + c) * hw + i;
        xhat[k] = (v[k] - mu[c]) * inv_std[c];
        out[k] = gamma[c] * xhat[k] + beta[c];
      }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), batch, ch, hw, count, training](Node& self) {
                       Node& px = parent(self, 0);
                       Node& pg = parent(self, 1);
                       Node& pb = parent(self, 2);
                       for (std::size_t c = 0; c < ch; ++c) {
                         double sg = 0.0, sgx = 0.0;
                         for (std::size_t b = 0; b < batch; ++b)
                           for (std::size_t i = 0; i < hw; ++i) {
                             const std::size_t k = (b * ch + c) * hw + i;
                             sg += self.grad[k];
                             sgx += self.grad[k] * xhat[k];
                           }
                         if (pg.requires_grad) pg.grad[c] += sgx;
                         if (pb.requires_grad) pb.grad[c] += sg;
                         if (!px.requires_grad) continue;
                         const double gm = pg.value[c];
                         for (std::size_t b = 0; b < batch; ++b)
                           for (std::size_t i = 0; i < hw; ++i) {
                             const std::size_t k = (b * ch + c) * hw + i;
                             if (training) {
                               const double n = static_cast<double>(count);
                               px.grad[k] += gm * inv_std[c] * (self.grad[k] - sg / n - xhat[k] * sgx / n);
                             } else {
                               px.grad[k] += gm * inv_std[c] * self.grad[k];
                             }
                           }
                       }
                     });
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.shape().back();
  if (gamma.size() != d || beta.size() != d) throw ConfigError("layernorm: parameter size mismatch");
  const std::size_t rows = x.size() / d;
  std::vector<double> xhat(x.size()), inv_std(rows), out(x.size());
  const double* v = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double m = 0.0;
    for (std::size_t i = 0; i < d; ++i) m += v[r * d + i];
    m /= static_cast<double>(d);
    double q = 0.0;
    for (std::size_t i = 0; i < d; ++i) q += (v[r * d + i] - m) * (v[r * d + i] - m);
    inv_std[r] = 1.0 / std::sqrt(q / static_cast<double>(d) + eps);
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (v[r * d + i] - m) * inv_std[r];
      out[r * d + i] = gamma[i] * xhat[r * d + i] + beta[i];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](Node& self) {
                       Node& px = parent(self, 0);
                       Node& pg = parent(self, 1);
                       Node& pb = parent(self, 2);
                       std::vector<double> gh(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double s = 0.0, sx = 0.0;
                         for (std::size_t i = 0; i < d; ++i) {
                           const std::size_t k = r * d + i;
                           if (pg.requires_grad) pg.grad[i] += self.grad[k] * xhat[k];
                           if (pb.requires_grad) pb.grad[i] += self.grad[k];
                           gh[i] = self.grad[k] * pg.value[i];
                           s += gh[i];
                           sx += gh[i] * xhat[k];
                         }
                         if (!px.requires_grad) continue;
                         const double n = static_cast<double>(d);
                         for (std::size_t i = 0; i < d; ++i) {
                           const std::size_t k = r * d + i;
                           px.grad[k] += inv_std[r] * (gh[i] - s / n - xhat[k] * sx / n);
                         }
                       }
                     });
}

Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids) {
  if (table.rank() != 2) throw ConfigError("embedding: table must be 2-D");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= vocab) throw ConfigError("embedding: id " + std::to_string(ids[r]) + " out of range");
    std::copy_n(table.data().data() + ids[r] * d, d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return make_result({ids.size(), d}, std::move(out), {table}, [ids, d](Node& self) {
    Node& p = parent(self, 0);
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (std::size_t i = 0; i < d; ++i) p.grad[ids[r] * d + i] += self.grad[r * d + i];
  });
}

}  // namespace sketchdiff::nn
