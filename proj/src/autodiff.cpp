#include "ldrps/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "ldrps/errors.hpp"
#include "ldrps/simd/kernels.hpp"

namespace ldrps::ad {

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

namespace {

using NodePtr = std::shared_ptr<Node>;

Var make_result(Tensor value, std::vector<NodePtr> inputs, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool req = false;
  for (const auto& in : inputs) req = req || in->requires_grad;
  if (req) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(bw);
  }
  return Var(std::move(node));
}

void accumulate(Node& target, const Tensor& g) {
  if (!target.requires_grad) return;
  Tensor& buf = target.grad_buffer();
  simd::axpy(1.0, g.span(), buf.span());
}

}  // namespace

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

Var detach(const Var& x) { return constant(x.value()); }

void backward(const Var& root) {
  if (!root.requires_grad()) return;
  if (root.value().size() != 1) throw UsageError("backward() requires a one-element root");

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&root.node(), 0}};
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && child->backward && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node().grad_buffer().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // Interior gradients are not needed after propagation.
  for (Node* n : order) {
    if (n != &root.node() && n->backward) n->grad = Tensor();
  }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  simd::axpy(1.0, b.value().span(), out.span());
  return make_result(std::move(out), {a.ptr(), b.ptr()}, [](Node& self) {
    accumulate(*self.inputs[0], self.grad);
    accumulate(*self.inputs[1], self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  simd::axpy(-1.0, b.value().span(), out.span());
  return make_result(std::move(out), {a.ptr(), b.ptr()}, [](Node& self) {
    accumulate(*self.inputs[0], self.grad);
    if (self.inputs[1]->requires_grad) {
      simd::axpy(-1.0, self.grad.span(), self.inputs[1]->grad_buffer().span());
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out(a.shape());
  const auto& av = a.value().vec();
  const auto& bv = b.value().vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(std::move(out), {a.ptr(), b.ptr()}, [](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad) simd::mul_acc(self.grad.span(), nb.value.span(), na.grad_buffer().span());
    if (nb.requires_grad) simd::mul_acc(self.grad.span(), na.value.span(), nb.grad_buffer().span());
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  simd::scale(s, out.span());
  return make_result(std::move(out), {a.ptr()}, [s](Node& self) {
    simd::axpy(s, self.grad.span(), self.inputs[0]->grad_buffer().span());
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.vec()) v += s;
  return make_result(std::move(out), {a.ptr()},
                     [](Node& self) { accumulate(*self.inputs[0], self.grad); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var add_spatial_broadcast(const Var& x, const Var& v) {
  const Shape xs = x.shape(), vs = v.shape();
  if (vs.n != xs.n || vs.c != xs.c || vs.h != 1 || vs.w != 1) {
    throw UsageError("add_spatial_broadcast: " + xs.str() + " + " + vs.str());
  }
  Tensor out = x.value();
  const std::size_t plane = xs.plane();
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const double add = v.value()[static_cast<std::size_t>(n) * xs.c + c];
      double* p = out.data() + (static_cast<std::size_t>(n) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += add;
    }
  }
  return make_result(std::move(out), {x.ptr(), v.ptr()}, [xs, plane](Node& self) {
    accumulate(*self.inputs[0], self.grad);
    Node& nv = *self.inputs[1];
    if (!nv.requires_grad) return;
    Tensor& gv = nv.grad_buffer();
    for (int n = 0; n < xs.n; ++n) {
      for (int c = 0; c < xs.c; ++c) {
        const double* g = self.grad.data() + (static_cast<std::size_t>(n) * xs.c + c) * plane;
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += g[i];
        gv[static_cast<std::size_t>(n) * xs.c + c] += s;
      }
    }
  });
}

Var channel_scale(const Var& x, const Var& p) {
  const Shape xs = x.shape(), ps = p.shape();
  if (ps.n != 1 || ps.c != xs.c || ps.h != 1 || ps.w != 1) {
    throw UsageError("channel_scale: " + xs.str() + " * " + ps.str());
  }
  Tensor out(xs);
  const std::size_t plane = xs.plane();
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const double k = p.value()[static_cast<std::size_t>(c)];
      const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = k * x.value()[off + i];
    }
  }
  return make_result(std::move(out), {x.ptr(), p.ptr()}, [xs, plane](Node& self) {
    Node& nx = *self.inputs[0];
    Node& np = *self.inputs[1];
    for (int n = 0; n < xs.n; ++n) {
      for (int c = 0; c < xs.c; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
        const double* g = self.grad.data() + off;
        if (nx.requires_grad) {
          simd::axpy(np.value[static_cast<std::size_t>(c)], {g, plane},
                     {nx.grad_buffer().data() + off, plane});
        }
        if (np.requires_grad) {
          np.grad_buffer()[static_cast<std::size_t>(c)] += simd::dot({g, plane}, {nx.value.data() + off, plane});
        }
      }
    }
  });
}

namespace {

// Elementwise map with derivative expressed through input x and output y.
template <typename Fwd, typename Deriv>
Var pointwise(const Var& x, Fwd fwd, Deriv deriv) {
  Tensor out(x.shape());
  const auto& xv = x.value().vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(std::move(out), {x.ptr()}, [deriv](Node& self) {
    Node& nx = *self.inputs[0];
    Tensor& gx = nx.grad_buffer();
    const auto& xv = nx.value.vec();
    const auto& yv = self.value.vec();
    const auto& g = self.grad.vec();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
  });
}

}  // namespace

Var silu(const Var& x) {
  return pointwise(
      x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Var tanh(const Var& x) {
  return pointwise(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
  return pointwise(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var log(const Var& x) {
  return pointwise(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var abs(const Var& x) {
  return pointwise(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var clamp(const Var& x, double lo, double hi) {
  return pointwise(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// --------------------------------------------------------------------- layers

namespace {

struct ConvGeom {
  int cin, h, w, cout, k, stride, pad, ho, wo;
  std::size_t rows() const { return static_cast<std::size_t>(cin) * k * k; }
  std::size_t out_plane() const { return static_cast<std::size_t>(ho) * wo; }
};

// Writes the patch matrix of one sample into col[rows x ld] starting at column col0.
void im2col(const ConvGeom& g, const double* x, double* col, std::size_t ld, std::size_t col0) {
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* row = col + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * ld + col0;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* dst = row + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const ConvGeom& g, const double* col, std::size_t ld, std::size_t col0, double* dx) {
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* row =
            col + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * ld + col0;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + static_cast<std::size_t>(oy) * g.wo;
          double* dst = dx + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Samples per GEMM call so that the column count stays reasonably wide.
int chunk_size(const ConvGeom& g, int batch) {
  const std::size_t target = 512;
  const std::size_t per = std::max<std::size_t>(1, g.out_plane());
  return std::clamp(static_cast<int>(target / per), 1, batch);
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Shape xs = x.shape(), ws = w.shape();
  if (ws.c != xs.c || ws.h != ws.w) {
    throw UsageError("conv2d: input " + xs.str() + " incompatible with weight " + ws.str());
  }
  ConvGeom g{xs.c, xs.h, xs.w, ws.n, ws.h, stride, pad, 0, 0};
  g.ho = (xs.h + 2 * pad - g.k) / stride + 1;
  g.wo = (xs.w + 2 * pad - g.k) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw UsageError("conv2d: input " + xs.str() + " too small");
  const bool has_bias = static_cast<bool>(b);
  if (has_bias && (b.shape().c != g.cout || b.value().size() != static_cast<std::size_t>(g.cout))) {
    throw UsageError("conv2d: bias shape " + b.shape().str());
  }

  Tensor out({xs.n, g.cout, g.ho, g.wo});
  const std::size_t rows = g.rows();
  const std::size_t op = g.out_plane();
  const int chunk = chunk_size(g, xs.n);
  std::vector<double> col;
  std::vector<double> res;
  for (int n0 = 0; n0 < xs.n; n0 += chunk) {
    const int cn = std::min(chunk, xs.n - n0);
    const std::size_t ncols = op * static_cast<std::size_t>(cn);
    col.resize(rows * ncols);
    for (int s = 0; s < cn; ++s) im2col(g, x.value().sample(n0 + s), col.data(), ncols, op * s);
    res.resize(static_cast<std::size_t>(g.cout) * ncols);
    simd::gemm({false, false, static_cast<std::size_t>(g.cout), ncols, rows, 1.0, w.value().data(),
                rows, col.data(), ncols, 0.0, res.data(), ncols});
    for (int s = 0; s < cn; ++s) {
      double* dst = out.sample(n0 + s);
      for (int co = 0; co < g.cout; ++co) {
        const double bias = has_bias ? b.value()[static_cast<std::size_t>(co)] : 0.0;
        const double* src = res.data() + static_cast<std::size_t>(co) * ncols + op * s;
        double* d = dst + static_cast<std::size_t>(co) * op;
        for (std::size_t i = 0; i < op; ++i) d[i] = src[i] + bias;
      }
    }
  }

  std::vector<NodePtr> inputs{x.ptr(), w.ptr()};
  if (has_bias) inputs.push_back(b.ptr());
  return make_result(std::move(out), std::move(inputs), [g, has_bias, chunk](Node& self) {
    Node& nx = *self.inputs[0];
    Node& nw = *self.inputs[1];
    const int batch = nx.value.shape().n;
    const std::size_t rows = g.rows();
    const std::size_t op = g.out_plane();
    std::vector<double> col, gout, dcol;
    for (int n0 = 0; n0 < batch; n0 += chunk) {
      const int cn = std::min(chunk, batch - n0);
      const std::size_t ncols = op * static_cast<std::size_t>(cn);
      // gather dOut of the chunk as Cout x ncols
      gout.resize(static_cast<std::size_t>(g.cout) * ncols);
      for (int s = 0; s < cn; ++s) {
        const double* src = self.grad.sample(n0 + s);
        for (int co = 0; co < g.cout; ++co) {
          std::copy(src + static_cast<std::size_t>(co) * op, src + static_cast<std::size_t>(co + 1) * op,
                    gout.data() + static_cast<std::size_t>(co) * ncols + op * s);
        }
      }
      if (nw.requires_grad) {
        col.resize(rows * ncols);
        for (int s = 0; s < cn; ++s) im2col(g, nx.value.sample(n0 + s), col.data(), ncols, op * s);
        simd::gemm({false, true, static_cast<std::size_t>(g.cout), rows, ncols, 1.0, gout.data(),
                    ncols, col.data(), ncols, 1.0, nw.grad_buffer().data(), rows});
      }
      if (has_bias && self.inputs[2]->requires_grad) {
        Tensor& gb = self.inputs[2]->grad_buffer();
        for (int co = 0; co < g.cout; ++co) {
          const double* r = gout.data() + static_cast<std::size_t>(co) * ncols;
          double s = 0.0;
          for (std::size_t i = 0; i < ncols; ++i) s += r[i];
          gb[static_cast<std::size_t>(co)] += s;
        }
      }
      if (nx.requires_grad) {
        dcol.resize(rows * ncols);
        simd::gemm({true, false, rows, ncols, static_cast<std::size_t>(g.cout), 1.0,
                    nw.value.data(), rows, gout.data(), ncols, 0.0, dcol.data(), ncols});
        Tensor& gx = nx.grad_buffer();
        for (int s = 0; s < cn; ++s) col2im(g, dcol.data(), ncols, op * s, gx.sample(n0 + s));
      }
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Shape xs = x.shape(), ws = w.shape();
  const std::size_t in = xs.per_sample();
  if (static_cast<std::size_t>(ws.c) * ws.h * ws.w != in) {
    throw UsageError("linear: input " + xs.str() + " incompatible with weight " + ws.str());
  }
  const std::size_t outf = static_cast<std::size_t>(ws.n);
  Tensor out({xs.n, ws.n, 1, 1});
  simd::gemm({false, true, static_cast<std::size_t>(xs.n), outf, in, 1.0, x.value().data(), in,
              w.value().data(), in, 0.0, out.data(), outf});
  const bool has_bias = static_cast<bool>(b);
  if (has_bias) {
    for (int n = 0; n < xs.n; ++n) {
      simd::axpy(1.0, b.value().span(), {out.sample(n), outf});
    }
  }
  std::vector<NodePtr> inputs{x.ptr(), w.ptr()};
  if (has_bias) inputs.push_back(b.ptr());
  return make_result(std::move(out), std::move(inputs), [in, outf, has_bias](Node& self) {
    Node& nx = *self.inputs[0];
    Node& nw = *self.inputs[1];
    const std::size_t batch = static_cast<std::size_t>(nx.value.shape().n);
    if (nw.requires_grad) {
      simd::gemm({true, false, outf, in, batch, 1.0, self.grad.data(), outf, nx.value.data(), in,
                  1.0, nw.grad_buffer().data(), in});
    }
    if (has_bias && self.inputs[2]->requires_grad) {
      Tensor& gb = self.inputs[2]->grad_buffer();
      for (std::size_t n = 0; n < batch; ++n) {
        simd::axpy(1.0, {self.grad.data() + n * outf, outf}, gb.span());
      }
    }
    if (nx.requires_grad) {
      simd::gemm({false, false, batch, in, outf, 1.0, self.grad.data(), outf, nw.value.data(), in,
                  1.0, nx.grad_buffer().data(), in});
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  const Shape xs = x.shape();
  Tensor out({xs.n, xs.c, xs.h * 2, xs.w * 2});
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int y = 0; y < xs.h * 2; ++y)
        for (int xx = 0; xx < xs.w * 2; ++xx) out.at(n, c, y, xx) = x.value().at(n, c, y / 2, xx / 2);
  return make_result(std::move(out), {x.ptr()}, [xs](Node& self) {
    Tensor& gx = self.inputs[0]->grad_buffer();
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c)
        for (int y = 0; y < xs.h * 2; ++y)
          for (int xx = 0; xx < xs.w * 2; ++xx) gx.at(n, c, y / 2, xx / 2) += self.grad.at(n, c, y, xx);
  });
}

Var embedding(const Var& table, const std::vector<int>& ids) {
  const Shape ts = table.shape();
  const std::size_t dim = ts.per_sample();
  Tensor out({static_cast<int>(ids.size()), ts.c, ts.h, ts.w});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= ts.n) throw UsageError("embedding id out of range");
    std::copy_n(table.value().sample(ids[i]), dim, out.sample(static_cast<int>(i)));
  }
  return make_result(std::move(out), {table.ptr()}, [ids, dim](Node& self) {
    Tensor& gt = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      simd::axpy(1.0, {self.grad.sample(static_cast<int>(i)), dim}, {gt.sample(ids[i]), dim});
    }
  });
}

// ----------------------------------------------------------------- shape ops

Var concat_channels(const Var& a, const Var& b) {
  const Shape as = a.shape(), bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw UsageError("concat_channels: " + as.str() + " vs " + bs.str());
  }
  Tensor out({as.n, as.c + bs.c, as.h, as.w});
  const std::size_t pa = as.per_sample(), pb = bs.per_sample();
  for (int n = 0; n < as.n; ++n) {
    std::copy_n(a.value().sample(n), pa, out.sample(n));
    std::copy_n(b.value().sample(n), pb, out.sample(n) + pa);
  }
  return make_result(std::move(out), {a.ptr(), b.ptr()}, [pa, pb](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const int batch = self.value.shape().n;
    for (int n = 0; n < batch; ++n) {
      const double* g = self.grad.sample(n);
      if (na.requires_grad) simd::axpy(1.0, {g, pa}, {na.grad_buffer().sample(n), pa});
      if (nb.requires_grad) simd::axpy(1.0, {g + pa, pb}, {nb.grad_buffer().sample(n), pb});
    }
  });
}

Var concat_batch(const Var& a, const Var& b) {
  Tensor out = Tensor::concat_batch(a.value(), b.value());
  const std::size_t na = a.value().size();
  return make_result(std::move(out), {a.ptr(), b.ptr()}, [na](Node& self) {
    Node& a = *self.inputs[0];
    Node& b = *self.inputs[1];
    if (a.requires_grad) simd::axpy(1.0, {self.grad.data(), na}, a.grad_buffer().span());
    if (b.requires_grad) {
      simd::axpy(1.0, {self.grad.data() + na, self.grad.size() - na}, b.grad_buffer().span());
    }
  });
}

Var slice_batch(const Var& x, int begin, int count) {
  Tensor out = x.value().slice_batch(begin, count);
  const std::size_t off = static_cast<std::size_t>(begin) * x.shape().per_sample();
  return make_result(std::move(out), {x.ptr()}, [off](Node& self) {
    Tensor& gx = self.inputs[0]->grad_buffer();
    simd::axpy(1.0, self.grad.span(), {gx.data() + off, self.grad.size()});
  });
}

// ----------------------------------------------------------------- reductions

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().vec()) s += v;
  return make_result(Tensor::scalar(s), {x.ptr()}, [](Node& self) {
    Tensor& gx = self.inputs[0]->grad_buffer();
    const double g = self.grad[0];
    for (auto& v : gx.vec()) v += g;
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var mse(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mse");
  const std::size_t n = a.value().size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a.value()[i] - b.value()[i];
    s += d * d;
  }
  return make_result(Tensor::scalar(s / static_cast<double>(n)), {a.ptr(), b.ptr()}, [n](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const double k = 2.0 * self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = k * (na.value[i] - nb.value[i]);
      if (na.requires_grad) na.grad_buffer()[i] += d;
      if (nb.requires_grad) nb.grad_buffer()[i] -= d;
    }
  });
}

Var channel_mean(const Var& x) {
  const Shape xs = x.shape();
  const std::size_t plane = xs.plane();
  Tensor out({xs.n, 1, xs.h, xs.w});
  const double inv = 1.0 / xs.c;
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) simd::axpy(inv, {x.value().data() + (static_cast<std::size_t>(n) * xs.c + c) * plane, plane}, {out.sample(n), plane});
  return make_result(std::move(out), {x.ptr()}, [xs, plane, inv](Node& self) {
    Tensor& gx = self.inputs[0]->grad_buffer();
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c)
        simd::axpy(inv, {self.grad.sample(n), plane}, {gx.data() + (static_cast<std::size_t>(n) * xs.c + c) * plane, plane});
  });
}

Var spatial_mean(const Var& x) {
  const Shape xs = x.shape();
  const std::size_t plane = xs.plane();
  Tensor out({xs.n, xs.c, 1, 1});
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0.0;
    const double* p = x.value().data() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) s += p[j];
    out[i] = s / static_cast<double>(plane);
  }
  return make_result(std::move(out), {x.ptr()}, [plane](Node& self) {
    Tensor& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double g = self.grad[i] / static_cast<double>(plane);
      double* p = gx.data() + i * plane;
      for (std::size_t j = 0; j < plane; ++j) p[j] += g;
    }
  });
}

Var avg_pool(const Var& x, int k) {
  const Shape xs = x.shape();
  if (k <= 0 || xs.h % k != 0 || xs.w % k != 0) {
    throw UsageError("avg_pool: window " + std::to_string(k) + " does not tile " + xs.str());
  }
  Tensor out({xs.n, xs.c, xs.h / k, xs.w / k});
  const double inv = 1.0 / (k * k);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int y = 0; y < xs.h; ++y)
        for (int xx = 0; xx < xs.w; ++xx) out.at(n, c, y / k, xx / k) += inv * x.value().at(n, c, y, xx);
  return make_result(std::move(out), {x.ptr()}, [xs, k, inv](Node& self) {
    Tensor& gx = self.inputs[0]->grad_buffer();
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c)
        for (int y = 0; y < xs.h; ++y)
          for (int xx = 0; xx < xs.w; ++xx) gx.at(n, c, y, xx) += inv * self.grad.at(n, c, y / k, xx / k);
  });
}

}  // namespace ldrps::ad
