#include "xreg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "xreg/kernels.hpp"

namespace xreg {

namespace {

const kern::Kernels& K() { return kern::kernels(); }

// Packs the transpose of a 2D tensor so gemm inner loops stay contiguous.
Tensor pack_transpose(const Tensor& t) {
  Tensor out({t.cols(), t.rows()});
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) out.data[c * t.rows() + r] = t.data[r * t.cols() + c];
  return out;
}

Tensor gemm_nn(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  const Tensor bt = pack_transpose(b);
  Tensor c({a.rows(), b.cols()});
  const std::size_t n = b.cols(), k = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i);
    double* cr = c.row(i);
    for (std::size_t j = 0; j < n; ++j) cr[j] = K().dot(ar, bt.row(j), k);
  }
  return c;
}

Tensor gemm_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
  Tensor c({a.rows(), b.rows()});
  const std::size_t k = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i);
    double* cr = c.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) cr[j] = K().dot(ar, b.row(j), k);
  }
  return c;
}

// a^T * b for a (k,m), b (k,n).
Tensor gemm_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_tn: inner dimensions differ");
  const Tensor at = pack_transpose(a);
  const Tensor bt = pack_transpose(b);
  Tensor c({a.cols(), b.cols()});
  const std::size_t k = a.rows();
  for (std::size_t i = 0; i < at.rows(); ++i) {
    double* cr = c.row(i);
    for (std::size_t j = 0; j < bt.rows(); ++j) cr[j] = K().dot(at.row(i), bt.row(j), k);
  }
  return c;
}

}  // namespace

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

int Graph::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Graph::emplace(Tensor value, std::vector<int> parents, std::function<void(Graph&, int)> fn) {
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.requires_grad = any_requires(n.parents);
  if (n.requires_grad) n.backprop = std::move(fn);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

bool Graph::any_requires(const std::vector<int>& ids) const {
  for (int id : ids)
    if (nodes_[id].requires_grad) return true;
  return false;
}

Tensor& Graph::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (!n.grad_ready) {
    n.grad = Tensor(n.value.shape);
    n.grad_ready = true;
  }
  return n.grad;
}

const Tensor& Graph::grad(int id) const {
  if (!nodes_[id].grad_ready) throw Error("gradient not computed for node");
  return nodes_[id].grad;
}

const Tensor& Graph::grad_or_empty(int id) const {
  static const Tensor empty;
  return nodes_[id].grad_ready ? nodes_[id].grad : empty;
}

void Graph::accumulate_grad(int id, const Tensor& g) {
  Tensor& buf = grad_buffer(id);
  if (!buf.same_shape(g)) throw ShapeError("gradient shape mismatch");
  K().axpy(buf.data.data(), 1.0, g.data.data(), g.numel());
}

void Graph::backward(int root) {
  if (nodes_[root].value.numel() != 1) throw ShapeError("backward root must be scalar");
  grad_buffer(root).data[0] = 1.0;
  for (int id = root; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad_ready && n.requires_grad && n.backprop) n.backprop(*this, id);
  }
}

// ---------------------------------------------------------------------------
// elementwise

int Graph::add(int a, int b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb)) throw ShapeError("add: shape mismatch");
  Tensor out(va.shape);
  K().add(out.data.data(), va.data.data(), vb.data.data(), out.numel());
  return emplace(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    if (g.nodes_[a].requires_grad)
      K().axpy(g.grad_buffer(a).data.data(), 1.0, go.data.data(), go.numel());
    if (g.nodes_[b].requires_grad)
      K().axpy(g.grad_buffer(b).data.data(), 1.0, go.data.data(), go.numel());
  });
}

int Graph::sub(int a, int b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb)) throw ShapeError("sub: shape mismatch");
  Tensor out(va.shape);
  K().sub(out.data.data(), va.data.data(), vb.data.data(), out.numel());
  return emplace(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    if (g.nodes_[a].requires_grad)
      K().axpy(g.grad_buffer(a).data.data(), 1.0, go.data.data(), go.numel());
    if (g.nodes_[b].requires_grad)
      K().axpy(g.grad_buffer(b).data.data(), -1.0, go.data.data(), go.numel());
  });
}

int Graph::mul(int a, int b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb)) throw ShapeError("mul: shape mismatch");
  Tensor out(va.shape);
  K().mul(out.data.data(), va.data.data(), vb.data.data(), out.numel());
  return emplace(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    const std::size_t n = go.numel();
    if (g.nodes_[a].requires_grad) {
      Tensor tmp(go.shape);
      K().mul(tmp.data.data(), go.data.data(), g.value(b).data.data(), n);
      K().axpy(g.grad_buffer(a).data.data(), 1.0, tmp.data.data(), n);
    }
    if (g.nodes_[b].requires_grad) {
      Tensor tmp(go.shape);
      K().mul(tmp.data.data(), go.data.data(), g.value(a).data.data(), n);
      K().axpy(g.grad_buffer(b).data.data(), 1.0, tmp.data.data(), n);
    }
  });
}

int Graph::scale(int a, double s) {
  const Tensor& va = value(a);
  Tensor out(va.shape);
  K().scale(out.data.data(), va.data.data(), s, out.numel());
  return emplace(std::move(out), {a}, [a, s](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    K().axpy(g.grad_buffer(a).data.data(), s, go.data.data(), go.numel());
  });
}

int Graph::relu(int a) {
  const Tensor& va = value(a);
  Tensor out(va.shape);
  K().relu(out.data.data(), va.data.data(), out.numel());
  return emplace(std::move(out), {a}, [a](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    K().relu_backward(g.grad_buffer(a).data.data(), go.data.data(), g.value(a).data.data(), go.numel());
  });
}

// ---------------------------------------------------------------------------
// linear algebra

int Graph::matmul(int a, int b) {
  Tensor out = gemm_nn(value(a), value(b));
  return emplace(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    if (g.nodes_[a].requires_grad) {
      Tensor da = gemm_nt(go, g.value(b));  // dC * B^T
      K().axpy(g.grad_buffer(a).data.data(), 1.0, da.data.data(), da.numel());
    }
    if (g.nodes_[b].requires_grad) {
      Tensor db = gemm_tn(g.value(a), go);  // A^T * dC
      K().axpy(g.grad_buffer(b).data.data(), 1.0, db.data.data(), db.numel());
    }
  });
}

int Graph::matmul_nt(int a, int b) {
  Tensor out = gemm_nt(value(a), value(b));
  return emplace(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    if (g.nodes_[a].requires_grad) {
      Tensor da = gemm_nn(go, g.value(b));  // dC * B
      K().axpy(g.grad_buffer(a).data.data(), 1.0, da.data.data(), da.numel());
    }
    if (g.nodes_[b].requires_grad) {
      Tensor db = gemm_tn(go, g.value(a));  // dC^T * A
      K().axpy(g.grad_buffer(b).data.data(), 1.0, db.data.data(), db.numel());
    }
  });
}

int Graph::linear(int x, int w, int b) {
  const Tensor& vb = value(b);
  if (vb.ndim() != 1 || vb.dim(0) != value(w).cols()) throw ShapeError("linear: bias shape");
  Tensor out = gemm_nn(value(x), value(w));
  const std::size_t n = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) out.at(r, c) += vb.data[c];
  return emplace(std::move(out), {x, w, b}, [x, w, b](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    if (g.nodes_[x].requires_grad) {
      Tensor dx = gemm_nt(go, g.value(w));
      K().axpy(g.grad_buffer(x).data.data(), 1.0, dx.data.data(), dx.numel());
    }
    if (g.nodes_[w].requires_grad) {
      Tensor dw = gemm_tn(g.value(x), go);
      K().axpy(g.grad_buffer(w).data.data(), 1.0, dw.data.data(), dw.numel());
    }
    if (g.nodes_[b].requires_grad) {
      Tensor& db = g.grad_buffer(b);
      for (std::size_t r = 0; r < go.rows(); ++r)
        K().axpy(db.data.data(), 1.0, go.row(r), go.cols());
    }
  });
}

int Graph::transpose2d(int a) {
  Tensor out = pack_transpose(value(a));
  return emplace(std::move(out), {a}, [a](Graph& g, int self) {
    Tensor gt = pack_transpose(g.grad(self));
    K().axpy(g.grad_buffer(a).data.data(), 1.0, gt.data.data(), gt.numel());
  });
}

// ---------------------------------------------------------------------------
// shape / indexing

int Graph::reshape(int a, std::vector<std::size_t> shape) {
  if (Tensor::numel_of(shape) != value(a).numel()) throw ShapeError("reshape: element count mismatch");
  Tensor out(std::move(shape), value(a).data);
  return emplace(std::move(out), {a}, [a](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    K().axpy(g.grad_buffer(a).data.data(), 1.0, go.data.data(), go.numel());
  });
}

int Graph::slice_cols(int a, std::size_t c0, std::size_t c1) {
  const Tensor& va = value(a);
  if (c1 > va.cols() || c0 >= c1) throw ShapeError("slice_cols: bad range");
  Tensor out({va.rows(), c1 - c0});
  for (std::size_t r = 0; r < va.rows(); ++r)
    std::copy(va.row(r) + c0, va.row(r) + c1, out.row(r));
  return emplace(std::move(out), {a}, [a, c0, c1](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    Tensor& da = g.grad_buffer(a);
    for (std::size_t r = 0; r < go.rows(); ++r)
      K().axpy(da.row(r) + c0, 1.0, go.row(r), c1 - c0);
  });
}

int Graph::concat_cols(const std::vector<int>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: empty");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t cols = 0;
  for (int p : parts) {
    if (value(p).rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += value(p).cols();
  }
  Tensor out({rows, cols});
  std::size_t off = 0;
  for (int p : parts) {
    const Tensor& v = value(p);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(v.row(r), v.row(r) + v.cols(), out.row(r) + off);
    off += v.cols();
  }
  std::vector<int> parents = parts;
  return emplace(std::move(out), parents, [parts](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    std::size_t off = 0;
    for (int p : parts) {
      const std::size_t pc = g.value(p).cols();
      if (g.nodes_[p].requires_grad) {
        Tensor& dp = g.grad_buffer(p);
        for (std::size_t r = 0; r < go.rows(); ++r)
          K().axpy(dp.row(r), 1.0, go.row(r) + off, pc);
      }
      off += pc;
    }
  });
}

int Graph::concat_rows(const std::vector<int>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: empty");
  const std::size_t cols = value(parts[0]).cols();
  std::size_t rows = 0;
  for (int p : parts) {
    if (value(p).cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += value(p).rows();
  }
  Tensor out({rows, cols});
  std::size_t off = 0;
  for (int p : parts) {
    const Tensor& v = value(p);
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + off);
    off += v.numel();
  }
  std::vector<int> parents = parts;
  return emplace(std::move(out), parents, [parts](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    std::size_t off = 0;
    for (int p : parts) {
      const std::size_t n = g.value(p).numel();
      if (g.nodes_[p].requires_grad)
        K().axpy(g.grad_buffer(p).data.data(), 1.0, go.data.data() + off, n);
      off += n;
    }
  });
}

int Graph::gather_rows(int a, std::vector<int> indices) {
  const Tensor& va = value(a);
  Tensor out({indices.size(), va.cols()});
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy(va.row(indices[r]), va.row(indices[r]) + va.cols(), out.row(r));
  return emplace(std::move(out), {a}, [a, idx = std::move(indices)](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    Tensor& da = g.grad_buffer(a);
    for (std::size_t r = 0; r < idx.size(); ++r)
      K().axpy(da.row(idx[r]), 1.0, go.row(r), go.cols());
  });
}

// ---------------------------------------------------------------------------
// reductions / normalizations

int Graph::softmax_rows(int a) {
  const Tensor& va = value(a);
  Tensor out(va.shape);
  const std::size_t n = va.cols();
  for (std::size_t r = 0; r < va.rows(); ++r) {
    const double* x = va.row(r);
    double* y = out.row(r);
    double mx = x[0];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, x[c]);
    for (std::size_t c = 0; c < n; ++c) y[c] = std::exp(x[c] - mx);
    const double denom = K().sum(y, n);
    K().scale(y, y, 1.0 / denom, n);
  }
  return emplace(std::move(out), {a}, [a](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    const Tensor& y = g.value(self);
    Tensor& da = g.grad_buffer(a);
    const std::size_t n = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      const double inner = K().dot(go.row(r), y.row(r), n);
      for (std::size_t c = 0; c < n; ++c)
        da.row(r)[c] += y.row(r)[c] * (go.row(r)[c] - inner);
    }
  });
}

int Graph::l2_normalize_rows(int a, double zero_eps) {
  const Tensor& va = value(a);
  Tensor out(va.shape);
  const std::size_t n = va.cols();
  std::vector<double> norms(va.rows());
  for (std::size_t r = 0; r < va.rows(); ++r) {
    const double sq = K().dot(va.row(r), va.row(r), n);
    if (!(sq > 0.0) && zero_eps <= 0.0) throw ZeroVector("l2_normalize: zero row");
    norms[r] = std::max(std::sqrt(sq), zero_eps);
    K().scale(out.row(r), va.row(r), 1.0 / norms[r], n);
  }
  return emplace(std::move(out), {a}, [a, norms = std::move(norms)](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    const Tensor& y = g.value(self);
    Tensor& da = g.grad_buffer(a);
    const std::size_t n = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      const double inner = K().dot(go.row(r), y.row(r), n);
      for (std::size_t c = 0; c < n; ++c)
        da.row(r)[c] += (go.row(r)[c] - y.row(r)[c] * inner) / norms[r];
    }
  });
}

int Graph::segment_mean(int a, std::vector<int> assignment, std::size_t segments) {
  const Tensor& va = value(a);
  if (assignment.size() != va.rows()) throw ShapeError("segment_mean: assignment size");
  std::vector<double> counts(segments, 0.0);
  for (int s : assignment) {
    if (s < 0 || static_cast<std::size_t>(s) >= segments) throw ShapeError("segment_mean: bad segment id");
    counts[s] += 1.0;
  }
  for (double c : counts)
    if (c == 0.0) throw ShapeError("segment_mean: empty segment");
  Tensor out({segments, va.cols()});
  for (std::size_t r = 0; r < va.rows(); ++r)
    K().axpy(out.row(assignment[r]), 1.0, va.row(r), va.cols());
  for (std::size_t s = 0; s < segments; ++s)
    K().scale(out.row(s), out.row(s), 1.0 / counts[s], va.cols());
  return emplace(std::move(out), {a},
                 [a, assign = std::move(assignment), counts = std::move(counts)](Graph& g, int self) {
                   const Tensor& go = g.grad(self);
                   Tensor& da = g.grad_buffer(a);
                   for (std::size_t r = 0; r < assign.size(); ++r)
                     K().axpy(da.row(r), 1.0 / counts[assign[r]], go.row(assign[r]), go.cols());
                 });
}

int Graph::sum_all(int a) {
  Tensor out({1});
  out.data[0] = K().sum(value(a).data.data(), value(a).numel());
  return emplace(std::move(out), {a}, [a](Graph& g, int self) {
    const double go = g.grad(self).data[0];
    Tensor& da = g.grad_buffer(a);
    for (double& v : da.data) v += go;
  });
}

int Graph::mean_all(int a) {
  const double inv = 1.0 / static_cast<double>(value(a).numel());
  Tensor out({1});
  out.data[0] = K().sum(value(a).data.data(), value(a).numel()) * inv;
  return emplace(std::move(out), {a}, [a, inv](Graph& g, int self) {
    const double go = g.grad(self).data[0] * inv;
    Tensor& da = g.grad_buffer(a);
    for (double& v : da.data) v += go;
  });
}

// ---------------------------------------------------------------------------
// image ops (C,H,W)

namespace {

struct ConvDims {
  std::size_t c, h, w, oc, kh, kw, oh, ow;
  int stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.ndim() != 3 || w.ndim() != 4) throw ShapeError("conv2d: expects (C,H,W) and (OC,C,KH,KW)");
  ConvDims d;
  d.c = x.dim(0);
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.oc = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  if (w.dim(1) != d.c) throw ShapeError("conv2d: channel mismatch");
  d.stride = stride;
  d.pad = pad;
  const long long oh = (static_cast<long long>(d.h) + 2 * pad - static_cast<long long>(d.kh)) / stride + 1;
  const long long ow = (static_cast<long long>(d.w) + 2 * pad - static_cast<long long>(d.kw)) / stride + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: empty output");
  d.oh = static_cast<std::size_t>(oh);
  d.ow = static_cast<std::size_t>(ow);
  return d;
}

Tensor im2col(const Tensor& x, const ConvDims& d) {
  Tensor col({d.oh * d.ow, d.c * d.kh * d.kw});
  for (std::size_t oy = 0; oy < d.oh; ++oy) {
    for (std::size_t ox = 0; ox < d.ow; ++ox) {
      double* dst = col.row(oy * d.ow + ox);
      std::size_t idx = 0;
      for (std::size_t c = 0; c < d.c; ++c) {
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
          const long long iy = static_cast<long long>(oy) * d.stride - d.pad + static_cast<long long>(ky);
          for (std::size_t kx = 0; kx < d.kw; ++kx, ++idx) {
            const long long ix = static_cast<long long>(ox) * d.stride - d.pad + static_cast<long long>(kx);
            dst[idx] = (iy >= 0 && ix >= 0 && iy < static_cast<long long>(d.h) && ix < static_cast<long long>(d.w))
                           ? x.data[(c * d.h + iy) * d.w + ix]
                           : 0.0;
          }
        }
      }
    }
  }
  return col;
}

void col2im_add(const Tensor& col, const ConvDims& d, Tensor& dx) {
  for (std::size_t oy = 0; oy < d.oh; ++oy) {
    for (std::size_t ox = 0; ox < d.ow; ++ox) {
      const double* src = col.row(oy * d.ow + ox);
      std::size_t idx = 0;
      for (std::size_t c = 0; c < d.c; ++c) {
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
          const long long iy = static_cast<long long>(oy) * d.stride - d.pad + static_cast<long long>(ky);
          for (std::size_t kx = 0; kx < d.kw; ++kx, ++idx) {
            const long long ix = static_cast<long long>(ox) * d.stride - d.pad + static_cast<long long>(kx);
            if (iy >= 0 && ix >= 0 && iy < static_cast<long long>(d.h) && ix < static_cast<long long>(d.w))
              dx.data[(c * d.h + iy) * d.w + ix] += src[idx];
          }
        }
      }
    }
  }
}

}  // namespace

int Graph::conv2d(int x, int w, int b, int stride, int pad) {
  const Tensor& vx = value(x);
  const Tensor& vw = value(w);
  const Tensor& vb = value(b);
  const ConvDims d = conv_dims(vx, vw, stride, pad);
  if (vb.ndim() != 1 || vb.dim(0) != d.oc) throw ShapeError("conv2d: bias shape");

  auto col = std::make_shared<Tensor>(im2col(vx, d));
  Tensor wmat({d.oc, d.c * d.kh * d.kw}, vw.data);
  Tensor outmat = gemm_nt(wmat, *col);  // (OC, P)
  for (std::size_t o = 0; o < d.oc; ++o)
    for (std::size_t p = 0; p < d.oh * d.ow; ++p) outmat.row(o)[p] += vb.data[o];
  Tensor out({d.oc, d.oh, d.ow}, std::move(outmat.data));

  return emplace(std::move(out), {x, w, b}, [x, w, b, d, col](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    Tensor gmat({d.oc, d.oh * d.ow}, go.data);
    if (g.nodes_[w].requires_grad) {
      Tensor dw = gemm_nn(gmat, *col);  // (OC, K)
      K().axpy(g.grad_buffer(w).data.data(), 1.0, dw.data.data(), dw.numel());
    }
    if (g.nodes_[b].requires_grad) {
      Tensor& db = g.grad_buffer(b);
      for (std::size_t o = 0; o < d.oc; ++o) db.data[o] += K().sum(gmat.row(o), d.oh * d.ow);
    }
    if (g.nodes_[x].requires_grad) {
      Tensor wmat({d.oc, d.c * d.kh * d.kw}, g.value(w).data);
      Tensor dcol = gemm_tn(gmat, wmat);  // (P, K)
      col2im_add(dcol, d, g.grad_buffer(x));
    }
  });
}

int Graph::avgpool2(int x) {
  const Tensor& vx = value(x);
  if (vx.ndim() != 3 || vx.dim(1) % 2 != 0 || vx.dim(2) % 2 != 0)
    throw ShapeError("avgpool2: needs (C,H,W) with even H, W");
  const std::size_t c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
  Tensor out({c, h / 2, w / 2});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h / 2; ++y)
      for (std::size_t xx = 0; xx < w / 2; ++xx) {
        const double* base = vx.data.data() + (ch * h + 2 * y) * w + 2 * xx;
        out.data[(ch * (h / 2) + y) * (w / 2) + xx] = ((base[0] + base[1]) + (base[w] + base[w + 1])) * 0.25;
      }
  return emplace(std::move(out), {x}, [x, c, h, w](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    Tensor& dx = g.grad_buffer(x);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h / 2; ++y)
        for (std::size_t xx = 0; xx < w / 2; ++xx) {
          const double gv = go.data[(ch * (h / 2) + y) * (w / 2) + xx] * 0.25;
          double* base = dx.data.data() + (ch * h + 2 * y) * w + 2 * xx;
          base[0] += gv;
          base[1] += gv;
          base[w] += gv;
          base[w + 1] += gv;
        }
  });
}

int Graph::upsample_nearest(int x, int factor) {
  const Tensor& vx = value(x);
  if (vx.ndim() != 3 || factor < 1) throw ShapeError("upsample_nearest: needs (C,H,W)");
  const std::size_t c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
  const std::size_t f = static_cast<std::size_t>(factor);
  Tensor out({c, h * f, w * f});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h * f; ++y)
      for (std::size_t xx = 0; xx < w * f; ++xx)
        out.data[(ch * h * f + y) * w * f + xx] = vx.data[(ch * h + y / f) * w + xx / f];
  return emplace(std::move(out), {x}, [x, c, h, w, f](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    Tensor& dx = g.grad_buffer(x);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h * f; ++y)
        for (std::size_t xx = 0; xx < w * f; ++xx)
          dx.data[(ch * h + y / f) * w + xx / f] += go.data[(ch * h * f + y) * w * f + xx];
  });
}

int Graph::resize_bilinear(int x, std::size_t out_h, std::size_t out_w) {
  const Tensor& vx = value(x);
  if (vx.ndim() != 3) throw ShapeError("resize_bilinear: needs (C,H,W)");
  const std::size_t c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);

  struct Taps {
    std::size_t i0, i1;
    double w1;  // weight of i1; i0 gets (1 - w1)
  };
  auto make_taps = [](std::size_t in, std::size_t out) {
    std::vector<Taps> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
      if (src < 0.0) src = 0.0;
      std::size_t i0 = static_cast<std::size_t>(src);
      if (i0 >= in - 1) {
        taps[o] = {in - 1, in - 1, 0.0};
      } else {
        taps[o] = {i0, i0 + 1, src - static_cast<double>(i0)};
      }
    }
    return taps;
  };
  auto ty = std::make_shared<std::vector<Taps>>(make_taps(h, out_h));
  auto tx = std::make_shared<std::vector<Taps>>(make_taps(w, out_w));

  Tensor out({c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = vx.data.data() + ch * h * w;
    double* dst = out.data.data() + ch * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const Taps& a = (*ty)[y];
      for (std::size_t xx = 0; xx < out_w; ++xx) {
        const Taps& b = (*tx)[xx];
        const double v00 = src[a.i0 * w + b.i0], v01 = src[a.i0 * w + b.i1];
        const double v10 = src[a.i1 * w + b.i0], v11 = src[a.i1 * w + b.i1];
        const double top = v00 * (1.0 - b.w1) + v01 * b.w1;
        const double bot = v10 * (1.0 - b.w1) + v11 * b.w1;
        dst[y * out_w + xx] = top * (1.0 - a.w1) + bot * a.w1;
      }
    }
  }
  return emplace(std::move(out), {x}, [x, c, h, w, out_h, out_w, ty, tx](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    Tensor& dx = g.grad_buffer(x);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* d = dx.data.data() + ch * h * w;
      const double* gsrc = go.data.data() + ch * out_h * out_w;
      for (std::size_t y = 0; y < out_h; ++y) {
        const Taps& a = (*ty)[y];
        for (std::size_t xx = 0; xx < out_w; ++xx) {
          const Taps& b = (*tx)[xx];
          const double gv = gsrc[y * out_w + xx];
          d[a.i0 * w + b.i0] += gv * (1.0 - a.w1) * (1.0 - b.w1);
          d[a.i0 * w + b.i1] += gv * (1.0 - a.w1) * b.w1;
          d[a.i1 * w + b.i0] += gv * a.w1 * (1.0 - b.w1);
          d[a.i1 * w + b.i1] += gv * a.w1 * b.w1;
        }
      }
    }
  });
}

int Graph::chw_to_rows(int x) {
  const Tensor& vx = value(x);
  if (vx.ndim() != 3) throw ShapeError("chw_to_rows: needs (C,H,W)");
  const std::size_t c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
  Tensor out({h * w, c});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < h * w; ++p) out.data[p * c + ch] = vx.data[ch * h * w + p];
  return emplace(std::move(out), {x}, [x, c, h, w](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    Tensor& dx = g.grad_buffer(x);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < h * w; ++p) dx.data[ch * h * w + p] += go.data[p * c + ch];
  });
}

// ---------------------------------------------------------------------------
// matching / metric learning

int Graph::pairwise_l2(int a, int b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (va.cols() != vb.cols()) throw ShapeError("pairwise_l2: feature width mismatch");
  Tensor out({va.rows(), vb.rows()});
  for (std::size_t i = 0; i < va.rows(); ++i) {
    double* orow = out.row(i);
    for (std::size_t j = 0; j < vb.rows(); ++j)
      orow[j] = std::sqrt(K().sqdist(va.row(i), vb.row(j), va.cols()));
  }
  return emplace(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    const Tensor& va = g.value(a);
    const Tensor& vb = g.value(b);
    const Tensor& d = g.value(self);
    const std::size_t n = va.cols();
    const bool need_a = g.nodes_[a].requires_grad;
    const bool need_b = g.nodes_[b].requires_grad;
    Tensor* da = need_a ? &g.grad_buffer(a) : nullptr;
    Tensor* db = need_b ? &g.grad_buffer(b) : nullptr;
    for (std::size_t i = 0; i < va.rows(); ++i) {
      for (std::size_t j = 0; j < vb.rows(); ++j) {
        const double gv = go.at(i, j);
        if (gv == 0.0) continue;
        const double dist = d.at(i, j);
        if (dist < 1e-12) continue;  // subgradient 0 at coincident rows
        const double coeff = gv / dist;
        if (need_a) {
          K().axpy(da->row(i), coeff, va.row(i), n);
          K().axpy(da->row(i), -coeff, vb.row(j), n);
        }
        if (need_b) {
          K().axpy(db->row(j), coeff, vb.row(j), n);
          K().axpy(db->row(j), -coeff, va.row(i), n);
        }
      }
    }
  });
}

}  // namespace xreg
