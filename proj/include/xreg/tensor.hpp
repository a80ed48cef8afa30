#pragma once

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "xreg/errors.hpp"

namespace xreg {

// Dense row-major f64 tensor.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), 0.0);
  }
  Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel_of(shape)) throw ShapeError("tensor data does not match shape");
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t v : s) n *= v;
    return n;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }

  // 2D accessors.
  std::size_t rows() const { return shape[0]; }
  std::size_t cols() const { return shape[1]; }
  double* row(std::size_t r) { return data.data() + r * cols(); }
  const double* row(std::size_t r) const { return data.data() + r * cols(); }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
};

// Reverse-mode tape. Build a graph per forward pass; ids are creation-ordered,
// so a single reverse sweep over ids is a valid topological order.
class Graph {
 public:
  int leaf(Tensor value, bool requires_grad = false);

  const Tensor& value(int id) const { return nodes_[id].value; }
  const Tensor& grad(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 and sweeps the tape. Root must be scalar.
  void backward(int root);

  // --- elementwise / arithmetic ---
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int scale(int a, double s);
  int relu(int a);

  // --- linear algebra ---
  int matmul(int a, int b);     // (m,k)x(k,n)
  int matmul_nt(int a, int b);  // (m,k)x(n,k)^T
  int linear(int x, int w, int b);  // x(m,k) * w(k,n) + bias b(n) broadcast over rows
  int transpose2d(int a);

  // --- shape / indexing ---
  int reshape(int a, std::vector<std::size_t> shape);
  int slice_cols(int a, std::size_t c0, std::size_t c1);
  int concat_cols(const std::vector<int>& parts);
  int concat_rows(const std::vector<int>& parts);
  int gather_rows(int a, std::vector<int> indices);

  // --- reductions / normalizations ---
  int softmax_rows(int a);
  // Unit rows; throws ZeroVector on a zero row unless zero_eps > 0, in which
  // case rows below the floor are scaled by 1/zero_eps instead.
  int l2_normalize_rows(int a, double zero_eps = 0.0);
  int segment_mean(int a, std::vector<int> assignment, std::size_t segments);
  int sum_all(int a);
  int mean_all(int a);

  // --- image ops (C,H,W layout) ---
  int conv2d(int x, int w, int b, int stride, int pad);  // w: (OC,C,KH,KW), b: (OC)
  int avgpool2(int x);
  int upsample_nearest(int x, int factor);
  int resize_bilinear(int x, std::size_t out_h, std::size_t out_w);
  int chw_to_rows(int x);  // (C,H,W) -> (H*W, C), row-major over (H,W)

  // --- matching / metric-learning ---
  // dist(i,j) = ||A_i - B_j||_2 over all row pairs.
  int pairwise_l2(int a, int b);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<int> parents;
    std::function<void(Graph&, int)> backprop;
  };

  int emplace(Tensor value, std::vector<int> parents, std::function<void(Graph&, int)> fn);
  Tensor& grad_buffer(int id);
  bool any_requires(const std::vector<int>& ids) const;

  std::vector<Node> nodes_;

  friend class GraphTestPeer;

 public:
  // Internal accumulation hook used by custom ops (loss layer).
  void accumulate_grad(int id, const Tensor& g);
  int custom(Tensor value, std::vector<int> parents, std::function<void(Graph&, int)> fn) {
    return emplace(std::move(value), std::move(parents), std::move(fn));
  }
  const Tensor& grad_or_empty(int id) const;
};

}  // namespace xreg
