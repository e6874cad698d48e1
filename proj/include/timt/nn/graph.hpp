#pragma once

#include "timt/common.hpp"

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace timt::nn {

// A named trainable array. Gradients accumulate here across Graph::backward
// calls until the optimizer consumes them.
struct Param {
  std::string name;
  Mat value;
  Mat grad;

  void zero_grad() { grad.setZero(); }
  int64_t count() const { return static_cast<int64_t>(value.size()); }
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

struct AttentionSpec {
  int batch = 1;
  int len_q = 0;
  int len_k = 0;
  int n_heads = 1;
  bool causal = false;
  // per key position, 1 = attendable; size batch*len_k; null = all attendable
  const std::vector<uint8_t>* key_mask = nullptr;
};

struct Conv2DSpec {
  int batch = 1;
  int in_h = 0, in_w = 0, in_ch = 1;
  int out_ch = 0;
  int kernel = 3, stride = 2, pad = 1;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
};

// Reverse-mode tape over Eigen double matrices. Nodes are created eagerly in
// topological order; backward() walks them in reverse. With grad disabled the
// same ops run value-only, which is how teacher forwards stay isolated.
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Var input(Mat v);
  Var param(Param& p);

  const Mat& value(Var v) const { return node(v.id).value; }
  const Mat& grad_of(Var v) const { return node(v.id).grad; }
  double scalar(Var v) const;

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double s);
  Var matmul(Var a, Var b);
  Var add_row(Var x, Var row);  // broadcast a 1 x d row over all rows
  Var relu(Var x);
  Var dropout(Var x, double rate, Rng& rng);
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  Var embed_rows(Var table, const std::vector<int>& ids);
  Var zero_rows(Var x, const std::vector<uint8_t>& keep);
  // group[r] < 0 drops the row; otherwise out.row(group[r]) averages members
  Var group_mean_rows(Var x, const std::vector<int>& group, int n_groups);
  Var attention(Var q, Var k, Var v, const AttentionSpec& spec);
  Var conv2d(Var x, Var kernel, Var bias, const Conv2DSpec& spec);
  Var log_softmax_rows(Var x);
  Var gather_cols(Var x, const std::vector<int>& col);  // R x 1
  Var rows_norm2(Var x);                                // R x 1, Euclidean
  Var rows_sqnorm(Var x);                               // R x 1, squared
  Var weighted_sum(Var x, Vec w);                       // (R x 1, w) -> 1 x 1
  Var sum_all(Var x);

  void backward(Var loss);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;  // allocated lazily
    bool needs_grad = false;
    Param* leaf = nullptr;
    std::function<void(Graph&, int)> back;
  };

  Node& node(int id) { return nodes_[id]; }
  const Node& node(int id) const { return nodes_[id]; }
  int new_node(Mat value, bool needs_grad);
  bool needs(Var v) const { return node(v.id).needs_grad; }
  // accumulate into a node's grad, allocating zeros on first touch
  void acc(int id, const Mat& g);
  Mat& grad_buf(int id);

  std::vector<Node> nodes_;
  std::unordered_map<const Param*, int> param_nodes_;
  bool grad_enabled_;
};

}  // namespace timt::nn
