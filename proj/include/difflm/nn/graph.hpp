#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "difflm/nn/parameter_store.hpp"
#include "difflm/nn/tensor.hpp"

namespace difflm::nn {

struct Var {
  size_t id = 0;
};

// Reverse-mode tape over 2-D tensors (rows x cols). Nodes are appended in
// evaluation order, so reverse creation order is a valid topological order.
// Broadcasting is limited to adding a row vector to every row.
//
// A graph built with record=false keeps values only and cannot run backward.
template <typename Real>
class Graph {
 public:
  using TensorT = Tensor<Real>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(TensorT value);
  // Leaf bound to a store entry; backward() accumulates into the store's grad.
  Var parameter(ParameterStore<Real>& store, std::string_view name);
  Var parameter(const ParameterStore<Real>& store, std::string_view name);

  const TensorT& value(Var v) const { return nodes_[v.id].value; }
  // Gradient of the last backward() w.r.t. v; zeros if v was not reached.
  TensorT grad(Var v) const;
  size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1; loss must hold a single element.
  void backward(Var loss);

  // (n,k) x (k,m)
  Var matmul(Var a, Var b);
  // (n,k) x (m,k)^T
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  // (n,m) + (m): bias added to every row.
  Var add_bias(Var a, Var bias);
  Var scale(Var a, Real factor);
  Var gelu(Var a);
  Var relu(Var a);
  Var sum(Var a);
  Var softmax_rows(Var a);
  // Row-wise log-softmax; disabled columns (enabled[c] == 0) output -inf and
  // take no probability mass. Empty `enabled` means all columns.
  Var log_softmax_rows(Var a, std::span<const uint8_t> enabled = {});
  Var layer_norm(Var x, Var gamma, Var beta, Real eps = Real(1e-5));
  // Rows of `table` selected by ids.
  Var embedding(Var table, std::span<const int32_t> ids);
  // (batch*seq, d) -> (batch, d), averaging the rows with valid != 0.
  Var mean_pool(Var x, size_t batch, size_t seq, std::span<const uint8_t> valid);
  // Multi-head scaled dot-product attention without causal masking. q, k, v
  // are (batch*seq, d); keys with key_valid == 0 receive no attention.
  Var self_attention(Var q, Var k, Var v, size_t batch, size_t seq, size_t heads,
                     std::span<const uint8_t> key_valid);
  // sum_i w_i * [(1-eps) * -lp[i, y_i] + eps * mean_{c finite} -lp[i, c]]
  // over log-probability rows lp. Rows with zero weight are skipped.
  Var weighted_nll(Var log_probs, std::span<const int32_t> targets,
                   std::span<const Real> weights, Real smoothing = Real(0));

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Var push(TensorT value, bool requires_grad, std::function<void()> backward = {});
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  TensorT& grad_ref(Var v);
  const TensorT& grad_of(Var v) const { return nodes_[v.id].grad; }

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, Var> param_cache_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace difflm::nn
