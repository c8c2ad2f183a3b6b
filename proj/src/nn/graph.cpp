#include "difflm/nn/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace difflm::nn {

namespace {

template <typename Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MapMat = Eigen::Map<Mat<Real>>;
template <typename Real>
using ConstMapMat = Eigen::Map<const Mat<Real>>;
template <typename Real>
using Strided = Eigen::Map<Mat<Real>, 0, Eigen::OuterStride<>>;
template <typename Real>
using ConstStrided = Eigen::Map<const Mat<Real>, 0, Eigen::OuterStride<>>;

template <typename Real>
MapMat<Real> as_mat(Tensor<Real>& t) {
  return MapMat<Real>(t.data(), static_cast<Eigen::Index>(t.rows()),
                      static_cast<Eigen::Index>(t.cols()));
}

template <typename Real>
ConstMapMat<Real> as_mat(const Tensor<Real>& t) {
  return ConstMapMat<Real>(t.data(), static_cast<Eigen::Index>(t.rows()),
                           static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_to_string(a) +
                              " and " + shape_to_string(b));
}

Shape matrix_shape(size_t rows, size_t cols) { return Shape{rows, cols}; }

template <typename Real>
Real gelu_value(Real x) {
  return Real(0.5) * x * (Real(1) + std::erf(x * Real(M_SQRT1_2)));
}

template <typename Real>
Real gelu_grad(Real x) {
  const Real cdf = Real(0.5) * (Real(1) + std::erf(x * Real(M_SQRT1_2)));
  const Real pdf = std::exp(Real(-0.5) * x * x) * Real(0.5 * M_2_SQRTPI * M_SQRT1_2);
  return cdf + x * pdf;
}

}  // namespace

template <typename Real>
Var Graph<Real>::push(TensorT value, bool requires_grad, std::function<void()> backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = record_ && requires_grad;
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename Real>
typename Graph<Real>::TensorT& Graph<Real>::grad_ref(Var v) {
  Node& node = nodes_[v.id];
  if (node.grad.empty() && !node.value.empty()) node.grad = TensorT(node.value.shape());
  return node.grad;
}

template <typename Real>
typename Graph<Real>::TensorT Graph<Real>::grad(Var v) const {
  const Node& node = nodes_.at(v.id);
  if (node.grad.empty()) return TensorT(node.value.shape());
  return node.grad;
}

template <typename Real>
Var Graph<Real>::constant(TensorT value) {
  return push(std::move(value), false);
}

template <typename Real>
Var Graph<Real>::parameter(ParameterStore<Real>& store, std::string_view name) {
  const std::string key(name);
  if (auto it = param_cache_.find(key); it != param_cache_.end()) return it->second;
  const size_t index = store.index(name);
  Var v = push(store.entry(index).value, true);
  if (record_) {
    nodes_[v.id].backward = [this, v, &store, index] {
      const TensorT& g = grad_of(v);
      if (g.empty()) return;
      TensorT& target = store.entry(index).grad;
      for (size_t i = 0; i < g.size(); ++i) target[i] += g[i];
    };
  }
  param_cache_.emplace(key, v);
  return v;
}

template <typename Real>
Var Graph<Real>::parameter(const ParameterStore<Real>& store, std::string_view name) {
  const std::string key(name);
  if (auto it = param_cache_.find(key); it != param_cache_.end()) return it->second;
  Var v = push(store.value(name), false);
  param_cache_.emplace(key, v);
  return v;
}

template <typename Real>
void Graph<Real>::backward(Var loss) {
  if (!record_) throw std::logic_error("backward() on a graph built with record=false");
  Node& root = nodes_.at(loss.id);
  if (root.value.size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                shape_to_string(root.value.shape()));
  }
  for (Node& n : nodes_) n.grad = TensorT();
  grad_ref(loss)[0] = Real(1);
  for (size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward();
  }
}

template <typename Real>
Var Graph<Real>::matmul(Var a, Var b) {
  const TensorT& av = value(a);
  const TensorT& bv = value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    shape_error("matmul", av.shape(), bv.shape());
  }
  TensorT out(matrix_shape(av.rows(), bv.cols()));
  as_mat(out).noalias() = as_mat(av) * as_mat(bv);
  return push(std::move(out), needs(a) || needs(b), [this, a, b, self = Var{nodes_.size()}] {
    const auto g = as_mat(grad_of(self));
    if (needs(a)) as_mat(grad_ref(a)).noalias() += g * as_mat(value(b)).transpose();
    if (needs(b)) as_mat(grad_ref(b)).noalias() += as_mat(value(a)).transpose() * g;
  });
}

template <typename Real>
Var Graph<Real>::matmul_nt(Var a, Var b) {
  const TensorT& av = value(a);
  const TensorT& bv = value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.cols()) {
    shape_error("matmul_nt", av.shape(), bv.shape());
  }
  TensorT out(matrix_shape(av.rows(), bv.rows()));
  as_mat(out).noalias() = as_mat(av) * as_mat(bv).transpose();
  return push(std::move(out), needs(a) || needs(b), [this, a, b, self = Var{nodes_.size()}] {
    const auto g = as_mat(grad_of(self));
    if (needs(a)) as_mat(grad_ref(a)).noalias() += g * as_mat(value(b));
    if (needs(b)) as_mat(grad_ref(b)).noalias() += g.transpose() * as_mat(value(a));
  });
}

template <typename Real>
Var Graph<Real>::add(Var a, Var b) {
  const TensorT& av = value(a);
  const TensorT& bv = value(b);
  if (av.shape() != bv.shape()) shape_error("add", av.shape(), bv.shape());
  TensorT out = av;
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return push(std::move(out), needs(a) || needs(b), [this, a, b, self = Var{nodes_.size()}] {
    const TensorT& g = grad_of(self);
    for (Var x : {a, b}) {
      if (!needs(x)) continue;
      TensorT& gx = grad_ref(x);
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

template <typename Real>
Var Graph<Real>::add_bias(Var a, Var bias) {
  const TensorT& av = value(a);
  const TensorT& bv = value(bias);
  if (av.rank() != 2 || bv.size() != av.cols()) shape_error("add_bias", av.shape(), bv.shape());
  TensorT out = av;
  const size_t n = av.rows();
  const size_t m = av.cols();
  for (size_t r = 0; r < n; ++r) {
    for (size_t c = 0; c < m; ++c) out[r * m + c] += bv[c];
  }
  return push(std::move(out), needs(a) || needs(bias),
              [this, a, bias, n, m, self = Var{nodes_.size()}] {
                const TensorT& g = grad_of(self);
                if (needs(a)) {
                  TensorT& ga = grad_ref(a);
                  for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
                if (needs(bias)) {
                  TensorT& gb = grad_ref(bias);
                  for (size_t r = 0; r < n; ++r) {
                    for (size_t c = 0; c < m; ++c) gb[c] += g[r * m + c];
                  }
                }
              });
}

template <typename Real>
Var Graph<Real>::scale(Var a, Real factor) {
  TensorT out = value(a);
  for (size_t i = 0; i < out.size(); ++i) out[i] *= factor;
  return push(std::move(out), needs(a), [this, a, factor, self = Var{nodes_.size()}] {
    const TensorT& g = grad_of(self);
    TensorT& ga = grad_ref(a);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

template <typename Real>
Var Graph<Real>::gelu(Var a) {
  const TensorT& av = value(a);
  TensorT out(av.shape());
  for (size_t i = 0; i < av.size(); ++i) out[i] = gelu_value(av[i]);
  return push(std::move(out), needs(a), [this, a, self = Var{nodes_.size()}] {
    const TensorT& g = grad_of(self);
    const TensorT& x = value(a);
    TensorT& ga = grad_ref(a);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_grad(x[i]);
  });
}

template <typename Real>
Var Graph<Real>::relu(Var a) {
  const TensorT& av = value(a);
  TensorT out(av.shape());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] > Real(0) ? av[i] : Real(0);
  return push(std::move(out), needs(a), [this, a, self = Var{nodes_.size()}] {
    const TensorT& g = grad_of(self);
    const TensorT& x = value(a);
    TensorT& ga = grad_ref(a);
    for (size_t i = 0; i < g.size(); ++i) {
      if (x[i] > Real(0)) ga[i] += g[i];
    }
  });
}

template <typename Real>
Var Graph<Real>::sum(Var a) {
  const TensorT& av = value(a);
  Real total = Real(0);
  for (size_t i = 0; i < av.size(); ++i) total += av[i];
  return push(TensorT(Shape{1}, total), needs(a), [this, a, self = Var{nodes_.size()}] {
    const Real g = grad_of(self)[0];
    TensorT& ga = grad_ref(a);
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

template <typename Real>
Var Graph<Real>::softmax_rows(Var a) {
  const TensorT& av = value(a);
  const size_t n = av.rows();
  const size_t m = av.cols();
  TensorT out(av.shape());
  for (size_t r = 0; r < n; ++r) {
    const Real* x = av.data() + r * m;
    Real* y = out.data() + r * m;
    const Real top = *std::max_element(x, x + m);
    Real total = Real(0);
    for (size_t c = 0; c < m; ++c) {
      y[c] = std::exp(x[c] - top);
      total += y[c];
    }
    for (size_t c = 0; c < m; ++c) y[c] /= total;
  }
  return push(std::move(out), needs(a), [this, a, n, m, self = Var{nodes_.size()}] {
    const TensorT& g = grad_of(self);
    const TensorT& y = value(self);
    TensorT& ga = grad_ref(a);
    for (size_t r = 0; r < n; ++r) {
      Real dot = Real(0);
      for (size_t c = 0; c < m; ++c) dot += g[r * m + c] * y[r * m + c];
      for (size_t c = 0; c < m; ++c) ga[r * m + c] += y[r * m + c] * (g[r * m + c] - dot);
    }
  });
}

template <typename Real>
Var Graph<Real>::log_softmax_rows(Var a, std::span<const uint8_t> enabled) {
  const TensorT& av = value(a);
  const size_t n = av.rows();
  const size_t m = av.cols();
  if (!enabled.empty() && enabled.size() != m) {
    shape_error("log_softmax_rows", av.shape(), Shape{enabled.size()});
  }
  std::vector<uint8_t> on(enabled.begin(), enabled.end());
  if (on.empty()) on.assign(m, 1);
  constexpr Real kNegInf = -std::numeric_limits<Real>::infinity();
  TensorT out(av.shape());
  for (size_t r = 0; r < n; ++r) {
    const Real* x = av.data() + r * m;
    Real* y = out.data() + r * m;
    Real top = kNegInf;
    for (size_t c = 0; c < m; ++c) {
      if (on[c]) top = std::max(top, x[c]);
    }
    Real total = Real(0);
    for (size_t c = 0; c < m; ++c) {
      if (on[c]) total += std::exp(x[c] - top);
    }
    const Real lse = top + std::log(total);
    for (size_t c = 0; c < m; ++c) y[c] = on[c] ? x[c] - lse : kNegInf;
  }
  return push(std::move(out), needs(a),
              [this, a, n, m, on = std::move(on), self = Var{nodes_.size()}] {
                const TensorT& g = grad_of(self);
                const TensorT& y = value(self);
                TensorT& ga = grad_ref(a);
                for (size_t r = 0; r < n; ++r) {
                  Real total = Real(0);
                  for (size_t c = 0; c < m; ++c) {
                    if (on[c]) total += g[r * m + c];
                  }
                  for (size_t c = 0; c < m; ++c) {
                    if (on[c]) ga[r * m + c] += g[r * m + c] - std::exp(y[r * m + c]) * total;
                  }
                }
              });
}

template <typename Real>
Var Graph<Real>::layer_norm(Var x, Var gamma, Var beta, Real eps) {
  const TensorT& xv = value(x);
  const TensorT& gv = value(gamma);
  const TensorT& bv = value(beta);
  const size_t n = xv.rows();
  const size_t m = xv.cols();
  if (gv.size() != m || bv.size() != m) shape_error("layer_norm", xv.shape(), gv.shape());
  auto xhat = std::make_shared<std::vector<Real>>(n * m);
  auto rstd = std::make_shared<std::vector<Real>>(n);
  TensorT out(xv.shape());
  for (size_t r = 0; r < n; ++r) {
    const Real* row = xv.data() + r * m;
    Real mean = Real(0);
    for (size_t c = 0; c < m; ++c) mean += row[c];
    mean /= static_cast<Real>(m);
    Real var = Real(0);
    for (size_t c = 0; c < m; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<Real>(m);
    const Real inv = Real(1) / std::sqrt(var + eps);
    (*rstd)[r] = inv;
    for (size_t c = 0; c < m; ++c) {
      const Real h = (row[c] - mean) * inv;
      (*xhat)[r * m + c] = h;
      out[r * m + c] = gv[c] * h + bv[c];
    }
  }
  return push(std::move(out), needs(x) || needs(gamma) || needs(beta),
              [this, x, gamma, beta, n, m, xhat, rstd, self = Var{nodes_.size()}] {
                const TensorT& g = grad_of(self);
                const TensorT& gv = value(gamma);
                if (needs(gamma) || needs(beta)) {
                  for (size_t r = 0; r < n; ++r) {
                    for (size_t c = 0; c < m; ++c) {
                      if (needs(gamma)) grad_ref(gamma)[c] += g[r * m + c] * (*xhat)[r * m + c];
                      if (needs(beta)) grad_ref(beta)[c] += g[r * m + c];
                    }
                  }
                }
                if (!needs(x)) return;
                TensorT& gx = grad_ref(x);
                const Real inv_m = Real(1) / static_cast<Real>(m);
                for (size_t r = 0; r < n; ++r) {
                  Real mean_d = Real(0);
                  Real mean_dh = Real(0);
                  for (size_t c = 0; c < m; ++c) {
                    const Real d = g[r * m + c] * gv[c];
                    mean_d += d;
                    mean_dh += d * (*xhat)[r * m + c];
                  }
                  mean_d *= inv_m;
                  mean_dh *= inv_m;
                  for (size_t c = 0; c < m; ++c) {
                    const Real d = g[r * m + c] * gv[c];
                    gx[r * m + c] += (*rstd)[r] * (d - mean_d - (*xhat)[r * m + c] * mean_dh);
                  }
                }
              });
}

template <typename Real>
Var Graph<Real>::embedding(Var table, std::span<const int32_t> ids) {
  const TensorT& tv = value(table);
  if (tv.rank() != 2) shape_error("embedding", tv.shape(), Shape{ids.size()});
  const size_t rows = tv.rows();
  const size_t d = tv.cols();
  TensorT out(matrix_shape(ids.size(), d));
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<size_t>(ids[i]) >= rows) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(rows) + " rows");
    }
    std::copy_n(tv.data() + static_cast<size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<int32_t> kept(ids.begin(), ids.end());
  return push(std::move(out), needs(table),
              [this, table, d, kept = std::move(kept), self = Var{nodes_.size()}] {
                const TensorT& g = grad_of(self);
                TensorT& gt = grad_ref(table);
                for (size_t i = 0; i < kept.size(); ++i) {
                  Real* dst = gt.data() + static_cast<size_t>(kept[i]) * d;
                  for (size_t c = 0; c < d; ++c) dst[c] += g[i * d + c];
                }
              });
}

template <typename Real>
Var Graph<Real>::mean_pool(Var x, size_t batch, size_t seq, std::span<const uint8_t> valid) {
  const TensorT& xv = value(x);
  if (xv.rows() != batch * seq || valid.size() != batch * seq) {
    shape_error("mean_pool", xv.shape(), Shape{batch, seq});
  }
  const size_t d = xv.cols();
  std::vector<Real> inv_count(batch);
  TensorT out(matrix_shape(batch, d));
  for (size_t b = 0; b < batch; ++b) {
    size_t count = 0;
    for (size_t s = 0; s < seq; ++s) {
      if (!valid[b * seq + s]) continue;
      ++count;
      const Real* row = xv.data() + (b * seq + s) * d;
      for (size_t c = 0; c < d; ++c) out[b * d + c] += row[c];
    }
    if (count == 0) throw std::invalid_argument("mean_pool: sequence with no valid positions");
    inv_count[b] = Real(1) / static_cast<Real>(count);
    for (size_t c = 0; c < d; ++c) out[b * d + c] *= inv_count[b];
  }
  std::vector<uint8_t> mask(valid.begin(), valid.end());
  return push(std::move(out), needs(x),
              [this, x, batch, seq, d, inv_count = std::move(inv_count), mask = std::move(mask),
               self = Var{nodes_.size()}] {
                const TensorT& g = grad_of(self);
                TensorT& gx = grad_ref(x);
                for (size_t b = 0; b < batch; ++b) {
                  for (size_t s = 0; s < seq; ++s) {
                    if (!mask[b * seq + s]) continue;
                    Real* dst = gx.data() + (b * seq + s) * d;
                    for (size_t c = 0; c < d; ++c) dst[c] += g[b * d + c] * inv_count[b];
                  }
                }
              });
}

template <typename Real>
Var Graph<Real>::self_attention(Var q, Var k, Var v, size_t batch, size_t seq, size_t heads,
                                std::span<const uint8_t> key_valid) {
  const TensorT& qv = value(q);
  const TensorT& kv = value(k);
  const TensorT& vv = value(v);
  if (qv.shape() != kv.shape()) shape_error("self_attention", qv.shape(), kv.shape());
  if (qv.shape() != vv.shape()) shape_error("self_attention", qv.shape(), vv.shape());
  if (qv.rows() != batch * seq || key_valid.size() != batch * seq) {
    shape_error("self_attention", qv.shape(), Shape{batch, seq});
  }
  const size_t d = qv.cols();
  if (heads == 0 || d % heads != 0) {
    throw std::invalid_argument("self_attention: width " + std::to_string(d) +
                                " not divisible by " + std::to_string(heads) + " heads");
  }
  const size_t dh = d / heads;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
  const auto S = static_cast<Eigen::Index>(seq);
  const auto Dh = static_cast<Eigen::Index>(dh);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
  constexpr Real kNegInf = -std::numeric_limits<Real>::infinity();

  auto probs = std::make_shared<std::vector<Real>>(batch * heads * seq * seq);
  TensorT out(qv.shape());
  Mat<Real> scores(S, S);
  for (size_t b = 0; b < batch; ++b) {
    const uint8_t* valid = key_valid.data() + b * seq;
    for (size_t h = 0; h < heads; ++h) {
      const size_t offset = b * seq * d + h * dh;
      ConstStrided<Real> Q(qv.data() + offset, S, Dh, stride);
      ConstStrided<Real> K(kv.data() + offset, S, Dh, stride);
      ConstStrided<Real> V(vv.data() + offset, S, Dh, stride);
      scores.noalias() = (Q * K.transpose()) * scale;
      MapMat<Real> P(probs->data() + (b * heads + h) * seq * seq, S, S);
      for (Eigen::Index i = 0; i < S; ++i) {
        Real top = kNegInf;
        for (Eigen::Index j = 0; j < S; ++j) {
          if (valid[j]) top = std::max(top, scores(i, j));
        }
        Real total = Real(0);
        for (Eigen::Index j = 0; j < S; ++j) {
          const Real e = valid[j] ? std::exp(scores(i, j) - top) : Real(0);
          P(i, j) = e;
          total += e;
        }
        if (total > Real(0)) P.row(i) /= total;
      }
      Strided<Real> O(out.data() + offset, S, Dh, stride);
      O.noalias() = P * V;
    }
  }
  return push(
      std::move(out), needs(q) || needs(k) || needs(v),
      [this, q, k, v, batch, heads, seq, d, dh, scale, probs, self = Var{nodes_.size()}] {
        const auto S = static_cast<Eigen::Index>(seq);
        const auto Dh = static_cast<Eigen::Index>(dh);
        const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
        const TensorT& g = grad_of(self);
        const TensorT& qv = value(q);
        const TensorT& kv = value(k);
        const TensorT& vv = value(v);
        Real* gq = needs(q) ? grad_ref(q).data() : nullptr;
        Real* gk = needs(k) ? grad_ref(k).data() : nullptr;
        Real* gv = needs(v) ? grad_ref(v).data() : nullptr;
        Mat<Real> dP(S, S);
        Mat<Real> dS(S, S);
        for (size_t b = 0; b < batch; ++b) {
          for (size_t h = 0; h < heads; ++h) {
            const size_t offset = b * seq * d + h * dh;
            ConstStrided<Real> Q(qv.data() + offset, S, Dh, stride);
            ConstStrided<Real> K(kv.data() + offset, S, Dh, stride);
            ConstStrided<Real> V(vv.data() + offset, S, Dh, stride);
            ConstStrided<Real> dO(g.data() + offset, S, Dh, stride);
            ConstMapMat<Real> P(probs->data() + (b * heads + h) * seq * seq, S, S);
            if (gv != nullptr) {
              Strided<Real> dV(gv + offset, S, Dh, stride);
              dV.noalias() += P.transpose() * dO;
            }
            if (gq == nullptr && gk == nullptr) continue;
            dP.noalias() = dO * V.transpose();
            for (Eigen::Index i = 0; i < S; ++i) {
              const Real dot = P.row(i).dot(dP.row(i));
              dS.row(i) = (P.row(i).array() * (dP.row(i).array() - dot)).matrix();
            }
            if (gq != nullptr) {
              Strided<Real> dQ(gq + offset, S, Dh, stride);
              dQ.noalias() += (dS * K) * scale;
            }
            if (gk != nullptr) {
              Strided<Real> dK(gk + offset, S, Dh, stride);
              dK.noalias() += (dS.transpose() * Q) * scale;
            }
          }
        }
      });
}

template <typename Real>
Var Graph<Real>::weighted_nll(Var log_probs, std::span<const int32_t> targets,
                              std::span<const Real> weights, Real smoothing) {
  const TensorT& lp = value(log_probs);
  const size_t n = lp.rows();
  const size_t m = lp.cols();
  if (targets.size() != n || weights.size() != n) {
    shape_error("weighted_nll", lp.shape(), Shape{targets.size(), weights.size()});
  }
  if (smoothing < Real(0) || smoothing >= Real(1)) {
    throw std::invalid_argument("weighted_nll: smoothing must lie in [0, 1)");
  }
  Real total = Real(0);
  std::vector<size_t> finite_count(n, 0);
  for (size_t r = 0; r < n; ++r) {
    if (weights[r] == Real(0)) continue;
    if (targets[r] < 0 || static_cast<size_t>(targets[r]) >= m) {
      throw std::out_of_range("weighted_nll: target " + std::to_string(targets[r]) +
                              " outside " + std::to_string(m) + " classes");
    }
    const Real* row = lp.data() + r * m;
    Real term = -(Real(1) - smoothing) * row[targets[r]];
    if (smoothing > Real(0)) {
      Real acc = Real(0);
      size_t count = 0;
      for (size_t c = 0; c < m; ++c) {
        if (std::isfinite(row[c])) {
          acc -= row[c];
          ++count;
        }
      }
      finite_count[r] = count;
      term += smoothing * acc / static_cast<Real>(count);
    }
    total += weights[r] * term;
  }
  std::vector<int32_t> tgt(targets.begin(), targets.end());
  std::vector<Real> w(weights.begin(), weights.end());
  return push(TensorT(Shape{1}, total), needs(log_probs),
              [this, log_probs, n, m, smoothing, tgt = std::move(tgt), w = std::move(w),
               finite_count = std::move(finite_count), self = Var{nodes_.size()}] {
                const Real g = grad_of(self)[0];
                const TensorT& lp = value(log_probs);
                TensorT& gl = grad_ref(log_probs);
                for (size_t r = 0; r < n; ++r) {
                  if (w[r] == Real(0)) continue;
                  gl[r * m + static_cast<size_t>(tgt[r])] -= g * w[r] * (Real(1) - smoothing);
                  if (smoothing == Real(0)) continue;
                  const Real share = g * w[r] * smoothing / static_cast<Real>(finite_count[r]);
                  for (size_t c = 0; c < m; ++c) {
                    if (std::isfinite(lp[r * m + c])) gl[r * m + c] -= share;
                  }
                }
              });
}

template class Graph<float>;
template class Graph<double>;

}  // namespace difflm::nn
