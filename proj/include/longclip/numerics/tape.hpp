#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "longclip/errors.hpp"
#include "longclip/numerics/dense_array.hpp"
#include "longclip/numerics/graph.hpp"
#include "longclip/numerics/kernels.hpp"

namespace longclip::numerics {

template <typename T>
using Bindings = std::map<std::string, DenseArray<T>>;

template <typename T>
using Gradients = std::map<std::string, DenseArray<T>>;

namespace detail {

// Calls f(k, src) for each flat output offset k of the permuted array and the flat
// offset src of its source element. The innermost output axis runs as a strided loop.
template <typename F>
void for_each_permuted(const Shape& in, const std::vector<std::size_t>& axes, F&& f) {
  const std::size_t rank = in.size();
  if (rank == 0) {
    f(std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out[i] = in[axes[i]];
    stride[i] = in_stride[axes[i]];
  }
  const std::size_t total = element_count(in);
  const std::size_t inner = out[rank - 1], inner_stride = stride[rank - 1];
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < total; k += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(k + j, offset + j * inner_stride);
    for (std::size_t d = rank - 1; d-- > 0;) {
      if (++counter[d] < out[d]) {
        offset += stride[d];
        break;
      }
      offset -= stride[d] * (counter[d] - 1);
      counter[d] = 0;
    }
  }
}

inline std::size_t rows_of(const Shape& s) { return s.empty() ? 1 : element_count(s) / s.back(); }
inline std::size_t cols_of(const Shape& s) { return s.empty() ? 1 : s.back(); }

}  // namespace detail

// Values of one graph evaluation, plus reverse-mode differentiation over them.
// A Tape refers to its Graph, which must outlive it.
template <typename T>
class Tape {
 public:
  explicit Tape(const Graph& graph) : graph_(&graph) {}

  void evaluate(const Bindings<T>& inputs) {
    const auto& nodes = graph_->nodes();
    values_.assign(nodes.size(), DenseArray<T>());
    aux_.assign(nodes.size(), DenseArray<T>());
    evaluated_ = false;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      forward(i, inputs);
      if (!values_[i].all_finite()) {
        throw NumericError(nodes[i].name, std::string("non-finite value produced by ") + op_name(nodes[i].op));
      }
    }
    evaluated_ = true;
  }

  bool evaluated() const noexcept { return evaluated_; }

  const DenseArray<T>& value(NodeId id) const {
    require_evaluated("value");
    return values_.at(id.index);
  }

  const DenseArray<T>& output(const std::string& name) const { return value(graph_->output(name)); }

  Bindings<T> outputs() const {
    require_evaluated("outputs");
    Bindings<T> out;
    for (const auto& [name, index] : graph_->outputs()) out.emplace(name, values_[index]);
    return out;
  }

  // Gradient of a scalar output with respect to every differentiable input.
  Gradients<T> backward(NodeId output) const {
    require_evaluated("backward");
    if (values_.at(output.index).size() != 1) {
      throw UsageError("backward without a seed needs a scalar output; '" + graph_->node(output).name +
                       "' has shape " + to_string(graph_->shape(output)));
    }
    return backward(output, DenseArray<T>(graph_->shape(output), T{1}));
  }

  // Vector-Jacobian product seeded at `output`.
  Gradients<T> backward(NodeId output, const DenseArray<T>& seed) const {
    require_evaluated("backward");
    const auto& nodes = graph_->nodes();
    if (seed.size() != values_.at(output.index).size()) {
      throw UsageError("seed shape " + to_string(seed.shape()) + " does not match output '" +
                       nodes[output.index].name + "' of shape " + to_string(nodes[output.index].shape));
    }
    std::vector<DenseArray<T>> grads(nodes.size());
    std::vector<bool> has(nodes.size(), false);
    grads[output.index] = seed.reshaped(nodes[output.index].shape);
    has[output.index] = true;

    auto acc = [&](std::size_t i) -> DenseArray<T>& {
      if (!has[i]) {
        grads[i] = DenseArray<T>(nodes[i].shape);
        has[i] = true;
      }
      return grads[i];
    };

    for (std::size_t i = output.index + 1; i-- > 0;) {
      if (!has[i]) continue;
      backward_node(i, grads[i], acc);
    }

    Gradients<T> result;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].op != Op::Input) continue;
      result.emplace(nodes[i].name, has[i] ? std::move(grads[i]) : DenseArray<T>(nodes[i].shape));
    }
    return result;
  }

 private:
  void require_evaluated(const char* what) const {
    if (!evaluated_) throw UsageError(std::string(what) + " called before evaluate");
  }

  std::size_t index_at(const DenseArray<T>& ids, std::size_t k, std::size_t limit, const Node& node) const {
    const T v = ids[k];
    if (!(v >= T{0}) || v != std::floor(v) || static_cast<std::size_t>(v) >= limit) {
      throw UsageError("node '" + node.name + "': index " + std::to_string(static_cast<double>(v)) +
                       " outside [0, " + std::to_string(limit) + ")");
    }
    return static_cast<std::size_t>(v);
  }

  void forward(std::size_t i, const Bindings<T>& inputs) {
    const Node& n = graph_->nodes()[i];
    auto in = [&](std::size_t k) -> const DenseArray<T>& { return values_[n.inputs[k]]; };
    DenseArray<T>& out = values_[i];

    switch (n.op) {
      case Op::Input:
      case Op::IndexInput: {
        auto it = inputs.find(n.name);
        if (it == inputs.end()) throw UsageError("input '" + n.name + "' is not bound");
        if (it->second.shape() != n.shape) {
          throw StructuralError(n.name, "bound shape " + to_string(it->second.shape()) + " but declared " +
                                            to_string(n.shape));
        }
        out = it->second;
        return;
      }
      default:
        break;
    }

    out = DenseArray<T>(n.shape);
    T* y = out.data().data();
    switch (n.op) {
      case Op::MatMul: {
        const auto& a = in(0);
        const auto& b = in(1);
        if (a.rank() == 3 && b.rank() == 3) {
          const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), nn = b.dim(2);
          for (std::size_t s = 0; s < batch; ++s) {
            kernels::gemm_acc(a.data().data() + s * m * k, b.data().data() + s * k * nn, y + s * m * nn, m, k, nn);
          }
        } else {
          const std::size_t k = b.dim(0), nn = b.dim(1), m = a.size() / k;
          kernels::gemm_acc(a.data().data(), b.data().data(), y, m, k, nn);
        }
        break;
      }
      case Op::Transpose: {
        const auto& a = in(0);
        const std::size_t r = a.dim(a.rank() - 2), c = a.dim(a.rank() - 1), batch = a.size() / (r * c);
        for (std::size_t s = 0; s < batch; ++s) {
          kernels::transpose(a.data().data() + s * r * c, y + s * r * c, r, c);
        }
        break;
      }
      case Op::Add:
      case Op::Sub:
      case Op::Mul: {
        const T* a = in(0).data().data();
        const T* b = in(1).data().data();
        const std::size_t count = out.size();
        if (n.op == Op::Add) {
          for (std::size_t k = 0; k < count; ++k) y[k] = a[k] + b[k];
        } else if (n.op == Op::Sub) {
          for (std::size_t k = 0; k < count; ++k) y[k] = a[k] - b[k];
        } else {
          for (std::size_t k = 0; k < count; ++k) y[k] = a[k] * b[k];
        }
        break;
      }
      case Op::AddBias: {
        const T* a = in(0).data().data();
        const T* b = in(1).data().data();
        const std::size_t cols = detail::cols_of(n.shape), rows = out.size() / cols;
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = a[r * cols + c] + b[c];
        }
        break;
      }
      case Op::Scale: {
        const T f = static_cast<T>(n.constant);
        const T* a = in(0).data().data();
        for (std::size_t k = 0; k < out.size(); ++k) y[k] = a[k] * f;
        break;
      }
      case Op::ScaleBy: {
        const T f = in(1)[0];
        const T* a = in(0).data().data();
        for (std::size_t k = 0; k < out.size(); ++k) y[k] = a[k] * f;
        break;
      }
      case Op::Exp: {
        const T* a = in(0).data().data();
        for (std::size_t k = 0; k < out.size(); ++k) y[k] = std::exp(a[k]);
        break;
      }
      case Op::Gelu: {
        const T* a = in(0).data().data();
        for (std::size_t k = 0; k < out.size(); ++k) y[k] = kernels::gelu(a[k]);
        break;
      }
      case Op::RowSoftmax: {
        const std::size_t cols = detail::cols_of(n.shape), rows = detail::rows_of(n.shape);
        const T* a = in(0).data().data();
        for (std::size_t r = 0; r < rows; ++r) {
          kernels::softmax_row<T, T>(a + r * cols, y + r * cols, cols, nullptr);
        }
        break;
      }
      case Op::MaskedRowSoftmax: {
        const auto& logits = in(0);
        const auto& mask = in(1);
        const std::size_t bh = logits.dim(0), q = logits.dim(1), k = logits.dim(2);
        const std::size_t heads = bh / mask.dim(0);
        for (std::size_t s = 0; s < bh; ++s) {
          const T* valid = mask.data().data() + (s / heads) * k;
          for (std::size_t r = 0; r < q; ++r) {
            const std::size_t off = (s * q + r) * k;
            kernels::softmax_row(logits.data().data() + off, y + off, k, valid);
          }
        }
        break;
      }
      case Op::LayerNorm: {
        const std::size_t cols = detail::cols_of(n.shape), rows = detail::rows_of(n.shape);
        const T* x = in(0).data().data();
        const T* g = in(1).data().data();
        const T* b = in(2).data().data();
        DenseArray<T> stats({rows, 2});
        const T eps = static_cast<T>(n.constant);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* xr = x + r * cols;
          T mean = 0;
          for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
          mean /= static_cast<T>(cols);
          T var = 0;
          for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
          var /= static_cast<T>(cols);
          const T inv_std = T{1} / std::sqrt(var + eps);
          stats(r, 0) = mean;
          stats(r, 1) = inv_std;
          for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = (xr[c] - mean) * inv_std * g[c] + b[c];
        }
        aux_[i] = std::move(stats);
        break;
      }
      case Op::Embedding:
      case Op::GatherRows: {
        const auto& table = in(0);
        const auto& ids = in(1);
        const std::size_t rows = table.dim(0), cols = table.dim(1);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const std::size_t src = index_at(ids, k, rows, n);
          std::copy_n(table.data().data() + src * cols, cols, y + k * cols);
        }
        break;
      }
      case Op::RowLogSumExp: {
        const auto& a = in(0);
        const std::size_t cols = detail::cols_of(a.shape()), rows = detail::rows_of(a.shape());
        for (std::size_t r = 0; r < rows; ++r) y[r] = kernels::logsumexp_row(a.data().data() + r * cols, cols);
        break;
      }
      case Op::Mean:
      case Op::Sum: {
        const auto& a = in(0);
        T total = 0;
        for (T v : a.data()) total += v;
        y[0] = n.op == Op::Mean ? total / static_cast<T>(a.size()) : total;
        break;
      }
      case Op::Reshape:
        std::copy(in(0).data().begin(), in(0).data().end(), y);
        break;
      case Op::Permute: {
        const T* a = in(0).data().data();
        detail::for_each_permuted(in(0).shape(), n.axes, [&](std::size_t k, std::size_t src) { y[k] = a[src]; });
        break;
      }
      case Op::RowL2Normalize: {
        const std::size_t cols = detail::cols_of(n.shape), rows = detail::rows_of(n.shape);
        const T* a = in(0).data().data();
        DenseArray<T> norms({rows});
        for (std::size_t r = 0; r < rows; ++r) {
          T ss = 0;
          for (std::size_t c = 0; c < cols; ++c) ss += a[r * cols + c] * a[r * cols + c];
          const T norm = std::sqrt(ss);
          if (!(norm > T{0})) throw NumericError(n.name, "cannot normalize a zero vector");
          norms[r] = norm;
          for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = a[r * cols + c] / norm;
        }
        aux_[i] = std::move(norms);
        break;
      }
      case Op::Diagonal: {
        const auto& a = in(0);
        const std::size_t m = a.dim(0);
        for (std::size_t k = 0; k < m; ++k) y[k] = a(k, k);
        break;
      }
      case Op::Input:
      case Op::IndexInput:
        break;
    }
  }

  template <typename Acc>
  void backward_node(std::size_t i, const DenseArray<T>& dy_array, Acc& acc) const {
    const Node& n = graph_->nodes()[i];
    if (n.op == Op::Input || n.op == Op::IndexInput) return;
    auto in = [&](std::size_t k) -> const DenseArray<T>& { return values_[n.inputs[k]]; };
    const T* dy = dy_array.data().data();
    const std::size_t count = dy_array.size();

    switch (n.op) {
      case Op::MatMul: {
        const auto& a = in(0);
        const auto& b = in(1);
        T* da = acc(n.inputs[0]).data().data();
        T* db = acc(n.inputs[1]).data().data();
        if (a.rank() == 3 && b.rank() == 3) {
          const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), nn = b.dim(2);
          for (std::size_t s = 0; s < batch; ++s) {
            const T* as = a.data().data() + s * m * k;
            const T* bs = b.data().data() + s * k * nn;
            const T* ds = dy + s * m * nn;
            kernels::gemm_nt_acc(ds, bs, da + s * m * k, m, nn, k);
            kernels::gemm_tn_acc(as, ds, db + s * k * nn, m, k, nn);
          }
        } else {
          const std::size_t k = b.dim(0), nn = b.dim(1), m = a.size() / k;
          kernels::gemm_nt_acc(dy, b.data().data(), da, m, nn, k);
          kernels::gemm_tn_acc(a.data().data(), dy, db, m, k, nn);
        }
        break;
      }
      case Op::Transpose: {
        const auto& a = in(0);
        const std::size_t r = a.dim(a.rank() - 2), c = a.dim(a.rank() - 1), batch = a.size() / (r * c);
        T* da = acc(n.inputs[0]).data().data();
        for (std::size_t s = 0; s < batch; ++s) {
          const T* g = dy + s * r * c;  // shape [c, r]
          T* d = da + s * r * c;
          for (std::size_t x = 0; x < c; ++x) {
            for (std::size_t z = 0; z < r; ++z) d[z * c + x] += g[x * r + z];
          }
        }
        break;
      }
      case Op::Add:
      case Op::Sub: {
        T* da = acc(n.inputs[0]).data().data();
        for (std::size_t k = 0; k < count; ++k) da[k] += dy[k];
        T* db = acc(n.inputs[1]).data().data();
        if (n.op == Op::Add) {
          for (std::size_t k = 0; k < count; ++k) db[k] += dy[k];
        } else {
          for (std::size_t k = 0; k < count; ++k) db[k] -= dy[k];
        }
        break;
      }
      case Op::Mul: {
        const T* a = in(0).data().data();
        const T* b = in(1).data().data();
        T* da = acc(n.inputs[0]).data().data();
        for (std::size_t k = 0; k < count; ++k) da[k] += dy[k] * b[k];
        T* db = acc(n.inputs[1]).data().data();
        for (std::size_t k = 0; k < count; ++k) db[k] += dy[k] * a[k];
        break;
      }
      case Op::AddBias: {
        const std::size_t cols = detail::cols_of(n.shape), rows = count / cols;
        T* da = acc(n.inputs[0]).data().data();
        for (std::size_t k = 0; k < count; ++k) da[k] += dy[k];
        T* db = acc(n.inputs[1]).data().data();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) db[c] += dy[r * cols + c];
        }
        break;
      }
      case Op::Scale: {
        const T f = static_cast<T>(n.constant);
        T* da = acc(n.inputs[0]).data().data();
        for (std::size_t k = 0; k < count; ++k) da[k] += dy[k] * f;
        break;
      }
      case Op::ScaleBy: {
        const T f = in(1)[0];
        const T* a = in(0).data().data();
        T* da = acc(n.inputs[0]).data().data();
        T dot = 0;
        for (std::size_t k = 0; k < count; ++k) {
          da[k] += dy[k] * f;
          dot += dy[k] * a[k];
        }
        acc(n.inputs[1])[0] += dot;
        break;
      }
      case Op::Exp: {
        const T* y = values_[i].data().data();
        T* da = acc(n.inputs[0]).data().data();
        for (std::size_t k = 0; k < count; ++k) da[k] += dy[k] * y[k];
        break;
      }
      case Op::Gelu: {
        const T* a = in(0).data().data();
        T* da = acc(n.inputs[0]).data().data();
        for (std::size_t k = 0; k < count; ++k) da[k] += dy[k] * kernels::gelu_derivative(a[k]);
        break;
      }
      case Op::RowSoftmax:
      case Op::MaskedRowSoftmax: {
        const std::size_t cols = detail::cols_of(n.shape), rows = count / cols;
        const T* y = values_[i].data().data();
        T* da = acc(n.inputs[0]).data().data();
        for (std::size_t r = 0; r < rows; ++r) {
          kernels::softmax_row_backward(y + r * cols, dy + r * cols, da + r * cols, cols);
        }
        break;
      }
      case Op::LayerNorm: {
        const std::size_t cols = detail::cols_of(n.shape), rows = count / cols;
        const T* x = in(0).data().data();
        const T* g = in(1).data().data();
        const auto& stats = aux_[i];
        T* dx = acc(n.inputs[0]).data().data();
        T* dg = acc(n.inputs[1]).data().data();
        T* db = acc(n.inputs[2]).data().data();
        std::vector<T> xhat(cols), dxhat(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          const T mean = stats(r, 0), inv_std = stats(r, 1);
          T mean_d = 0, mean_dx = 0;
          for (std::size_t c = 0; c < cols; ++c) {
            const T go = dy[r * cols + c];
            xhat[c] = (x[r * cols + c] - mean) * inv_std;
            dxhat[c] = go * g[c];
            dg[c] += go * xhat[c];
            db[c] += go;
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xhat[c];
          }
          mean_d /= static_cast<T>(cols);
          mean_dx /= static_cast<T>(cols);
          for (std::size_t c = 0; c < cols; ++c) {
            dx[r * cols + c] += inv_std * (dxhat[c] - mean_d - xhat[c] * mean_dx);
          }
        }
        break;
      }
      case Op::Embedding:
      case Op::GatherRows: {
        const auto& ids = in(1);
        const std::size_t cols = n.shape[1];
        T* dt = acc(n.inputs[0]).data().data();
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const auto src = static_cast<std::size_t>(ids[k]);
          for (std::size_t c = 0; c < cols; ++c) dt[src * cols + c] += dy[k * cols + c];
        }
        break;
      }
      case Op::RowLogSumExp: {
        const auto& a = in(0);
        const std::size_t cols = detail::cols_of(a.shape()), rows = detail::rows_of(a.shape());
        const T* y = values_[i].data().data();
        T* da = acc(n.inputs[0]).data().data();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            da[r * cols + c] += dy[r] * std::exp(a.data()[r * cols + c] - y[r]);
          }
        }
        break;
      }
      case Op::Mean:
      case Op::Sum: {
        auto& da = acc(n.inputs[0]);
        const T g = n.op == Op::Mean ? dy[0] / static_cast<T>(da.size()) : dy[0];
        for (T& v : da.data()) v += g;
        break;
      }
      case Op::Reshape: {
        T* da = acc(n.inputs[0]).data().data();
        for (std::size_t k = 0; k < count; ++k) da[k] += dy[k];
        break;
      }
      case Op::Permute: {
        T* da = acc(n.inputs[0]).data().data();
        detail::for_each_permuted(in(0).shape(), n.axes, [&](std::size_t k, std::size_t src) { da[src] += dy[k]; });
        break;
      }
      case Op::RowL2Normalize: {
        const std::size_t cols = detail::cols_of(n.shape), rows = count / cols;
        const T* y = values_[i].data().data();
        const auto& norms = aux_[i];
        T* da = acc(n.inputs[0]).data().data();
        for (std::size_t r = 0; r < rows; ++r) {
          T dot = 0;
          for (std::size_t c = 0; c < cols; ++c) dot += y[r * cols + c] * dy[r * cols + c];
          const T inv = T{1} / norms[r];
          for (std::size_t c = 0; c < cols; ++c) {
            da[r * cols + c] += (dy[r * cols + c] - y[r * cols + c] * dot) * inv;
          }
        }
        break;
      }
      case Op::Diagonal: {
        auto& da = acc(n.inputs[0]);
        for (std::size_t k = 0; k < count; ++k) da(k, k) += dy[k];
        break;
      }
      case Op::Input:
      case Op::IndexInput:
        break;
    }
  }

  const Graph* graph_;
  std::vector<DenseArray<T>> values_;
  std::vector<DenseArray<T>> aux_;
  bool evaluated_ = false;
};

// Evaluates the graph and returns every marked output.
template <typename T>
Bindings<T> evaluate(const Graph& graph, const Bindings<T>& inputs) {
  Tape<T> tape(graph);
  tape.evaluate(inputs);
  return tape.outputs();
}

// Central-difference estimate of d(output)/d(param) for a scalar output. Test oracle.
template <typename T>
DenseArray<T> finite_difference_grad(const Graph& graph, const Bindings<T>& inputs, NodeId output,
                                     const std::string& param_name, T h) {
  if (!(h > T{0})) throw UsageError("finite_difference_grad: step must be positive");
  if (element_count(graph.shape(output)) != 1) {
    throw UsageError("finite_difference_grad needs a scalar output; '" + graph.node(output).name + "' has shape " +
                     to_string(graph.shape(output)));
  }
  auto it = inputs.find(param_name);
  if (it == inputs.end()) throw UsageError("finite_difference_grad: no input named '" + param_name + "'");

  Bindings<T> probe = inputs;
  DenseArray<T>& x = probe.at(param_name);
  DenseArray<T> grad(x.shape());
  Tape<T> tape(graph);
  for (std::size_t k = 0; k < x.size(); ++k) {
    const T original = x[k];
    x[k] = original + h;
    tape.evaluate(probe);
    const T plus = tape.value(output)[0];
    x[k] = original - h;
    tape.evaluate(probe);
    const T minus = tape.value(output)[0];
    x[k] = original;
    grad[k] = (plus - minus) / (T{2} * h);
  }
  return grad;
}

}  // namespace longclip::numerics
