#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "longclip/errors.hpp"
#include "longclip/numerics/dense_array.hpp"

namespace longclip::numerics {

enum class Op : std::uint8_t {
  Input,             // differentiable free input (parameter or data)
  IndexInput,        // integral-valued free input (token ids, positions, masks); no gradient
  MatMul,            // [M,K]x[K,N], [B,M,K]x[B,K,N] or [B,M,K]x[K,N]
  Transpose,         // swap the last two axes
  Add,
  Sub,
  Mul,               // elementwise, identical shapes
  AddBias,           // [..., N] + [N]
  Scale,             // multiply by a constant
  ScaleBy,           // multiply by a scalar node
  Exp,
  Gelu,              // exact erf form
  RowSoftmax,        // over the last axis
  MaskedRowSoftmax,  // [B*H, Q, K] logits, [B, K] key mask; masked keys get -inf
  LayerNorm,         // over the last axis with gain and bias
  Embedding,         // table [V, D] gathered by ids [n]
  GatherRows,        // rows of [N, D] picked by indices [k]
  RowLogSumExp,      // reduces the last axis
  Mean,              // full reduction to a scalar
  Sum,
  Reshape,
  Permute,
  RowL2Normalize,
  Diagonal,          // [N, N] -> [N]
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::IndexInput: return "index_input";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::AddBias: return "add_bias";
    case Op::Scale: return "scale";
    case Op::ScaleBy: return "scale_by";
    case Op::Exp: return "exp";
    case Op::Gelu: return "gelu";
    case Op::RowSoftmax: return "row_softmax";
    case Op::MaskedRowSoftmax: return "masked_row_softmax";
    case Op::LayerNorm: return "layer_norm";
    case Op::Embedding: return "embedding";
    case Op::GatherRows: return "gather_rows";
    case Op::RowLogSumExp: return "row_logsumexp";
    case Op::Mean: return "mean";
    case Op::Sum: return "sum";
    case Op::Reshape: return "reshape";
    case Op::Permute: return "permute";
    case Op::RowL2Normalize: return "row_l2_normalize";
    case Op::Diagonal: return "diagonal";
  }
  return "?";
}

// Handle to a node inside one Graph.
struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

struct Node {
  Op op = Op::Input;
  std::string name;
  std::vector<std::size_t> inputs;
  Shape shape;
  double constant = 0.0;           // Scale factor, LayerNorm epsilon
  std::vector<std::size_t> axes;   // Permute order
};

inline constexpr double kLayerNormEpsilon = 1e-5;

// Define-then-run computation graph. Nodes are appended in topological order and
// every builder validates its shape rule immediately, so a constructed graph is
// always structurally consistent. The graph holds no values; see Tape.
class Graph {
 public:
  // RAII name prefix for nodes created while the guard lives.
  class Scope {
   public:
    Scope(Graph& g, std::string prefix) : graph_(&g) { g.scopes_.push_back(std::move(prefix)); }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
    ~Scope() { graph_->scopes_.pop_back(); }

   private:
    Graph* graph_;
  };

  Scope scope(std::string prefix) { return Scope(*this, std::move(prefix)); }

  NodeId input(const std::string& name, Shape shape) { return add_input(Op::Input, name, std::move(shape)); }
  NodeId index_input(const std::string& name, Shape shape) {
    return add_input(Op::IndexInput, name, std::move(shape));
  }

  NodeId matmul(NodeId a, NodeId b) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    Shape out;
    if (sa.size() == 2 && sb.size() == 2) {
      if (sa[1] != sb[0]) fail(Op::MatMul, "inner dimensions differ: " + to_string(sa) + " x " + to_string(sb));
      out = {sa[0], sb[1]};
    } else if (sa.size() == 3 && sb.size() == 3) {
      if (sa[0] != sb[0] || sa[2] != sb[1]) {
        fail(Op::MatMul, "batched shapes incompatible: " + to_string(sa) + " x " + to_string(sb));
      }
      out = {sa[0], sa[1], sb[2]};
    } else if (sa.size() == 3 && sb.size() == 2) {
      if (sa[2] != sb[0]) fail(Op::MatMul, "inner dimensions differ: " + to_string(sa) + " x " + to_string(sb));
      out = {sa[0], sa[1], sb[1]};
    } else {
      fail(Op::MatMul, "unsupported ranks: " + to_string(sa) + " x " + to_string(sb));
    }
    return push(Op::MatMul, {a.index, b.index}, std::move(out));
  }

  NodeId transpose(NodeId a) {
    Shape s = shape(a);
    if (s.size() < 2) fail(Op::Transpose, "needs rank >= 2, got " + to_string(s));
    std::swap(s[s.size() - 1], s[s.size() - 2]);
    return push(Op::Transpose, {a.index}, std::move(s));
  }

  NodeId add(NodeId a, NodeId b) { return binary_same_shape(Op::Add, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary_same_shape(Op::Sub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return binary_same_shape(Op::Mul, a, b); }

  NodeId add_bias(NodeId a, NodeId bias) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(bias);
    if (sa.empty() || sb.size() != 1 || sb[0] != sa.back()) {
      fail(Op::AddBias, "bias " + to_string(sb) + " does not match last axis of " + to_string(sa));
    }
    return push(Op::AddBias, {a.index, bias.index}, sa);
  }

  NodeId scale(NodeId a, double factor) {
    NodeId id = push(Op::Scale, {a.index}, shape(a));
    nodes_[id.index].constant = factor;
    return id;
  }

  NodeId scale_by(NodeId a, NodeId scalar) {
    if (element_count(shape(scalar)) != 1) {
      fail(Op::ScaleBy, "factor must be a single value, got " + to_string(shape(scalar)));
    }
    return push(Op::ScaleBy, {a.index, scalar.index}, shape(a));
  }

  NodeId exp(NodeId a) { return push(Op::Exp, {a.index}, shape(a)); }
  NodeId gelu(NodeId a) { return push(Op::Gelu, {a.index}, shape(a)); }

  NodeId row_softmax(NodeId a) {
    require_rank_at_least(Op::RowSoftmax, a, 1);
    return push(Op::RowSoftmax, {a.index}, shape(a));
  }

  NodeId masked_row_softmax(NodeId logits, NodeId key_mask) {
    const Shape& sl = shape(logits);
    const Shape& sm = shape(key_mask);
    if (sl.size() != 3 || sm.size() != 2 || sm[1] != sl[2] || sl[0] % sm[0] != 0) {
      fail(Op::MaskedRowSoftmax, "logits " + to_string(sl) + " incompatible with key mask " + to_string(sm));
    }
    if (nodes_[key_mask.index].op != Op::IndexInput) {
      fail(Op::MaskedRowSoftmax, "key mask must be an index input");
    }
    return push(Op::MaskedRowSoftmax, {logits.index, key_mask.index}, sl);
  }

  NodeId layer_norm(NodeId a, NodeId gain, NodeId bias, double epsilon = kLayerNormEpsilon) {
    const Shape& sa = shape(a);
    if (sa.empty()) fail(Op::LayerNorm, "needs rank >= 1");
    const Shape want{sa.back()};
    if (shape(gain) != want || shape(bias) != want) {
      fail(Op::LayerNorm, "gain/bias must have shape " + to_string(want));
    }
    NodeId id = push(Op::LayerNorm, {a.index, gain.index, bias.index}, sa);
    nodes_[id.index].constant = epsilon;
    return id;
  }

  NodeId embedding(NodeId table, NodeId ids) {
    const Shape& st = shape(table);
    const Shape& si = shape(ids);
    if (st.size() != 2 || si.size() != 1) {
      fail(Op::Embedding, "table " + to_string(st) + " / ids " + to_string(si) + " have wrong rank");
    }
    if (nodes_[ids.index].op != Op::IndexInput) fail(Op::Embedding, "ids must be an index input");
    return push(Op::Embedding, {table.index, ids.index}, Shape{si[0], st[1]});
  }

  NodeId gather_rows(NodeId a, NodeId indices) {
    const Shape& sa = shape(a);
    const Shape& si = shape(indices);
    if (sa.size() != 2 || si.size() != 1) {
      fail(Op::GatherRows, "source " + to_string(sa) + " / indices " + to_string(si) + " have wrong rank");
    }
    if (nodes_[indices.index].op != Op::IndexInput) fail(Op::GatherRows, "indices must be an index input");
    return push(Op::GatherRows, {a.index, indices.index}, Shape{si[0], sa[1]});
  }

  NodeId row_logsumexp(NodeId a) {
    require_rank_at_least(Op::RowLogSumExp, a, 1);
    Shape s = shape(a);
    s.pop_back();
    return push(Op::RowLogSumExp, {a.index}, std::move(s));
  }

  NodeId mean(NodeId a) { return push(Op::Mean, {a.index}, Shape{}); }
  NodeId sum(NodeId a) { return push(Op::Sum, {a.index}, Shape{}); }

  NodeId reshape(NodeId a, Shape to) {
    if (element_count(to) != element_count(shape(a))) {
      fail(Op::Reshape, "cannot reshape " + to_string(shape(a)) + " to " + to_string(to));
    }
    return push(Op::Reshape, {a.index}, std::move(to));
  }

  NodeId permute(NodeId a, std::vector<std::size_t> axes) {
    const Shape& sa = shape(a);
    std::vector<std::size_t> sorted = axes;
    std::sort(sorted.begin(), sorted.end());
    bool valid = axes.size() == sa.size();
    for (std::size_t i = 0; valid && i < sorted.size(); ++i) valid = sorted[i] == i;
    if (!valid) fail(Op::Permute, "axes are not a permutation of rank " + std::to_string(sa.size()));
    Shape out(sa.size());
    for (std::size_t i = 0; i < axes.size(); ++i) out[i] = sa[axes[i]];
    NodeId id = push(Op::Permute, {a.index}, std::move(out));
    nodes_[id.index].axes = std::move(axes);
    return id;
  }

  NodeId row_l2_normalize(NodeId a) {
    require_rank_at_least(Op::RowL2Normalize, a, 1);
    return push(Op::RowL2Normalize, {a.index}, shape(a));
  }

  NodeId diagonal(NodeId a) {
    const Shape& s = shape(a);
    if (s.size() != 2 || s[0] != s[1]) fail(Op::Diagonal, "needs a square matrix, got " + to_string(s));
    return push(Op::Diagonal, {a.index}, Shape{s[0]});
  }

  void mark_output(NodeId id, const std::string& name) {
    check(id);
    outputs_[name] = id.index;
  }

  // Renames a node; names appear in every structural and numeric diagnostic.
  NodeId label(NodeId id, std::string name) {
    check(id);
    nodes_[id.index].name = std::move(name);
    return id;
  }

  const Node& node(NodeId id) const {
    check(id);
    return nodes_[id.index];
  }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const Shape& shape(NodeId id) const { return node(id).shape; }
  std::size_t size() const noexcept { return nodes_.size(); }

  const std::map<std::string, std::size_t>& outputs() const noexcept { return outputs_; }
  NodeId output(const std::string& name) const {
    auto it = outputs_.find(name);
    if (it == outputs_.end()) throw UsageError("graph has no output named '" + name + "'");
    return NodeId{it->second};
  }

  std::optional<NodeId> find_input(const std::string& name) const {
    auto it = input_index_.find(name);
    if (it == input_index_.end()) return std::nullopt;
    return NodeId{it->second};
  }

  // Names of all free inputs, in creation order.
  std::vector<std::string> input_names() const {
    std::vector<std::string> names;
    for (const Node& n : nodes_) {
      if (n.op == Op::Input || n.op == Op::IndexInput) names.push_back(n.name);
    }
    return names;
  }

 private:
  NodeId add_input(Op op, const std::string& name, Shape shape) {
    if (name.empty()) throw UsageError("graph inputs need a name");
    if (input_index_.count(name)) {
      throw StructuralError(name, "input declared twice");
    }
    for (std::size_t d : shape) {
      if (d == 0) throw StructuralError(name, "zero-sized dimension in " + to_string(shape));
    }
    Node n;
    n.op = op;
    n.name = name;
    n.shape = std::move(shape);
    nodes_.push_back(std::move(n));
    input_index_[name] = nodes_.size() - 1;
    return NodeId{nodes_.size() - 1};
  }

  NodeId binary_same_shape(Op op, NodeId a, NodeId b) {
    if (shape(a) != shape(b)) {
      fail(op, "operand shapes differ: " + to_string(shape(a)) + " vs " + to_string(shape(b)));
    }
    return push(op, {a.index, b.index}, shape(a));
  }

  void require_rank_at_least(Op op, NodeId a, std::size_t rank) {
    if (shape(a).size() < rank) fail(op, "needs rank >= " + std::to_string(rank));
  }

  std::string next_name(Op op) const {
    std::string name;
    for (const auto& s : scopes_) {
      name += s;
      name += '/';
    }
    name += op_name(op);
    name += '#';
    name += std::to_string(nodes_.size());
    return name;
  }

  [[noreturn]] void fail(Op op, const std::string& message) const { throw StructuralError(next_name(op), message); }

  NodeId push(Op op, std::vector<std::size_t> inputs, Shape shape) {
    Node n;
    n.op = op;
    n.name = next_name(op);
    n.inputs = std::move(inputs);
    n.shape = std::move(shape);
    nodes_.push_back(std::move(n));
    return NodeId{nodes_.size() - 1};
  }

  void check(NodeId id) const {
    if (id.index >= nodes_.size()) throw UsageError("node id " + std::to_string(id.index) + " out of range");
  }

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> input_index_;
  std::map<std::string, std::size_t> outputs_;
  std::vector<std::string> scopes_;
};

}  // namespace longclip::numerics
