#pragma once

#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "core/tensor.hpp"

namespace ods::ad {

using NodeId = int32_t;
constexpr NodeId kNoNode = -1;

enum class Op : uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    AddRow,
    MatMul,
    Scale,
    AddConst,
    Sum,
    Mean,
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Abs,
    Sin,
    Clamp01,
    SoftmaxRows,
    NormalizeRows,
    LayerNormRows,
    ConcatRows,
    ConcatCols,
    SliceCols,
    Transpose,
    GatherRows,
    RepeatRows,
    MaxRows,
    ScaleRows,
    Custom,
};

const char* op_name(Op op);

class Graph;
struct Node;

// Fused operation with a hand-written adjoint. `backward` must accumulate
// (not overwrite) into the tensors handed out by `grad_of`; `grad_of(i)`
// returns the gradient buffer of parents[i], pre-sized and zero-initialised.
class CustomOp {
public:
    virtual ~CustomOp() = default;
    virtual const char* name() const = 0;
    virtual void backward(const Graph& g, const Node& n, const Tensor& grad_out,
                          const std::function<Tensor&(size_t)>& grad_of) const = 0;
};

struct Node {
    Op op = Op::Leaf;
    std::vector<NodeId> parents;
    Tensor value;
    double fattr = 0.0;             // op constant (scale factor, eps, ...)
    int64_t iattr0 = 0, iattr1 = 0; // op integers (slice bounds, flags, ...)
    std::vector<int64_t> indices;   // GatherRows
    std::shared_ptr<const CustomOp> custom;
};

// Define-by-run reverse-differentiable record of array operations. Values are
// computed eagerly at node creation and checked finite. A graph instance is
// confined to one thread; independent graphs may run concurrently.
class Graph {
public:
    Graph() = default;
    void reserve(size_t n) { nodes_.reserve(n); }
    size_t size() const { return nodes_.size(); }

    NodeId leaf(Tensor v);
    NodeId scalar(double v) { return leaf(Tensor::scalar(v)); }

    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId div(NodeId a, NodeId b);
    NodeId add_row(NodeId m, NodeId row);
    NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false);
    NodeId scale(NodeId a, double c);
    NodeId add_const(NodeId a, double c);
    NodeId sum(NodeId a);
    NodeId mean(NodeId a);
    NodeId relu(NodeId a);
    NodeId tanh(NodeId a);
    NodeId sigmoid(NodeId a);
    NodeId exp(NodeId a);
    NodeId log(NodeId a);
    NodeId abs(NodeId a);
    NodeId sin(NodeId a);
    NodeId clamp01(NodeId a);
    NodeId softmax_rows(NodeId a);
    // strict: throws NumericFailure when a row norm falls below 1e-12.
    // safe: y = v / sqrt(|v|^2 + eps^2), well-defined at v = 0.
    NodeId normalize_rows(NodeId a, bool strict, double eps = 1e-8);
    NodeId layer_norm_rows(NodeId x, NodeId gamma, NodeId beta, double eps = 1e-5);
    NodeId concat_rows(std::span<const NodeId> parts);
    NodeId concat_cols(std::span<const NodeId> parts);
    NodeId slice_cols(NodeId a, int64_t c0, int64_t c1);
    NodeId transpose(NodeId a);
    NodeId gather_rows(NodeId a, std::vector<int64_t> rows);
    NodeId repeat_rows(NodeId row, int64_t n);
    NodeId max_rows(NodeId a);
    // row i of x scaled by s[i]; x is NxC, s is Nx1
    NodeId scale_rows(NodeId x, NodeId s);
    // op->name() is recorded; `value` is the op's forward result.
    NodeId custom(std::shared_ptr<const CustomOp> op, std::vector<NodeId> parents, Tensor value);

    const Tensor& value(NodeId id) const { return node(id).value; }
    const Node& node(NodeId id) const;

    // d(root)/d(node) for every node. root must be scalar-shaped. Nodes
    // unreachable from root get zero arrays of their own shape.
    std::vector<Tensor> backward(NodeId root) const;

private:
    NodeId push(Node n);
    NodeId unary(Op op, NodeId a, double fattr = 0.0);
    NodeId binary(Op op, NodeId a, NodeId b);
    std::vector<Node> nodes_;
};

// Creates (and caches) one leaf per distinct parameter tensor, so gradients
// can be routed back to the owning parameter after backward().
class ParamLeafs {
public:
    explicit ParamLeafs(Graph& g) : g_(&g) {}
    NodeId of(const Tensor& t);
    const std::vector<std::pair<const Tensor*, NodeId>>& entries() const { return order_; }

private:
    Graph* g_;
    std::vector<std::pair<const Tensor*, NodeId>> order_;
    std::unordered_map<const Tensor*, NodeId> map_;
};

}  // namespace ods::ad
