#include "core/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ods::ad {

namespace {

bool is_scalar_like(const Tensor& t) { return t.size() == 1; }

void check_finite(const Tensor& t, Op op, NodeId id) {
    if (!t.all_finite()) {
        throw NumericFailure(std::string("non-finite value produced by op '") + op_name(op) +
                             "' at node " + std::to_string(id));
    }
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::AddRow: return "add_row";
        case Op::MatMul: return "matmul";
        case Op::Scale: return "scale";
        case Op::AddConst: return "add_const";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::Relu: return "relu";
        case Op::Tanh: return "tanh";
        case Op::Sigmoid: return "sigmoid";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Abs: return "abs";
        case Op::Sin: return "sin";
        case Op::Clamp01: return "clamp01";
        case Op::SoftmaxRows: return "softmax_rows";
        case Op::NormalizeRows: return "normalize_rows";
        case Op::LayerNormRows: return "layer_norm_rows";
        case Op::ConcatRows: return "concat_rows";
        case Op::ConcatCols: return "concat_cols";
        case Op::SliceCols: return "slice_cols";
        case Op::Transpose: return "transpose";
        case Op::GatherRows: return "gather_rows";
        case Op::RepeatRows: return "repeat_rows";
        case Op::MaxRows: return "max_rows";
        case Op::ScaleRows: return "scale_rows";
        case Op::Custom: return "custom";
    }
    return "?";
}

const Node& Graph::node(NodeId id) const {
    ODS_REQUIRE(id >= 0 && static_cast<size_t>(id) < nodes_.size(), "node id out of range");
    return nodes_[static_cast<size_t>(id)];
}

NodeId Graph::push(Node n) {
    const NodeId id = static_cast<NodeId>(nodes_.size());
    for (NodeId p : n.parents) {
        ODS_REQUIRE(p >= 0 && p < id, "graph parents must precede the node");
    }
    check_finite(n.value, n.op, id);
    nodes_.push_back(std::move(n));
    return id;
}

NodeId Graph::leaf(Tensor v) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    return push(std::move(n));
}

NodeId Graph::binary(Op op, NodeId a, NodeId b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    ODS_REQUIRE(va.same_shape(vb) || is_scalar_like(vb),
                std::string(op_name(op)) + ": shape mismatch " + va.shape_str() + " vs " +
                    vb.shape_str());
    Node n;
    n.op = op;
    n.parents = {a, b};
    n.value = Tensor(va.shape());
    const int64_t sz = va.size();
    const bool bs = !va.same_shape(vb);
    const double* pa = va.data();
    const double* pb = vb.data();
    double* out = n.value.data();
    switch (op) {
        case Op::Add:
            for (int64_t i = 0; i < sz; ++i) out[i] = pa[i] + pb[bs ? 0 : i];
            break;
        case Op::Sub:
            for (int64_t i = 0; i < sz; ++i) out[i] = pa[i] - pb[bs ? 0 : i];
            break;
        case Op::Mul:
            for (int64_t i = 0; i < sz; ++i) out[i] = pa[i] * pb[bs ? 0 : i];
            break;
        case Op::Div:
            for (int64_t i = 0; i < sz; ++i) out[i] = pa[i] / pb[bs ? 0 : i];
            break;
        default: ODS_REQUIRE(false, "not a binary op");
    }
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) { return binary(Op::Add, a, b); }
NodeId Graph::sub(NodeId a, NodeId b) { return binary(Op::Sub, a, b); }
NodeId Graph::mul(NodeId a, NodeId b) { return binary(Op::Mul, a, b); }
NodeId Graph::div(NodeId a, NodeId b) { return binary(Op::Div, a, b); }

NodeId Graph::add_row(NodeId m, NodeId row) {
    const Tensor& vm = value(m);
    const Tensor& vr = value(row);
    const int64_t cols = vm.cols2d();
    ODS_REQUIRE(vr.size() == cols, "add_row: row length must equal matrix columns");
    Node n;
    n.op = Op::AddRow;
    n.parents = {m, row};
    n.value = Tensor(vm.shape());
    const int64_t rows = vm.rows2d();
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) n.value.at(i, j) = vm.at(i, j) + vr[j];
    return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b, bool trans_a, bool trans_b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    const int64_t am = trans_a ? va.cols2d() : va.rows2d();
    const int64_t ak = trans_a ? va.rows2d() : va.cols2d();
    const int64_t bk = trans_b ? vb.cols2d() : vb.rows2d();
    const int64_t bn = trans_b ? vb.rows2d() : vb.cols2d();
    ODS_REQUIRE(ak == bk, "matmul: inner dimensions disagree");
    Node n;
    n.op = Op::MatMul;
    n.parents = {a, b};
    n.iattr0 = trans_a ? 1 : 0;
    n.iattr1 = trans_b ? 1 : 0;
    n.value = Tensor({am, bn});
    auto C = n.value.mat2d();
    auto A = va.mat2d();
    auto B = vb.mat2d();
    if (!trans_a && !trans_b) C.noalias() = A * B;
    else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
    return push(std::move(n));
}

NodeId Graph::unary(Op op, NodeId a, double fattr) {
    const Tensor& va = value(a);
    Node n;
    n.op = op;
    n.parents = {a};
    n.fattr = fattr;
    n.value = Tensor(va.shape());
    const int64_t sz = va.size();
    const double* x = va.data();
    double* y = n.value.data();
    switch (op) {
        case Op::Scale:
            for (int64_t i = 0; i < sz; ++i) y[i] = fattr * x[i];
            break;
        case Op::AddConst:
            for (int64_t i = 0; i < sz; ++i) y[i] = x[i] + fattr;
            break;
        case Op::Relu:
            for (int64_t i = 0; i < sz; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
            break;
        case Op::Tanh:
            for (int64_t i = 0; i < sz; ++i) y[i] = std::tanh(x[i]);
            break;
        case Op::Sigmoid:
            for (int64_t i = 0; i < sz; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
            break;
        case Op::Exp:
            for (int64_t i = 0; i < sz; ++i) y[i] = std::exp(x[i]);
            break;
        case Op::Log:
            for (int64_t i = 0; i < sz; ++i) y[i] = std::log(x[i]);
            break;
        case Op::Abs:
            for (int64_t i = 0; i < sz; ++i) y[i] = std::fabs(x[i]);
            break;
        case Op::Sin:
            for (int64_t i = 0; i < sz; ++i) y[i] = std::sin(x[i]);
            break;
        case Op::Clamp01:
            for (int64_t i = 0; i < sz; ++i) y[i] = std::clamp(x[i], 0.0, 1.0);
            break;
        default: ODS_REQUIRE(false, "not a unary op");
    }
    return push(std::move(n));
}

NodeId Graph::scale(NodeId a, double c) { return unary(Op::Scale, a, c); }
NodeId Graph::add_const(NodeId a, double c) { return unary(Op::AddConst, a, c); }
NodeId Graph::relu(NodeId a) { return unary(Op::Relu, a); }
NodeId Graph::tanh(NodeId a) { return unary(Op::Tanh, a); }
NodeId Graph::sigmoid(NodeId a) { return unary(Op::Sigmoid, a); }
NodeId Graph::exp(NodeId a) { return unary(Op::Exp, a); }
NodeId Graph::log(NodeId a) { return unary(Op::Log, a); }
NodeId Graph::abs(NodeId a) { return unary(Op::Abs, a); }
NodeId Graph::sin(NodeId a) { return unary(Op::Sin, a); }
NodeId Graph::clamp01(NodeId a) { return unary(Op::Clamp01, a); }

NodeId Graph::sum(NodeId a) {
    const Tensor& va = value(a);
    Node n;
    n.op = Op::Sum;
    n.parents = {a};
    double s = 0.0;
    for (int64_t i = 0; i < va.size(); ++i) s += va[i];
    n.value = Tensor::scalar(s);
    return push(std::move(n));
}

NodeId Graph::mean(NodeId a) {
    const Tensor& va = value(a);
    ODS_REQUIRE(va.size() > 0, "mean of empty tensor");
    Node n;
    n.op = Op::Mean;
    n.parents = {a};
    double s = 0.0;
    for (int64_t i = 0; i < va.size(); ++i) s += va[i];
    n.value = Tensor::scalar(s / static_cast<double>(va.size()));
    return push(std::move(n));
}

NodeId Graph::softmax_rows(NodeId a) {
    const Tensor& va = value(a);
    Node n;
    n.op = Op::SoftmaxRows;
    n.parents = {a};
    n.value = Tensor(va.shape());
    const int64_t rows = va.rows2d(), cols = va.cols2d();
    for (int64_t i = 0; i < rows; ++i) {
        double mx = -1e300;
        for (int64_t j = 0; j < cols; ++j) mx = std::max(mx, va.at(i, j));
        double denom = 0.0;
        for (int64_t j = 0; j < cols; ++j) denom += std::exp(va.at(i, j) - mx);
        for (int64_t j = 0; j < cols; ++j) n.value.at(i, j) = std::exp(va.at(i, j) - mx) / denom;
    }
    return push(std::move(n));
}

NodeId Graph::normalize_rows(NodeId a, bool strict, double eps) {
    const Tensor& va = value(a);
    Node n;
    n.op = Op::NormalizeRows;
    n.parents = {a};
    n.iattr0 = strict ? 1 : 0;
    n.fattr = eps;
    n.value = Tensor(va.shape());
    const int64_t rows = va.rows2d(), cols = va.cols2d();
    for (int64_t i = 0; i < rows; ++i) {
        double n2 = 0.0;
        for (int64_t j = 0; j < cols; ++j) n2 += va.at(i, j) * va.at(i, j);
        double denom;
        if (strict) {
            denom = std::sqrt(n2);
            if (denom < 1e-12) {
                throw NumericFailure("normalize_rows: near-zero norm in row " + std::to_string(i));
            }
        } else {
            denom = std::sqrt(n2 + eps * eps);
        }
        for (int64_t j = 0; j < cols; ++j) n.value.at(i, j) = va.at(i, j) / denom;
    }
    return push(std::move(n));
}

NodeId Graph::layer_norm_rows(NodeId x, NodeId gamma, NodeId beta, double eps) {
    const Tensor& vx = value(x);
    const int64_t cols = vx.cols2d();
    ODS_REQUIRE(value(gamma).size() == cols && value(beta).size() == cols,
                "layer_norm_rows: gamma/beta length must equal columns");
    Node n;
    n.op = Op::LayerNormRows;
    n.parents = {x, gamma, beta};
    n.fattr = eps;
    n.value = Tensor(vx.shape());
    const Tensor& g = value(gamma);
    const Tensor& b = value(beta);
    const int64_t rows = vx.rows2d();
    for (int64_t i = 0; i < rows; ++i) {
        double m = 0.0;
        for (int64_t j = 0; j < cols; ++j) m += vx.at(i, j);
        m /= static_cast<double>(cols);
        double var = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            const double c = vx.at(i, j) - m;
            var += c * c;
        }
        var /= static_cast<double>(cols);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int64_t j = 0; j < cols; ++j)
            n.value.at(i, j) = (vx.at(i, j) - m) * inv * g[j] + b[j];
    }
    return push(std::move(n));
}

NodeId Graph::concat_rows(std::span<const NodeId> parts) {
    ODS_REQUIRE(!parts.empty(), "concat_rows: no inputs");
    const int64_t cols = value(parts[0]).cols2d();
    int64_t rows = 0;
    for (NodeId p : parts) {
        ODS_REQUIRE(value(p).cols2d() == cols, "concat_rows: column mismatch");
        rows += value(p).rows2d();
    }
    Node n;
    n.op = Op::ConcatRows;
    n.parents.assign(parts.begin(), parts.end());
    n.value = Tensor({rows, cols});
    int64_t r = 0;
    for (NodeId p : parts) {
        const Tensor& v = value(p);
        std::copy(v.data(), v.data() + v.size(), n.value.data() + r * cols);
        r += v.rows2d();
    }
    return push(std::move(n));
}

NodeId Graph::concat_cols(std::span<const NodeId> parts) {
    ODS_REQUIRE(!parts.empty(), "concat_cols: no inputs");
    const int64_t rows = value(parts[0]).rows2d();
    int64_t cols = 0;
    for (NodeId p : parts) {
        ODS_REQUIRE(value(p).rows2d() == rows, "concat_cols: row mismatch");
        cols += value(p).cols2d();
    }
    Node n;
    n.op = Op::ConcatCols;
    n.parents.assign(parts.begin(), parts.end());
    n.value = Tensor({rows, cols});
    int64_t c0 = 0;
    for (NodeId p : parts) {
        const Tensor& v = value(p);
        const int64_t pc = v.cols2d();
        for (int64_t i = 0; i < rows; ++i)
            for (int64_t j = 0; j < pc; ++j) n.value.at(i, c0 + j) = v.at(i, j);
        c0 += pc;
    }
    return push(std::move(n));
}

NodeId Graph::slice_cols(NodeId a, int64_t c0, int64_t c1) {
    const Tensor& va = value(a);
    ODS_REQUIRE(0 <= c0 && c0 < c1 && c1 <= va.cols2d(), "slice_cols: bad range");
    Node n;
    n.op = Op::SliceCols;
    n.parents = {a};
    n.iattr0 = c0;
    n.iattr1 = c1;
    const int64_t rows = va.rows2d();
    n.value = Tensor({rows, c1 - c0});
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = c0; j < c1; ++j) n.value.at(i, j - c0) = va.at(i, j);
    return push(std::move(n));
}

NodeId Graph::transpose(NodeId a) {
    const Tensor& va = value(a);
    Node n;
    n.op = Op::Transpose;
    n.parents = {a};
    n.value = Tensor({va.cols2d(), va.rows2d()});
    n.value.mat2d() = va.mat2d().transpose();
    return push(std::move(n));
}

NodeId Graph::gather_rows(NodeId a, std::vector<int64_t> rows) {
    const Tensor& va = value(a);
    const int64_t nr = va.rows2d(), cols = va.cols2d();
    for (int64_t r : rows) ODS_REQUIRE(0 <= r && r < nr, "gather_rows: index out of range");
    Node n;
    n.op = Op::GatherRows;
    n.parents = {a};
    n.value = Tensor({static_cast<int64_t>(rows.size()), cols});
    for (size_t i = 0; i < rows.size(); ++i)
        for (int64_t j = 0; j < cols; ++j)
            n.value.at(static_cast<int64_t>(i), j) = va.at(rows[i], j);
    n.indices = std::move(rows);
    return push(std::move(n));
}

NodeId Graph::repeat_rows(NodeId row, int64_t count) {
    const Tensor& v = value(row);
    ODS_REQUIRE(v.rows2d() == 1, "repeat_rows: input must be a single row");
    ODS_REQUIRE(count >= 1, "repeat_rows: count must be positive");
    Node n;
    n.op = Op::RepeatRows;
    n.parents = {row};
    n.iattr0 = count;
    const int64_t cols = v.cols2d();
    n.value = Tensor({count, cols});
    for (int64_t i = 0; i < count; ++i)
        for (int64_t j = 0; j < cols; ++j) n.value.at(i, j) = v[j];
    return push(std::move(n));
}

NodeId Graph::max_rows(NodeId a) {
    const Tensor& va = value(a);
    const int64_t rows = va.rows2d(), cols = va.cols2d();
    ODS_REQUIRE(rows >= 1, "max_rows: empty input");
    Node n;
    n.op = Op::MaxRows;
    n.parents = {a};
    n.value = Tensor({int64_t{1}, cols});
    for (int64_t j = 0; j < cols; ++j) {
        double best = va.at(0, j);
        for (int64_t i = 1; i < rows; ++i) best = std::max(best, va.at(i, j));
        n.value.at(0, j) = best;
    }
    return push(std::move(n));
}

NodeId Graph::scale_rows(NodeId x, NodeId s) {
    const Tensor& vx = value(x);
    const Tensor& vs = value(s);
    const int64_t rows = vx.rows2d(), cols = vx.cols2d();
    ODS_REQUIRE(vs.rank() == 2 && vs.dim(0) == rows && vs.dim(1) == 1,
                "scale_rows: scale must be Nx1 matching rows");
    Node n;
    n.op = Op::ScaleRows;
    n.parents = {x, s};
    n.value = Tensor(vx.shape());
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) n.value.at(i, j) = vx.at(i, j) * vs.at(i, 0);
    return push(std::move(n));
}

NodeId Graph::custom(std::shared_ptr<const CustomOp> op, std::vector<NodeId> parents,
                     Tensor value) {
    ODS_REQUIRE(op != nullptr, "custom: null op");
    Node n;
    n.op = Op::Custom;
    n.parents = std::move(parents);
    n.value = std::move(value);
    n.custom = std::move(op);
    return push(std::move(n));
}

std::vector<Tensor> Graph::backward(NodeId root) const {
    const Node& r = node(root);
    ODS_REQUIRE(r.value.size() == 1, "backward: root must be scalar-shaped");

    std::vector<Tensor> grads(nodes_.size());
    std::vector<char> touched(nodes_.size(), 0);
    auto ensure = [&](NodeId id) -> Tensor& {
        if (!touched[static_cast<size_t>(id)]) {
            grads[static_cast<size_t>(id)] = Tensor(nodes_[static_cast<size_t>(id)].value.shape());
            touched[static_cast<size_t>(id)] = 1;
        }
        return grads[static_cast<size_t>(id)];
    };

    ensure(root)[0] = 1.0;

    for (NodeId id = root; id >= 0; --id) {
        if (!touched[static_cast<size_t>(id)]) continue;
        const Node& n = nodes_[static_cast<size_t>(id)];
        const Tensor& gy = grads[static_cast<size_t>(id)];
        if (!gy.all_finite()) {
            throw NumericFailure(std::string("non-finite gradient at node ") + std::to_string(id) +
                                 " (op '" + op_name(n.op) + "')");
        }
        if (n.op == Op::Leaf) continue;

        switch (n.op) {
            case Op::Add:
            case Op::Sub: {
                const Tensor& va = value(n.parents[0]);
                const Tensor& vb = value(n.parents[1]);
                Tensor& ga = ensure(n.parents[0]);
                Tensor& gb = ensure(n.parents[1]);
                const double sgn = (n.op == Op::Sub) ? -1.0 : 1.0;
                const bool bs = !va.same_shape(vb);
                for (int64_t i = 0; i < gy.size(); ++i) {
                    ga[i] += gy[i];
                    gb[bs ? 0 : i] += sgn * gy[i];
                }
                break;
            }
            case Op::Mul: {
                const Tensor& va = value(n.parents[0]);
                const Tensor& vb = value(n.parents[1]);
                Tensor& ga = ensure(n.parents[0]);
                Tensor& gb = ensure(n.parents[1]);
                const bool bs = !va.same_shape(vb);
                for (int64_t i = 0; i < gy.size(); ++i) {
                    ga[i] += gy[i] * vb[bs ? 0 : i];
                    gb[bs ? 0 : i] += gy[i] * va[i];
                }
                break;
            }
            case Op::Div: {
                const Tensor& va = value(n.parents[0]);
                const Tensor& vb = value(n.parents[1]);
                Tensor& ga = ensure(n.parents[0]);
                Tensor& gb = ensure(n.parents[1]);
                const bool bs = !va.same_shape(vb);
                for (int64_t i = 0; i < gy.size(); ++i) {
                    const double d = vb[bs ? 0 : i];
                    ga[i] += gy[i] / d;
                    gb[bs ? 0 : i] -= gy[i] * va[i] / (d * d);
                }
                break;
            }
            case Op::AddRow: {
                Tensor& gm = ensure(n.parents[0]);
                Tensor& gr = ensure(n.parents[1]);
                const int64_t rows = gy.rows2d(), cols = gy.cols2d();
                for (int64_t i = 0; i < rows; ++i)
                    for (int64_t j = 0; j < cols; ++j) {
                        gm.at(i, j) += gy.at(i, j);
                        gr[j] += gy.at(i, j);
                    }
                break;
            }
            case Op::MatMul: {
                const bool ta = n.iattr0 != 0, tb = n.iattr1 != 0;
                const Tensor& va = value(n.parents[0]);
                const Tensor& vb = value(n.parents[1]);
                Tensor& ga = ensure(n.parents[0]);
                Tensor& gb = ensure(n.parents[1]);
                auto A = va.mat2d();
                auto B = vb.mat2d();
                auto G = gy.mat2d();
                auto GA = ga.mat2d();
                auto GB = gb.mat2d();
                if (!ta && !tb) {
                    GA.noalias() += G * B.transpose();
                    GB.noalias() += A.transpose() * G;
                } else if (ta && !tb) {
                    GA.noalias() += B * G.transpose();
                    GB.noalias() += A * G;
                } else if (!ta && tb) {
                    GA.noalias() += G * B;
                    GB.noalias() += G.transpose() * A;
                } else {
                    GA.noalias() += (G * B).transpose();
                    GB.noalias() += (A * G).transpose();
                }
                break;
            }
            case Op::Scale: {
                Tensor& ga = ensure(n.parents[0]);
                for (int64_t i = 0; i < gy.size(); ++i) ga[i] += n.fattr * gy[i];
                break;
            }
            case Op::AddConst: {
                Tensor& ga = ensure(n.parents[0]);
                for (int64_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
                break;
            }
            case Op::Sum: {
                Tensor& ga = ensure(n.parents[0]);
                const double g = gy[0];
                for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
                break;
            }
            case Op::Mean: {
                Tensor& ga = ensure(n.parents[0]);
                const double g = gy[0] / static_cast<double>(ga.size());
                for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
                break;
            }
            case Op::Relu: {
                const Tensor& x = value(n.parents[0]);
                Tensor& ga = ensure(n.parents[0]);
                for (int64_t i = 0; i < gy.size(); ++i)
                    if (x[i] > 0.0) ga[i] += gy[i];  // subgradient at 0 is 0
                break;
            }
            case Op::Tanh: {
                Tensor& ga = ensure(n.parents[0]);
                for (int64_t i = 0; i < gy.size(); ++i)
                    ga[i] += gy[i] * (1.0 - n.value[i] * n.value[i]);
                break;
            }
            case Op::Sigmoid: {
                Tensor& ga = ensure(n.parents[0]);
                for (int64_t i = 0; i < gy.size(); ++i)
                    ga[i] += gy[i] * n.value[i] * (1.0 - n.value[i]);
                break;
            }
            case Op::Exp: {
                Tensor& ga = ensure(n.parents[0]);
                for (int64_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * n.value[i];
                break;
            }
            case Op::Log: {
                const Tensor& x = value(n.parents[0]);
                Tensor& ga = ensure(n.parents[0]);
                for (int64_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] / x[i];
                break;
            }
            case Op::Abs: {
                const Tensor& x = value(n.parents[0]);
                Tensor& ga = ensure(n.parents[0]);
                for (int64_t i = 0; i < gy.size(); ++i) {
                    if (x[i] > 0.0) ga[i] += gy[i];
                    else if (x[i] < 0.0) ga[i] -= gy[i];
                }
                break;
            }
            case Op::Sin: {
                const Tensor& x = value(n.parents[0]);
                Tensor& ga = ensure(n.parents[0]);
                for (int64_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * std::cos(x[i]);
                break;
            }
            case Op::Clamp01: {
                const Tensor& x = value(n.parents[0]);
                Tensor& ga = ensure(n.parents[0]);
                for (int64_t i = 0; i < gy.size(); ++i)
                    if (x[i] > 0.0 && x[i] < 1.0) ga[i] += gy[i];
                break;
            }
            case Op::SoftmaxRows: {
                Tensor& ga = ensure(n.parents[0]);
                const int64_t rows = gy.rows2d(), cols = gy.cols2d();
                for (int64_t i = 0; i < rows; ++i) {
                    double dot = 0.0;
                    for (int64_t j = 0; j < cols; ++j) dot += gy.at(i, j) * n.value.at(i, j);
                    for (int64_t j = 0; j < cols; ++j)
                        ga.at(i, j) += n.value.at(i, j) * (gy.at(i, j) - dot);
                }
                break;
            }
            case Op::NormalizeRows: {
                const Tensor& x = value(n.parents[0]);
                Tensor& ga = ensure(n.parents[0]);
                const bool strict = n.iattr0 != 0;
                const double eps = n.fattr;
                const int64_t rows = gy.rows2d(), cols = gy.cols2d();
                for (int64_t i = 0; i < rows; ++i) {
                    double n2 = 0.0, dot = 0.0;
                    for (int64_t j = 0; j < cols; ++j) {
                        n2 += x.at(i, j) * x.at(i, j);
                        dot += gy.at(i, j) * x.at(i, j);
                    }
                    const double d2 = strict ? n2 : n2 + eps * eps;
                    const double denom = std::sqrt(d2);
                    const double inv3 = 1.0 / (d2 * denom);
                    for (int64_t j = 0; j < cols; ++j)
                        ga.at(i, j) += gy.at(i, j) / denom - dot * x.at(i, j) * inv3;
                }
                break;
            }
            case Op::LayerNormRows: {
                const Tensor& x = value(n.parents[0]);
                const Tensor& g = value(n.parents[1]);
                Tensor& gx = ensure(n.parents[0]);
                Tensor& gg = ensure(n.parents[1]);
                Tensor& gb = ensure(n.parents[2]);
                const double eps = n.fattr;
                const int64_t rows = gy.rows2d(), cols = gy.cols2d();
                const double nc = static_cast<double>(cols);
                for (int64_t i = 0; i < rows; ++i) {
                    double m = 0.0;
                    for (int64_t j = 0; j < cols; ++j) m += x.at(i, j);
                    m /= nc;
                    double var = 0.0;
                    for (int64_t j = 0; j < cols; ++j) {
                        const double c = x.at(i, j) - m;
                        var += c * c;
                    }
                    var /= nc;
                    const double inv = 1.0 / std::sqrt(var + eps);
                    // gxh = gy * gamma ; gx = inv*(gxh - mean(gxh) - xh*mean(gxh*xh))
                    double mean_gxh = 0.0, mean_gxh_xh = 0.0;
                    for (int64_t j = 0; j < cols; ++j) {
                        const double xh = (x.at(i, j) - m) * inv;
                        const double gxh = gy.at(i, j) * g[j];
                        mean_gxh += gxh;
                        mean_gxh_xh += gxh * xh;
                        gg[j] += gy.at(i, j) * xh;
                        gb[j] += gy.at(i, j);
                    }
                    mean_gxh /= nc;
                    mean_gxh_xh /= nc;
                    for (int64_t j = 0; j < cols; ++j) {
                        const double xh = (x.at(i, j) - m) * inv;
                        const double gxh = gy.at(i, j) * g[j];
                        gx.at(i, j) += inv * (gxh - mean_gxh - xh * mean_gxh_xh);
                    }
                }
                break;
            }
            case Op::ConcatRows: {
                int64_t r = 0;
                const int64_t cols = gy.cols2d();
                for (NodeId p : n.parents) {
                    Tensor& gp = ensure(p);
                    const int64_t pr = gp.rows2d();
                    for (int64_t i = 0; i < pr; ++i)
                        for (int64_t j = 0; j < cols; ++j) gp.at(i, j) += gy.at(r + i, j);
                    r += pr;
                }
                break;
            }
            case Op::ConcatCols: {
                int64_t c = 0;
                const int64_t rows = gy.rows2d();
                for (NodeId p : n.parents) {
                    Tensor& gp = ensure(p);
                    const int64_t pc = gp.cols2d();
                    for (int64_t i = 0; i < rows; ++i)
                        for (int64_t j = 0; j < pc; ++j) gp.at(i, j) += gy.at(i, c + j);
                    c += pc;
                }
                break;
            }
            case Op::SliceCols: {
                Tensor& ga = ensure(n.parents[0]);
                const int64_t rows = gy.rows2d(), cols = gy.cols2d();
                for (int64_t i = 0; i < rows; ++i)
                    for (int64_t j = 0; j < cols; ++j) ga.at(i, n.iattr0 + j) += gy.at(i, j);
                break;
            }
            case Op::Transpose: {
                Tensor& ga = ensure(n.parents[0]);
                ga.mat2d() += gy.mat2d().transpose();
                break;
            }
            case Op::GatherRows: {
                Tensor& ga = ensure(n.parents[0]);
                const int64_t cols = gy.cols2d();
                for (size_t i = 0; i < n.indices.size(); ++i)
                    for (int64_t j = 0; j < cols; ++j)
                        ga.at(n.indices[i], j) += gy.at(static_cast<int64_t>(i), j);
                break;
            }
            case Op::RepeatRows: {
                Tensor& ga = ensure(n.parents[0]);
                const int64_t rows = gy.rows2d(), cols = gy.cols2d();
                for (int64_t i = 0; i < rows; ++i)
                    for (int64_t j = 0; j < cols; ++j) ga[j] += gy.at(i, j);
                break;
            }
            case Op::MaxRows: {
                const Tensor& x = value(n.parents[0]);
                Tensor& ga = ensure(n.parents[0]);
                const int64_t rows = x.rows2d(), cols = x.cols2d();
                for (int64_t j = 0; j < cols; ++j) {
                    int64_t arg = 0;
                    double best = x.at(0, j);
                    for (int64_t i = 1; i < rows; ++i) {
                        if (x.at(i, j) > best) {  // ties keep the lowest row
                            best = x.at(i, j);
                            arg = i;
                        }
                    }
                    ga.at(arg, j) += gy.at(0, j);
                }
                break;
            }
            case Op::ScaleRows: {
                const Tensor& x = value(n.parents[0]);
                const Tensor& s = value(n.parents[1]);
                Tensor& gx = ensure(n.parents[0]);
                Tensor& gs = ensure(n.parents[1]);
                const int64_t rows = gy.rows2d(), cols = gy.cols2d();
                for (int64_t i = 0; i < rows; ++i) {
                    double acc = 0.0;
                    for (int64_t j = 0; j < cols; ++j) {
                        gx.at(i, j) += gy.at(i, j) * s.at(i, 0);
                        acc += gy.at(i, j) * x.at(i, j);
                    }
                    gs.at(i, 0) += acc;
                }
                break;
            }
            case Op::Custom: {
                auto grad_of = [&](size_t k) -> Tensor& {
                    ODS_REQUIRE(k < n.parents.size(), "custom backward: bad parent position");
                    return ensure(n.parents[k]);
                };
                n.custom->backward(*this, n, gy, grad_of);
                break;
            }
            case Op::Leaf:
                break;
        }
    }

    // untouched nodes get zero arrays of their own shape
    for (size_t i = 0; i < nodes_.size(); ++i) {
        if (!touched[i]) grads[i] = Tensor(nodes_[i].value.shape());
    }
    return grads;
}

NodeId ParamLeafs::of(const Tensor& t) {
    auto it = map_.find(&t);
    if (it != map_.end()) return it->second;
    const NodeId id = g_->leaf(t);
    map_.emplace(&t, id);
    order_.emplace_back(&t, id);
    return id;
}

}  // namespace ods::ad
