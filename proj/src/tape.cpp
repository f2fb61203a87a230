#include "ksim/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ksim {

namespace {

std::string shape_str(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void require(bool ok, Primitive p, const std::string& detail) {
    if (!ok) throw DimensionError(primitive_name(p), detail);
}

}  // namespace

const char* primitive_name(Primitive p) {
    switch (p) {
        case Primitive::leaf: return "leaf";
        case Primitive::matmul: return "matmul";
        case Primitive::matmul_nt: return "matmul_nt";
        case Primitive::bias_add: return "bias_add";
        case Primitive::relu: return "relu";
        case Primitive::row_normalize: return "row_normalize";
        case Primitive::log_sum_exp: return "log_sum_exp";
        case Primitive::gather: return "gather";
        case Primitive::scale: return "scale";
        case Primitive::add: return "add";
        case Primitive::exp: return "exp";
        case Primitive::abs: return "abs";
        case Primitive::row_sum: return "row_sum";
        case Primitive::clip_rows: return "clip_rows";
    }
    return "unknown";
}

const GradTape::Node& GradTape::node(NodeId id) const {
    if (id >= nodes_.size()) throw ProtocolError("node " + std::to_string(id) + " is not on the tape");
    return nodes_[id];
}

NodeId GradTape::push(Node n) {
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

NodeId GradTape::leaf(Matrix value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

NodeId GradTape::matmul(NodeId a, NodeId b) {
    const Matrix& va = value(a);
    const Matrix& vb = value(b);
    require(va.cols() == vb.rows(), Primitive::matmul, shape_str(va) + " * " + shape_str(vb));
    Node n;
    n.op = Primitive::matmul;
    n.a = a;
    n.b = b;
    n.value = ksim::matmul(va, vb);
    return push(std::move(n));
}

NodeId GradTape::matmul_nt(NodeId a, NodeId b) {
    const Matrix& va = value(a);
    const Matrix& vb = value(b);
    require(va.cols() == vb.cols(), Primitive::matmul_nt, shape_str(va) + " * T(" + shape_str(vb) + ")");
    Node n;
    n.op = Primitive::matmul_nt;
    n.a = a;
    n.b = b;
    n.value = ksim::matmul_nt(va, vb);
    return push(std::move(n));
}

NodeId GradTape::bias_add(NodeId x, NodeId bias) {
    const Matrix& vx = value(x);
    const Matrix& vb = value(bias);
    require(vb.rows() == 1 && vb.cols() == vx.cols(), Primitive::bias_add, shape_str(vx) + " + " + shape_str(vb));
    Node n;
    n.op = Primitive::bias_add;
    n.a = x;
    n.b = bias;
    n.value = vx;
    for (std::size_t i = 0; i < vx.rows(); ++i) {
        auto r = n.value.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += vb(0, j);
    }
    return push(std::move(n));
}

NodeId GradTape::relu(NodeId x) {
    Node n;
    n.op = Primitive::relu;
    n.a = x;
    n.value = value(x);
    for (double& v : n.value.values()) v = v > 0.0 ? v : 0.0;
    return push(std::move(n));
}

NodeId GradTape::row_normalize(NodeId x) {
    Node n;
    n.op = Primitive::row_normalize;
    n.a = x;
    n.value = normalize_rows(value(x));
    return push(std::move(n));
}

NodeId GradTape::log_sum_exp(NodeId x, std::vector<std::uint8_t> mask) {
    const Matrix& vx = value(x);
    require(mask.empty() || mask.size() == vx.size(), Primitive::log_sum_exp,
            "mask length " + std::to_string(mask.size()) + " for " + shape_str(vx));
    Node n;
    n.op = Primitive::log_sum_exp;
    n.a = x;
    n.value = Matrix(vx.rows(), 1);
    for (std::size_t i = 0; i < vx.rows(); ++i) {
        auto r = vx.row(i);
        const auto in = [&](std::size_t j) { return mask.empty() || mask[i * vx.cols() + j] != 0; };
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < r.size(); ++j)
            if (in(j)) mx = std::max(mx, r[j]);
        require(std::isfinite(mx), Primitive::log_sum_exp, "row " + std::to_string(i) + " selects no entries");
        double s = 0.0;
        for (std::size_t j = 0; j < r.size(); ++j)
            if (in(j)) s += std::exp(r[j] - mx);
        n.value(i, 0) = mx + std::log(s);
    }
    n.mask = std::move(mask);
    return push(std::move(n));
}

NodeId GradTape::gather(NodeId x, std::vector<std::size_t> index) {
    const Matrix& vx = value(x);
    require(index.size() == vx.rows(), Primitive::gather,
            std::to_string(index.size()) + " indices for " + shape_str(vx));
    Node n;
    n.op = Primitive::gather;
    n.a = x;
    n.value = Matrix(vx.rows(), 1);
    for (std::size_t i = 0; i < index.size(); ++i) {
        require(index[i] < vx.cols(), Primitive::gather, "column index out of range");
        n.value(i, 0) = vx(i, index[i]);
    }
    n.index = std::move(index);
    return push(std::move(n));
}

NodeId GradTape::scale(NodeId x, double s, double offset) {
    Node n;
    n.op = Primitive::scale;
    n.a = x;
    n.scalar = s;
    n.value = value(x);
    for (double& v : n.value.values()) v = s * v + offset;
    return push(std::move(n));
}

NodeId GradTape::add(NodeId a, NodeId b) {
    const Matrix& va = value(a);
    const Matrix& vb = value(b);
    require(va.same_shape(vb), Primitive::add, shape_str(va) + " + " + shape_str(vb));
    Node n;
    n.op = Primitive::add;
    n.a = a;
    n.b = b;
    n.value = va + vb;
    return push(std::move(n));
}

NodeId GradTape::exp(NodeId x) {
    Node n;
    n.op = Primitive::exp;
    n.a = x;
    n.value = value(x);
    for (double& v : n.value.values()) v = std::exp(v);
    return push(std::move(n));
}

NodeId GradTape::abs(NodeId x) {
    Node n;
    n.op = Primitive::abs;
    n.a = x;
    n.value = value(x);
    for (double& v : n.value.values()) v = std::fabs(v);
    return push(std::move(n));
}

NodeId GradTape::row_sum(NodeId x) {
    const Matrix& vx = value(x);
    Node n;
    n.op = Primitive::row_sum;
    n.a = x;
    n.value = Matrix(vx.rows(), 1);
    for (std::size_t i = 0; i < vx.rows(); ++i) {
        double s = 0.0;
        for (double v : vx.row(i)) s += v;
        n.value(i, 0) = s;
    }
    return push(std::move(n));
}

NodeId GradTape::clip_rows(NodeId x, double bound) {
    require(bound > 0.0, Primitive::clip_rows, "bound must be positive");
    Node n;
    n.op = Primitive::clip_rows;
    n.a = x;
    n.scalar = bound;
    n.value = value(x);
    for (std::size_t i = 0; i < n.value.rows(); ++i) {
        const double nr = norm2(n.value.row(i));
        if (nr <= bound) continue;
        for (double& v : n.value.row(i)) v *= bound / nr;
    }
    return push(std::move(n));
}

TapeGradients GradTape::backward(NodeId output, const Matrix& seed) const {
    if (nodes_.empty()) throw ProtocolError("backward called on an empty tape");
    const Node& out = node(output);
    if (!out.value.same_shape(seed))
        throw DimensionError("backward", "seed " + shape_str(seed) + " for output " + shape_str(out.value));

    std::vector<Matrix> g(nodes_.size());
    auto grad_of = [&](NodeId id) -> Matrix& {
        if (g[id].empty() && !nodes_[id].value.empty()) g[id] = Matrix(nodes_[id].value.rows(), nodes_[id].value.cols());
        return g[id];
    };
    grad_of(output) += seed;

    for (NodeId id = output + 1; id-- > 0;) {
        const Node& n = nodes_[id];
        if (g[id].empty() || n.op == Primitive::leaf) continue;
        const Matrix& G = g[id];
        const Matrix& y = n.value;
        switch (n.op) {
            case Primitive::leaf:
                break;
            case Primitive::matmul: {
                const Matrix& A = nodes_[n.a].value;
                const Matrix& B = nodes_[n.b].value;
                Matrix da = ksim::matmul_nt(G, B);
                Matrix db = ksim::matmul_tn(A, G);
                grad_of(n.a) += da;
                grad_of(n.b) += db;
                break;
            }
            case Primitive::matmul_nt: {
                const Matrix& A = nodes_[n.a].value;
                const Matrix& B = nodes_[n.b].value;
                Matrix da = ksim::matmul(G, B);
                Matrix db = ksim::matmul_tn(G, A);
                grad_of(n.a) += da;
                grad_of(n.b) += db;
                break;
            }
            case Primitive::bias_add: {
                grad_of(n.a) += G;
                Matrix db(1, G.cols());
                for (std::size_t i = 0; i < G.rows(); ++i)
                    for (std::size_t j = 0; j < G.cols(); ++j) db(0, j) += G(i, j);
                grad_of(n.b) += db;
                break;
            }
            case Primitive::relu: {
                Matrix& dx = grad_of(n.a);
                const Matrix& x = nodes_[n.a].value;
                for (std::size_t k = 0; k < x.size(); ++k)
                    if (x.values()[k] > 0.0) dx.values()[k] += G.values()[k];
                break;
            }
            case Primitive::row_normalize: {
                Matrix& dx = grad_of(n.a);
                const Matrix& x = nodes_[n.a].value;
                for (std::size_t i = 0; i < x.rows(); ++i) {
                    const double nr = norm2(x.row(i));
                    if (nr == 0.0) continue;
                    const double yg = dot(y.row(i), G.row(i));
                    for (std::size_t j = 0; j < x.cols(); ++j) dx(i, j) += (G(i, j) - y(i, j) * yg) / nr;
                }
                break;
            }
            case Primitive::log_sum_exp: {
                Matrix& dx = grad_of(n.a);
                const Matrix& x = nodes_[n.a].value;
                for (std::size_t i = 0; i < x.rows(); ++i) {
                    for (std::size_t j = 0; j < x.cols(); ++j) {
                        if (!n.mask.empty() && n.mask[i * x.cols() + j] == 0) continue;
                        dx(i, j) += G(i, 0) * std::exp(x(i, j) - y(i, 0));
                    }
                }
                break;
            }
            case Primitive::gather: {
                Matrix& dx = grad_of(n.a);
                for (std::size_t i = 0; i < n.index.size(); ++i) dx(i, n.index[i]) += G(i, 0);
                break;
            }
            case Primitive::scale: {
                Matrix& dx = grad_of(n.a);
                for (std::size_t k = 0; k < G.size(); ++k) dx.values()[k] += n.scalar * G.values()[k];
                break;
            }
            case Primitive::add:
                grad_of(n.a) += G;
                grad_of(n.b) += G;
                break;
            case Primitive::exp: {
                Matrix& dx = grad_of(n.a);
                for (std::size_t k = 0; k < G.size(); ++k) dx.values()[k] += G.values()[k] * y.values()[k];
                break;
            }
            case Primitive::abs: {
                Matrix& dx = grad_of(n.a);
                const Matrix& x = nodes_[n.a].value;
                for (std::size_t k = 0; k < G.size(); ++k) {
                    const double v = x.values()[k];
                    if (v > 0.0) dx.values()[k] += G.values()[k];
                    else if (v < 0.0) dx.values()[k] -= G.values()[k];
                }
                break;
            }
            case Primitive::row_sum: {
                Matrix& dx = grad_of(n.a);
                for (std::size_t i = 0; i < dx.rows(); ++i)
                    for (double& v : dx.row(i)) v += G(i, 0);
                break;
            }
            case Primitive::clip_rows: {
                Matrix& dx = grad_of(n.a);
                const Matrix& x = nodes_[n.a].value;
                for (std::size_t i = 0; i < x.rows(); ++i) {
                    const double nr = norm2(x.row(i));
                    if (nr <= n.scalar) {
                        for (std::size_t j = 0; j < x.cols(); ++j) dx(i, j) += G(i, j);
                        continue;
                    }
                    // y = b * u with u = x / |x|
                    double ug = 0.0;
                    for (std::size_t j = 0; j < x.cols(); ++j) ug += x(i, j) / nr * G(i, j);
                    for (std::size_t j = 0; j < x.cols(); ++j)
                        dx(i, j) += n.scalar / nr * (G(i, j) - x(i, j) / nr * ug);
                }
                break;
            }
        }
    }

    for (NodeId id = 0; id < nodes_.size(); ++id)
        if (g[id].empty()) g[id] = Matrix(nodes_[id].value.rows(), nodes_[id].value.cols());
    return TapeGradients(std::move(g));
}

}  // namespace ksim
