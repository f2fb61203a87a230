#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ksim/matrix.hpp"

namespace ksim {

/// Raised when the tape is driven out of order (e.g. backward with nothing recorded).
class ProtocolError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

using NodeId = std::size_t;

enum class Primitive : std::uint8_t {
    leaf,
    matmul,        // A * B
    matmul_nt,     // A * B^T
    bias_add,      // X + 1 * b, b is 1 x cols
    relu,
    row_normalize,
    log_sum_exp,   // row-wise, optional inclusion mask, output rows x 1
    gather,        // out(i, 0) = X(i, index[i])
    scale,         // s * X + offset
    add,
    exp,
    abs,
    row_sum,       // output rows x 1
    clip_rows,     // rows with L2 norm above bound are rescaled onto the bound
};

const char* primitive_name(Primitive p);

/// Per-node gradients produced by GradTape::backward.
class TapeGradients {
public:
    explicit TapeGradients(std::vector<Matrix> grads) : grads_(std::move(grads)) {}
    /// Zero matrix of the node's shape when nothing flowed into it.
    const Matrix& operator[](NodeId id) const { return grads_.at(id); }
    Matrix take(NodeId id) { return std::move(grads_.at(id)); }

private:
    std::vector<Matrix> grads_;
};

/// Records a closed set of primitives with their forward values and replays
/// them in reverse. ReLU's subgradient at 0 is 0; the gradient of abs at 0 is 0;
/// row_normalize maps zero rows to zero rows and passes zero gradient back.
class GradTape {
public:
    NodeId leaf(Matrix value);

    NodeId matmul(NodeId a, NodeId b);
    NodeId matmul_nt(NodeId a, NodeId b);
    NodeId bias_add(NodeId x, NodeId bias);
    NodeId relu(NodeId x);
    NodeId row_normalize(NodeId x);
    /// mask (rows x cols, row-major) selects the entries that take part; empty = all.
    NodeId log_sum_exp(NodeId x, std::vector<std::uint8_t> mask = {});
    NodeId gather(NodeId x, std::vector<std::size_t> index);
    NodeId scale(NodeId x, double s, double offset = 0.0);
    NodeId add(NodeId a, NodeId b);
    NodeId exp(NodeId x);
    NodeId abs(NodeId x);
    NodeId row_sum(NodeId x);
    NodeId clip_rows(NodeId x, double bound);

    const Matrix& value(NodeId id) const { return node(id).value; }
    Primitive primitive(NodeId id) const { return node(id).op; }
    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }
    void clear() { nodes_.clear(); }

    /// Reverse pass from `output` seeded with d(loss)/d(output). Gradients
    /// accumulate where a node feeds several consumers.
    TapeGradients backward(NodeId output, const Matrix& seed) const;

private:
    struct Node {
        Primitive op = Primitive::leaf;
        NodeId a = 0;
        NodeId b = 0;
        Matrix value;
        double scalar = 0.0;
        std::vector<std::uint8_t> mask;
        std::vector<std::size_t> index;
    };

    const Node& node(NodeId id) const;
    NodeId push(Node n);

    std::vector<Node> nodes_;
};

}  // namespace ksim
