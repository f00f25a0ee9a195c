// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "segp/kernels.hpp"
#include "segp/tensor.hpp"

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

/// Reverse-mode differentiation over a closed set of dense primitives.
///
/// A Graph is an append-only list of nodes, so it is topologically ordered by
/// construction. Leaves are named and come in two kinds: parameters receive
/// gradients, constants do not. Values are supplied per evaluation through
/// Bindings, which keeps the Graph itself immutable and shareable across
/// threads; each Evaluation owns its own forward cache.
///
/// Row-wise ops (l2_normalize, softmax, log_softmax) act on each row of a
/// matrix and on the whole of a rank-1 tensor.
namespace segp::grad {

enum class Op {
    parameter,
    constant,
    matmul,
    add,
    scale,
    relu,
    l2_normalize,
    dot,
    softmax,
    log_softmax,
    exp,
    log,
    sum,
    mean,
};

[[nodiscard]] const char* op_name(Op op) noexcept;

struct NodeRef {
    std::size_t index = 0;
    friend bool operator==(NodeRef, NodeRef) = default;
};

struct Node {
    Op op;
    std::vector<NodeRef> inputs;
    std::string name; // leaves only
    double factor = 1.0; // scale
    kernels::Trans trans_a = kernels::Trans::no;
    kernels::Trans trans_b = kernels::Trans::no;
};

/// Shape mismatch or domain failure at a specific node.
class GraphError : public std::runtime_error {
public:
    GraphError(std::size_t node, Op op, const std::string& what);
    [[nodiscard]] std::size_t node() const noexcept { return node_; }
    [[nodiscard]] Op op() const noexcept { return op_; }

private:
    std::size_t node_;
    Op op_;
};

class Graph {
public:
    NodeRef parameter(std::string name);
    NodeRef constant(std::string name);

    NodeRef matmul(NodeRef a, NodeRef b, kernels::Trans tb = kernels::Trans::no,
                   kernels::Trans ta = kernels::Trans::no);
    NodeRef add(NodeRef a, NodeRef b);
    NodeRef scale(NodeRef a, double factor);
    NodeRef sub(NodeRef a, NodeRef b) { return add(a, scale(b, -1.0)); }
    NodeRef relu(NodeRef a);
    NodeRef l2_normalize(NodeRef a);
    NodeRef dot(NodeRef a, NodeRef b);
    NodeRef softmax(NodeRef a);
    NodeRef log_softmax(NodeRef a);
    NodeRef exp(NodeRef a);
    NodeRef log(NodeRef a);
    NodeRef sum(NodeRef a);
    NodeRef mean(NodeRef a);

    [[nodiscard]] const std::vector<Node>& nodes() const noexcept { return nodes_; }
    [[nodiscard]] const Node& node(NodeRef n) const { return nodes_.at(n.index); }
    [[nodiscard]] NodeRef root() const;
    [[nodiscard]] NodeRef leaf(const std::string& name) const;
    [[nodiscard]] std::vector<std::string> parameter_names() const;

private:
    NodeRef push(Node node);
    NodeRef add_leaf(Op op, std::string name);

    std::vector<Node> nodes_;
    std::map<std::string, std::size_t> leaves_;
};

using Bindings = std::map<std::string, Tensor>;
using Gradients = std::map<std::string, Tensor>;

/// Forward pass with cached intermediates.
class Evaluation {
public:
    Evaluation(const Graph& graph, const Bindings& bindings);

    [[nodiscard]] const Tensor& value(NodeRef n) const { return values_.at(n.index); }
    [[nodiscard]] const Tensor& root_value() const { return values_.back(); }

    /// d(root)/d(parameter) for every parameter leaf; root must be single-valued.
    [[nodiscard]] Gradients gradient(NodeRef root) const;

    /// Rows that hit the l2 norm floor during the forward pass.
    [[nodiscard]] std::size_t degenerate_normalizations() const noexcept { return degenerate_; }

private:
    const Graph* graph_;
    std::vector<Tensor> values_;
    std::size_t degenerate_ = 0;
};

[[nodiscard]] Tensor evaluate(const Graph& graph, const Bindings& bindings, NodeRef root);
[[nodiscard]] Gradients gradient(const Graph& graph, const Bindings& bindings, NodeRef root);

/// Largest componentwise relative error between reverse-mode and central
/// finite-difference gradients for one leaf, with denominator
/// max(|analytic|, |numeric|, 1e-8). Constant leaves have analytic gradient 0.
[[nodiscard]] double grad_check(const Graph& graph, const Bindings& bindings, NodeRef root,
                                const std::string& leaf, double step);

} // namespace segp::grad
