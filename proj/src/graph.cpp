// SPDX-License-Identifier: Apache-2.0

#include "segp/graph.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace segp::grad {

using kernels::Trans;

namespace {

Trans flip(Trans t) { return t == Trans::yes ? Trans::no : Trans::yes; }

// Adds `delta` into `slot`, adopting the shape of `like` (matmul on rank-1
// operands can produce an equal-sized tensor of a different rank).
void accumulate(std::optional<Tensor>& slot, Tensor delta, const Tensor& like)
{
    if (delta.size() != like.size()) {
        throw std::logic_error("gradient size mismatch");
    }
    if (!delta.same_shape(like)) {
        delta = Tensor(like.shape(), std::vector<double>(delta.values()));
    }
    if (!slot) {
        slot = std::move(delta);
        return;
    }
    auto dst = slot->data();
    auto src = delta.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
}

template <typename F>
Tensor map_values(const Tensor& x, F f)
{
    Tensor out = x;
    for (double& v : out.data()) {
        v = f(v);
    }
    return out;
}

} // namespace

const char* op_name(Op op) noexcept
{
    switch (op) {
    case Op::parameter: return "parameter";
    case Op::constant: return "constant";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::scale: return "scale";
    case Op::relu: return "relu";
    case Op::l2_normalize: return "l2_normalize";
    case Op::dot: return "dot";
    case Op::softmax: return "softmax";
    case Op::log_softmax: return "log_softmax";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    }
    return "unknown";
}

GraphError::GraphError(std::size_t node, Op op, const std::string& what)
    : std::runtime_error("node " + std::to_string(node) + " (" + op_name(op) + "): " + what), node_(node), op_(op)
{
}

// ---------------------------------------------------------------------------
// Construction

NodeRef Graph::push(Node node)
{
    for (NodeRef in : node.inputs) {
        if (in.index >= nodes_.size()) {
            throw std::out_of_range("graph input refers to a later node");
        }
    }
    nodes_.push_back(std::move(node));
    return {nodes_.size() - 1};
}

NodeRef Graph::add_leaf(Op op, std::string name)
{
    if (leaves_.contains(name)) {
        throw std::invalid_argument("duplicate leaf '" + name + "'");
    }
    NodeRef ref = push(Node{op, {}, name});
    leaves_.emplace(std::move(name), ref.index);
    return ref;
}

NodeRef Graph::parameter(std::string name) { return add_leaf(Op::parameter, std::move(name)); }
NodeRef Graph::constant(std::string name) { return add_leaf(Op::constant, std::move(name)); }

NodeRef Graph::matmul(NodeRef a, NodeRef b, Trans tb, Trans ta)
{
    Node n{Op::matmul, {a, b}};
    n.trans_a = ta;
    n.trans_b = tb;
    return push(std::move(n));
}

NodeRef Graph::add(NodeRef a, NodeRef b) { return push(Node{Op::add, {a, b}}); }

NodeRef Graph::scale(NodeRef a, double factor)
{
    Node n{Op::scale, {a}};
    n.factor = factor;
    return push(std::move(n));
}

NodeRef Graph::relu(NodeRef a) { return push(Node{Op::relu, {a}}); }
NodeRef Graph::l2_normalize(NodeRef a) { return push(Node{Op::l2_normalize, {a}}); }
NodeRef Graph::dot(NodeRef a, NodeRef b) { return push(Node{Op::dot, {a, b}}); }
NodeRef Graph::softmax(NodeRef a) { return push(Node{Op::softmax, {a}}); }
NodeRef Graph::log_softmax(NodeRef a) { return push(Node{Op::log_softmax, {a}}); }
NodeRef Graph::exp(NodeRef a) { return push(Node{Op::exp, {a}}); }
NodeRef Graph::log(NodeRef a) { return push(Node{Op::log, {a}}); }
NodeRef Graph::sum(NodeRef a) { return push(Node{Op::sum, {a}}); }
NodeRef Graph::mean(NodeRef a) { return push(Node{Op::mean, {a}}); }

NodeRef Graph::root() const
{
    if (nodes_.empty()) {
        throw std::logic_error("empty graph");
    }
    return {nodes_.size() - 1};
}

NodeRef Graph::leaf(const std::string& name) const
{
    auto it = leaves_.find(name);
    if (it == leaves_.end()) {
        throw std::out_of_range("no leaf named '" + name + "'");
    }
    return {it->second};
}

std::vector<std::string> Graph::parameter_names() const
{
    std::vector<std::string> names;
    for (const auto& n : nodes_) {
        if (n.op == Op::parameter) {
            names.push_back(n.name);
        }
    }
    return names;
}

// ---------------------------------------------------------------------------
// Forward

Evaluation::Evaluation(const Graph& graph, const Bindings& bindings) : graph_(&graph)
{
    const auto& nodes = graph.nodes();
    values_.reserve(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const Node& n = nodes[i];
        auto in = [&](std::size_t k) -> const Tensor& { return values_[n.inputs[k].index]; };
        auto fail = [&](const std::string& what) { return GraphError(i, n.op, what); };
        Tensor out;
        switch (n.op) {
        case Op::parameter:
        case Op::constant: {
            auto it = bindings.find(n.name);
            if (it == bindings.end()) {
                throw fail("leaf '" + n.name + "' is not bound");
            }
            out = it->second;
            break;
        }
        case Op::matmul:
            try {
                out = kernels::matmul(in(0), n.trans_a, in(1), n.trans_b);
            } catch (const std::invalid_argument& e) {
                throw fail(std::string(e.what()) + " for shapes " + shape_string(in(0).shape()) + " and "
                           + shape_string(in(1).shape()));
            }
            break;
        case Op::add: {
            if (!in(0).same_shape(in(1))) {
                throw fail("shapes " + shape_string(in(0).shape()) + " and " + shape_string(in(1).shape()));
            }
            out = in(0);
            auto d = out.data();
            auto b = in(1).data();
            for (std::size_t k = 0; k < d.size(); ++k) {
                d[k] += b[k];
            }
            break;
        }
        case Op::scale:
            out = map_values(in(0), [f = n.factor](double v) { return f * v; });
            break;
        case Op::relu:
            out = map_values(in(0), [](double v) { return v > 0.0 ? v : 0.0; });
            break;
        case Op::l2_normalize:
            if (in(0).rank() == 0) {
                throw fail("normalizing a scalar");
            }
            out = in(0);
            degenerate_ += kernels::normalize_rows(out);
            break;
        case Op::dot:
            if (!in(0).same_shape(in(1))) {
                throw fail("shapes " + shape_string(in(0).shape()) + " and " + shape_string(in(1).shape()));
            }
            out = Tensor::scalar(segp::dot(in(0).data(), in(1).data()));
            break;
        case Op::softmax:
            out = in(0);
            kernels::softmax_rows(out);
            break;
        case Op::log_softmax:
            out = in(0);
            kernels::log_softmax_rows(out);
            break;
        case Op::exp:
            out = map_values(in(0), [](double v) { return std::exp(v); });
            break;
        case Op::log:
            for (double v : in(0).data()) {
                if (!(v > 0.0)) {
                    throw fail("log of non-positive value");
                }
            }
            out = map_values(in(0), [](double v) { return std::log(v); });
            break;
        case Op::sum:
        case Op::mean: {
            double s = 0.0;
            for (double v : in(0).data()) {
                s += v;
            }
            if (n.op == Op::mean) {
                if (in(0).size() == 0) {
                    throw fail("mean of empty tensor");
                }
                s /= static_cast<double>(in(0).size());
            }
            out = Tensor::scalar(s);
            break;
        }
        }
        values_.push_back(std::move(out));
    }
}

// ---------------------------------------------------------------------------
// Backward

Gradients Evaluation::gradient(NodeRef root) const
{
    const auto& nodes = graph_->nodes();
    if (root.index >= nodes.size()) {
        throw std::out_of_range("gradient root outside graph");
    }
    if (values_[root.index].size() != 1) {
        throw GraphError(root.index, nodes[root.index].op,
                         "gradient root must be scalar, got shape " + shape_string(values_[root.index].shape()));
    }

    std::vector<std::optional<Tensor>> adj(root.index + 1);
    adj[root.index] = Tensor(values_[root.index].shape(), 1.0);

    Gradients grads;
    for (std::size_t idx = root.index + 1; idx-- > 0;) {
        if (!adj[idx]) {
            continue;
        }
        const Node& n = nodes[idx];
        const Tensor& g = *adj[idx];
        const Tensor& y = values_[idx];
        auto x = [&](std::size_t k) -> const Tensor& { return values_[n.inputs[k].index]; };
        auto push = [&](std::size_t k, Tensor delta) { accumulate(adj[n.inputs[k].index], std::move(delta), x(k)); };

        switch (n.op) {
        case Op::parameter:
            grads[n.name] = g;
            break;
        case Op::constant:
            break;
        case Op::matmul: {
            const Tensor& a = x(0);
            const Tensor& b = x(1);
            // Logical C = A' B' with A' = op(A), B' = op(B).
            Tensor da = n.trans_a == Trans::yes ? kernels::matmul(b, n.trans_b, g, Trans::yes)
                                                : kernels::matmul(g, Trans::no, b, flip(n.trans_b));
            Tensor db = n.trans_b == Trans::yes ? kernels::matmul(g, Trans::yes, a, n.trans_a)
                                                : kernels::matmul(a, flip(n.trans_a), g, Trans::no);
            push(0, std::move(da));
            push(1, std::move(db));
            break;
        }
        case Op::add:
            push(0, g);
            push(1, g);
            break;
        case Op::scale:
            push(0, map_values(g, [f = n.factor](double v) { return f * v; }));
            break;
        case Op::relu: {
            Tensor d = g;
            auto in = x(0).data();
            auto dd = d.data();
            for (std::size_t k = 0; k < dd.size(); ++k) {
                if (!(in[k] > 0.0)) {
                    dd[k] = 0.0;
                }
            }
            push(0, std::move(d));
            break;
        }
        case Op::l2_normalize: {
            Tensor d = g;
            for (std::size_t r = 0; r < y.rows(); ++r) {
                const double norm = l2_norm(x(0).row(r));
                auto yr = y.row(r);
                auto dr = d.row(r);
                if (norm < kernels::kNormFloor) {
                    for (double& v : dr) {
                        v /= kernels::kNormFloor;
                    }
                    continue;
                }
                const double proj = segp::dot(yr, g.row(r));
                for (std::size_t c = 0; c < dr.size(); ++c) {
                    dr[c] = (dr[c] - yr[c] * proj) / norm;
                }
            }
            push(0, std::move(d));
            break;
        }
        case Op::dot: {
            const double s = g.item();
            push(0, map_values(x(1), [s](double v) { return s * v; }));
            push(1, map_values(x(0), [s](double v) { return s * v; }));
            break;
        }
        case Op::softmax: {
            Tensor d = g;
            for (std::size_t r = 0; r < y.rows(); ++r) {
                auto yr = y.row(r);
                auto dr = d.row(r);
                const double proj = segp::dot(yr, g.row(r));
                for (std::size_t c = 0; c < dr.size(); ++c) {
                    dr[c] = yr[c] * (dr[c] - proj);
                }
            }
            push(0, std::move(d));
            break;
        }
        case Op::log_softmax: {
            Tensor d = g;
            for (std::size_t r = 0; r < y.rows(); ++r) {
                auto yr = y.row(r);
                auto dr = d.row(r);
                double total = 0.0;
                for (double v : g.row(r)) {
                    total += v;
                }
                for (std::size_t c = 0; c < dr.size(); ++c) {
                    dr[c] -= std::exp(yr[c]) * total;
                }
            }
            push(0, std::move(d));
            break;
        }
        case Op::exp: {
            Tensor d = g;
            auto yd = y.data();
            auto dd = d.data();
            for (std::size_t k = 0; k < dd.size(); ++k) {
                dd[k] *= yd[k];
            }
            push(0, std::move(d));
            break;
        }
        case Op::log: {
            Tensor d = g;
            auto in = x(0).data();
            auto dd = d.data();
            for (std::size_t k = 0; k < dd.size(); ++k) {
                dd[k] /= in[k];
            }
            push(0, std::move(d));
            break;
        }
        case Op::sum:
            push(0, Tensor(x(0).shape(), g.item()));
            break;
        case Op::mean:
            push(0, Tensor(x(0).shape(), g.item() / static_cast<double>(x(0).size())));
            break;
        }
    }
    return grads;
}

Tensor evaluate(const Graph& graph, const Bindings& bindings, NodeRef root)
{
    return Evaluation(graph, bindings).value(root);
}

Gradients gradient(const Graph& graph, const Bindings& bindings, NodeRef root)
{
    return Evaluation(graph, bindings).gradient(root);
}

double grad_check(const Graph& graph, const Bindings& bindings, NodeRef root, const std::string& leaf,
                  double step)
{
    if (!(step > 0.0)) {
        throw std::invalid_argument("grad_check step must be positive");
    }
    const Gradients grads = gradient(graph, bindings, root);
    auto it = bindings.find(leaf);
    if (it == bindings.end()) {
        throw std::out_of_range("grad_check: leaf '" + leaf + "' is not bound");
    }
    const Tensor zero(it->second.shape());
    const Tensor& analytic = grads.contains(leaf) ? grads.at(leaf) : zero;

    Bindings probe = bindings;
    Tensor& value = probe.at(leaf);
    double worst = 0.0;
    for (std::size_t k = 0; k < value.size(); ++k) {
        const double saved = value[k];
        value[k] = saved + step;
        const double up = evaluate(graph, probe, root).item();
        value[k] = saved - step;
        const double down = evaluate(graph, probe, root).item();
        value[k] = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic[k] - numeric) / denom);
    }
    return worst;
}

} // namespace segp::grad
