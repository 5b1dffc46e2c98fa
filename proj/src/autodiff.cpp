#include "cpf/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "cpf/errors.hpp"

namespace cpf::ad {

Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return n;
}

Var param(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = true;
    n->grad = Tensor(n->value.shape);
    return n;
}

void zero_grad(const std::vector<Var>& params) {
    for (const auto& p : params)
        std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
}

void backward(const Var& loss) {
    if (!loss) throw ContractError("backward on null node");
    if (loss->value.numel() != 1)
        throw ContractError("backward requires a scalar loss, got " + loss->value.shape_str());
    if (!loss->requires_grad) return;

    // Iterative post-order DFS for topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    if (!loss->is_leaf() && loss->consumed)
        throw ContractError("graph already consumed by a previous backward pass");
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* parent = node->parents[idx++].get();
            if (!parent->requires_grad || visited.count(parent)) continue;
            if (!parent->is_leaf() && parent->consumed)
                throw ContractError("graph already consumed by a previous backward pass");
            visited.insert(parent);
            stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->grad.data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn) node->backward_fn(*node);
        if (!node->is_leaf()) node->consumed = true;
    }
}

GradCheckReport grad_check(
    const std::function<Var(const std::vector<Var>&)>& build,
    const std::vector<Var>& leaves,
    double h, double tol,
    const std::vector<std::string>& names) {
    zero_grad(leaves);
    Var loss = build(leaves);
    backward(loss);

    std::vector<Tensor> analytic;
    analytic.reserve(leaves.size());
    for (const auto& l : leaves) analytic.push_back(l->grad);

    GradCheckReport report;
    report.tol = tol;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        for (std::size_t i = 0; i < leaf->value.numel(); ++i) {
            double orig = leaf->value.data[i];
            leaf->value.data[i] = orig + h;
            double f_plus = build(leaves)->value.data[0];
            leaf->value.data[i] = orig - h;
            double f_minus = build(leaves)->value.data[0];
            leaf->value.data[i] = orig;

            double numeric = (f_plus - f_minus) / (2.0 * h);
            double a = analytic[li].data[i];
            double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-6});
            double rel = std::fabs(a - numeric) / denom;
            ++report.n_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param =
                    (li < names.size() ? names[li] : "leaf" + std::to_string(li)) +
                    "[" + std::to_string(i) + "]";
            }
        }
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

} // namespace cpf::ad
