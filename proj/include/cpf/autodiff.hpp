#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cpf/rng.hpp"
#include "cpf/tensor.hpp"

namespace cpf::ad {

// Taped reverse-mode autodiff, recorded on forward. Each op creates a Node
// whose backward rule accumulates (+=) into its parents' grads. Leaf nodes
// (parameters, constants) are reusable across tapes; interior nodes are
// single-consumption: running backward twice through them is a contract
// violation.
class Node;
using Var = std::shared_ptr<Node>;

class Node {
public:
    Tensor value;
    Tensor grad;             // allocated iff requires_grad
    bool requires_grad = false;
    bool consumed = false;   // set on interior nodes by backward()
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return parents.empty(); }
};

// Leaf constructors.
Var constant(Tensor t);
Var param(Tensor t);

// Resets grads of the given leaves to zero.
void zero_grad(const std::vector<Var>& params);

// Reverse-topological traversal from a scalar loss; accumulates grads into
// every requires_grad node reachable from it. Consumes the graph.
void backward(const Var& loss);

// ---- operations -----------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);        // elementwise
Var neg(const Var& x);
Var scalar_mul(const Var& x, double c);
Var scalar_add(const Var& x, double c);

// Broadcast helpers (the only broadcasting in the library).
Var add_rowvec(const Var& x, const Var& v);           // [m x n] + [n]
Var mul_scalarvar(const Var& s, const Var& x);        // [1] * any
Var div_scalarvar(const Var& x, const Var& s);        // any / [1]
Var broadcast_row(const Var& v, std::size_t rows);    // [n] -> [rows x n]
Var gather_scalar(const Var& x, std::size_t index);   // flat pick -> [1]

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& x);

// Cross-correlation, same padding, odd K. x: [C_in x L], w: [C_out x C_in x K],
// b: [C_out] -> [C_out x L].
Var conv1d(const Var& x, const Var& w, const Var& b);
// Convolve every row of x with the same kernel k [K], same padding.
Var conv1d_rows(const Var& x, const Var& k);

Var softmax(const Var& x, std::size_t axis);
Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

Var sigmoid(const Var& x);
Var gelu(const Var& x);
Var relu(const Var& x);
Var tanh_op(const Var& x);
Var exp_op(const Var& x);
Var log_op(const Var& x);
Var clamp(const Var& x, double lo, double hi);
Var pow_const(const Var& x, double e);
// Inverted dropout; identity when !training or p == 0.
Var dropout(const Var& x, double p, Rng& rng, bool training);

// Linear interpolation of columns: [d x L_src] -> [d x L_dst], endpoints
// aligned. A single source column broadcasts constant.
Var linear_interpolate_1d(const Var& x, std::size_t l_dst);
// Mean over time windows of width = stride = factor; trailing partial window
// averaged over its actual size. [d x L] -> [d x ceil(L/factor)].
Var avgpool1d(const Var& x, std::size_t factor);

Var slice_cols(const Var& x, std::size_t c0, std::size_t c1);
Var slice_rows(const Var& x, std::size_t r0, std::size_t r1);
Var concat_rows(const std::vector<Var>& xs);
Var concat_cols(const std::vector<Var>& xs);
Var reshape(const Var& x, std::vector<std::size_t> shape);

Var sum(const Var& x);   // -> [1]
Var mean(const Var& x);  // -> [1]

// x [m x d] * W [d x k] + b [k]
Var linear(const Var& x, const Var& w, const Var& b);

// ---- gradient oracle -------------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    double tol = 0.0;
    std::size_t n_checked = 0;
    std::string worst_param;
    bool pass = false;
};

// Central finite differences against analytic gradients. `build` must
// construct a scalar loss graph from the given leaves deterministically.
GradCheckReport grad_check(
    const std::function<Var(const std::vector<Var>&)>& build,
    const std::vector<Var>& leaves,
    double h = 1e-5, double tol = 1e-4,
    const std::vector<std::string>& names = {});

} // namespace cpf::ad
