#include <algorithm>
#include <cmath>
#include <utility>

#include "cpf/autodiff.hpp"
#include "cpf/errors.hpp"

namespace cpf::ad {

namespace {

Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    if (rg) {
        n->grad = Tensor(n->value.shape);
        n->parents = std::move(parents);
        n->backward_fn = std::move(fn);
    }
    return n;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw DimensionError(std::string(op) + ": shapes " + a->value.shape_str() +
                             " vs " + b->value.shape_str());
}

// Elementwise unary helper: value and local derivative computed from x.
template <typename Fwd, typename Dfdx>
Var unary(const Var& x, Fwd fwd, Dfdx dfdx) {
    Tensor out(x->value.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = fwd(x->value.data[i]);
    return make(std::move(out), {x}, [x, dfdx](Node& n) {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            x->grad.data[i] += n.grad.data[i] * dfdx(x->value.data[i], n.value.data[i]);
    });
}

} // namespace

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out(a->value.shape);
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.data[i] = a->value.data[i] + b->value.data[i];
    return make(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad)
            for (std::size_t i = 0; i < n.grad.numel(); ++i) a->grad.data[i] += n.grad.data[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < n.grad.numel(); ++i) b->grad.data[i] += n.grad.data[i];
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a->value.shape);
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.data[i] = a->value.data[i] - b->value.data[i];
    return make(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad)
            for (std::size_t i = 0; i < n.grad.numel(); ++i) a->grad.data[i] += n.grad.data[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < n.grad.numel(); ++i) b->grad.data[i] -= n.grad.data[i];
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a->value.shape);
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.data[i] = a->value.data[i] * b->value.data[i];
    return make(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad)
            for (std::size_t i = 0; i < n.grad.numel(); ++i)
                a->grad.data[i] += n.grad.data[i] * b->value.data[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < n.grad.numel(); ++i)
                b->grad.data[i] += n.grad.data[i] * a->value.data[i];
    });
}

Var neg(const Var& x) { return scalar_mul(x, -1.0); }

Var scalar_mul(const Var& x, double c) {
    Tensor out(x->value.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = c * x->value.data[i];
    return make(std::move(out), {x}, [x, c](Node& n) {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < n.grad.numel(); ++i) x->grad.data[i] += c * n.grad.data[i];
    });
}

Var scalar_add(const Var& x, double c) {
    Tensor out(x->value.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = x->value.data[i] + c;
    return make(std::move(out), {x}, [x](Node& n) {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < n.grad.numel(); ++i) x->grad.data[i] += n.grad.data[i];
    });
}

Var add_rowvec(const Var& x, const Var& v) {
    std::size_t m = x->value.rows(), ncols = x->value.cols();
    if (v->value.numel() != ncols)
        throw DimensionError("add_rowvec: " + x->value.shape_str() + " + " + v->value.shape_str());
    Tensor out(x->value.shape);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < ncols; ++j)
            out.at(i, j) = x->value.at(i, j) + v->value.data[j];
    return make(std::move(out), {x, v}, [x, v, m, ncols](Node& n) {
        if (x->requires_grad)
            for (std::size_t i = 0; i < n.grad.numel(); ++i) x->grad.data[i] += n.grad.data[i];
        if (v->requires_grad)
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < ncols; ++j) v->grad.data[j] += n.grad.at(i, j);
    });
}

Var mul_scalarvar(const Var& s, const Var& x) {
    if (s->value.numel() != 1) throw DimensionError("mul_scalarvar: scale must be a scalar");
    double sv = s->value.data[0];
    Tensor out(x->value.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = sv * x->value.data[i];
    return make(std::move(out), {s, x}, [s, x, sv](Node& n) {
        if (s->requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n.grad.numel(); ++i)
                acc += n.grad.data[i] * x->value.data[i];
            s->grad.data[0] += acc;
        }
        if (x->requires_grad)
            for (std::size_t i = 0; i < n.grad.numel(); ++i)
                x->grad.data[i] += sv * n.grad.data[i];
    });
}

Var div_scalarvar(const Var& x, const Var& s) {
    if (s->value.numel() != 1) throw DimensionError("div_scalarvar: divisor must be a scalar");
    double sv = s->value.data[0];
    Tensor out(x->value.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = x->value.data[i] / sv;
    return make(std::move(out), {x, s}, [x, s, sv](Node& n) {
        if (x->requires_grad)
            for (std::size_t i = 0; i < n.grad.numel(); ++i)
                x->grad.data[i] += n.grad.data[i] / sv;
        if (s->requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n.grad.numel(); ++i)
                acc += n.grad.data[i] * (-x->value.data[i] / (sv * sv));
            s->grad.data[0] += acc;
        }
    });
}

Var broadcast_row(const Var& v, std::size_t rows) {
    std::size_t ncols = v->value.numel();
    Tensor out({rows, ncols});
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < ncols; ++j) out.at(i, j) = v->value.data[j];
    return make(std::move(out), {v}, [v, rows, ncols](Node& n) {
        if (!v->requires_grad) return;
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < ncols; ++j) v->grad.data[j] += n.grad.at(i, j);
    });
}

Var gather_scalar(const Var& x, std::size_t index) {
    if (index >= x->value.numel()) throw DimensionError("gather_scalar: index out of range");
    return make(Tensor::scalar(x->value.data[index]), {x}, [x, index](Node& n) {
        if (x->requires_grad) x->grad.data[index] += n.grad.data[0];
    });
}

Var matmul(const Var& a, const Var& b) {
    std::size_t m = a->value.rows(), k = a->value.cols();
    std::size_t k2 = b->value.rows(), ncols = b->value.cols();
    if (k != k2)
        throw DimensionError("matmul: " + a->value.shape_str() + " * " + b->value.shape_str());
    Tensor out({m, ncols});
    const double* ad = a->value.data.data();
    const double* bd = b->value.data.data();
    double* od = out.data.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
            double av = ad[i * k + kk];
            if (av == 0.0) continue;
            const double* brow = bd + kk * ncols;
            double* orow = od + i * ncols;
            for (std::size_t j = 0; j < ncols; ++j) orow[j] += av * brow[j];
        }
    return make(std::move(out), {a, b}, [a, b, m, k, ncols](Node& n) {
        const double* g = n.grad.data.data();
        if (a->requires_grad) {
            // dA = G * B^T
            const double* bd = b->value.data.data();
            double* ga = a->grad.data.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    double acc = 0.0;
                    const double* grow = g + i * ncols;
                    const double* brow = bd + kk * ncols;
                    for (std::size_t j = 0; j < ncols; ++j) acc += grow[j] * brow[j];
                    ga[i * k + kk] += acc;
                }
        }
        if (b->requires_grad) {
            // dB = A^T * G
            const double* ad = a->value.data.data();
            double* gb = b->grad.data.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    double av = ad[i * k + kk];
                    if (av == 0.0) continue;
                    const double* grow = g + i * ncols;
                    double* gbrow = gb + kk * ncols;
                    for (std::size_t j = 0; j < ncols; ++j) gbrow[j] += av * grow[j];
                }
        }
    });
}

Var transpose(const Var& x) {
    std::size_t m = x->value.rows(), ncols = x->value.cols();
    Tensor out({ncols, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < ncols; ++j) out.at(j, i) = x->value.at(i, j);
    return make(std::move(out), {x}, [x, m, ncols](Node& n) {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < ncols; ++j) x->grad.at(i, j) += n.grad.at(j, i);
    });
}

Var conv1d(const Var& x, const Var& w, const Var& b) {
    if (x->value.ndim() != 2 || w->value.ndim() != 3)
        throw DimensionError("conv1d: expected x [C_in x L], w [C_out x C_in x K]");
    std::size_t c_in = x->value.shape[0], len = x->value.shape[1];
    std::size_t c_out = w->value.shape[0], kc_in = w->value.shape[1], kw = w->value.shape[2];
    if (kc_in != c_in)
        throw DimensionError("conv1d: channel mismatch " + x->value.shape_str() + " vs " +
                             w->value.shape_str());
    if (kw % 2 == 0) throw ConfigError("conv1d: kernel size must be odd, got " + std::to_string(kw));
    if (b->value.numel() != c_out) throw DimensionError("conv1d: bias size mismatch");
    std::size_t pad = (kw - 1) / 2;

    Tensor out({c_out, len});
    for (std::size_t o = 0; o < c_out; ++o) {
        for (std::size_t t = 0; t < len; ++t) out.at(o, t) = b->value.data[o];
        for (std::size_t c = 0; c < c_in; ++c) {
            const double* xr = x->value.data.data() + c * len;
            double* orow = out.data.data() + o * len;
            for (std::size_t k = 0; k < kw; ++k) {
                double wv = w->value.at3(o, c, k);
                if (wv == 0.0) continue;
                // source index = t + k - pad
                std::size_t t0 = (k >= pad) ? 0 : pad - k;
                std::size_t t1 = std::min(len, len + pad - k);
                for (std::size_t t = t0; t < t1; ++t) orow[t] += wv * xr[t + k - pad];
            }
        }
    }
    return make(std::move(out), {x, w, b}, [x, w, b, c_in, c_out, len, kw, pad](Node& n) {
        const double* g = n.grad.data.data();
        if (b->requires_grad)
            for (std::size_t o = 0; o < c_out; ++o) {
                double acc = 0.0;
                for (std::size_t t = 0; t < len; ++t) acc += g[o * len + t];
                b->grad.data[o] += acc;
            }
        for (std::size_t o = 0; o < c_out; ++o) {
            const double* grow = g + o * len;
            for (std::size_t c = 0; c < c_in; ++c) {
                const double* xr = x->value.data.data() + c * len;
                double* gx = x->requires_grad ? x->grad.data.data() + c * len : nullptr;
                for (std::size_t k = 0; k < kw; ++k) {
                    std::size_t t0 = (k >= pad) ? 0 : pad - k;
                    std::size_t t1 = std::min(len, len + pad - k);
                    if (w->requires_grad) {
                        double acc = 0.0;
                        for (std::size_t t = t0; t < t1; ++t) acc += grow[t] * xr[t + k - pad];
                        w->grad.at3(o, c, k) += acc;
                    }
                    if (gx) {
                        double wv = w->value.at3(o, c, k);
                        if (wv != 0.0)
                            for (std::size_t t = t0; t < t1; ++t) gx[t + k - pad] += wv * grow[t];
                    }
                }
            }
        }
    });
}

Var conv1d_rows(const Var& x, const Var& k) {
    std::size_t m = x->value.rows(), len = x->value.cols();
    std::size_t kw = k->value.numel();
    if (kw % 2 == 0) throw ConfigError("conv1d_rows: kernel size must be odd");
    std::size_t pad = (kw - 1) / 2;
    Tensor out({m, len});
    for (std::size_t i = 0; i < m; ++i) {
        const double* xr = x->value.data.data() + i * len;
        double* orow = out.data.data() + i * len;
        for (std::size_t kk = 0; kk < kw; ++kk) {
            double kv = k->value.data[kk];
            if (kv == 0.0) continue;
            std::size_t t0 = (kk >= pad) ? 0 : pad - kk;
            std::size_t t1 = std::min(len, len + pad - kk);
            for (std::size_t t = t0; t < t1; ++t) orow[t] += kv * xr[t + kk - pad];
        }
    }
    return make(std::move(out), {x, k}, [x, k, m, len, kw, pad](Node& n) {
        for (std::size_t i = 0; i < m; ++i) {
            const double* grow = n.grad.data.data() + i * len;
            const double* xr = x->value.data.data() + i * len;
            double* gx = x->requires_grad ? x->grad.data.data() + i * len : nullptr;
            for (std::size_t kk = 0; kk < kw; ++kk) {
                std::size_t t0 = (kk >= pad) ? 0 : pad - kk;
                std::size_t t1 = std::min(len, len + pad - kk);
                if (k->requires_grad) {
                    double acc = 0.0;
                    for (std::size_t t = t0; t < t1; ++t) acc += grow[t] * xr[t + kk - pad];
                    k->grad.data[kk] += acc;
                }
                if (gx) {
                    double kv = k->value.data[kk];
                    if (kv != 0.0)
                        for (std::size_t t = t0; t < t1; ++t) gx[t + kk - pad] += kv * grow[t];
                }
            }
        }
    });
}

Var softmax(const Var& x, std::size_t axis) {
    const auto& shape = x->value.shape;
    if (axis >= shape.size()) throw DimensionError("softmax: axis out of range");
    std::size_t outer = 1, inner = 1, len = shape[axis];
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];

    Tensor out(shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            double mx = -1e308;
            for (std::size_t i = 0; i < len; ++i)
                mx = std::max(mx, x->value.data[(o * len + i) * inner + in]);
            double z = 0.0;
            for (std::size_t i = 0; i < len; ++i) {
                double e = std::exp(x->value.data[(o * len + i) * inner + in] - mx);
                out.data[(o * len + i) * inner + in] = e;
                z += e;
            }
            for (std::size_t i = 0; i < len; ++i) out.data[(o * len + i) * inner + in] /= z;
        }
    return make(std::move(out), {x}, [x, outer, inner, len](Node& n) {
        if (!x->requires_grad) return;
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
                double dot = 0.0;
                for (std::size_t i = 0; i < len; ++i) {
                    std::size_t idx = (o * len + i) * inner + in;
                    dot += n.grad.data[idx] * n.value.data[idx];
                }
                for (std::size_t i = 0; i < len; ++i) {
                    std::size_t idx = (o * len + i) * inner + in;
                    x->grad.data[idx] += n.value.data[idx] * (n.grad.data[idx] - dot);
                }
            }
    });
}

Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    std::size_t d = x->value.shape.back();
    if (gamma->value.numel() != d || beta->value.numel() != d)
        throw DimensionError("layernorm: affine size mismatch");
    std::size_t nrows = x->value.numel() / d;

    Tensor out(x->value.shape);
    auto xhat = std::make_shared<std::vector<double>>(x->value.numel());
    auto invstd = std::make_shared<std::vector<double>>(nrows);
    for (std::size_t r = 0; r < nrows; ++r) {
        const double* xr = x->value.data.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<double>(d);
        double is = 1.0 / std::sqrt(var + eps);
        (*invstd)[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            double xh = (xr[j] - mean) * is;
            (*xhat)[r * d + j] = xh;
            out.data[r * d + j] = gamma->value.data[j] * xh + beta->value.data[j];
        }
    }
    return make(std::move(out), {x, gamma, beta},
                [x, gamma, beta, d, nrows, xhat, invstd](Node& n) {
        for (std::size_t r = 0; r < nrows; ++r) {
            const double* g = n.grad.data.data() + r * d;
            const double* xh = xhat->data() + r * d;
            if (gamma->requires_grad || beta->requires_grad)
                for (std::size_t j = 0; j < d; ++j) {
                    if (gamma->requires_grad) gamma->grad.data[j] += g[j] * xh[j];
                    if (beta->requires_grad) beta->grad.data[j] += g[j];
                }
            if (x->requires_grad) {
                double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    double dxh = g[j] * gamma->value.data[j];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh[j];
                }
                double is = (*invstd)[r];
                double dn = static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    double dxh = g[j] * gamma->value.data[j];
                    x->grad.data[r * d + j] +=
                        is / dn * (dn * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                }
            }
        }
    });
}

Var sigmoid(const Var& x) {
    return unary(x,
                 [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                 [](double, double y) { return y * (1.0 - y); });
}

Var gelu(const Var& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return unary(x,
                 [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
                 [](double v, double) {
                     return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) +
                            v * inv_sqrt2pi * std::exp(-0.5 * v * v);
                 });
}

Var relu(const Var& x) {
    return unary(x,
                 [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var tanh_op(const Var& x) {
    return unary(x,
                 [](double v) { return std::tanh(v); },
                 [](double, double y) { return 1.0 - y * y; });
}

Var exp_op(const Var& x) {
    return unary(x,
                 [](double v) { return std::exp(v); },
                 [](double, double y) { return y; });
}

Var log_op(const Var& x) {
    return unary(x,
                 [](double v) { return std::log(v); },
                 [](double v, double) { return 1.0 / v; });
}

Var clamp(const Var& x, double lo, double hi) {
    return unary(x,
                 [lo, hi](double v) { return std::min(hi, std::max(lo, v)); },
                 [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Var pow_const(const Var& x, double e) {
    return unary(x,
                 [e](double v) { return std::pow(v, e); },
                 [e](double v, double) { return e * std::pow(v, e - 1.0); });
}

Var dropout(const Var& x, double p, Rng& rng, bool training) {
    if (!training || p <= 0.0) return x;
    if (p >= 1.0) throw ConfigError("dropout: p must be < 1");
    double keep_scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(x->value.numel());
    Tensor out(x->value.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        double m = rng.bernoulli(p) ? 0.0 : keep_scale;
        (*mask)[i] = m;
        out.data[i] = x->value.data[i] * m;
    }
    return make(std::move(out), {x}, [x, mask](Node& n) {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            x->grad.data[i] += n.grad.data[i] * (*mask)[i];
    });
}

Var linear_interpolate_1d(const Var& x, std::size_t l_dst) {
    if (l_dst == 0) throw DimensionError("linear_interpolate_1d: destination length 0");
    std::size_t d = x->value.rows(), l_src = x->value.cols();
    Tensor out({d, l_dst});
    // (i0, i1, frac) per destination column
    auto plan = std::make_shared<std::vector<std::tuple<std::size_t, std::size_t, double>>>(l_dst);
    for (std::size_t j = 0; j < l_dst; ++j) {
        double pos = 0.0;
        if (l_dst > 1 && l_src > 1)
            pos = static_cast<double>(j) * static_cast<double>(l_src - 1) /
                  static_cast<double>(l_dst - 1);
        std::size_t i0 = static_cast<std::size_t>(pos);
        if (i0 >= l_src - 1 && l_src > 1) i0 = l_src - 2;
        std::size_t i1 = (l_src > 1) ? i0 + 1 : 0;
        double frac = (l_src > 1) ? pos - static_cast<double>(i0) : 0.0;
        (*plan)[j] = {i0, i1, frac};
        for (std::size_t r = 0; r < d; ++r)
            out.at(r, j) = (1.0 - frac) * x->value.at(r, i0) + frac * x->value.at(r, i1);
    }
    return make(std::move(out), {x}, [x, d, l_dst, plan](Node& n) {
        if (!x->requires_grad) return;
        for (std::size_t j = 0; j < l_dst; ++j) {
            auto [i0, i1, frac] = (*plan)[j];
            for (std::size_t r = 0; r < d; ++r) {
                double g = n.grad.at(r, j);
                x->grad.at(r, i0) += (1.0 - frac) * g;
                x->grad.at(r, i1) += frac * g;
            }
        }
    });
}

Var avgpool1d(const Var& x, std::size_t factor) {
    if (factor == 0) throw ConfigError("avgpool1d: factor must be positive");
    std::size_t d = x->value.rows(), len = x->value.cols();
    std::size_t t_out = (len + factor - 1) / factor;
    Tensor out({d, t_out});
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t t = 0; t < t_out; ++t) {
            std::size_t s0 = t * factor, s1 = std::min(len, s0 + factor);
            double acc = 0.0;
            for (std::size_t s = s0; s < s1; ++s) acc += x->value.at(r, s);
            out.at(r, t) = acc / static_cast<double>(s1 - s0);
        }
    return make(std::move(out), {x}, [x, d, len, t_out, factor](Node& n) {
        if (!x->requires_grad) return;
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t t = 0; t < t_out; ++t) {
                std::size_t s0 = t * factor, s1 = std::min(len, s0 + factor);
                double g = n.grad.at(r, t) / static_cast<double>(s1 - s0);
                for (std::size_t s = s0; s < s1; ++s) x->grad.at(r, s) += g;
            }
    });
}

Var slice_cols(const Var& x, std::size_t c0, std::size_t c1) {
    std::size_t m = x->value.rows(), ncols = x->value.cols();
    if (c0 >= c1 || c1 > ncols) throw DimensionError("slice_cols: bad range");
    Tensor out({m, c1 - c0});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = c0; j < c1; ++j) out.at(i, j - c0) = x->value.at(i, j);
    return make(std::move(out), {x}, [x, m, c0, c1](Node& n) {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = c0; j < c1; ++j) x->grad.at(i, j) += n.grad.at(i, j - c0);
    });
}

Var slice_rows(const Var& x, std::size_t r0, std::size_t r1) {
    std::size_t nrows = x->value.rows(), ncols = x->value.cols();
    if (r0 >= r1 || r1 > nrows) throw DimensionError("slice_rows: bad range");
    Tensor out({r1 - r0, ncols});
    std::copy(x->value.data.begin() + r0 * ncols, x->value.data.begin() + r1 * ncols,
              out.data.begin());
    return make(std::move(out), {x}, [x, r0, r1, ncols](Node& n) {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < (r1 - r0) * ncols; ++i)
            x->grad.data[r0 * ncols + i] += n.grad.data[i];
    });
}

Var concat_rows(const std::vector<Var>& xs) {
    if (xs.empty()) throw DimensionError("concat_rows: empty input");
    std::size_t ncols = xs[0]->value.cols(), total = 0;
    for (const auto& v : xs) {
        if (v->value.cols() != ncols) throw DimensionError("concat_rows: column mismatch");
        total += v->value.rows();
    }
    Tensor out({total, ncols});
    std::size_t off = 0;
    for (const auto& v : xs) {
        std::copy(v->value.data.begin(), v->value.data.end(), out.data.begin() + off);
        off += v->value.numel();
    }
    return make(std::move(out), xs, [xs](Node& n) {
        std::size_t off = 0;
        for (const auto& v : xs) {
            if (v->requires_grad)
                for (std::size_t i = 0; i < v->value.numel(); ++i)
                    v->grad.data[i] += n.grad.data[off + i];
            off += v->value.numel();
        }
    });
}

Var concat_cols(const std::vector<Var>& xs) {
    if (xs.empty()) throw DimensionError("concat_cols: empty input");
    std::size_t m = xs[0]->value.rows(), total = 0;
    for (const auto& v : xs) {
        if (v->value.rows() != m) throw DimensionError("concat_cols: row mismatch");
        total += v->value.cols();
    }
    Tensor out({m, total});
    std::size_t off = 0;
    for (const auto& v : xs) {
        std::size_t c = v->value.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) out.at(i, off + j) = v->value.at(i, j);
        off += c;
    }
    return make(std::move(out), xs, [xs, m](Node& n) {
        std::size_t off = 0;
        for (const auto& v : xs) {
            std::size_t c = v->value.cols();
            if (v->requires_grad)
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < c; ++j) v->grad.at(i, j) += n.grad.at(i, off + j);
            off += c;
        }
    });
}

Var reshape(const Var& x, std::vector<std::size_t> shape) {
    if (shape_numel(shape) != x->value.numel())
        throw DimensionError("reshape: element count mismatch");
    Tensor out;
    out.shape = std::move(shape);
    out.data = x->value.data;
    return make(std::move(out), {x}, [x](Node& n) {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < n.grad.numel(); ++i) x->grad.data[i] += n.grad.data[i];
    });
}

Var sum(const Var& x) {
    double acc = 0.0;
    for (double v : x->value.data) acc += v;
    return make(Tensor::scalar(acc), {x}, [x](Node& n) {
        if (!x->requires_grad) return;
        double g = n.grad.data[0];
        for (std::size_t i = 0; i < x->value.numel(); ++i) x->grad.data[i] += g;
    });
}

Var mean(const Var& x) {
    return scalar_mul(sum(x), 1.0 / static_cast<double>(x->value.numel()));
}

Var linear(const Var& x, const Var& w, const Var& b) {
    return add_rowvec(matmul(x, w), b);
}

} // namespace cpf::ad
