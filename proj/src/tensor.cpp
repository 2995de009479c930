#include "eflow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "eflow/flops.hpp"

namespace eflow {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int e : s) {
        if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
        n *= e;
    }
    return n;
}

namespace {

std::shared_ptr<TensorImpl> new_impl(Shape shape, std::vector<double> val) {
    auto p = std::make_shared<TensorImpl>();
    if (shape_numel(shape) != static_cast<std::int64_t>(val.size()))
        throw ShapeError("value count does not match shape " + shape_str(shape));
    p->shape = std::move(shape);
    p->val = std::move(val);
    return p;
}

thread_local Tape* g_tape = nullptr;

void require_2d(const Tensor& t, const char* op) {
    if (t.shape().size() != 2)
        throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace

Tensor wrap_impl(std::shared_ptr<TensorImpl> p) { return Tensor(std::move(p)); }

Tensor Tensor::zeros(const Shape& shape) {
    return wrap_impl(new_impl(shape, std::vector<double>(shape_numel(shape), 0.0)));
}

Tensor Tensor::full(const Shape& shape, double v) {
    return wrap_impl(new_impl(shape, std::vector<double>(shape_numel(shape), v)));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values) {
    auto t = wrap_impl(new_impl(shape, std::move(values)));
    autodiff::check_finite("from", t.values());
    return t;
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = stddev * rng.normal();
    return wrap_impl(new_impl(shape, std::move(v)));
}

int Tensor::rows() const {
    require_2d(*this, "rows");
    return p_->shape[0];
}

int Tensor::cols() const {
    require_2d(*this, "cols");
    return p_->shape[1];
}

double Tensor::item() const {
    if (size() != 1) throw UsageError("item() on non-scalar tensor " + shape_str(shape()));
    return p_->val[0];
}

double Tensor::at(int r, int c) const {
    require_2d(*this, "at");
    return p_->val[static_cast<std::size_t>(r) * p_->shape[1] + c];
}

const std::vector<double>& Tensor::grad() const {
    if (p_->grad.empty()) throw UsageError("grad accessed before backward reached this tensor");
    return p_->grad;
}

void Tensor::zero_grad() {
    std::fill(p_->grad.begin(), p_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
    auto p = std::make_shared<TensorImpl>();
    p->shape = p_->shape;
    p->val = p_->val;
    p->requires_grad = false;
    return wrap_impl(p);
}

Tensor Tensor::clone() const {
    auto p = std::make_shared<TensorImpl>();
    p->shape = p_->shape;
    p->val = p_->val;
    p->requires_grad = p_->requires_grad;
    return wrap_impl(p);
}

Tape* active_tape() { return g_tape; }

TapeScope::TapeScope(Tape& t) : prev_(g_tape) { g_tape = &t; }
TapeScope::~TapeScope() { g_tape = prev_; }

void Tape::backward(const Tensor& output) {
    if (output.size() != 1) throw UsageError("backward requires a scalar output");
    auto out = output.impl();
    out->grad.assign(1, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->back();
}

void backward(const Tensor& output) {
    if (!g_tape) throw UsageError("backward called with no active tape");
    g_tape->backward(output);
}

namespace autodiff {

bool grad_enabled(std::initializer_list<const Tensor*> inputs) {
    if (!g_tape) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

void check_finite(const char* op, const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) throw NumericsError(std::string(op) + ": non-finite value produced");
}

Tensor make_output(Shape shape, std::vector<double> values, bool requires_grad, const char* op) {
    check_finite(op, values);
    auto p = new_impl(std::move(shape), std::move(values));
    p->requires_grad = requires_grad;
    return wrap_impl(p);
}

void record(const char* op, std::function<void()> back) {
    if (g_tape) g_tape->record(op, std::move(back));
}

void accumulate(const std::shared_ptr<TensorImpl>& t, const std::vector<double>& g) {
    if (!t->requires_grad) return;
    if (t->grad.empty()) t->grad.assign(t->val.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) t->grad[i] += g[i];
}

const std::vector<double>* grad_or_null(const std::shared_ptr<TensorImpl>& t) {
    return t->grad.empty() ? nullptr : &t->grad;
}

}  // namespace autodiff

namespace {

using autodiff::accumulate;
using autodiff::grad_enabled;
using autodiff::grad_or_null;
using autodiff::make_output;
using autodiff::record;

// shared pattern for elementwise binaries with constant per-element weights
template <typename FwdFn, typename BackA, typename BackB>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, FwdFn fwd, BackA da, BackB db) {
    require_same_shape(a, b, op);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
    const bool rg = grad_enabled({&a, &b});
    Tensor y = make_output(a.shape(), std::move(out), rg, op);
    if (rg) {
        auto ai = a.impl(), bi = b.impl(), yi = y.impl();
        record(op, [ai, bi, yi, da, db] {
            const auto* g = grad_or_null(yi);
            if (!g) return;
            if (ai->requires_grad) {
                std::vector<double> ga(g->size());
                for (std::size_t i = 0; i < g->size(); ++i)
                    ga[i] = (*g)[i] * da(ai->val[i], bi->val[i]);
                accumulate(ai, ga);
            }
            if (bi->requires_grad) {
                std::vector<double> gb(g->size());
                for (std::size_t i = 0; i < g->size(); ++i)
                    gb[i] = (*g)[i] * db(ai->val[i], bi->val[i]);
                accumulate(bi, gb);
            }
        });
    }
    return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    FlopCounter::add(flop_cost::elementwise_mul(a.size()));
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double s) {
    FlopCounter::add(flop_cost::elementwise_mul(a.size()));
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * s;
    const bool rg = grad_enabled({&a});
    Tensor y = make_output(a.shape(), std::move(out), rg, "scale");
    if (rg) {
        auto ai = a.impl(), yi = y.impl();
        record("scale", [ai, yi, s] {
            const auto* g = grad_or_null(yi);
            if (!g) return;
            std::vector<double> ga(g->size());
            for (std::size_t i = 0; i < g->size(); ++i) ga[i] = (*g)[i] * s;
            accumulate(ai, ga);
        });
    }
    return y;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    require_2d(x, "add_rowvec");
    const int n = x.rows(), d = x.cols();
    if (v.size() != d) throw ShapeError("add_rowvec: vector length != column count");
    const auto& xv = x.values();
    const auto& vv = v.values();
    std::vector<double> out(xv.size());
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) out[r * d + c] = xv[r * d + c] + vv[c];
    const bool rg = grad_enabled({&x, &v});
    Tensor y = make_output(x.shape(), std::move(out), rg, "add_rowvec");
    if (rg) {
        auto xi = x.impl(), vi = v.impl(), yi = y.impl();
        record("add_rowvec", [xi, vi, yi, n, d] {
            const auto* g = grad_or_null(yi);
            if (!g) return;
            accumulate(xi, *g);
            if (vi->requires_grad) {
                std::vector<double> gv(d, 0.0);
                for (int r = 0; r < n; ++r)
                    for (int c = 0; c < d; ++c) gv[c] += (*g)[r * d + c];
                accumulate(vi, gv);
            }
        });
    }
    return y;
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
    require_2d(x, "mul_rowvec");
    const int n = x.rows(), d = x.cols();
    if (v.size() != d) throw ShapeError("mul_rowvec: vector length != column count");
    FlopCounter::add(flop_cost::elementwise_mul(x.size()));
    const auto& xv = x.values();
    const auto& vv = v.values();
    std::vector<double> out(xv.size());
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) out[r * d + c] = xv[r * d + c] * vv[c];
    const bool rg = grad_enabled({&x, &v});
    Tensor y = make_output(x.shape(), std::move(out), rg, "mul_rowvec");
    if (rg) {
        auto xi = x.impl(), vi = v.impl(), yi = y.impl();
        record("mul_rowvec", [xi, vi, yi, n, d] {
            const auto* g = grad_or_null(yi);
            if (!g) return;
            if (xi->requires_grad) {
                std::vector<double> gx(xi->val.size());
                for (int r = 0; r < n; ++r)
                    for (int c = 0; c < d; ++c) gx[r * d + c] = (*g)[r * d + c] * vi->val[c];
                accumulate(xi, gx);
            }
            if (vi->requires_grad) {
                std::vector<double> gv(d, 0.0);
                for (int r = 0; r < n; ++r)
                    for (int c = 0; c < d; ++c) gv[c] += (*g)[r * d + c] * xi->val[r * d + c];
                accumulate(vi, gv);
            }
        });
    }
    return y;
}

Tensor mul_colvec(const Tensor& x, const Tensor& v) {
    require_2d(x, "mul_colvec");
    const int n = x.rows(), d = x.cols();
    if (v.size() != n) throw ShapeError("mul_colvec: vector length != row count");
    FlopCounter::add(flop_cost::elementwise_mul(x.size()));
    const auto& xv = x.values();
    const auto& vv = v.values();
    std::vector<double> out(xv.size());
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) out[r * d + c] = xv[r * d + c] * vv[r];
    const bool rg = grad_enabled({&x, &v});
    Tensor y = make_output(x.shape(), std::move(out), rg, "mul_colvec");
    if (rg) {
        auto xi = x.impl(), vi = v.impl(), yi = y.impl();
        record("mul_colvec", [xi, vi, yi, n, d] {
            const auto* g = grad_or_null(yi);
            if (!g) return;
            if (xi->requires_grad) {
                std::vector<double> gx(xi->val.size());
                for (int r = 0; r < n; ++r)
                    for (int c = 0; c < d; ++c) gx[r * d + c] = (*g)[r * d + c] * vi->val[r];
                accumulate(xi, gx);
            }
            if (vi->requires_grad) {
                std::vector<double> gv(n, 0.0);
                for (int r = 0; r < n; ++r)
                    for (int c = 0; c < d; ++c) gv[r] += (*g)[r * d + c] * xi->val[r * d + c];
                accumulate(vi, gv);
            }
        });
    }
    return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const int m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
    if (k != k2)
        throw ShapeError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    FlopCounter::add(flop_cost::matmul(m, k, n));
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    // fixed ascending-p accumulation for bit reproducibility
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            for (int j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
        }
    const bool rg = grad_enabled({&a, &b});
    Tensor y = make_output({m, n}, std::move(out), rg, "matmul");
    if (rg) {
        auto ai = a.impl(), bi = b.impl(), yi = y.impl();
        record("matmul", [ai, bi, yi, m, k, n] {
            const auto* g = grad_or_null(yi);
            if (!g) return;
            if (ai->requires_grad) {
                std::vector<double> ga(static_cast<std::size_t>(m) * k, 0.0);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const double gij = (*g)[i * n + j];
                        for (int p = 0; p < k; ++p) ga[i * k + p] += gij * bi->val[p * n + j];
                    }
                accumulate(ai, ga);
            }
            if (bi->requires_grad) {
                std::vector<double> gb(static_cast<std::size_t>(k) * n, 0.0);
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        const double aip = ai->val[i * k + p];
                        for (int j = 0; j < n; ++j) gb[p * n + j] += aip * (*g)[i * n + j];
                    }
                accumulate(bi, gb);
            }
        });
    }
    return y;
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const int m = a.rows(), n = a.cols();
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    const bool rg = grad_enabled({&a});
    Tensor y = make_output({n, m}, std::move(out), rg, "transpose");
    if (rg) {
        auto ai = a.impl(), yi = y.impl();
        record("transpose", [ai, yi, m, n] {
            const auto* g = grad_or_null(yi);
            if (!g) return;
            std::vector<double> ga(ai->val.size());
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) ga[i * n + j] = (*g)[j * m + i];
            accumulate(ai, ga);
        });
    }
    return y;
}

Tensor sigmoid(const Tensor& a) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-av[i]));
    const bool rg = grad_enabled({&a});
    Tensor y = make_output(a.shape(), std::move(out), rg, "sigmoid");
    if (rg) {
        auto ai = a.impl(), yi = y.impl();
        record("sigmoid", [ai, yi] {
            const auto* g = grad_or_null(yi);
            if (!g) return;
            std::vector<double> ga(g->size());
            for (std::size_t i = 0; i < g->size(); ++i) {
                const double s = yi->val[i];
                ga[i] = (*g)[i] * s * (1.0 - s);
            }
            accumulate(ai, ga);
        });
    }
    return y;
}

Tensor silu(const Tensor& a) { return mul(a, sigmoid(a)); }

Tensor softmax_rows(const Tensor& x) {
    require_2d(x, "softmax_rows");
    const int n = x.rows(), d = x.cols();
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (int r = 0; r < n; ++r) {
        const double* row = &xv[static_cast<std::size_t>(r) * d];
        double mx = row[0];
        for (int c = 1; c < d; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int c = 0; c < d; ++c) {
            const double e = std::exp(row[c] - mx);
            out[r * d + c] = e;
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (int c = 0; c < d; ++c) out[r * d + c] *= inv;
    }
    const bool rg = grad_enabled({&x});
    Tensor y = make_output(x.shape(), std::move(out), rg, "softmax_rows");
    if (rg) {
        auto xi = x.impl(), yi = y.impl();
        record("softmax_rows", [xi, yi, n, d] {
            const auto* g = grad_or_null(yi);
            if (!g) return;
            std::vector<double> gx(g->size());
            for (int r = 0; r < n; ++r) {
                double dot = 0.0;
                for (int c = 0; c < d; ++c) dot += (*g)[r * d + c] * yi->val[r * d + c];
                for (int c = 0; c < d; ++c)
                    gx[r * d + c] = yi->val[r * d + c] * ((*g)[r * d + c] - dot);
            }
            accumulate(xi, gx);
        });
    }
    return y;
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
    require_2d(x, "rms_norm");
    if (eps <= 0.0) throw ConfigError("rms_norm: eps must be positive");
    const int n = x.rows(), d = x.cols();
    if (gain.size() != d) throw ShapeError("rms_norm: gain length != column count");
    FlopCounter::add(flop_cost::rms_norm(n, d));
    const auto& xv = x.values();
    const auto& gv = gain.values();
    std::vector<double> out(xv.size());
    std::vector<double> inv_r(n);
    for (int r = 0; r < n; ++r) {
        double ms = 0.0;
        for (int c = 0; c < d; ++c) {
            const double v = xv[r * d + c];
            ms += v * v;
        }
        ms /= d;
        inv_r[r] = 1.0 / std::sqrt(ms + eps);
        for (int c = 0; c < d; ++c) out[r * d + c] = gv[c] * xv[r * d + c] * inv_r[r];
    }
    const bool rg = grad_enabled({&x, &gain});
    Tensor y = make_output(x.shape(), std::move(out), rg, "rms_norm");
    if (rg) {
        auto xi = x.impl(), gi = gain.impl(), yi = y.impl();
        record("rms_norm", [xi, gi, yi, n, d, inv_r] {
            const auto* g = grad_or_null(yi);
            if (!g) return;
            if (xi->requires_grad) {
                std::vector<double> gx(xi->val.size());
                for (int r = 0; r < n; ++r) {
                    const double ir = inv_r[r];
                    double dot = 0.0;  // sum_j dy_j * gain_j * x_j
                    for (int c = 0; c < d; ++c)
                        dot += (*g)[r * d + c] * gi->val[c] * xi->val[r * d + c];
                    const double k = dot * ir * ir * ir / d;
                    for (int c = 0; c < d; ++c)
                        gx[r * d + c] = (*g)[r * d + c] * gi->val[c] * ir - xi->val[r * d + c] * k;
                }
                accumulate(xi, gx);
            }
            if (gi->requires_grad) {
                std::vector<double> gg(d, 0.0);
                for (int r = 0; r < n; ++r)
                    for (int c = 0; c < d; ++c)
                        gg[c] += (*g)[r * d + c] * xi->val[r * d + c] * inv_r[r];
                accumulate(gi, gg);
            }
        });
    }
    return y;
}

Tensor rope_apply(const Tensor& x, const std::vector<int>& positions, double base) {
    require_2d(x, "rope_apply");
    const int n = x.rows(), d = x.cols();
    if (d % 2 != 0) throw ConfigError("rope_apply: channel count must be even");
    if (static_cast<int>(positions.size()) != n)
        throw ShapeError("rope_apply: positions length != row count");
    FlopCounter::add(flop_cost::rope(n, d));
    const int half = d / 2;
    std::vector<double> cs(static_cast<std::size_t>(n) * half), sn(cs.size());
    for (int r = 0; r < n; ++r)
        for (int i = 0; i < half; ++i) {
            const double theta = positions[r] * std::pow(base, -2.0 * i / d);
            cs[r * half + i] = std::cos(theta);
            sn[r * half + i] = std::sin(theta);
        }
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (int r = 0; r < n; ++r)
        for (int i = 0; i < half; ++i) {
            const double c = cs[r * half + i], s = sn[r * half + i];
            const double a = xv[r * d + 2 * i], b = xv[r * d + 2 * i + 1];
            out[r * d + 2 * i] = a * c - b * s;
            out[r * d + 2 * i + 1] = a * s + b * c;
        }
    const bool rg = grad_enabled({&x});
    Tensor y = make_output(x.shape(), std::move(out), rg, "rope_apply");
    if (rg) {
        auto xi = x.impl(), yi = y.impl();
        record("rope_apply", [xi, yi, n, d, half, cs, sn] {
            const auto* g = grad_or_null(yi);
            if (!g) return;
            std::vector<double> gx(g->size());
            // inverse rotation
            for (int r = 0; r < n; ++r)
                for (int i = 0; i < half; ++i) {
                    const double c = cs[r * half + i], s = sn[r * half + i];
                    const double ga = (*g)[r * d + 2 * i], gb = (*g)[r * d + 2 * i + 1];
                    gx[r * d + 2 * i] = ga * c + gb * s;
                    gx[r * d + 2 * i + 1] = -ga * s + gb * c;
                }
            accumulate(xi, gx);
        });
    }
    return y;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& indices) {
    require_2d(x, "gather_rows");
    const int n = x.rows(), d = x.cols();
    for (int i : indices)
        if (i < 0 || i >= n) throw UsageError("gather_rows: index out of range");
    const auto& xv = x.values();
    std::vector<double> out(indices.size() * static_cast<std::size_t>(d));
    for (std::size_t r = 0; r < indices.size(); ++r)
        std::copy_n(&xv[static_cast<std::size_t>(indices[r]) * d], d, &out[r * d]);
    const bool rg = grad_enabled({&x});
    Tensor y = make_output({static_cast<int>(indices.size()), d}, std::move(out), rg, "gather_rows");
    if (rg) {
        auto xi = x.impl(), yi = y.impl();
        record("gather_rows", [xi, yi, indices, d] {
            const auto* g = grad_or_null(yi);
            if (!g) return;
            std::vector<double> gx(xi->val.size(), 0.0);
            for (std::size_t r = 0; r < indices.size(); ++r)
                for (int c = 0; c < d; ++c) gx[static_cast<std::size_t>(indices[r]) * d + c] += (*g)[r * d + c];
            accumulate(xi, gx);
        });
    }
    return y;
}

Tensor scatter_rows_with_fill(const Tensor& sparse, const std::vector<int>& indices,
                              const Tensor& fill_row, int n_total) {
    require_2d(sparse, "scatter_rows_with_fill");
    const int ns = sparse.rows(), d = sparse.cols();
    if (static_cast<int>(indices.size()) != ns)
        throw ShapeError("scatter_rows_with_fill: index count != sparse row count");
    if (fill_row.size() != d) throw ShapeError("scatter_rows_with_fill: fill row width mismatch");
    std::vector<char> kept(n_total, 0);
    for (int i : indices) {
        if (i < 0 || i >= n_total) throw UsageError("scatter_rows_with_fill: index out of range");
        if (kept[i]) throw UsageError("scatter_rows_with_fill: duplicate index");
        kept[i] = 1;
    }
    const auto& sv = sparse.values();
    const auto& fv = fill_row.values();
    std::vector<double> out(static_cast<std::size_t>(n_total) * d);
    for (int r = 0; r < n_total; ++r)
        if (!kept[r]) std::copy_n(fv.begin(), d, &out[static_cast<std::size_t>(r) * d]);
    for (int r = 0; r < ns; ++r)
        std::copy_n(&sv[static_cast<std::size_t>(r) * d], d, &out[static_cast<std::size_t>(indices[r]) * d]);
    const bool rg = grad_enabled({&sparse, &fill_row});
    Tensor y = make_output({n_total, d}, std::move(out), rg, "scatter_rows_with_fill");
    if (rg) {
        auto si = sparse.impl(), fi = fill_row.impl(), yi = y.impl();
        record("scatter_rows_with_fill", [si, fi, yi, indices, kept, d, n_total] {
            const auto* g = grad_or_null(yi);
            if (!g) return;
            if (si->requires_grad) {
                std::vector<double> gs(si->val.size());
                for (std::size_t r = 0; r < indices.size(); ++r)
                    std::copy_n(&(*g)[static_cast<std::size_t>(indices[r]) * d], d, &gs[r * d]);
                accumulate(si, gs);
            }
            if (fi->requires_grad) {
                std::vector<double> gf(d, 0.0);
                for (int r = 0; r < n_total; ++r)
                    if (!kept[r])
                        for (int c = 0; c < d; ++c) gf[c] += (*g)[static_cast<std::size_t>(r) * d + c];
                accumulate(fi, gf);
            }
        });
    }
    return y;
}

Tensor mean_square(const Tensor& x) {
    const auto& xv = x.values();
    FlopCounter::add(flop_cost::mean_square(xv.size()));
    double acc = 0.0;
    for (double v : xv) acc += v * v;
    const double inv_n = 1.0 / static_cast<double>(xv.size());
    const bool rg = grad_enabled({&x});
    Tensor y = make_output({1}, {acc * inv_n}, rg, "mean_square");
    if (rg) {
        auto xi = x.impl(), yi = y.impl();
        record("mean_square", [xi, yi, inv_n] {
            const auto* g = grad_or_null(yi);
            if (!g) return;
            const double go = (*g)[0];
            std::vector<double> gx(xi->val.size());
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = 2.0 * xi->val[i] * inv_n * go;
            accumulate(xi, gx);
        });
    }
    return y;
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    require_2d(a, "concat");
    require_2d(b, "concat");
    if (axis != 0 && axis != 1) throw UsageError("concat: axis must be 0 or 1");
    const int ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
    const auto& av = a.values();
    const auto& bv = b.values();
    Shape out_shape;
    std::vector<double> out;
    if (axis == 0) {
        if (ac != bc) throw ShapeError("concat axis 0: column counts differ");
        out_shape = {ar + br, ac};
        out.reserve(av.size() + bv.size());
        out.insert(out.end(), av.begin(), av.end());
        out.insert(out.end(), bv.begin(), bv.end());
    } else {
        if (ar != br) throw ShapeError("concat axis 1: row counts differ");
        out_shape = {ar, ac + bc};
        out.resize(static_cast<std::size_t>(ar) * (ac + bc));
        for (int r = 0; r < ar; ++r) {
            std::copy_n(&av[static_cast<std::size_t>(r) * ac], ac, &out[static_cast<std::size_t>(r) * (ac + bc)]);
            std::copy_n(&bv[static_cast<std::size_t>(r) * bc], bc,
                        &out[static_cast<std::size_t>(r) * (ac + bc) + ac]);
        }
    }
    const bool rg = grad_enabled({&a, &b});
    Tensor y = make_output(out_shape, std::move(out), rg, "concat");
    if (rg) {
        auto ai = a.impl(), bi = b.impl(), yi = y.impl();
        record("concat", [ai, bi, yi, axis, ar, ac, bc] {
            const auto* g = grad_or_null(yi);
            if (!g) return;
            if (axis == 0) {
                if (ai->requires_grad)
                    accumulate(ai, std::vector<double>(g->begin(), g->begin() + ai->val.size()));
                if (bi->requires_grad)
                    accumulate(bi, std::vector<double>(g->begin() + ai->val.size(), g->end()));
            } else {
                const int w = ac + bc;
                if (ai->requires_grad) {
                    std::vector<double> ga(ai->val.size());
                    for (int r = 0; r < ar; ++r)
                        std::copy_n(&(*g)[static_cast<std::size_t>(r) * w], ac, &ga[static_cast<std::size_t>(r) * ac]);
                    accumulate(ai, ga);
                }
                if (bi->requires_grad) {
                    std::vector<double> gb(bi->val.size());
                    for (int r = 0; r < ar; ++r)
                        std::copy_n(&(*g)[static_cast<std::size_t>(r) * w + ac], bc,
                                    &gb[static_cast<std::size_t>(r) * bc]);
                    accumulate(bi, gb);
                }
            }
        });
    }
    return y;
}

Tensor slice_cols(const Tensor& x, int first, int count) {
    require_2d(x, "slice_cols");
    const int n = x.rows(), d = x.cols();
    if (first < 0 || count <= 0 || first + count > d) throw UsageError("slice_cols: range out of bounds");
    const auto& xv = x.values();
    std::vector<double> out(static_cast<std::size_t>(n) * count);
    for (int r = 0; r < n; ++r)
        std::copy_n(&xv[static_cast<std::size_t>(r) * d + first], count, &out[static_cast<std::size_t>(r) * count]);
    const bool rg = grad_enabled({&x});
    Tensor y = make_output({n, count}, std::move(out), rg, "slice_cols");
    if (rg) {
        auto xi = x.impl(), yi = y.impl();
        record("slice_cols", [xi, yi, n, d, first, count] {
            const auto* g = grad_or_null(yi);
            if (!g) return;
            std::vector<double> gx(xi->val.size(), 0.0);
            for (int r = 0; r < n; ++r)
                std::copy_n(&(*g)[static_cast<std::size_t>(r) * count], count,
                            &gx[static_cast<std::size_t>(r) * d + first]);
            accumulate(xi, gx);
        });
    }
    return y;
}

}  // namespace eflow
