#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "eflow/common.hpp"

namespace eflow {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

struct TensorImpl {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;  // empty until someone accumulates into it
    bool requires_grad = false;
};

// Dense tensor handle with value semantics over a shared immutable payload.
// Values are written once at creation; only grad buffers mutate afterwards
// (and parameter values between steps, via mutable_values()).
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, double v);
    static Tensor from(const Shape& shape, std::vector<double> values);
    static Tensor scalar(double v);
    static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0);

    bool defined() const { return static_cast<bool>(p_); }
    const Shape& shape() const { return p_->shape; }
    int rows() const;
    int cols() const;
    std::int64_t size() const { return static_cast<std::int64_t>(p_->val.size()); }
    const std::vector<double>& values() const { return p_->val; }
    std::vector<double>& mutable_values() { return p_->val; }
    double item() const;
    double at(int r, int c) const;

    bool requires_grad() const { return p_->requires_grad; }
    Tensor& set_requires_grad(bool rg) {
        p_->requires_grad = rg;
        return *this;
    }

    bool has_grad() const { return !p_->grad.empty(); }
    const std::vector<double>& grad() const;
    void zero_grad();

    Tensor detach() const;  // same values, no grad participation
    Tensor clone() const;   // deep copy of values

    const std::shared_ptr<TensorImpl>& impl() const { return p_; }

  private:
    explicit Tensor(std::shared_ptr<TensorImpl> p) : p_(std::move(p)) {}
    std::shared_ptr<TensorImpl> p_;
    friend Tensor wrap_impl(std::shared_ptr<TensorImpl>);
};

Tensor wrap_impl(std::shared_ptr<TensorImpl> p);

// Backward graph: an ordered record of nodes whose insertion order is the
// topological order. Replaying in reverse visits each node exactly once.
class Tape {
  public:
    void backward(const Tensor& output);  // output must be scalar
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }
    void record(const char* op, std::function<void()> back) {
        nodes_.push_back({op, std::move(back)});
    }

  private:
    struct Node {
        const char* op;
        std::function<void()> back;
    };
    std::vector<Node> nodes_;
};

// Ops record onto the thread-local active tape; with no tape active they run
// in pure-eval mode and produce constants.
Tape* active_tape();

class TapeScope {
  public:
    explicit TapeScope(Tape& t);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* prev_;
};

// Hooks for modules that define their own ops (window attention lives in
// attention.cpp but records through the same graph).
namespace autodiff {
bool grad_enabled(std::initializer_list<const Tensor*> inputs);
Tensor make_output(Shape shape, std::vector<double> values, bool requires_grad, const char* op);
void record(const char* op, std::function<void()> back);
void accumulate(const std::shared_ptr<TensorImpl>& t, const std::vector<double>& g);
// nullptr when no downstream consumer seeded this tensor's grad
const std::vector<double>* grad_or_null(const std::shared_ptr<TensorImpl>& t);
void check_finite(const char* op, const std::vector<double>& v);
}  // namespace autodiff

// ---- primitive ops -------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// broadcast a length-d vector over all rows / a length-n vector over columns
Tensor add_rowvec(const Tensor& x, const Tensor& v);
Tensor mul_rowvec(const Tensor& x, const Tensor& v);
Tensor mul_colvec(const Tensor& x, const Tensor& v);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);  // x * sigmoid(x)
Tensor softmax_rows(const Tensor& x);
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps);
// positions are the ORIGINAL raster indices of surviving tokens
Tensor rope_apply(const Tensor& x, const std::vector<int>& positions, double base);
Tensor gather_rows(const Tensor& x, const std::vector<int>& indices);
Tensor scatter_rows_with_fill(const Tensor& sparse, const std::vector<int>& indices,
                              const Tensor& fill_row, int n_total);
Tensor mean_square(const Tensor& x);  // scalar: mean of squared entries
Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor slice_cols(const Tensor& x, int first, int count);

// convenience: runs backward on the active tape
void backward(const Tensor& output);

}  // namespace eflow
