#pragma once

// Dense 2-D tensors with tape-based reverse-mode autodiff.
//
// Values are held as doubles; in f32 mode every op output is rounded to
// float precision so the forward pass behaves like a 32-bit build while
// gradient accumulation stays in double.

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace lst {

enum class Precision { f32, f64 };

Precision default_precision();
void set_default_precision(Precision p);

// RAII guard for tests that need to flip precision temporarily.
class PrecisionScope {
public:
    explicit PrecisionScope(Precision p) : saved_(default_precision()) {
        set_default_precision(p);
    }
    ~PrecisionScope() { set_default_precision(saved_); }
    PrecisionScope(const PrecisionScope&) = delete;
    PrecisionScope& operator=(const PrecisionScope&) = delete;

private:
    Precision saved_;
};

using Shape = std::vector<int64_t>;

struct TensorData {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until touched by backward
    bool requires_grad = false;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<double> values,
                              bool requires_grad = false);
    // 1xN row vector from values.
    static Tensor row(std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    int64_t rows() const { return d_->shape.size() >= 1 ? d_->shape[0] : 1; }
    int64_t cols() const { return d_->shape.size() >= 2 ? d_->shape[1] : 1; }
    int64_t size() const { return static_cast<int64_t>(d_->value.size()); }

    const std::vector<double>& values() const { return d_->value; }
    std::vector<double>& mutable_values() { return d_->value; }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool rg) { d_->requires_grad = rg; }

    std::vector<double>& grad();  // allocates zeros on first use
    bool has_grad() const { return !d_->grad.empty(); }
    void zero_grad();

    double item() const;
    double at(int64_t r, int64_t c) const { return d_->value[r * cols() + c]; }

    // Value copy that does not participate in any graph.
    Tensor detach() const;

    bool same_object(const Tensor& other) const { return d_ == other.d_; }
    bool all_finite() const;

    std::shared_ptr<TensorData> data() const { return d_; }

private:
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<TensorData> d_;
};

// Records backward closures in construction order; replaying them in
// reverse is a reverse topological traversal of the dynamic graph.
// Activation is scoped: constructing a Tape makes it the active tape,
// destruction restores the previous one.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    void record(std::function<void()> backward);
    size_t size() const { return entries_.size(); }

    // Seeds d(loss)/d(loss) = 1 and runs all closures in reverse order.
    void backward(const Tensor& loss);

private:
    std::vector<std::function<void()>> entries_;
    Tape* prev_ = nullptr;
};

// Suspends recording on the active tape for the current scope.
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape* saved_;
};

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// b must either match a's shape or be a 1xN row broadcast over a's rows.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor exp_(const Tensor& a);
Tensor log_(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor minimum(const Tensor& a, const Tensor& b);

Tensor sum_all(const Tensor& a);   // 1x1
Tensor mean_all(const Tensor& a);  // 1x1

Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);

// Fills entries above the diagonal with a large negative constant so a
// following row softmax implements causal masking.
Tensor causal_mask(const Tensor& scores);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, int64_t start, int64_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, int64_t start, int64_t count);

// Picks t[rows[i], cols[i]] into an Nx1 column.
Tensor gather2d(const Tensor& t, const std::vector<int64_t>& rows,
                const std::vector<int64_t>& cols);

// Mean NLL over unmasked positions; masked positions contribute nothing
// to value or gradient. Throws if every position is masked.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<bool>& mask);

// probs in (0,1) (clamped internally), targets in {0,1}; mean BCE.
Tensor binary_cross_entropy(const Tensor& probs,
                            const std::vector<double>& targets);

// Per-row exact KL(softmax(logits) || softmax(ref_logits)) as Nx1.
// ref_logits is treated as a constant.
Tensor categorical_kl(const Tensor& logits, const Tensor& ref_logits);

}  // namespace lst
