#include "lst/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace lst {

namespace {

Precision g_precision = Precision::f32;
Tape* g_active_tape = nullptr;

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

void quantize(std::vector<double>& v) {
    if (g_precision == Precision::f32) {
        for (double& x : v) x = static_cast<double>(static_cast<float>(x));
    }
}

std::vector<double>& ensure_grad(TensorData* d) {
    if (d->grad.empty()) d->grad.assign(d->value.size(), 0.0);
    return d->grad;
}

[[noreturn]] void dim_error(const std::string& op, const Shape& a, const Shape& b) {
    auto fmt = [](const Shape& s) {
        std::string out = "[";
        for (size_t i = 0; i < s.size(); ++i) {
            if (i) out += "x";
            out += std::to_string(s[i]);
        }
        return out + "]";
    };
    throw std::invalid_argument(op + ": incompatible shapes " + fmt(a) + " and " + fmt(b));
}

bool tracing(std::initializer_list<const Tensor*> inputs) {
    if (!g_active_tape) return false;
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

// Raw row-major matmul: C[m x n] += or = A[m x k] * B[k x n].
void mm(const double* a, const double* b, double* c, int64_t m, int64_t k,
        int64_t n, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = b + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] += A[m x k] * B^T where B is [n x k].
void mm_bt(const double* a, const double* b, double* c, int64_t m, int64_t k,
           int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (int64_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] += acc;
        }
    }
}

// C[k x n] += A^T * B where A is [m x k], B is [m x n].
void mm_at(const double* a, const double* b, double* c, int64_t m, int64_t k,
           int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            double* crow = c + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

Tensor make_out(Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    return t;
}

void finish(Tensor& out) { quantize(out.mutable_values()); }

}  // namespace

Precision default_precision() { return g_precision; }
void set_default_precision(Precision p) { g_precision = p; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->value.assign(shape_numel(d->shape), 0.0);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.d_->value.begin(), t.d_->value.end(), v);
    quantize(t.d_->value);
    return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad) {
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    if (shape_numel(d->shape) != static_cast<int64_t>(values.size())) {
        throw std::invalid_argument("from_values: shape does not match value count");
    }
    d->value = std::move(values);
    quantize(d->value);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::row(std::vector<double> values, bool requires_grad) {
    int64_t n = static_cast<int64_t>(values.size());
    return from_values({1, n}, std::move(values), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from_values({1, 1}, {v}, requires_grad);
}

std::vector<double>& Tensor::grad() { return ensure_grad(d_.get()); }

void Tensor::zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (d_->value.size() != 1) throw std::invalid_argument("item: tensor is not scalar");
    return d_->value[0];
}

Tensor Tensor::detach() const {
    auto d = std::make_shared<TensorData>();
    d->shape = d_->shape;
    d->value = d_->value;
    d->requires_grad = false;
    return Tensor(std::move(d));
}

bool Tensor::all_finite() const {
    for (double v : d_->value) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tape::Tape() {
    prev_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

NoGradScope::NoGradScope() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = saved_; }

void Tape::record(std::function<void()> backward) {
    entries_.push_back(std::move(backward));
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    ensure_grad(loss.data().get())[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const int64_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
    if (k != k2) dim_error("matmul", a.shape(), b.shape());
    Tensor out = make_out({m, n});
    mm(a.values().data(), b.values().data(), out.mutable_values().data(), m, k, n,
       false);
    finish(out);
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        auto ad = a.data(), bd = b.data(), od = out.data();
        Tape::active()->record([ad, bd, od, m, k, n] {
            if (od->grad.empty()) return;
            if (ad->requires_grad) {
                mm_bt(od->grad.data(), bd->value.data(), ensure_grad(ad.get()).data(),
                      m, n, k);
            }
            if (bd->requires_grad) {
                mm_at(ad->value.data(), od->grad.data(), ensure_grad(bd.get()).data(),
                      m, k, n);
            }
        });
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    const int64_t m = a.rows(), n = a.cols();
    Tensor out = make_out({n, m});
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            out.mutable_values()[j * m + i] = a.values()[i * n + j];
        }
    }
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ad = a.data(), od = out.data();
        Tape::active()->record([ad, od, m, n] {
            if (od->grad.empty() || !ad->requires_grad) return;
            auto& g = ensure_grad(ad.get());
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < n; ++j) g[i * n + j] += od->grad[j * m + i];
            }
        });
    }
    return out;
}

namespace {

enum class AddMode { same, row_broadcast };

Tensor add_impl(const Tensor& a, const Tensor& b, double bsign) {
    AddMode mode;
    if (a.shape() == b.shape()) {
        mode = AddMode::same;
    } else if (b.rows() == 1 && b.cols() == a.cols()) {
        mode = AddMode::row_broadcast;
    } else {
        dim_error("add", a.shape(), b.shape());
    }
    Tensor out = make_out(a.shape());
    const int64_t m = a.rows(), n = a.cols();
    auto& ov = out.mutable_values();
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            const double bv =
                mode == AddMode::same ? b.values()[i * n + j] : b.values()[j];
            ov[i * n + j] = a.values()[i * n + j] + bsign * bv;
        }
    }
    finish(out);
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        auto ad = a.data(), bd = b.data(), od = out.data();
        Tape::active()->record([ad, bd, od, mode, bsign, m, n] {
            if (od->grad.empty()) return;
            if (ad->requires_grad) {
                auto& g = ensure_grad(ad.get());
                for (size_t i = 0; i < g.size(); ++i) g[i] += od->grad[i];
            }
            if (bd->requires_grad) {
                auto& g = ensure_grad(bd.get());
                if (mode == AddMode::same) {
                    for (size_t i = 0; i < g.size(); ++i) g[i] += bsign * od->grad[i];
                } else {
                    for (int64_t i = 0; i < m; ++i) {
                        for (int64_t j = 0; j < n; ++j) g[j] += bsign * od->grad[i * n + j];
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_impl(a, b, 1.0); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_impl(a, b, -1.0); }

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) dim_error("mul", a.shape(), b.shape());
    Tensor out = make_out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) {
        out.mutable_values()[i] = a.values()[i] * b.values()[i];
    }
    finish(out);
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        auto ad = a.data(), bd = b.data(), od = out.data();
        Tape::active()->record([ad, bd, od] {
            if (od->grad.empty()) return;
            if (ad->requires_grad) {
                auto& g = ensure_grad(ad.get());
                for (size_t i = 0; i < g.size(); ++i) g[i] += od->grad[i] * bd->value[i];
            }
            if (bd->requires_grad) {
                auto& g = ensure_grad(bd.get());
                for (size_t i = 0; i < g.size(); ++i) g[i] += od->grad[i] * ad->value[i];
            }
        });
    }
    return out;
}

namespace {

// Shared scaffold for elementwise unary ops with grad expressed in terms of
// input x and output y.
Tensor unary_op(const Tensor& a, const std::function<double(double)>& f,
                const std::function<double(double, double)>& dfdx_of_xy) {
    Tensor out = make_out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) {
        out.mutable_values()[i] = f(a.values()[i]);
    }
    quantize(out.mutable_values());
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ad = a.data(), od = out.data();
        Tape::active()->record([ad, od, dfdx_of_xy] {
            if (od->grad.empty() || !ad->requires_grad) return;
            auto& g = ensure_grad(ad.get());
            for (size_t i = 0; i < g.size(); ++i) {
                g[i] += od->grad[i] * dfdx_of_xy(ad->value[i], od->value[i]);
            }
        });
    }
    return out;
}

}  // namespace

Tensor scale(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return c * x; },
                    [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return x + c; },
                    [](double, double) { return 1.0; });
}

Tensor exp_(const Tensor& a) {
    return unary_op(a, [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Tensor log_(const Tensor& a) {
    return unary_op(a, [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& a) {
    return unary_op(a,
                    [](double x) { return x / (1.0 + std::exp(-x)); },
                    [](double x, double) {
                        const double s = 1.0 / (1.0 + std::exp(-x));
                        return s * (1.0 + x * (1.0 - s));
                    });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    return unary_op(a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
                    [lo, hi](double x, double) {
                        return (x > lo && x < hi) ? 1.0 : 0.0;
                    });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) dim_error("minimum", a.shape(), b.shape());
    Tensor out = make_out(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) {
        out.mutable_values()[i] = std::min(a.values()[i], b.values()[i]);
    }
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        auto ad = a.data(), bd = b.data(), od = out.data();
        Tape::active()->record([ad, bd, od] {
            if (od->grad.empty()) return;
            for (size_t i = 0; i < od->grad.size(); ++i) {
                const bool take_a = ad->value[i] <= bd->value[i];
                if (take_a && ad->requires_grad) ensure_grad(ad.get())[i] += od->grad[i];
                if (!take_a && bd->requires_grad) ensure_grad(bd.get())[i] += od->grad[i];
            }
        });
    }
    return out;
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    Tensor out = Tensor::scalar(s);
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ad = a.data(), od = out.data();
        Tape::active()->record([ad, od] {
            if (od->grad.empty() || !ad->requires_grad) return;
            auto& g = ensure_grad(ad.get());
            for (double& v : g) v += od->grad[0];
        });
    }
    return out;
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / a.size()); }

Tensor softmax_rows(const Tensor& a) {
    const int64_t m = a.rows(), n = a.cols();
    Tensor out = make_out(a.shape());
    auto& ov = out.mutable_values();
    for (int64_t i = 0; i < m; ++i) {
        const double* x = a.values().data() + i * n;
        double* y = ov.data() + i * n;
        double mx = x[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (int64_t j = 0; j < n; ++j) y[j] /= z;
    }
    finish(out);
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ad = a.data(), od = out.data();
        Tape::active()->record([ad, od, m, n] {
            if (od->grad.empty() || !ad->requires_grad) return;
            auto& g = ensure_grad(ad.get());
            for (int64_t i = 0; i < m; ++i) {
                const double* p = od->value.data() + i * n;
                const double* dy = od->grad.data() + i * n;
                double dot = 0.0;
                for (int64_t j = 0; j < n; ++j) dot += p[j] * dy[j];
                for (int64_t j = 0; j < n; ++j) g[i * n + j] += p[j] * (dy[j] - dot);
            }
        });
    }
    return out;
}

Tensor log_softmax_rows(const Tensor& a) {
    const int64_t m = a.rows(), n = a.cols();
    Tensor out = make_out(a.shape());
    auto& ov = out.mutable_values();
    for (int64_t i = 0; i < m; ++i) {
        const double* x = a.values().data() + i * n;
        double* y = ov.data() + i * n;
        double mx = x[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int64_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
        const double lse = mx + std::log(z);
        for (int64_t j = 0; j < n; ++j) y[j] = x[j] - lse;
    }
    finish(out);
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ad = a.data(), od = out.data();
        Tape::active()->record([ad, od, m, n] {
            if (od->grad.empty() || !ad->requires_grad) return;
            auto& g = ensure_grad(ad.get());
            for (int64_t i = 0; i < m; ++i) {
                const double* y = od->value.data() + i * n;
                const double* dy = od->grad.data() + i * n;
                double sum_dy = 0.0;
                for (int64_t j = 0; j < n; ++j) sum_dy += dy[j];
                for (int64_t j = 0; j < n; ++j) {
                    g[i * n + j] += dy[j] - std::exp(y[j]) * sum_dy;
                }
            }
        });
    }
    return out;
}

Tensor causal_mask(const Tensor& scores) {
    const int64_t m = scores.rows(), n = scores.cols();
    if (m != n) dim_error("causal_mask", scores.shape(), scores.shape());
    constexpr double kNegInf = -1e9;
    Tensor out = make_out(scores.shape());
    auto& ov = out.mutable_values();
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            ov[i * n + j] = j <= i ? scores.values()[i * n + j] : kNegInf;
        }
    }
    if (tracing({&scores})) {
        out.set_requires_grad(true);
        auto ad = scores.data(), od = out.data();
        Tape::active()->record([ad, od, m, n] {
            if (od->grad.empty() || !ad->requires_grad) return;
            auto& g = ensure_grad(ad.get());
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j <= i; ++j) g[i * n + j] += od->grad[i * n + j];
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
    const int64_t m = x.rows(), n = x.cols();
    if (gain.rows() != 1 || gain.cols() != n) dim_error("layer_norm", x.shape(), gain.shape());
    if (bias.rows() != 1 || bias.cols() != n) dim_error("layer_norm", x.shape(), bias.shape());
    Tensor out = make_out(x.shape());
    std::vector<double> inv_std(m), mean(m);
    auto& ov = out.mutable_values();
    for (int64_t i = 0; i < m; ++i) {
        const double* xi = x.values().data() + i * n;
        double mu = 0.0;
        for (int64_t j = 0; j < n; ++j) mu += xi[j];
        mu /= n;
        double var = 0.0;
        for (int64_t j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= n;
        const double istd = 1.0 / std::sqrt(var + eps);
        mean[i] = mu;
        inv_std[i] = istd;
        for (int64_t j = 0; j < n; ++j) {
            ov[i * n + j] = (xi[j] - mu) * istd * gain.values()[j] + bias.values()[j];
        }
    }
    finish(out);
    if (tracing({&x, &gain, &bias})) {
        out.set_requires_grad(true);
        auto xd = x.data(), gd = gain.data(), bd = bias.data(), od = out.data();
        Tape::active()->record([xd, gd, bd, od, mean, inv_std, m, n] {
            if (od->grad.empty()) return;
            for (int64_t i = 0; i < m; ++i) {
                const double* xi = xd->value.data() + i * n;
                const double* dy = od->grad.data() + i * n;
                const double mu = mean[i], istd = inv_std[i];
                if (gd->requires_grad || bd->requires_grad) {
                    for (int64_t j = 0; j < n; ++j) {
                        const double xhat = (xi[j] - mu) * istd;
                        if (gd->requires_grad) ensure_grad(gd.get())[j] += dy[j] * xhat;
                        if (bd->requires_grad) ensure_grad(bd.get())[j] += dy[j];
                    }
                }
                if (xd->requires_grad) {
                    auto& g = ensure_grad(xd.get());
                    double sum_dg = 0.0, sum_dgx = 0.0;
                    for (int64_t j = 0; j < n; ++j) {
                        const double dg = dy[j] * gd->value[j];
                        const double xhat = (xi[j] - mu) * istd;
                        sum_dg += dg;
                        sum_dgx += dg * xhat;
                    }
                    for (int64_t j = 0; j < n; ++j) {
                        const double dg = dy[j] * gd->value[j];
                        const double xhat = (xi[j] - mu) * istd;
                        g[i * n + j] +=
                            istd * (dg - sum_dg / n - xhat * sum_dgx / n);
                    }
                }
            }
        });
    }
    return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    const int64_t v = table.rows(), d = table.cols();
    const int64_t t = static_cast<int64_t>(ids.size());
    for (int id : ids) {
        if (id < 0 || id >= v) {
            throw std::out_of_range("embedding_lookup: id " + std::to_string(id) +
                                    " outside vocabulary of size " + std::to_string(v));
        }
    }
    Tensor out = make_out({t, d});
    for (int64_t i = 0; i < t; ++i) {
        std::copy_n(table.values().data() + ids[i] * d, d,
                    out.mutable_values().data() + i * d);
    }
    if (tracing({&table})) {
        out.set_requires_grad(true);
        auto td = table.data(), od = out.data();
        Tape::active()->record([td, od, ids, d, t] {
            if (od->grad.empty() || !td->requires_grad) return;
            auto& g = ensure_grad(td.get());
            for (int64_t i = 0; i < t; ++i) {
                const double* dy = od->grad.data() + i * d;
                double* gi = g.data() + ids[i] * d;
                for (int64_t j = 0; j < d; ++j) gi[j] += dy[j];
            }
        });
    }
    return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) dim_error("concat_rows", a.shape(), b.shape());
    const int64_t ra = a.rows(), rb = b.rows(), n = a.cols();
    Tensor out = make_out({ra + rb, n});
    std::copy(a.values().begin(), a.values().end(), out.mutable_values().begin());
    std::copy(b.values().begin(), b.values().end(),
              out.mutable_values().begin() + ra * n);
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        auto ad = a.data(), bd = b.data(), od = out.data();
        Tape::active()->record([ad, bd, od, ra, rb, n] {
            if (od->grad.empty()) return;
            if (ad->requires_grad) {
                auto& g = ensure_grad(ad.get());
                for (int64_t i = 0; i < ra * n; ++i) g[i] += od->grad[i];
            }
            if (bd->requires_grad) {
                auto& g = ensure_grad(bd.get());
                for (int64_t i = 0; i < rb * n; ++i) g[i] += od->grad[ra * n + i];
            }
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& a, int64_t start, int64_t count) {
    const int64_t m = a.rows(), n = a.cols();
    if (start < 0 || count < 0 || start + count > m) {
        throw std::out_of_range("slice_rows: range [" + std::to_string(start) + ", " +
                                std::to_string(start + count) + ") outside " +
                                std::to_string(m) + " rows");
    }
    Tensor out = make_out({count, n});
    std::copy_n(a.values().data() + start * n, count * n,
                out.mutable_values().data());
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ad = a.data(), od = out.data();
        Tape::active()->record([ad, od, start, count, n] {
            if (od->grad.empty() || !ad->requires_grad) return;
            auto& g = ensure_grad(ad.get());
            for (int64_t i = 0; i < count * n; ++i) g[start * n + i] += od->grad[i];
        });
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const int64_t m = parts[0].rows();
    int64_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rows() != m) dim_error("concat_cols", parts[0].shape(), p.shape());
        total += p.cols();
    }
    Tensor out = make_out({m, total});
    int64_t off = 0;
    for (const Tensor& p : parts) {
        const int64_t n = p.cols();
        for (int64_t i = 0; i < m; ++i) {
            std::copy_n(p.values().data() + i * n, n,
                        out.mutable_values().data() + i * total + off);
        }
        off += n;
    }
    bool any_grad = false;
    for (const Tensor& p : parts) any_grad = any_grad || p.requires_grad();
    if (Tape::active() && any_grad) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorData>> pd;
        for (const Tensor& p : parts) pd.push_back(p.data());
        auto od = out.data();
        Tape::active()->record([pd, od, m, total] {
            if (od->grad.empty()) return;
            int64_t off2 = 0;
            for (auto& p : pd) {
                const int64_t n = p->shape[1];
                if (p->requires_grad) {
                    auto& g = ensure_grad(p.get());
                    for (int64_t i = 0; i < m; ++i) {
                        for (int64_t j = 0; j < n; ++j) {
                            g[i * n + j] += od->grad[i * total + off2 + j];
                        }
                    }
                }
                off2 += n;
            }
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& a, int64_t start, int64_t count) {
    const int64_t m = a.rows(), n = a.cols();
    if (start < 0 || count < 0 || start + count > n) {
        throw std::out_of_range("slice_cols: range outside " + std::to_string(n) +
                                " cols");
    }
    Tensor out = make_out({m, count});
    for (int64_t i = 0; i < m; ++i) {
        std::copy_n(a.values().data() + i * n + start, count,
                    out.mutable_values().data() + i * count);
    }
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ad = a.data(), od = out.data();
        Tape::active()->record([ad, od, start, count, m, n] {
            if (od->grad.empty() || !ad->requires_grad) return;
            auto& g = ensure_grad(ad.get());
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < count; ++j) {
                    g[i * n + start + j] += od->grad[i * count + j];
                }
            }
        });
    }
    return out;
}

Tensor gather2d(const Tensor& t, const std::vector<int64_t>& rows,
                const std::vector<int64_t>& cols) {
    if (rows.size() != cols.size()) {
        throw std::invalid_argument("gather2d: rows/cols length mismatch");
    }
    const int64_t m = t.rows(), n = t.cols();
    const int64_t k = static_cast<int64_t>(rows.size());
    Tensor out = make_out({k, 1});
    for (int64_t i = 0; i < k; ++i) {
        if (rows[i] < 0 || rows[i] >= m || cols[i] < 0 || cols[i] >= n) {
            throw std::out_of_range("gather2d: index out of range");
        }
        out.mutable_values()[i] = t.values()[rows[i] * n + cols[i]];
    }
    if (tracing({&t})) {
        out.set_requires_grad(true);
        auto td = t.data(), od = out.data();
        Tape::active()->record([td, od, rows, cols, n, k] {
            if (od->grad.empty() || !td->requires_grad) return;
            auto& g = ensure_grad(td.get());
            for (int64_t i = 0; i < k; ++i) g[rows[i] * n + cols[i]] += od->grad[i];
        });
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<bool>& mask) {
    const int64_t t = logits.rows(), v = logits.cols();
    if (static_cast<int64_t>(targets.size()) != t ||
        static_cast<int64_t>(mask.size()) != t) {
        throw std::invalid_argument("cross_entropy: targets/mask length mismatch");
    }
    int64_t active = 0;
    for (int64_t i = 0; i < t; ++i) {
        if (!mask[i]) continue;
        ++active;
        if (targets[i] < 0 || targets[i] >= v) {
            throw std::out_of_range("cross_entropy: target out of vocabulary");
        }
    }
    if (active == 0) {
        throw std::invalid_argument("cross_entropy: all positions masked");
    }
    double loss = 0.0;
    for (int64_t i = 0; i < t; ++i) {
        if (!mask[i]) continue;
        const double* x = logits.values().data() + i * v;
        double mx = x[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int64_t j = 0; j < v; ++j) z += std::exp(x[j] - mx);
        loss += mx + std::log(z) - x[targets[i]];
    }
    Tensor out = Tensor::scalar(loss / active);
    quantize(out.mutable_values());
    if (tracing({&logits})) {
        out.set_requires_grad(true);
        auto ld = logits.data(), od = out.data();
        Tape::active()->record([ld, od, targets, mask, t, v, active] {
            if (od->grad.empty() || !ld->requires_grad) return;
            auto& g = ensure_grad(ld.get());
            const double dy = od->grad[0] / active;
            for (int64_t i = 0; i < t; ++i) {
                if (!mask[i]) continue;
                const double* x = ld->value.data() + i * v;
                double mx = x[0];
                for (int64_t j = 1; j < v; ++j) mx = std::max(mx, x[j]);
                double z = 0.0;
                for (int64_t j = 0; j < v; ++j) z += std::exp(x[j] - mx);
                for (int64_t j = 0; j < v; ++j) {
                    double p = std::exp(x[j] - mx) / z;
                    g[i * v + j] += dy * (p - (j == targets[i] ? 1.0 : 0.0));
                }
            }
        });
    }
    return out;
}

Tensor binary_cross_entropy(const Tensor& probs,
                            const std::vector<double>& targets) {
    const int64_t n = probs.size();
    if (static_cast<int64_t>(targets.size()) != n) {
        throw std::invalid_argument("binary_cross_entropy: target length mismatch");
    }
    constexpr double kEps = 1e-7;
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double p = std::min(1.0 - kEps, std::max(kEps, probs.values()[i]));
        loss += -(targets[i] * std::log(p) + (1.0 - targets[i]) * std::log(1.0 - p));
    }
    Tensor out = Tensor::scalar(loss / n);
    quantize(out.mutable_values());
    if (tracing({&probs})) {
        out.set_requires_grad(true);
        auto pd = probs.data(), od = out.data();
        Tape::active()->record([pd, od, targets, n, kEps] {
            if (od->grad.empty() || !pd->requires_grad) return;
            auto& g = ensure_grad(pd.get());
            const double dy = od->grad[0] / n;
            for (int64_t i = 0; i < n; ++i) {
                const double p =
                    std::min(1.0 - kEps, std::max(kEps, pd->value[i]));
                g[i] += dy * (-(targets[i] / p) + (1.0 - targets[i]) / (1.0 - p));
            }
        });
    }
    return out;
}

Tensor categorical_kl(const Tensor& logits, const Tensor& ref_logits) {
    if (logits.shape() != ref_logits.shape()) {
        dim_error("categorical_kl", logits.shape(), ref_logits.shape());
    }
    const int64_t m = logits.rows(), n = logits.cols();
    auto log_probs = [n](const double* x, std::vector<double>& out_lp) {
        double mx = x[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int64_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
        const double lse = mx + std::log(z);
        for (int64_t j = 0; j < n; ++j) out_lp[j] = x[j] - lse;
    };
    Tensor out = make_out({m, 1});
    std::vector<double> lp(n), lq(n);
    for (int64_t i = 0; i < m; ++i) {
        log_probs(logits.values().data() + i * n, lp);
        log_probs(ref_logits.values().data() + i * n, lq);
        double kl = 0.0;
        for (int64_t j = 0; j < n; ++j) kl += std::exp(lp[j]) * (lp[j] - lq[j]);
        out.mutable_values()[i] = kl;
    }
    finish(out);
    if (tracing({&logits})) {
        out.set_requires_grad(true);
        auto ld = logits.data(), rd = ref_logits.data(), od = out.data();
        Tape::active()->record([ld, rd, od, m, n] {
            if (od->grad.empty() || !ld->requires_grad) return;
            auto& g = ensure_grad(ld.get());
            std::vector<double> lp(n), lq(n);
            auto log_probs2 = [n](const double* x, std::vector<double>& out_lp) {
                double mx = x[0];
                for (int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
                double z = 0.0;
                for (int64_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
                const double lse = mx + std::log(z);
                for (int64_t j = 0; j < n; ++j) out_lp[j] = x[j] - lse;
            };
            for (int64_t i = 0; i < m; ++i) {
                log_probs2(ld->value.data() + i * n, lp);
                log_probs2(rd->value.data() + i * n, lq);
                const double kl = od->value[i];
                const double dy = od->grad[i];
                for (int64_t j = 0; j < n; ++j) {
                    g[i * n + j] += dy * std::exp(lp[j]) * (lp[j] - lq[j] - kl);
                }
            }
        });
    }
    return out;
}

}  // namespace lst
