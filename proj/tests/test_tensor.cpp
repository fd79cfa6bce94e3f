#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <random>

#include "lst/tensor.hpp"

using namespace lst;

namespace {

// Builds a scalar loss from an op output by contracting it with a fixed
// random weight tensor, so every output element carries gradient signal.
struct GradCheck {
    std::vector<Tensor> inputs;
    std::function<Tensor(const std::vector<Tensor>&)> f;

    // Analytic gradients with the given precision for the forward pass,
    // FD oracle always evaluated in f64.
    void run(Precision prec, double tol, std::mt19937_64& rng) {
        Tensor out_probe;
        {
            NoGradScope ng;
            out_probe = f(inputs);
        }
        std::uniform_real_distribution<double> wd(-1.0, 1.0);
        std::vector<double> wv(static_cast<size_t>(out_probe.size()));
        for (double& w : wv) w = wd(rng);
        const Tensor w = Tensor::from_values(out_probe.shape(), wv);

        auto loss_value = [&]() {
            NoGradScope ng;
            return sum_all(mul(f(inputs), w)).item();
        };

        // Analytic pass at the precision under test.
        std::vector<std::vector<double>> analytic;
        {
            PrecisionScope ps(prec);
            for (Tensor& x : inputs) {
                x.set_requires_grad(true);
                x.zero_grad();
            }
            Tape tape;
            Tensor loss = sum_all(mul(f(inputs), w));
            tape.backward(loss);
            for (Tensor& x : inputs) analytic.push_back(x.grad());
        }

        // Central differences in f64.
        PrecisionScope ps(Precision::f64);
        const double h = 1e-5;
        for (size_t xi = 0; xi < inputs.size(); ++xi) {
            std::vector<double>& v = inputs[xi].mutable_values();
            double num = 0.0, den = 0.0;
            for (size_t i = 0; i < v.size(); ++i) {
                const double saved = v[i];
                v[i] = saved + h;
                const double fp = loss_value();
                v[i] = saved - h;
                const double fm = loss_value();
                v[i] = saved;
                const double fd = (fp - fm) / (2 * h);
                const double a = analytic[xi][i];
                num += (a - fd) * (a - fd);
                den += a * a + fd * fd;
            }
            const double rel = std::sqrt(num) / (std::sqrt(den) + 1e-12);
            CHECK(rel <= tol);
        }
    }
};

Tensor rand_tensor(int64_t r, int64_t c, std::mt19937_64& rng, double lo = -1.0,
                   double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(static_cast<size_t>(r * c));
    for (double& x : v) x = d(rng);
    return Tensor::from_values({r, c}, std::move(v));
}

struct Dims {
    int64_t r, c;
};

Dims rand_dims(std::mt19937_64& rng, int64_t max_dim = 5) {
    std::uniform_int_distribution<int64_t> d(1, max_dim);
    return {d(rng), d(rng)};
}

void check_both_precisions(GradCheck& gc, std::mt19937_64& rng) {
    {
        GradCheck copy = gc;
        for (Tensor& t : copy.inputs) t = t.detach();
        copy.run(Precision::f64, 1e-6, rng);
    }
    {
        GradCheck copy = gc;
        for (Tensor& t : copy.inputs) t = t.detach();
        copy.run(Precision::f32, 1e-3, rng);
    }
}

constexpr int kTrials = 20;

}  // namespace

TEST_CASE("matmul and transpose gradients") {
    std::mt19937_64 rng(11);
    for (int t = 0; t < kTrials; ++t) {
        Dims a = rand_dims(rng);
        Dims b{a.c, rand_dims(rng).c};
        GradCheck gc{{rand_tensor(a.r, a.c, rng), rand_tensor(b.r, b.c, rng)},
                     [](const std::vector<Tensor>& in) {
                         return matmul(in[0], in[1]);
                     }};
        check_both_precisions(gc, rng);

        GradCheck gt{{rand_tensor(a.r, a.c, rng)},
                     [](const std::vector<Tensor>& in) {
                         return transpose(in[0]);
                     }};
        check_both_precisions(gt, rng);
    }
}

TEST_CASE("elementwise arithmetic gradients") {
    std::mt19937_64 rng(12);
    for (int t = 0; t < kTrials; ++t) {
        Dims d = rand_dims(rng);
        auto two = [&] {
            return std::vector<Tensor>{rand_tensor(d.r, d.c, rng),
                                       rand_tensor(d.r, d.c, rng)};
        };
        GradCheck add_gc{two(), [](const std::vector<Tensor>& in) {
                             return add(in[0], in[1]);
                         }};
        check_both_precisions(add_gc, rng);
        GradCheck sub_gc{two(), [](const std::vector<Tensor>& in) {
                             return sub(in[0], in[1]);
                         }};
        check_both_precisions(sub_gc, rng);
        GradCheck mul_gc{two(), [](const std::vector<Tensor>& in) {
                             return mul(in[0], in[1]);
                         }};
        check_both_precisions(mul_gc, rng);
        GradCheck scale_gc{{rand_tensor(d.r, d.c, rng)},
                           [](const std::vector<Tensor>& in) {
                               return add_scalar(scale(in[0], -1.7), 0.3);
                           }};
        check_both_precisions(scale_gc, rng);
        // Row broadcast of the second operand.
        GradCheck bcast{{rand_tensor(d.r, d.c, rng), rand_tensor(1, d.c, rng)},
                        [](const std::vector<Tensor>& in) {
                            return add(in[0], in[1]);
                        }};
        check_both_precisions(bcast, rng);
    }
}

TEST_CASE("nonlinearity gradients") {
    std::mt19937_64 rng(13);
    for (int t = 0; t < kTrials; ++t) {
        Dims d = rand_dims(rng);
        GradCheck e{{rand_tensor(d.r, d.c, rng)},
                    [](const std::vector<Tensor>& in) { return exp_(in[0]); }};
        check_both_precisions(e, rng);
        GradCheck l{{rand_tensor(d.r, d.c, rng, 0.2, 3.0)},
                    [](const std::vector<Tensor>& in) { return log_(in[0]); }};
        check_both_precisions(l, rng);
        GradCheck s{{rand_tensor(d.r, d.c, rng)},
                    [](const std::vector<Tensor>& in) { return sigmoid(in[0]); }};
        check_both_precisions(s, rng);
        GradCheck si{{rand_tensor(d.r, d.c, rng)},
                     [](const std::vector<Tensor>& in) { return silu(in[0]); }};
        check_both_precisions(si, rng);
    }
}

TEST_CASE("clamp and minimum gradients away from kinks") {
    std::mt19937_64 rng(14);
    for (int t = 0; t < kTrials; ++t) {
        Dims d = rand_dims(rng);
        // Keep samples at least 0.05 away from the clamp boundaries and from
        // ties so central differences stay on one side of each kink.
        Tensor a = rand_tensor(d.r, d.c, rng, -2.0, 2.0);
        for (double& v : a.mutable_values()) {
            if (std::abs(std::abs(v) - 0.5) < 0.05) v += 0.1;
        }
        GradCheck c{{a.detach()}, [](const std::vector<Tensor>& in) {
                        return clamp(in[0], -0.5, 0.5);
                    }};
        check_both_precisions(c, rng);

        Tensor x = rand_tensor(d.r, d.c, rng);
        Tensor y = rand_tensor(d.r, d.c, rng);
        for (size_t i = 0; i < x.values().size(); ++i) {
            if (std::abs(x.values()[i] - y.values()[i]) < 0.05) {
                y.mutable_values()[i] += 0.2;
            }
        }
        GradCheck m{{x.detach(), y.detach()},
                    [](const std::vector<Tensor>& in) {
                        return minimum(in[0], in[1]);
                    }};
        check_both_precisions(m, rng);
    }
}

TEST_CASE("reduction and softmax gradients") {
    std::mt19937_64 rng(15);
    for (int t = 0; t < kTrials; ++t) {
        Dims d = rand_dims(rng);
        GradCheck s{{rand_tensor(d.r, d.c, rng)},
                    [](const std::vector<Tensor>& in) { return sum_all(in[0]); }};
        check_both_precisions(s, rng);
        GradCheck m{{rand_tensor(d.r, d.c, rng)},
                    [](const std::vector<Tensor>& in) { return mean_all(in[0]); }};
        check_both_precisions(m, rng);
        GradCheck sm{{rand_tensor(d.r, d.c, rng)},
                     [](const std::vector<Tensor>& in) {
                         return softmax_rows(in[0]);
                     }};
        check_both_precisions(sm, rng);
        GradCheck lsm{{rand_tensor(d.r, d.c, rng)},
                      [](const std::vector<Tensor>& in) {
                          return log_softmax_rows(in[0]);
                      }};
        check_both_precisions(lsm, rng);
        Dims sq = rand_dims(rng);
        GradCheck cm{{rand_tensor(sq.r, sq.r, rng)},
                     [](const std::vector<Tensor>& in) {
                         return softmax_rows(causal_mask(in[0]));
                     }};
        check_both_precisions(cm, rng);
    }
}

TEST_CASE("layer norm gradients") {
    std::mt19937_64 rng(16);
    for (int t = 0; t < kTrials; ++t) {
        std::uniform_int_distribution<int64_t> cd(2, 6);
        Dims d{rand_dims(rng).r, cd(rng)};
        GradCheck ln{{rand_tensor(d.r, d.c, rng), rand_tensor(1, d.c, rng),
                      rand_tensor(1, d.c, rng)},
                     [](const std::vector<Tensor>& in) {
                         return layer_norm(in[0], in[1], in[2]);
                     }};
        check_both_precisions(ln, rng);
    }
}

TEST_CASE("embedding, concat, slice and gather gradients") {
    std::mt19937_64 rng(17);
    for (int t = 0; t < kTrials; ++t) {
        Dims d = rand_dims(rng);
        std::uniform_int_distribution<int> idx(0, static_cast<int>(d.r) - 1);
        std::vector<int> ids(4);
        for (int& i : ids) i = idx(rng);
        GradCheck emb{{rand_tensor(d.r, d.c, rng)},
                      [ids](const std::vector<Tensor>& in) {
                          return embedding_lookup(in[0], ids);
                      }};
        check_both_precisions(emb, rng);

        Dims e{rand_dims(rng).r, d.c};
        GradCheck cr{{rand_tensor(d.r, d.c, rng), rand_tensor(e.r, e.c, rng)},
                     [](const std::vector<Tensor>& in) {
                         return concat_rows(in[0], in[1]);
                     }};
        check_both_precisions(cr, rng);

        GradCheck sr{{rand_tensor(d.r + 2, d.c, rng)},
                     [d](const std::vector<Tensor>& in) {
                         return slice_rows(in[0], 1, d.r);
                     }};
        check_both_precisions(sr, rng);

        GradCheck cc{{rand_tensor(d.r, d.c, rng), rand_tensor(d.r, 2, rng)},
                     [](const std::vector<Tensor>& in) {
                         return concat_cols({in[0], in[1]});
                     }};
        check_both_precisions(cc, rng);

        GradCheck sc{{rand_tensor(d.r, d.c + 2, rng)},
                     [d](const std::vector<Tensor>& in) {
                         return slice_cols(in[0], 1, d.c);
                     }};
        check_both_precisions(sc, rng);

        std::uniform_int_distribution<int64_t> rr(0, d.r - 1), cc2(0, d.c - 1);
        std::vector<int64_t> grows(3), gcols(3);
        for (int i = 0; i < 3; ++i) {
            grows[i] = rr(rng);
            gcols[i] = cc2(rng);
        }
        GradCheck g{{rand_tensor(d.r, d.c, rng)},
                    [grows, gcols](const std::vector<Tensor>& in) {
                        return gather2d(in[0], grows, gcols);
                    }};
        check_both_precisions(g, rng);
    }
}

TEST_CASE("loss op gradients") {
    std::mt19937_64 rng(18);
    for (int t = 0; t < kTrials; ++t) {
        std::uniform_int_distribution<int64_t> rd(2, 5), cd(2, 6);
        const int64_t r = rd(rng), c = cd(rng);
        std::uniform_int_distribution<int> td(0, static_cast<int>(c) - 1);
        std::vector<int> targets(static_cast<size_t>(r));
        std::vector<bool> mask(static_cast<size_t>(r));
        bool any = false;
        for (size_t i = 0; i < targets.size(); ++i) {
            targets[i] = td(rng);
            mask[i] = rng() % 2 == 0;
            any = any || mask[i];
        }
        if (!any) mask[0] = true;
        GradCheck ce{{rand_tensor(r, c, rng)},
                     [targets, mask](const std::vector<Tensor>& in) {
                         return cross_entropy(in[0], targets, mask);
                     }};
        check_both_precisions(ce, rng);

        std::vector<double> labels(static_cast<size_t>(r));
        for (double& l : labels) l = rng() % 2;
        GradCheck bce{{rand_tensor(r, 1, rng, 0.1, 0.9)},
                      [labels](const std::vector<Tensor>& in) {
                          return binary_cross_entropy(in[0], labels);
                      }};
        check_both_precisions(bce, rng);

        Tensor ref = rand_tensor(r, c, rng);
        GradCheck kl{{rand_tensor(r, c, rng)},
                     [ref](const std::vector<Tensor>& in) {
                         return categorical_kl(in[0], ref);
                     }};
        check_both_precisions(kl, rng);
    }
}

TEST_CASE("f32 mode rounds forward outputs through float") {
    PrecisionScope ps(Precision::f32);
    Tensor a = Tensor::row({1.0 / 3.0});
    Tensor b = Tensor::row({1.0 / 7.0});
    Tensor c = mul(a, b);
    // Inputs are quantized on construction, the product on the way out.
    const float fa = static_cast<float>(1.0 / 3.0);
    const float fb = static_cast<float>(1.0 / 7.0);
    const double expected = static_cast<double>(
        static_cast<float>(static_cast<double>(fa) * static_cast<double>(fb)));
    CHECK(c.item() == expected);

    PrecisionScope ps64(Precision::f64);
    Tensor c64 = mul(Tensor::row({1.0 / 3.0}), Tensor::row({1.0 / 7.0}));
    CHECK(c64.item() == (1.0 / 3.0) * (1.0 / 7.0));
}

TEST_CASE("cross entropy throws when every position is masked") {
    Tensor logits = Tensor::from_values({2, 3}, {0, 1, 2, 3, 4, 5});
    CHECK_THROWS_AS(cross_entropy(logits, {0, 1}, {false, false}),
                    std::invalid_argument);
}

TEST_CASE("tape replay accumulates through shared subexpressions") {
    Tensor x = Tensor::row({2.0});
    x.set_requires_grad(true);
    Tape tape;
    Tensor y = mul(x, x);           // x^2
    Tensor z = add(y, mul(x, y));   // x^2 + x^3
    tape.backward(sum_all(z));
    CHECK(x.grad()[0] == doctest::Approx(2 * 2.0 + 3 * 4.0));
}
