#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <vector>

#include "mambo/rng.hpp"
#include "mambo/scans.hpp"

using namespace mambo;

namespace {

Mat<double> random_mat(Rng& rng, index_t r, index_t c, double lo = -1.0, double hi = 1.0) {
    Mat<double> m(r, c);
    for (index_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
    return m;
}

// Reduces a matrix output to a scalar with fixed (seed-determined) weights
// so every element contributes to the checked gradient.
Var weighted_sum(Tape<double>& t, Var y, std::uint64_t seed) {
    Rng rng(seed);
    const Mat<double>& v = t.value(y);
    Var w = t.leaf(random_mat(rng, v.rows(), v.cols()), false);
    Var ones_col = t.leaf(Mat<double>(v.cols(), 1, 1.0), false);
    Var row = t.matmul(t.mul(y, w), ones_col);  // R x 1
    Var ones_row = t.leaf(Mat<double>(v.rows(), 1, 1.0), false);
    return t.matmul_tn(row, ones_row);  // 1 x 1
}

using BuildFn = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

// Central finite differences against the tape gradient, every element of
// every input.
void check_grads(std::vector<Mat<double>> inputs, const BuildFn& build, double tol = 5e-6,
                 double h = 1e-6) {
    auto eval = [&](const std::vector<Mat<double>>& ins, std::vector<Mat<double>>* grads) {
        Tape<double> t;
        std::vector<Var> vars;
        for (const auto& m : ins) vars.push_back(t.leaf(m, true));
        Var loss = build(t, vars);
        REQUIRE(t.value(loss).rows() == 1);
        REQUIRE(t.value(loss).cols() == 1);
        const double l = t.value(loss)(0, 0);
        if (grads) {
            t.backward(loss);
            grads->clear();
            for (std::size_t i = 0; i < vars.size(); ++i) {
                if (t.grad_present(vars[i]))
                    grads->push_back(t.grad(vars[i]));
                else
                    grads->push_back(Mat<double>(ins[i].rows(), ins[i].cols()));
            }
        }
        return l;
    };

    std::vector<Mat<double>> grads;
    eval(inputs, &grads);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (index_t j = 0; j < inputs[i].size(); ++j) {
            std::vector<Mat<double>> plus = inputs, minus = inputs;
            plus[i].data()[j] += h;
            minus[i].data()[j] -= h;
            const double fd = (eval(plus, nullptr) - eval(minus, nullptr)) / (2 * h);
            const double ad = grads[i].data()[j];
            const double err = std::abs(fd - ad) / std::max({1.0, std::abs(fd), std::abs(ad)});
            INFO("input ", i, " element ", j, " fd=", fd, " ad=", ad);
            CHECK(err < tol);
        }
    }
}

}  // namespace

TEST_CASE("arithmetic and matmul family") {
    Rng rng(1);
    check_grads({random_mat(rng, 3, 4), random_mat(rng, 3, 4)},
                [&](Tape<double>& t, const std::vector<Var>& v) {
                    return weighted_sum(t, t.mul(t.add(v[0], v[1]), t.sub(v[0], v[1])), 101);
                });
    check_grads({random_mat(rng, 3, 4), random_mat(rng, 4, 2)},
                [&](Tape<double>& t, const std::vector<Var>& v) {
                    return weighted_sum(t, t.scale(t.matmul(v[0], v[1]), 1.7), 102);
                });
    check_grads({random_mat(rng, 3, 4), random_mat(rng, 5, 4)},
                [&](Tape<double>& t, const std::vector<Var>& v) {
                    return weighted_sum(t, t.matmul_nt(v[0], v[1]), 103);
                });
    check_grads({random_mat(rng, 4, 3), random_mat(rng, 4, 5)},
                [&](Tape<double>& t, const std::vector<Var>& v) {
                    return weighted_sum(t, t.matmul_tn(v[0], v[1]), 104);
                });
}

TEST_CASE("broadcast and structural ops") {
    Rng rng(3);
    check_grads({random_mat(rng, 4, 3), random_mat(rng, 1, 3)},
                [&](Tape<double>& t, const std::vector<Var>& v) {
                    return weighted_sum(t, t.add_row_broadcast(v[0], v[1]), 105);
                });
    check_grads({random_mat(rng, 4, 3), random_mat(rng, 1, 3)},
                [&](Tape<double>& t, const std::vector<Var>& v) {
                    return weighted_sum(t, t.mul_row_broadcast(v[0], v[1]), 106);
                });
    check_grads({random_mat(rng, 3, 2)}, [&](Tape<double>& t, const std::vector<Var>& v) {
        return weighted_sum(t, t.repeat_cols(v[0], 3), 107);
    });
    check_grads({random_mat(rng, 4, 6)}, [&](Tape<double>& t, const std::vector<Var>& v) {
        Var a = t.slice_cols(v[0], 0, 2);
        Var b = t.slice_cols(v[0], 2, 6);
        return weighted_sum(t, t.concat_cols({b, a}), 108);
    });
    check_grads({random_mat(rng, 5, 3)}, [&](Tape<double>& t, const std::vector<Var>& v) {
        return weighted_sum(t, t.reverse_rows(v[0]), 109);
    });
}

TEST_CASE("nonlinearities") {
    Rng rng(5);
    for (int which = 0; which < 6; ++which) {
        check_grads({random_mat(rng, 3, 4, -2.0, 2.0)},
                    [&, which](Tape<double>& t, const std::vector<Var>& v) {
                        Var y;
                        switch (which) {
                            case 0: y = t.silu(v[0]); break;
                            case 1: y = t.sigmoid(v[0]); break;
                            case 2: y = t.tanh_op(v[0]); break;
                            case 3: y = t.softplus(v[0]); break;
                            case 4: y = t.exp_op(v[0]); break;
                            default: y = t.clamp(v[0], -1.5, 1.5); break;
                        }
                        return weighted_sum(t, y, 110);
                    });
    }
}

TEST_CASE("normalization and softmax") {
    Rng rng(7);
    check_grads({random_mat(rng, 4, 5), random_mat(rng, 1, 5, 0.5, 1.5)},
                [&](Tape<double>& t, const std::vector<Var>& v) {
                    return weighted_sum(t, t.rmsnorm_rows(v[0], v[1], 1e-6), 111);
                });
    check_grads({random_mat(rng, 3, 5)}, [&](Tape<double>& t, const std::vector<Var>& v) {
        return weighted_sum(t, t.softmax_rows(v[0]), 112);
    });
    check_grads({random_mat(rng, 6, 1)}, [&](Tape<double>& t, const std::vector<Var>& v) {
        return weighted_sum(t, t.softmax_col(v[0]), 113);
    });
    check_grads({random_mat(rng, 3, 8, 0.2, 1.0)},
                [&](Tape<double>& t, const std::vector<Var>& v) {
                    return weighted_sum(t, t.normalize_segments(v[0], 4), 114);
                });
}

TEST_CASE("causal depthwise conv") {
    Rng rng(9);
    check_grads({random_mat(rng, 6, 3), random_mat(rng, 4, 3), random_mat(rng, 1, 3)},
                [&](Tape<double>& t, const std::vector<Var>& v) {
                    return weighted_sum(t, t.causal_dwconv(v[0], v[1], v[2]), 115);
                });
    // shorter than the kernel
    check_grads({random_mat(rng, 2, 3), random_mat(rng, 4, 3), random_mat(rng, 1, 3)},
                [&](Tape<double>& t, const std::vector<Var>& v) {
                    return weighted_sum(t, t.causal_dwconv(v[0], v[1], v[2]), 116);
                });
}

TEST_CASE("selective scan adjoint") {
    Rng rng(11);
    const index_t T = 5, C = 3, S = 4;
    check_grads({random_mat(rng, T, C), random_mat(rng, T, 1, 0.2, 0.9), random_mat(rng, T, S),
                 random_mat(rng, T, S), random_mat(rng, C, S, -2.0, -0.2), random_mat(rng, 1, C)},
                [&](Tape<double>& t, const std::vector<Var>& v) {
                    Var y = selective_scan_op(t, v[0], v[1], v[2], v[3], v[4], v[5]);
                    return weighted_sum(t, y, 117);
                });
}

TEST_CASE("ssd scan adjoint, inclusive and strict") {
    Rng rng(13);
    const index_t T = 5, H = 2, P = 3, S = 4;
    for (bool strict : {false, true}) {
        check_grads({random_mat(rng, T, H * P), random_mat(rng, T, H, 0.1, 0.9),
                     random_mat(rng, T, S), random_mat(rng, T, S)},
                    [&, strict](Tape<double>& t, const std::vector<Var>& v) {
                        Var y = ssd_scan_op(t, v[0], v[1], v[2], v[3], strict, H);
                        return weighted_sum(t, y, 118);
                    });
    }
}

TEST_CASE("gdn scan adjoint") {
    Rng rng(15);
    const index_t T = 5, H = 2, P = 3, S = 4;
    check_grads({random_mat(rng, T, H * P), random_mat(rng, T, H, 0.2, 0.95),
                 random_mat(rng, T, H, 0.1, 0.9), random_mat(rng, T, H * S),
                 random_mat(rng, T, H * S)},
                [&](Tape<double>& t, const std::vector<Var>& v) {
                    Var y = gdn_scan_op(t, v[0], v[1], v[2], v[3], v[4]);
                    return weighted_sum(t, y, 119);
                });
}

TEST_CASE("backward accumulates through shared subexpressions") {
    // y = x*x + x used twice; dy/dx = 2x + 1
    Tape<double> t;
    Mat<double> xm(1, 1);
    xm(0, 0) = 3.0;
    Var x = t.leaf(xm, true);
    Var y = t.add(t.mul(x, x), x);
    t.backward(y);
    CHECK(t.grad(x)(0, 0) == doctest::Approx(7.0).epsilon(1e-12));
}
