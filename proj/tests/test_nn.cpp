#include <doctest.h>

#include <cmath>

#include "cwm/nn.hpp"

using namespace cwm;
using namespace cwm::nn;

TEST_CASE("tape primitives backpropagate") {
    Tape tape;
    Mat a(2, 3);
    for (size_t i = 0; i < a.a.size(); ++i) a.a[i] = 0.1 * (double)i - 0.2;
    Mat b(3, 2);
    for (size_t i = 0; i < b.a.size(); ++i) b.a[i] = 0.3 * (double)i - 0.5;
    Ref ra = tape.leaf(a), rb = tape.leaf(b);
    Ref y = tape.sum_all(tape.matmul(ra, rb));
    tape.backward(y);
    // d(sum(AB))/dA = 1 . B^T
    for (int i = 0; i < 2; ++i)
        for (int k = 0; k < 3; ++k) {
            double expect = 0;
            for (int j = 0; j < 2; ++j) expect += b.at(k, j);
            CHECK(tape.grad(ra).at(i, k) == doctest::Approx(expect));
        }
}

TEST_CASE("grad_check on a quadratic form is near exact") {
    Mat x(1, 4);
    for (int j = 0; j < 4; ++j) x.at(0, j) = 0.3 * j - 0.4;
    auto f = [](Tape& t, Ref in) { return t.sum_all(t.hadamard(in, in)); };
    CHECK(grad_check(f, x) < 1e-7);
}

TEST_CASE("grad_check on a constant function") {
    Mat x(1, 3, 0.5);
    auto f = [](Tape& t, Ref in) { return t.scale(t.sum_all(t.sub(in, in)), 2.0); };
    CHECK(grad_check(f, x) < 1e-7);
}

TEST_CASE("grad_check across tape ops") {
    Rng rng(7);
    Mat x = Mat::randn(2, 6, rng, 0.7);
    auto ops = [](Tape& t, Ref in) {
        Ref a = t.silu_act(in);
        Ref b = t.sigmoid_act(t.scale(in, 0.5));
        Ref c = t.softcap(t.exp_act(t.scale(in, 0.3)), 2.0);
        Ref d = t.concat_cols(t.slice_cols(a, 0, 3), t.slice_cols(b, 3, 6));
        Ref e = t.hadamard(d, c);
        Ref f = t.add_scalar(t.row_sum(e), 0.25);
        return t.sum_all(t.add(f, t.row_sum(c)));
    };
    CHECK(grad_check(ops, x) < 1e-6);
}

TEST_CASE("mlp_apply basics") {
    Rng rng(3);
    // zero-weight net outputs its final bias
    Mlp zero = Mlp::make({3, 2}, rng);
    zero.weights[0] = Mat(3, 2);
    zero.biases[0].at(0, 0) = 1.5;
    zero.biases[0].at(0, 1) = -2.0;
    Mat in(4, 3, 0.7);
    Mat out = mlp_eval(zero, in);
    for (int i = 0; i < 4; ++i) {
        CHECK(out.at(i, 0) == 1.5);
        CHECK(out.at(i, 1) == -2.0);
    }

    // identity single layer
    Mlp ident = Mlp::make({3, 3}, rng);
    ident.weights[0] = Mat::identity(3);
    ident.biases[0] = Mat(1, 3);
    Mat same = mlp_eval(ident, in);
    for (size_t i = 0; i < in.a.size(); ++i) CHECK(same.a[i] == in.a[i]);

    Mat wrong(4, 5, 0.0);
    CHECK_THROWS_AS(mlp_eval(ident, wrong), DimensionError);
}

TEST_CASE("taped mlp matches eval and passes grad check") {
    Rng rng(11);
    Mlp net = Mlp::make({4, 8, 2}, rng);
    Mat x = Mat::randn(3, 4, rng);

    Tape tape;
    Binder bind(tape);
    Ref out = mlp_apply(tape, bind, net, tape.leaf(x));
    Mat ref = mlp_eval(net, x);
    for (size_t i = 0; i < ref.a.size(); ++i)
        CHECK(tape.val(out).a[i] == doctest::Approx(ref.a[i]).epsilon(1e-12));

    auto loss = [&](Tape& t, Ref in) {
        Binder b2(t);
        Ref y = mlp_apply(t, b2, net, in);
        return t.sum_all(t.hadamard(y, y));
    };
    CHECK(grad_check(loss, x) < 1e-4);

    // gradient w.r.t. weights via finite differences on one entry
    Tape t2;
    Binder b3(t2);
    Ref y2 = t2.sum_all(t2.hadamard(mlp_apply(t2, b3, net, t2.leaf(x)),
                                    mlp_apply(t2, b3, net, t2.leaf(x))));
    t2.backward(y2);
    Mat wgrad(net.weights[0].rows, net.weights[0].cols);
    b3.accumulate(net.weights[0], wgrad);
    double h = 1e-6;
    double keep = net.weights[0].at(1, 2);
    net.weights[0].at(1, 2) = keep + h;
    Mat yp = mlp_eval(net, x);
    net.weights[0].at(1, 2) = keep - h;
    Mat ym = mlp_eval(net, x);
    net.weights[0].at(1, 2) = keep;
    double fp = 0, fm = 0;
    for (double v : yp.a) fp += v * v;
    for (double v : ym.a) fm += v * v;
    double fd = (fp - fm) / (2 * h);
    CHECK(std::abs(fd - wgrad.at(1, 2)) / std::max(1.0, std::abs(fd)) < 1e-4);
}

TEST_CASE("st_gate saturation and stochastic mean") {
    Tape tape;
    Mat logits(1, 3);
    logits.at(0, 0) = 20.0;
    logits.at(0, 1) = -20.0;
    logits.at(0, 2) = 0.0;
    Ref g = tape.st_gate(tape.leaf(logits), false, nullptr);
    CHECK(tape.val(g).at(0, 0) == 1.0);
    CHECK(tape.val(g).at(0, 1) == 0.0);

    Rng rng(99);
    double mean = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) mean += st_gate_value(0.0, true, &rng);
    mean /= draws;
    CHECK(mean == doctest::Approx(0.5).epsilon(0.04));

    // straight-through backward is the sigmoid derivative
    Tape t2;
    Ref lr = t2.leaf(logits);
    Ref gate = t2.st_gate(lr, false, nullptr);
    t2.backward(t2.sum_all(gate));
    for (int j = 0; j < 3; ++j) {
        double s = sigmoid(logits.at(0, j));
        CHECK(t2.grad(lr).at(0, j) == doctest::Approx(s * (1 - s)));
    }
}

TEST_CASE("gaussian_nll analytic cases") {
    std::vector<double> x{0.3, -0.7}, mean{0.3, -0.7}, ls{0.0, 0.0};
    CHECK(gaussian_nll(x, mean, ls) == doctest::Approx(2 * 0.5 * kLn2Pi));

    // symmetric in the sign of (x - mean)
    std::vector<double> xp{1.0}, xm{-1.0}, mu{0.0}, s{0.3};
    CHECK(gaussian_nll(xp, mu, s) == doctest::Approx(gaussian_nll(xm, mu, s)));

    // against a direct density evaluation
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        double xv = rng.normal(), mv = rng.normal(), lv = 0.5 * rng.normal();
        double sigma = std::exp(lv);
        double density = std::exp(-(xv - mv) * (xv - mv) / (2 * sigma * sigma)) /
                         (sigma * std::sqrt(2 * 3.14159265358979323846));
        CHECK(gaussian_nll({xv}, {mv}, {lv}) == doctest::Approx(-std::log(density)).epsilon(1e-10));
    }

    // taped row version agrees
    Tape tape;
    Mat xm2(2, 3), mu2(2, 3), ls2(2, 3);
    Rng r2(8);
    for (auto* m : {&xm2, &mu2, &ls2})
        for (auto& v : m->a) v = 0.5 * r2.normal();
    Ref rows = gaussian_nll_rows(tape, tape.leaf(xm2), tape.leaf(mu2), tape.leaf(ls2));
    for (int i = 0; i < 2; ++i)
        CHECK(tape.val(rows).at(i, 0) ==
              doctest::Approx(gaussian_nll(xm2.row_vec(i), mu2.row_vec(i), ls2.row_vec(i))));
}

TEST_CASE("embed_mean pools non-pad tokens") {
    Tape tape;
    Mat table(5, 2);
    for (size_t i = 0; i < table.a.size(); ++i) table.a[i] = (double)i;
    Ref tr = tape.leaf(table);
    std::vector<std::vector<int>> ids{{1, 2, 0, 0}, {0, 0, 0, 0}, {3, 3, 4, 0}};
    Ref pooled = tape.embed_mean(tr, ids);
    CHECK(tape.val(pooled).at(0, 0) == doctest::Approx((table.at(1, 0) + table.at(2, 0)) / 2));
    CHECK(tape.val(pooled).at(1, 0) == 0.0);  // all-pad pools to zero
    CHECK(tape.val(pooled).at(2, 1) == doctest::Approx((2 * table.at(3, 1) + table.at(4, 1)) / 3));

    tape.backward(tape.sum_all(pooled));
    CHECK(tape.grad(tr).at(1, 0) == doctest::Approx(0.5));
    CHECK(tape.grad(tr).at(3, 0) == doctest::Approx(2.0 / 3.0));
    CHECK(tape.grad(tr).at(0, 0) == 0.0);
}

TEST_CASE("optimizer_step update rule") {
    // zero gradient leaves parameters unchanged
    AdamState st;
    st.warmup_steps = 0;
    Mat w(2, 2, 1.0);
    Mat g(2, 2, 0.0);
    Mat before = w;
    optimizer_step(st, {&w}, {&g});
    for (size_t i = 0; i < w.a.size(); ++i) CHECK(w.a[i] == before.a[i]);

    // constant gradient, first step: displacement close to lr
    AdamState st2;
    st2.warmup_steps = 0;
    st2.lr = 1e-3;
    Mat w2(1, 4, 0.0);
    Mat g2(1, 4, 0.37);
    optimizer_step(st2, {&w2}, {&g2});
    for (double v : w2.a) CHECK(std::abs(v) == doctest::Approx(st2.lr).epsilon(1e-4));

    // warmup scales the first step by 1/warmup
    AdamState st3;
    st3.warmup_steps = 100;
    st3.lr = 1e-2;
    Mat w3(1, 1, 0.0);
    Mat g3(1, 1, 1.0);
    optimizer_step(st3, {&w3}, {&g3});
    CHECK(std::abs(w3.a[0]) == doctest::Approx(st3.lr / 100.0).epsilon(1e-4));
}
