#include <doctest.h>

#include <cmath>

#include "cwm/assignment.hpp"
#include "cwm/flow.hpp"

using namespace cwm;
using namespace cwm::nn;

namespace {

// determinant by Gaussian elimination with partial pivoting (test helper)
double det(Mat a) {
    int n = a.rows;
    double d = 1.0;
    for (int c = 0; c < n; ++c) {
        int piv = c;
        for (int r = c + 1; r < n; ++r)
            if (std::abs(a.at(r, c)) > std::abs(a.at(piv, c))) piv = r;
        if (piv != c) {
            for (int j = 0; j < n; ++j) std::swap(a.at(c, j), a.at(piv, j));
            d = -d;
        }
        if (a.at(c, c) == 0.0) return 0.0;
        d *= a.at(c, c);
        for (int r = c + 1; r < n; ++r) {
            double f = a.at(r, c) / a.at(c, c);
            for (int j = c; j < n; ++j) a.at(r, j) -= f * a.at(c, j);
        }
    }
    return d;
}

CouplingFlow random_flow(int dim, Rng& rng) {
    auto flow = CouplingFlow::make(dim, 4, 16, rng);
    // perturb away from the identity
    for (auto& layer : flow.layers) {
        layer.scale_net.weights.back() = Mat::randn(16, dim, rng, 0.2);
        layer.shift_net.weights.back() = Mat::randn(16, dim, rng, 0.2);
    }
    return flow;
}

} // namespace

TEST_CASE("zero-initialized flow is the identity with zero logdet") {
    Rng rng(1);
    auto flow = CouplingFlow::make(6, 4, 8, rng);
    Mat e = Mat::randn(3, 6, rng);
    auto [z, ld] = flow_forward_eval(flow, e);
    for (size_t i = 0; i < e.a.size(); ++i) CHECK(z.a[i] == e.a[i]);
    for (double v : ld) CHECK(v == 0.0);

    Tape tape;
    Binder bind(tape);
    auto [zr, ldr] = flow_forward(tape, bind, flow, tape.leaf(e));
    for (size_t i = 0; i < e.a.size(); ++i) CHECK(tape.val(zr).a[i] == e.a[i]);
    for (int i = 0; i < 3; ++i) CHECK(tape.val(ldr).at(i, 0) == 0.0);
}

TEST_CASE("flow inverse round-trips") {
    Rng rng(2);
    auto flow = random_flow(8, rng);
    flow.set_standardization({0.1, -0.2, 0.3, 0, 0.5, 0, 0, -0.1},
                             {1.2, 0.5, 2.0, 1, 1, 0.7, 1.4, 1});
    for (int trial = 0; trial < 50; ++trial) {
        Mat e = Mat::randn(4, 8, rng);
        auto [z, ld] = flow_forward_eval(flow, e);
        Mat back = flow_inverse(flow, z);
        for (size_t i = 0; i < e.a.size(); ++i) CHECK(std::abs(back.a[i] - e.a[i]) < 1e-6);

        // forward of inverse too
        Mat z2 = Mat::randn(4, 8, rng);
        auto [zz, ld2] = flow_forward_eval(flow, flow_inverse(flow, z2));
        for (size_t i = 0; i < z2.a.size(); ++i) CHECK(std::abs(zz.a[i] - z2.a[i]) < 1e-6);
        (void)ld;
        (void)ld2;
    }
}

TEST_CASE("taped flow matches eval flow") {
    Rng rng(3);
    auto flow = random_flow(6, rng);
    Mat e = Mat::randn(5, 6, rng);
    auto [z, ld] = flow_forward_eval(flow, e);
    Tape tape;
    Binder bind(tape);
    auto [zr, ldr] = flow_forward(tape, bind, flow, tape.leaf(e));
    for (size_t i = 0; i < z.a.size(); ++i) CHECK(tape.val(zr).a[i] == doctest::Approx(z.a[i]).epsilon(1e-12));
    for (int i = 0; i < 5; ++i) CHECK(tape.val(ldr).at(i, 0) == doctest::Approx(ld[i]).epsilon(1e-12));
}

TEST_CASE("logdet equals the dense Jacobian determinant on M=4") {
    Rng rng(4);
    auto flow = random_flow(4, rng);
    flow.set_standardization({0.0, 0.1, -0.1, 0.2}, {1.0, 0.8, 1.3, 1.0});
    const double h = 1e-6;
    for (int trial = 0; trial < 10; ++trial) {
        Mat e = Mat::randn(1, 4, rng);
        auto [z0, ld] = flow_forward_eval(flow, e);
        Mat jac(4, 4);
        for (int j = 0; j < 4; ++j) {
            Mat ep = e, em = e;
            ep.at(0, j) += h;
            em.at(0, j) -= h;
            auto [zp, lp] = flow_forward_eval(flow, ep);
            auto [zm, lm] = flow_forward_eval(flow, em);
            for (int i = 0; i < 4; ++i) jac.at(i, j) = (zp.at(0, i) - zm.at(0, i)) / (2 * h);
        }
        double numeric = std::log(std::abs(det(jac)));
        CHECK(std::abs(numeric - ld[0]) / std::max(1.0, std::abs(numeric)) < 1e-3);
    }
}

TEST_CASE("logdet is additive over layers") {
    Rng rng(5);
    auto flow = random_flow(6, rng);
    Mat e = Mat::randn(1, 6, rng);

    // apply layer by layer, summing individual logdets
    Mat x = e;
    double total = 0.0;
    for (size_t l = 0; l < flow.layers.size(); ++l) {
        CouplingFlow single;
        single.dim = flow.dim;
        single.pre_scale = Mat(1, flow.dim, 1.0);
        single.pre_shift = Mat(1, flow.dim, 0.0);
        single.layers.push_back(flow.layers[l]);
        auto [y, ld] = flow_forward_eval(single, x);
        total += ld[0];
        x = y;
    }
    auto [z, ld_all] = flow_forward_eval(flow, e);
    CHECK(total == doctest::Approx(ld_all[0]).epsilon(1e-10));
    for (int j = 0; j < 6; ++j) CHECK(x.at(0, j) == doctest::Approx(z.at(0, j)).epsilon(1e-10));
}

TEST_CASE("flow gradients pass grad check") {
    Rng rng(6);
    auto flow = random_flow(4, rng);
    Mat e = Mat::randn(2, 4, rng);
    auto loss = [&](Tape& t, Ref in) {
        Binder b(t);
        auto [z, ld] = flow_forward(t, b, flow, in);
        return t.sum_all(t.add(t.row_sum(t.hadamard(z, z)), ld));
    };
    CHECK(grad_check(loss, e) < 1e-4);
}

// ---------------------------------------------------------------------------

TEST_CASE("hungarian matches brute force on small instances") {
    Rng rng(7);
    for (int trial = 0; trial < 40; ++trial) {
        int k = 2 + rng.index(4);       // variables
        int m = k + rng.index(3);       // latents >= variables
        Mat score(k, m);
        for (auto& v : score.a) v = rng.uniform();
        auto chosen = cwm::crl::assign_max(score);

        // brute force over all injections of rows into columns
        std::vector<int> cols(m);
        for (int i = 0; i < m; ++i) cols[i] = i;
        double best = -1;
        std::vector<int> perm(k, 0);
        std::vector<char> used(m, 0);
        std::function<void(int, double)> rec = [&](int row, double acc) {
            if (row == k) {
                if (acc > best) best = acc;
                return;
            }
            for (int c = 0; c < m; ++c) {
                if (used[c]) continue;
                used[c] = 1;
                rec(row + 1, acc + score.at(row, c));
                used[c] = 0;
            }
        };
        rec(0, 0.0);

        double got = 0;
        std::vector<char> dup(m, 0);
        for (int r = 0; r < k; ++r) {
            REQUIRE(chosen[r] >= 0);
            REQUIRE(!dup[chosen[r]]);
            dup[chosen[r]] = 1;
            got += score.at(r, chosen[r]);
        }
        CHECK(got == doctest::Approx(best).epsilon(1e-9));
    }
}

TEST_CASE("r2 permutation score on a permuted copy is 1") {
    Rng rng(8);
    int n = 200, k = 5, m = 8;
    Mat causal(n, k);
    for (auto& v : causal.a) v = rng.uniform();
    Mat latents(n, m);
    std::vector<int> where{3, 0, 6, 2, 7};  // latent index per variable
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) latents.at(i, j) = rng.normal();
        for (int j = 0; j < k; ++j) latents.at(i, where[j]) = 2.0 * causal.at(i, j) - 0.5;
    }
    auto res = cwm::crl::r2_permutation_score(latents, causal);
    CHECK(res.score == doctest::Approx(1.0).epsilon(1e-6));
    for (int j = 0; j < k; ++j) CHECK(res.latent_for_var[j] == where[j]);
}

TEST_CASE("r2 permutation score explicit 2x2 case") {
    // R2 matrix [[0.1, 0.9], [0.8, 0.2]] -> assignment (var0 -> latent1, var1 -> latent0), score 0.85
    Mat score(2, 2);
    score.at(0, 0) = 0.1;
    score.at(0, 1) = 0.8;
    score.at(1, 0) = 0.9;
    score.at(1, 1) = 0.2;
    auto chosen = cwm::crl::assign_max(score);
    CHECK(chosen[0] == 1);
    CHECK(chosen[1] == 0);
    CHECK((score.at(0, 1) + score.at(1, 0)) / 2 == doctest::Approx(0.85));
}

TEST_CASE("r2 score is invariant to latent relabeling") {
    Rng rng(9);
    int n = 150, k = 3, m = 5;
    Mat causal(n, k), latents(n, m);
    for (auto& v : causal.a) v = rng.uniform();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            latents.at(i, j) = (j < k) ? causal.at(i, j) + 0.1 * rng.normal() : rng.normal();
    auto base = cwm::crl::r2_permutation_score(latents, causal);

    Mat shuffled(n, m);
    std::vector<int> perm{4, 2, 0, 3, 1};
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) shuffled.at(i, perm[j]) = latents.at(i, j);
    auto moved = cwm::crl::r2_permutation_score(shuffled, causal);
    CHECK(base.score == doctest::Approx(moved.score).epsilon(1e-9));
}

TEST_CASE("r2 permutation score rejects constant causal variables") {
    Mat latents(10, 3), causal(10, 2);
    for (int i = 0; i < 10; ++i) {
        latents.at(i, 0) = i;
        latents.at(i, 1) = -i;
        latents.at(i, 2) = i * i;
        causal.at(i, 0) = i;
        causal.at(i, 1) = 3.0;  // constant
    }
    CHECK_THROWS_AS(cwm::crl::r2_permutation_score(latents, causal), cwm::crl::DegenerateData);
}
