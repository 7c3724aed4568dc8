// MLPs over the tape, the Adam optimizer with linear warmup, Gaussian
// log-likelihood helpers, the straight-through gate and finite-difference
// gradient checking.
#pragma once

#include <cmath>
#include <vector>

#include "cwm/mat.hpp"
#include "cwm/rng.hpp"
#include "cwm/tape.hpp"

namespace cwm::nn {

// ---------------------------------------------------------------------- MLP

// Feed-forward net with SiLU between layers, linear output.
struct Mlp {
    std::vector<Mat> weights;  // layer l: in x out
    std::vector<Mat> biases;   // layer l: 1 x out

    int in_dim() const { return weights.empty() ? 0 : weights.front().rows; }
    int out_dim() const { return weights.empty() ? 0 : weights.back().cols; }
    size_t n_layers() const { return weights.size(); }

    static Mlp make(const std::vector<int>& sizes, Rng& rng, bool zero_last = false) {
        Mlp net;
        for (size_t l = 0; l + 1 < sizes.size(); ++l) {
            double s = std::sqrt(2.0 / sizes[l]);
            Mat w = Mat::randn(sizes[l], sizes[l + 1], rng, s);
            if (zero_last && l + 2 == sizes.size()) w = Mat(sizes[l], sizes[l + 1]);
            net.weights.push_back(std::move(w));
            net.biases.push_back(Mat(1, sizes[l + 1]));
        }
        return net;
    }

    template <class Fn>
    void visit_params(Fn&& fn) {
        for (auto& w : weights) fn(w);
        for (auto& b : biases) fn(b);
    }
    template <class Fn>
    void visit_params(Fn&& fn) const {
        for (auto& w : weights) fn(w);
        for (auto& b : biases) fn(b);
    }
};

inline Ref mlp_apply(Tape& tape, Binder& bind, const Mlp& net, Ref input) {
    if (tape.val(input).cols != net.in_dim()) throw DimensionError("mlp_apply: input dim");
    Ref h = input;
    for (size_t l = 0; l < net.n_layers(); ++l) {
        h = tape.add(tape.matmul(h, bind(net.weights[l])), bind(net.biases[l]));
        if (l + 1 < net.n_layers()) h = tape.silu_act(h);
    }
    return h;
}

// Tape-free forward pass for inference paths.
inline Mat mlp_eval(const Mlp& net, const Mat& input) {
    if (input.cols != net.in_dim()) throw DimensionError("mlp_eval: input dim");
    Mat h = input;
    for (size_t l = 0; l < net.n_layers(); ++l) {
        Mat z = matmul(h, net.weights[l]);
        for (int i = 0; i < z.rows; ++i)
            for (int j = 0; j < z.cols; ++j) z.at(i, j) += net.biases[l].at(0, j);
        if (l + 1 < net.n_layers())
            for (auto& v : z.a) v = silu(v);
        h = std::move(z);
    }
    return h;
}

// ----------------------------------------------------------- distributions

// -log N(x; mean, exp(log_std)^2), summed over dimensions.
inline double gaussian_nll(const std::vector<double>& x, const std::vector<double>& mean,
                           const std::vector<double>& log_std) {
    if (x.size() != mean.size() || x.size() != log_std.size()) throw DimensionError("gaussian_nll shape");
    double nll = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        double inv = std::exp(-log_std[i]);
        double zz = (x[i] - mean[i]) * inv;
        nll += log_std[i] + 0.5 * kLn2Pi + 0.5 * zz * zz;
    }
    return nll;
}

// Per-row NLL on the tape: x, mean, log_std are B x M; returns B x 1.
inline Ref gaussian_nll_rows(Tape& tape, Ref x, Ref mean, Ref log_std) {
    Ref d = tape.sub(x, mean);
    Ref q = tape.hadamard(d, d);
    Ref w = tape.exp_act(tape.scale(log_std, -2.0));
    Ref quad = tape.scale(tape.hadamard(w, q), 0.5);
    Ref term = tape.add(tape.add_scalar(log_std, 0.5 * kLn2Pi), quad);
    return tape.row_sum(term);
}

// Standalone straight-through gate value (forward semantics only).
inline double st_gate_value(double logit, bool stochastic = false, Rng* rng = nullptr) {
    if (stochastic) return (rng->uniform() < sigmoid(logit)) ? 1.0 : 0.0;
    return logit > 0.0 ? 1.0 : 0.0;
}

// ------------------------------------------------------------------- Adam

struct AdamState {
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int warmup_steps = 100;
    long step = 0;
    std::vector<Mat> m;
    std::vector<Mat> v;
};

inline void optimizer_step(AdamState& st, const std::vector<Mat*>& params,
                           const std::vector<const Mat*>& grads) {
    if (params.size() != grads.size()) throw DimensionError("optimizer_step: param/grad count");
    if (st.m.empty()) {
        for (auto* p : params) {
            st.m.emplace_back(p->rows, p->cols);
            st.v.emplace_back(p->rows, p->cols);
        }
    }
    st.step += 1;
    double warm = st.warmup_steps > 0 ? std::min(1.0, static_cast<double>(st.step) / st.warmup_steps) : 1.0;
    double lr = st.lr * warm;
    double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (size_t p = 0; p < params.size(); ++p) {
        Mat& w = *params[p];
        const Mat& g = *grads[p];
        if (!w.same_shape(g) || !w.same_shape(st.m[p])) throw DimensionError("optimizer_step: shape");
        for (size_t i = 0; i < w.a.size(); ++i) {
            st.m[p].a[i] = st.beta1 * st.m[p].a[i] + (1.0 - st.beta1) * g.a[i];
            st.v[p].a[i] = st.beta2 * st.v[p].a[i] + (1.0 - st.beta2) * g.a[i] * g.a[i];
            double mhat = st.m[p].a[i] / bc1;
            double vhat = st.v[p].a[i] / bc2;
            w.a[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

// ------------------------------------------------------------- grad check

// Central finite differences against the taped gradient of a scalar
// function of one matrix input. Returns the max relative error.
template <class F>
double grad_check(F&& f, const Mat& point, double h = 1e-5) {
    Tape tape;
    Ref x = tape.leaf(point);
    Ref y = f(tape, x);
    tape.backward(y);
    Mat analytic = tape.grad(x);

    double worst = 0.0;
    Mat probe = point;
    for (size_t i = 0; i < probe.a.size(); ++i) {
        double keep = probe.a[i];
        probe.a[i] = keep + h;
        Tape tp;
        double fp = tp.val(f(tp, tp.leaf(probe))).a[0];
        probe.a[i] = keep - h;
        Tape tm;
        double fm = tm.val(f(tm, tm.leaf(probe))).a[0];
        probe.a[i] = keep;
        double fd = (fp - fm) / (2.0 * h);
        double err = std::abs(fd - analytic.a[i]) / std::max(1e-8, std::abs(fd) + std::abs(analytic.a[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

} // namespace cwm::nn
