// Affine coupling flow with exact log-determinant. Layers alternate
// even/odd masks; scale outputs are smoothly bounded; an optional fixed
// per-dimension affine stage (set from data statistics before training)
// precedes the couplings and contributes a constant log-determinant.
#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "cwm/mat.hpp"
#include "cwm/nn.hpp"
#include "cwm/rng.hpp"
#include "cwm/tape.hpp"

namespace cwm::nn {

struct CouplingLayer {
    Mat mask;  // 1 x M of {0,1}; masked positions pass through unchanged
    Mlp scale_net;
    Mlp shift_net;
    double scale_cap = 3.0;

    Mat inv_mask() const {
        Mat m = mask;
        for (auto& v : m.a) v = 1.0 - v;
        return m;
    }

    template <class Fn>
    void visit_params(Fn&& fn) {
        scale_net.visit_params(fn);
        shift_net.visit_params(fn);
    }
};

struct CouplingFlow {
    int dim = 0;
    Mat pre_scale;  // 1 x M fixed affine, identity unless standardized
    Mat pre_shift;  // 1 x M
    std::vector<CouplingLayer> layers;

    static CouplingFlow make(int dim, int n_layers, int hidden, Rng& rng) {
        CouplingFlow f;
        f.dim = dim;
        f.pre_scale = Mat(1, dim, 1.0);
        f.pre_shift = Mat(1, dim, 0.0);
        for (int l = 0; l < n_layers; ++l) {
            CouplingLayer layer;
            layer.mask = Mat(1, dim);
            for (int j = 0; j < dim; ++j) layer.mask.at(0, j) = (j % 2 == l % 2) ? 1.0 : 0.0;
            layer.scale_net = Mlp::make({dim, hidden, dim}, rng, /*zero_last=*/true);
            layer.shift_net = Mlp::make({dim, hidden, dim}, rng, /*zero_last=*/true);
            f.layers.push_back(std::move(layer));
        }
        return f;
    }

    // Fix the leading affine so data with the given per-dim stats maps to
    // roughly zero mean, unit variance. Not trainable.
    void set_standardization(const std::vector<double>& mean, const std::vector<double>& stddev) {
        for (int j = 0; j < dim; ++j) {
            double s = stddev[j] > 1e-8 ? stddev[j] : 1.0;
            pre_scale.at(0, j) = 1.0 / s;
            pre_shift.at(0, j) = -mean[j] / s;
        }
    }

    double pre_logdet() const {
        double ld = 0.0;
        for (int j = 0; j < dim; ++j) ld += std::log(std::abs(pre_scale.at(0, j)));
        return ld;
    }

    template <class Fn>
    void visit_params(Fn&& fn) {
        for (auto& l : layers) l.visit_params(fn);
    }
};

// Taped forward: returns (z, per-row logdet as B x 1).
inline std::pair<Ref, Ref> flow_forward(Tape& tape, Binder& bind, const CouplingFlow& flow, Ref e) {
    if (tape.val(e).cols != flow.dim) throw DimensionError("flow_forward: dim");
    int batch = tape.val(e).rows;
    Ref x = tape.add(tape.mul_const_row(e, flow.pre_scale), tape.leaf(flow.pre_shift));
    Ref logdet = tape.leaf(Mat(batch, 1, flow.pre_logdet()));
    for (const auto& layer : flow.layers) {
        Ref xm = tape.mul_const_row(x, layer.mask);
        Ref s = tape.mul_const_row(tape.softcap(mlp_apply(tape, bind, layer.scale_net, xm), layer.scale_cap),
                                   layer.inv_mask());
        Ref t = tape.mul_const_row(mlp_apply(tape, bind, layer.shift_net, xm), layer.inv_mask());
        x = tape.add(tape.hadamard(x, tape.exp_act(s)), t);
        logdet = tape.add(logdet, tape.row_sum(s));
    }
    return {x, logdet};
}

// Tape-free forward: returns (z, per-row logdet).
inline std::pair<Mat, std::vector<double>> flow_forward_eval(const CouplingFlow& flow, const Mat& e) {
    if (e.cols != flow.dim) throw DimensionError("flow_forward_eval: dim");
    Mat x = e;
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j)
            x.at(i, j) = x.at(i, j) * flow.pre_scale.at(0, j) + flow.pre_shift.at(0, j);
    std::vector<double> logdet(x.rows, flow.pre_logdet());
    for (const auto& layer : flow.layers) {
        Mat xm = x;
        for (int i = 0; i < x.rows; ++i)
            for (int j = 0; j < x.cols; ++j) xm.at(i, j) *= layer.mask.at(0, j);
        Mat s = mlp_eval(layer.scale_net, xm);
        Mat t = mlp_eval(layer.shift_net, xm);
        for (int i = 0; i < x.rows; ++i) {
            for (int j = 0; j < x.cols; ++j) {
                double open = 1.0 - layer.mask.at(0, j);
                double sv = open * layer.scale_cap * std::tanh(s.at(i, j) / layer.scale_cap);
                x.at(i, j) = x.at(i, j) * std::exp(sv) + open * t.at(i, j);
                logdet[i] += sv;
            }
        }
    }
    return {x, logdet};
}

// Exact inverse of flow_forward_eval.
inline Mat flow_inverse(const CouplingFlow& flow, const Mat& z) {
    if (z.cols != flow.dim) throw DimensionError("flow_inverse: dim");
    Mat x = z;
    for (auto it = flow.layers.rbegin(); it != flow.layers.rend(); ++it) {
        const auto& layer = *it;
        Mat xm = x;
        for (int i = 0; i < x.rows; ++i)
            for (int j = 0; j < x.cols; ++j) xm.at(i, j) *= layer.mask.at(0, j);
        Mat s = mlp_eval(layer.scale_net, xm);
        Mat t = mlp_eval(layer.shift_net, xm);
        for (int i = 0; i < x.rows; ++i) {
            for (int j = 0; j < x.cols; ++j) {
                double open = 1.0 - layer.mask.at(0, j);
                double sv = open * layer.scale_cap * std::tanh(s.at(i, j) / layer.scale_cap);
                x.at(i, j) = (x.at(i, j) - open * t.at(i, j)) * std::exp(-sv);
            }
        }
    }
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j)
            x.at(i, j) = (x.at(i, j) - flow.pre_shift.at(0, j)) / flow.pre_scale.at(0, j);
    return x;
}

} // namespace cwm::nn
