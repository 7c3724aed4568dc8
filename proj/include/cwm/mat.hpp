// Dense row-major double matrix plus the few solvers the project needs.
#pragma once

#include <cassert>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cwm/rng.hpp"

namespace cwm {

struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}

    static Mat row(const std::vector<double>& v) {
        Mat m(1, static_cast<int>(v.size()));
        m.a = v;
        return m;
    }
    static Mat identity(int n) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }
    static Mat randn(int r, int c, Rng& rng, double scale = 1.0) {
        Mat m(r, c);
        for (auto& v : m.a) v = scale * rng.normal();
        return m;
    }

    double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
    size_t size() const { return a.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    std::vector<double> row_vec(int r) const {
        return {a.begin() + static_cast<size_t>(r) * cols, a.begin() + static_cast<size_t>(r + 1) * cols};
    }
    void set_row(int r, const std::vector<double>& v) {
        assert(static_cast<int>(v.size()) == cols);
        std::copy(v.begin(), v.end(), a.begin() + static_cast<size_t>(r) * cols);
    }
};

inline Mat matmul(const Mat& x, const Mat& y) {
    if (x.cols != y.rows)
        throw DimensionError("matmul: " + std::to_string(x.cols) + " vs " + std::to_string(y.rows));
    Mat out(x.rows, y.cols);
    for (int i = 0; i < x.rows; ++i) {
        const double* xi = &x.a[static_cast<size_t>(i) * x.cols];
        double* oi = &out.a[static_cast<size_t>(i) * y.cols];
        for (int k = 0; k < x.cols; ++k) {
            double xv = xi[k];
            if (xv == 0.0) continue;
            const double* yk = &y.a[static_cast<size_t>(k) * y.cols];
            for (int j = 0; j < y.cols; ++j) oi[j] += xv * yk[j];
        }
    }
    return out;
}

inline Mat transpose(const Mat& x) {
    Mat out(x.cols, x.rows);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) out.at(j, i) = x.at(i, j);
    return out;
}

// Solve A x = b for symmetric positive definite A (in-place Cholesky).
inline std::vector<double> cholesky_solve(Mat A, std::vector<double> b) {
    int n = A.rows;
    if (A.cols != n || static_cast<int>(b.size()) != n) throw DimensionError("cholesky_solve shape");
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = A.at(i, j);
            for (int k = 0; k < j; ++k) s -= A.at(i, k) * A.at(j, k);
            if (i == j) {
                if (s <= 0.0) throw std::runtime_error("cholesky: not positive definite");
                A.at(i, i) = std::sqrt(s);
            } else {
                A.at(i, j) = s / A.at(j, j);
            }
        }
    }
    for (int i = 0; i < n; ++i) {
        double s = b[i];
        for (int k = 0; k < i; ++k) s -= A.at(i, k) * b[k];
        b[i] = s / A.at(i, i);
    }
    for (int i = n - 1; i >= 0; --i) {
        double s = b[i];
        for (int k = i + 1; k < n; ++k) s -= A.at(k, i) * b[k];
        b[i] = s / A.at(i, i);
    }
    return b;
}

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
inline std::vector<double> jacobi_eigenvalues(Mat A, int sweeps = 64) {
    int n = A.rows;
    assert(A.cols == n);
    for (int sweep = 0; sweep < sweeps; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += A.at(p, q) * A.at(p, q);
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double apq = A.at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                double theta = (A.at(q, q) - A.at(p, p)) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < n; ++k) {
                    double akp = A.at(k, p), akq = A.at(k, q);
                    A.at(k, p) = c * akp - s * akq;
                    A.at(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    double apk = A.at(p, k), aqk = A.at(q, k);
                    A.at(p, k) = c * apk - s * aqk;
                    A.at(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> ev(n);
    for (int i = 0; i < n; ++i) ev[i] = A.at(i, i);
    return ev;
}

// Smallest singular value via eigenvalues of X^T X.
inline double min_singular_value(const Mat& x) {
    Mat gram = matmul(transpose(x), x);
    auto ev = jacobi_eigenvalues(gram);
    double lo = ev.empty() ? 0.0 : ev[0];
    for (double v : ev) lo = std::min(lo, v);
    return std::sqrt(std::max(0.0, lo));
}

// Least squares fit y ~ X beta (ridge epsilon for numerical safety only).
inline std::vector<double> least_squares(const Mat& x, const std::vector<double>& y, double eps = 1e-10) {
    if (x.rows != static_cast<int>(y.size())) throw DimensionError("least_squares shape");
    Mat xtx = matmul(transpose(x), x);
    for (int i = 0; i < xtx.rows; ++i) xtx.at(i, i) += eps;
    std::vector<double> xty(x.cols, 0.0);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) xty[j] += x.at(i, j) * y[i];
    return cholesky_solve(xtx, xty);
}

// Coefficient of determination of predictions against targets.
inline double r_squared(const std::vector<double>& pred, const std::vector<double>& target) {
    assert(pred.size() == target.size() && !target.empty());
    double mean = 0.0;
    for (double t : target) mean += t;
    mean /= static_cast<double>(target.size());
    double sse = 0.0, sst = 0.0;
    for (size_t i = 0; i < target.size(); ++i) {
        sse += (pred[i] - target[i]) * (pred[i] - target[i]);
        sst += (target[i] - mean) * (target[i] - mean);
    }
    if (sst == 0.0) return 0.0;
    return 1.0 - sse / sst;
}

inline double pearson_abs(const std::vector<double>& x, const std::vector<double>& y) {
    assert(x.size() == y.size() && !x.empty());
    double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (size_t i = 0; i < x.size(); ++i) { mx += x[i]; my += y[i]; }
    mx /= n; my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0 || syy <= 0) return 0.0;
    return std::abs(sxy / std::sqrt(sxx * syy));
}

} // namespace cwm
