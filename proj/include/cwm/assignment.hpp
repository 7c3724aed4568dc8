// Optimal assignment (Kuhn-Munkres with potentials) and the permutation-R2
// disentanglement score: quadratic-feature R2 of every causal variable
// against every latent, then the latent-to-variable matching that maximizes
// the mean diagonal.
#pragma once

#include <limits>
#include <stdexcept>
#include <vector>

#include "cwm/mat.hpp"

namespace cwm::crl {

struct DegenerateData : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Minimum-cost assignment of each row to a distinct column of a square cost
// matrix; returns col index per row.
inline std::vector<int> hungarian_min(const Mat& cost) {
    int n = cost.rows;
    if (cost.cols != n) throw DimensionError("hungarian_min: square matrix required");
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1), v(n + 1);
    std::vector<int> p(n + 1), way(n + 1);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            int i0 = p[j0], j1 = 0;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

// Maximize the total score assigning each of the `rows` rows to a distinct
// column (rows <= cols). Returns col per row.
inline std::vector<int> assign_max(const Mat& score) {
    int r = score.rows, c = score.cols;
    if (r > c) throw DimensionError("assign_max: rows must be <= cols");
    double hi = 0.0;
    for (double v : score.a) hi = std::max(hi, v);
    Mat cost(c, c, 0.0);  // pad with zero-score dummy rows
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) cost.at(i, j) = hi - score.at(i, j);
    auto full = hungarian_min(cost);
    return {full.begin(), full.begin() + r};
}

// R2 of target regressed on [1, z, z^2] for a single latent.
inline double quadratic_r2(const std::vector<double>& z, const std::vector<double>& target) {
    Mat x(static_cast<int>(z.size()), 3);
    for (size_t i = 0; i < z.size(); ++i) {
        x.at(static_cast<int>(i), 0) = 1.0;
        x.at(static_cast<int>(i), 1) = z[i];
        x.at(static_cast<int>(i), 2) = z[i] * z[i];
    }
    auto beta = least_squares(x, target, 1e-9);
    std::vector<double> pred(z.size());
    for (size_t i = 0; i < z.size(); ++i) pred[i] = beta[0] + beta[1] * z[i] + beta[2] * z[i] * z[i];
    double r2 = r_squared(pred, target);
    return std::clamp(r2, 0.0, 1.0);
}

struct PermutationScore {
    double score = 0.0;
    std::vector<int> latent_for_var;  // per causal variable, the matched latent
    Mat r2;                           // M x K
};

// latents: N x M, causal: N x K with M >= K and N >= 2.
inline PermutationScore r2_permutation_score(const Mat& latents, const Mat& causal) {
    int n = latents.rows, m = latents.cols, k = causal.cols;
    if (causal.rows != n) throw DimensionError("r2_permutation_score: row mismatch");
    if (n < 2) throw DimensionError("r2_permutation_score: need >= 2 samples");
    if (m < k) throw DimensionError("r2_permutation_score: need M >= K");
    for (int j = 0; j < k; ++j) {
        double first = causal.at(0, j);
        bool constant = true;
        for (int i = 1; i < n && constant; ++i) constant = (causal.at(i, j) == first);
        if (constant) throw DegenerateData("causal variable " + std::to_string(j) + " is constant");
    }
    Mat r2(m, k);
    std::vector<double> zi(n), cj(n);
    for (int i = 0; i < m; ++i) {
        for (int s = 0; s < n; ++s) zi[s] = latents.at(s, i);
        for (int j = 0; j < k; ++j) {
            for (int s = 0; s < n; ++s) cj[s] = causal.at(s, j);
            r2.at(i, j) = quadratic_r2(zi, cj);
        }
    }
    // assign variables (rows) to latents (cols) maximizing mean R2
    Mat score(k, m);
    for (int j = 0; j < k; ++j)
        for (int i = 0; i < m; ++i) score.at(j, i) = r2.at(i, j);
    PermutationScore out;
    out.latent_for_var = assign_max(score);
    out.r2 = r2;
    for (int j = 0; j < k; ++j) out.score += r2.at(out.latent_for_var[j], j);
    out.score /= k;
    return out;
}

} // namespace cwm::crl
