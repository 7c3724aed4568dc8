// Reverse-mode autodiff over dense matrices. A tape is rebuilt per step;
// nodes hold values and gradients, closures implement the vector-Jacobian
// products. Only the operations the models need are provided.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <unordered_map>
#include <vector>

#include "cwm/mat.hpp"
#include "cwm/rng.hpp"

namespace cwm::nn {

using cwm::Mat;

constexpr double kLn2Pi = 1.8378770664093454835606594728112;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }
inline double silu_grad(double x) {
    double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

class Tape {
public:
    using Ref = int;

    Ref leaf(const Mat& v) {
        nodes_.push_back(Node{v, Mat(v.rows, v.cols), nullptr});
        return static_cast<Ref>(nodes_.size()) - 1;
    }

    const Mat& val(Ref r) const { return nodes_[r].val; }
    const Mat& grad(Ref r) const { return nodes_[r].grad; }
    Mat& grad_mut(Ref r) { return nodes_[r].grad; }

    void backward(Ref loss) {
        if (nodes_[loss].val.size() != 1) throw DimensionError("backward: loss must be scalar");
        nodes_[loss].grad.a[0] = 1.0;
        for (int i = loss; i >= 0; --i)
            if (nodes_[i].back) nodes_[i].back();
    }

    void clear() { nodes_.clear(); }
    size_t size() const { return nodes_.size(); }

    // ------------------------------------------------------------- binary

    Ref matmul(Ref a, Ref b) {
        Ref out = leaf(cwm::matmul(val(a), val(b)));
        nodes_[out].back = [this, a, b, out] {
            const Mat& g = nodes_[out].grad;
            const Mat& av = nodes_[a].val;
            const Mat& bv = nodes_[b].val;
            Mat& ga = nodes_[a].grad;
            Mat& gb = nodes_[b].grad;
            // ga += g . b^T
            for (int i = 0; i < av.rows; ++i)
                for (int j = 0; j < bv.cols; ++j) {
                    double gij = g.at(i, j);
                    if (gij == 0.0) continue;
                    for (int k = 0; k < av.cols; ++k) ga.at(i, k) += gij * bv.at(k, j);
                }
            // gb += a^T . g
            for (int i = 0; i < av.rows; ++i)
                for (int k = 0; k < av.cols; ++k) {
                    double aik = av.at(i, k);
                    if (aik == 0.0) continue;
                    for (int j = 0; j < bv.cols; ++j) gb.at(k, j) += aik * g.at(i, j);
                }
        };
        return out;
    }

    // a (B x N) + b, where b is same-shape or a 1 x N row broadcast over rows.
    Ref add(Ref a, Ref b) {
        const Mat& av = val(a);
        const Mat& bv = val(b);
        bool bcast = (bv.rows == 1 && av.rows != 1);
        if (!bcast && !av.same_shape(bv)) throw DimensionError("add: shape mismatch");
        if (bcast && bv.cols != av.cols) throw DimensionError("add: broadcast cols");
        Mat o = av;
        for (int i = 0; i < o.rows; ++i)
            for (int j = 0; j < o.cols; ++j) o.at(i, j) += bv.at(bcast ? 0 : i, j);
        Ref out = leaf(o);
        nodes_[out].back = [this, a, b, out, bcast] {
            const Mat& g = nodes_[out].grad;
            Mat& ga = nodes_[a].grad;
            Mat& gb = nodes_[b].grad;
            for (size_t i = 0; i < g.a.size(); ++i) ga.a[i] += g.a[i];
            if (bcast) {
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) gb.at(0, j) += g.at(i, j);
            } else {
                for (size_t i = 0; i < g.a.size(); ++i) gb.a[i] += g.a[i];
            }
        };
        return out;
    }

    Ref sub(Ref a, Ref b) {
        if (!val(a).same_shape(val(b))) throw DimensionError("sub: shape mismatch");
        Mat o = val(a);
        for (size_t i = 0; i < o.a.size(); ++i) o.a[i] -= val(b).a[i];
        Ref out = leaf(o);
        nodes_[out].back = [this, a, b, out] {
            const Mat& g = nodes_[out].grad;
            for (size_t i = 0; i < g.a.size(); ++i) {
                nodes_[a].grad.a[i] += g.a[i];
                nodes_[b].grad.a[i] -= g.a[i];
            }
        };
        return out;
    }

    Ref hadamard(Ref a, Ref b) {
        if (!val(a).same_shape(val(b))) throw DimensionError("hadamard: shape mismatch");
        Mat o = val(a);
        for (size_t i = 0; i < o.a.size(); ++i) o.a[i] *= val(b).a[i];
        Ref out = leaf(o);
        nodes_[out].back = [this, a, b, out] {
            const Mat& g = nodes_[out].grad;
            for (size_t i = 0; i < g.a.size(); ++i) {
                nodes_[a].grad.a[i] += g.a[i] * nodes_[b].val.a[i];
                nodes_[b].grad.a[i] += g.a[i] * nodes_[a].val.a[i];
            }
        };
        return out;
    }

    // --------------------------------------------------------- elementwise

    Ref scale(Ref a, double c) {
        Mat o = val(a);
        for (auto& v : o.a) v *= c;
        Ref out = leaf(o);
        nodes_[out].back = [this, a, out, c] {
            for (size_t i = 0; i < nodes_[out].grad.a.size(); ++i)
                nodes_[a].grad.a[i] += c * nodes_[out].grad.a[i];
        };
        return out;
    }

    Ref add_scalar(Ref a, double c) {
        Mat o = val(a);
        for (auto& v : o.a) v += c;
        Ref out = leaf(o);
        nodes_[out].back = [this, a, out] {
            for (size_t i = 0; i < nodes_[out].grad.a.size(); ++i)
                nodes_[a].grad.a[i] += nodes_[out].grad.a[i];
        };
        return out;
    }

    // elementwise multiply by a constant 1 x N row (not a tape node)
    Ref mul_const_row(Ref a, Mat row) {
        if (row.rows != 1 || row.cols != val(a).cols) throw DimensionError("mul_const_row shape");
        Mat o = val(a);
        for (int i = 0; i < o.rows; ++i)
            for (int j = 0; j < o.cols; ++j) o.at(i, j) *= row.at(0, j);
        Ref out = leaf(o);
        nodes_[out].back = [this, a, out, row] {
            const Mat& g = nodes_[out].grad;
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) nodes_[a].grad.at(i, j) += g.at(i, j) * row.at(0, j);
        };
        return out;
    }

    Ref silu_act(Ref a) {
        Mat o = val(a);
        for (auto& v : o.a) v = silu(v);
        Ref out = leaf(o);
        nodes_[out].back = [this, a, out] {
            for (size_t i = 0; i < nodes_[out].grad.a.size(); ++i)
                nodes_[a].grad.a[i] += nodes_[out].grad.a[i] * silu_grad(nodes_[a].val.a[i]);
        };
        return out;
    }

    Ref sigmoid_act(Ref a) {
        Mat o = val(a);
        for (auto& v : o.a) v = sigmoid(v);
        Ref out = leaf(o);
        nodes_[out].back = [this, a, out] {
            for (size_t i = 0; i < nodes_[out].grad.a.size(); ++i) {
                double s = nodes_[out].val.a[i];
                nodes_[a].grad.a[i] += nodes_[out].grad.a[i] * s * (1.0 - s);
            }
        };
        return out;
    }

    Ref exp_act(Ref a) {
        Mat o = val(a);
        for (auto& v : o.a) v = std::exp(v);
        Ref out = leaf(o);
        nodes_[out].back = [this, a, out] {
            for (size_t i = 0; i < nodes_[out].grad.a.size(); ++i)
                nodes_[a].grad.a[i] += nodes_[out].grad.a[i] * nodes_[out].val.a[i];
        };
        return out;
    }

    Ref log_act(Ref a) {
        Mat o = val(a);
        for (auto& v : o.a) v = std::log(v);
        Ref out = leaf(o);
        nodes_[out].back = [this, a, out] {
            for (size_t i = 0; i < nodes_[out].grad.a.size(); ++i)
                nodes_[a].grad.a[i] += nodes_[out].grad.a[i] / nodes_[a].val.a[i];
        };
        return out;
    }

    // c * tanh(x / c): smooth bound to (-c, c)
    Ref softcap(Ref a, double c) {
        Mat o = val(a);
        for (auto& v : o.a) v = c * std::tanh(v / c);
        Ref out = leaf(o);
        nodes_[out].back = [this, a, out, c] {
            for (size_t i = 0; i < nodes_[out].grad.a.size(); ++i) {
                double th = nodes_[out].val.a[i] / c;
                nodes_[a].grad.a[i] += nodes_[out].grad.a[i] * (1.0 - th * th);
            }
        };
        return out;
    }

    // ----------------------------------------------------------- reshaping

    Ref slice_cols(Ref a, int c0, int c1) {
        const Mat& av = val(a);
        if (c0 < 0 || c1 > av.cols || c0 >= c1) throw DimensionError("slice_cols range");
        Mat o(av.rows, c1 - c0);
        for (int i = 0; i < av.rows; ++i)
            for (int j = c0; j < c1; ++j) o.at(i, j - c0) = av.at(i, j);
        Ref out = leaf(o);
        nodes_[out].back = [this, a, out, c0] {
            const Mat& g = nodes_[out].grad;
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) nodes_[a].grad.at(i, j + c0) += g.at(i, j);
        };
        return out;
    }

    Ref concat_cols(Ref a, Ref b) {
        const Mat& av = val(a);
        const Mat& bv = val(b);
        if (av.rows != bv.rows) throw DimensionError("concat_cols rows");
        Mat o(av.rows, av.cols + bv.cols);
        for (int i = 0; i < av.rows; ++i) {
            for (int j = 0; j < av.cols; ++j) o.at(i, j) = av.at(i, j);
            for (int j = 0; j < bv.cols; ++j) o.at(i, av.cols + j) = bv.at(i, j);
        }
        Ref out = leaf(o);
        int ac = av.cols;
        nodes_[out].back = [this, a, b, out, ac] {
            const Mat& g = nodes_[out].grad;
            for (int i = 0; i < g.rows; ++i) {
                for (int j = 0; j < ac; ++j) nodes_[a].grad.at(i, j) += g.at(i, j);
                for (int j = ac; j < g.cols; ++j) nodes_[b].grad.at(i, j - ac) += g.at(i, j);
            }
        };
        return out;
    }

    Ref stack_cols(const std::vector<Ref>& cols) {
        if (cols.empty()) throw DimensionError("stack_cols: empty");
        int rows = val(cols[0]).rows;
        Mat o(rows, static_cast<int>(cols.size()));
        for (size_t j = 0; j < cols.size(); ++j) {
            const Mat& cv = val(cols[j]);
            if (cv.rows != rows || cv.cols != 1) throw DimensionError("stack_cols: need B x 1 columns");
            for (int i = 0; i < rows; ++i) o.at(i, static_cast<int>(j)) = cv.at(i, 0);
        }
        Ref out = leaf(o);
        auto refs = cols;
        nodes_[out].back = [this, refs, out] {
            const Mat& g = nodes_[out].grad;
            for (size_t j = 0; j < refs.size(); ++j)
                for (int i = 0; i < g.rows; ++i) nodes_[refs[j]].grad.at(i, 0) += g.at(i, static_cast<int>(j));
        };
        return out;
    }

    // ---------------------------------------------------------- reductions

    Ref sum_all(Ref a) {
        double s = 0;
        for (double v : val(a).a) s += v;
        Mat o(1, 1);
        o.a[0] = s;
        Ref out = leaf(o);
        nodes_[out].back = [this, a, out] {
            double g = nodes_[out].grad.a[0];
            for (auto& v : nodes_[a].grad.a) v += g;
        };
        return out;
    }

    Ref row_sum(Ref a) {
        const Mat& av = val(a);
        Mat o(av.rows, 1);
        for (int i = 0; i < av.rows; ++i) {
            double s = 0;
            for (int j = 0; j < av.cols; ++j) s += av.at(i, j);
            o.at(i, 0) = s;
        }
        Ref out = leaf(o);
        nodes_[out].back = [this, a, out] {
            const Mat& g = nodes_[out].grad;
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < nodes_[a].grad.cols; ++j) nodes_[a].grad.at(i, j) += g.at(i, 0);
        };
        return out;
    }

    // ----------------------------------------------------------- specials

    // Straight-through binary gate. Forward: hard threshold at 0, or a
    // Bernoulli(sigmoid(logit)) draw in stochastic mode; explore_floor
    // keeps the draw probability off the extremes so saturated gates still
    // see both branches during training. Backward: the sigmoid derivative.
    Ref st_gate(Ref logits, bool stochastic, Rng* rng, double explore_floor = 0.0) {
        Mat o = val(logits);
        for (auto& v : o.a) {
            double p = sigmoid(v);
            if (stochastic) p = std::clamp(p, explore_floor, 1.0 - explore_floor);
            v = stochastic ? (rng->uniform() < p ? 1.0 : 0.0) : (v > 0.0 ? 1.0 : 0.0);
        }
        Ref out = leaf(o);
        nodes_[out].back = [this, logits, out] {
            for (size_t i = 0; i < nodes_[out].grad.a.size(); ++i) {
                double s = sigmoid(nodes_[logits].val.a[i]);
                nodes_[logits].grad.a[i] += nodes_[out].grad.a[i] * s * (1.0 - s);
            }
        };
        return out;
    }

    // Mean of non-pad token embeddings per sequence (pad id 0). All-pad
    // sequences pool to the zero vector.
    Ref embed_mean(Ref table, const std::vector<std::vector<int>>& ids) {
        const Mat& tv = val(table);
        Mat o(static_cast<int>(ids.size()), tv.cols);
        for (size_t b = 0; b < ids.size(); ++b) {
            int n = 0;
            for (int id : ids[b]) {
                if (id == 0) continue;
                if (id < 0 || id >= tv.rows) throw DimensionError("embed_mean: id out of range");
                for (int j = 0; j < tv.cols; ++j) o.at(static_cast<int>(b), j) += tv.at(id, j);
                ++n;
            }
            if (n > 0)
                for (int j = 0; j < tv.cols; ++j) o.at(static_cast<int>(b), j) /= n;
        }
        Ref out = leaf(o);
        auto ids_copy = ids;
        nodes_[out].back = [this, table, out, ids_copy] {
            const Mat& g = nodes_[out].grad;
            Mat& gt = nodes_[table].grad;
            for (size_t b = 0; b < ids_copy.size(); ++b) {
                int n = 0;
                for (int id : ids_copy[b])
                    if (id != 0) ++n;
                if (n == 0) continue;
                double inv = 1.0 / n;
                for (int id : ids_copy[b]) {
                    if (id == 0) continue;
                    for (int j = 0; j < g.cols; ++j) gt.at(id, j) += inv * g.at(static_cast<int>(b), j);
                }
            }
        };
        return out;
    }

private:
    struct Node {
        Mat val;
        Mat grad;
        std::function<void()> back;
    };
    std::vector<Node> nodes_;
};

using Ref = Tape::Ref;

// Binds parameter matrices to tape leaves, one leaf per matrix per tape.
class Binder {
public:
    explicit Binder(Tape& tape) : tape_(&tape) {}

    Ref operator()(const Mat& m) {
        auto it = refs_.find(&m);
        if (it != refs_.end()) return it->second;
        Ref r = tape_->leaf(m);
        refs_.emplace(&m, r);
        return r;
    }

    bool bound(const Mat& m) const { return refs_.count(&m) > 0; }

    // Add the tape gradient of m into sink (same shape).
    void accumulate(const Mat& m, Mat& sink) const {
        auto it = refs_.find(&m);
        if (it == refs_.end()) return;
        const Mat& g = tape_->grad(it->second);
        for (size_t i = 0; i < g.a.size(); ++i) sink.a[i] += g.a[i];
    }

private:
    Tape* tape_;
    std::unordered_map<const Mat*, Ref> refs_;
};

} // namespace cwm::nn
