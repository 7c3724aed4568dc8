// Latents to language: a two-stage causal mapper (relevance masks found by
// correlation thresholding, then per-variable typed predictors) and the
// deterministic rule-based state descriptor.
#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "cwm/action_text.hpp"
#include "cwm/gridworld.hpp"
#include "cwm/io.hpp"
#include "cwm/nn.hpp"

namespace cwm::decoder {

using cwm::Mat;
using nlohmann::json;

struct EmptyMask : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegenerateData : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ------------------------------------------------------------ entity meta

enum class VarType { numerical, categorical, angle };

struct VarSpec {
    VarType type = VarType::numerical;
    int classes = 0;  // categorical only
};

// Static facts about the environment needed to render and parse state text.
struct EntityMeta {
    int grid_size = 8;
    std::vector<std::string> vehicle_colors;
    std::vector<std::string> obstacle_colors;
    std::vector<std::string> light_colors;

    static EntityMeta from_config(const env::EnvConfig& cfg) {
        EntityMeta m;
        m.grid_size = cfg.grid_size;
        for (auto& c : cfg.vehicle_colors) m.vehicle_colors.push_back(text::color_name(c));
        for (auto& c : cfg.obstacle_colors) m.obstacle_colors.push_back(text::color_name(c));
        for (auto& c : cfg.light_colors) m.light_colors.push_back(text::color_name(c));
        return m;
    }

    int k() const {
        return 2 * static_cast<int>(vehicle_colors.size()) + 2 * static_cast<int>(obstacle_colors.size()) +
               static_cast<int>(light_colors.size());
    }

    std::vector<VarSpec> variable_types() const {
        std::vector<VarSpec> t;
        for (size_t i = 0; i < 2 * vehicle_colors.size() + 2 * obstacle_colors.size(); ++i)
            t.push_back({VarType::numerical, 0});
        for (size_t i = 0; i < light_colors.size(); ++i) t.push_back({VarType::categorical, 2});
        return t;
    }

    // causal indices of the obstacle coordinates (the eval-excluded block)
    std::vector<int> obstacle_indices() const {
        std::vector<int> idx;
        int base = 2 * static_cast<int>(vehicle_colors.size());
        for (size_t i = 0; i < 2 * obstacle_colors.size(); ++i) idx.push_back(base + static_cast<int>(i));
        return idx;
    }

    // causal indices of light states and vehicle positions (planning goals)
    std::vector<int> goal_indices() const {
        std::vector<int> idx;
        for (size_t i = 0; i < 2 * vehicle_colors.size(); ++i) idx.push_back(static_cast<int>(i));
        int base = 2 * static_cast<int>(vehicle_colors.size() + obstacle_colors.size());
        for (size_t i = 0; i < light_colors.size(); ++i) idx.push_back(base + static_cast<int>(i));
        return idx;
    }
};

inline json to_json(const EntityMeta& m) {
    return json{{"grid_size", m.grid_size},
                {"vehicle_colors", m.vehicle_colors},
                {"obstacle_colors", m.obstacle_colors},
                {"light_colors", m.light_colors}};
}

inline EntityMeta entity_meta_from_json(const json& j) {
    EntityMeta m;
    m.grid_size = j.at("grid_size").get<int>();
    m.vehicle_colors = j.at("vehicle_colors").get<std::vector<std::string>>();
    m.obstacle_colors = j.at("obstacle_colors").get<std::vector<std::string>>();
    m.light_colors = j.at("light_colors").get<std::vector<std::string>>();
    return m;
}

// --------------------------------------------------------- state descriptor

// Fixed-order rendering, e.g. "The blue car is at (2,3), the cyan traffic
// light is green." Positions are denormalized to integer cells.
inline std::string describe_state(const std::vector<double>& c, const EntityMeta& meta) {
    if (static_cast<int>(c.size()) != meta.k()) throw DimensionError("describe_state: bad causal length");
    std::vector<std::string> parts;
    size_t i = 0;
    auto cell = [&](double v) { return std::to_string(env::denormalize_cell(v, meta.grid_size)); };
    for (const auto& color : meta.vehicle_colors) {
        std::string x = cell(c[i++]), y = cell(c[i++]);
        parts.push_back("the " + color + " car is at (" + x + "," + y + ")");
    }
    for (const auto& color : meta.obstacle_colors) {
        std::string x = cell(c[i++]), y = cell(c[i++]);
        parts.push_back("the " + color + " obstacle is at (" + x + "," + y + ")");
    }
    for (const auto& color : meta.light_colors) {
        bool green = c[i++] >= 0.5;
        parts.push_back("the " + color + " traffic light is " + (green ? "green" : "red"));
    }
    std::string out;
    for (size_t p = 0; p < parts.size(); ++p) {
        if (p) out += ", ";
        out += parts[p];
    }
    if (!out.empty()) {
        out[0] = 'T';
        out += '.';
    }
    return out;
}

// Inverse of describe_state for well-formed text; nullopt when malformed.
inline std::optional<std::vector<double>> parse_state_description(const std::string& text,
                                                                  const EntityMeta& meta) {
    std::vector<double> c;
    double denom = static_cast<double>(meta.grid_size - 1);
    size_t pos = 0;
    auto find_entity = [&](const std::string& color, const std::string& noun) -> std::optional<size_t> {
        std::string key = color + " " + noun;
        size_t at = text.find(key, pos);
        if (at == std::string::npos) return std::nullopt;
        return at + key.size();
    };
    for (const auto& color : meta.vehicle_colors) {
        auto at = find_entity(color, "car");
        if (!at) return std::nullopt;
        int x = 0, y = 0;
        if (std::sscanf(text.c_str() + *at, " is at (%d,%d)", &x, &y) != 2) return std::nullopt;
        c.push_back(x / denom);
        c.push_back(y / denom);
        pos = *at;
    }
    for (const auto& color : meta.obstacle_colors) {
        auto at = find_entity(color, "obstacle");
        if (!at) return std::nullopt;
        int x = 0, y = 0;
        if (std::sscanf(text.c_str() + *at, " is at (%d,%d)", &x, &y) != 2) return std::nullopt;
        c.push_back(x / denom);
        c.push_back(y / denom);
        pos = *at;
    }
    for (const auto& color : meta.light_colors) {
        auto at = find_entity(color, "traffic light");
        if (!at) return std::nullopt;
        size_t green = text.find("green", *at);
        size_t red = text.find("red", *at);
        if (green == std::string::npos && red == std::string::npos) return std::nullopt;
        c.push_back((green != std::string::npos && (red == std::string::npos || green < red)) ? 1.0 : 0.0);
        pos = *at;
    }
    return c;
}

// ------------------------------------------------------------ causal mapper

struct AssignmentResult {
    Mat correlation;  // M x K, abs Pearson between per-latent predictions and truth
    Mat masks;        // K x M binary, row j = latents relevant to variable j
    double threshold = 0.1;
    std::vector<int> fallback_vars;  // variables that needed the top-3 fallback
};

struct CausalMapper {
    AssignmentResult assignment;
    std::vector<VarSpec> types;
    std::vector<nn::Mlp> predictors;  // one per causal variable
    int latent_dim = 0;

    template <class Fn>
    void visit_params(Fn&& fn) {
        for (auto& p : predictors) p.visit_params(fn);
    }
};

struct FitOptions {
    int hidden = 64;
    int epochs = 300;
    int batch = 256;
    double lr = 3e-3;
    int warmup = 20;
};

namespace detail {

// generic minibatch Adam loop over (X, target builder) with a per-batch loss
template <class LossFn>
void fit_net(nn::Mlp& net, const Mat& x, LossFn&& loss_of, const FitOptions& opt, Rng& rng) {
    std::vector<Mat*> params;
    net.visit_params([&](Mat& m) { params.push_back(&m); });
    nn::AdamState adam;
    adam.lr = opt.lr;
    adam.warmup_steps = opt.warmup;
    std::vector<Mat> grads;
    for (auto* p : params) grads.emplace_back(p->rows, p->cols);

    std::vector<int> order(x.rows);
    for (int i = 0; i < x.rows; ++i) order[i] = i;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        rng.shuffle(order);
        for (int start = 0; start < x.rows; start += opt.batch) {
            int bsz = std::min(opt.batch, x.rows - start);
            Mat xb(bsz, x.cols);
            std::vector<int> rows(bsz);
            for (int i = 0; i < bsz; ++i) {
                rows[i] = order[start + i];
                xb.set_row(i, x.row_vec(rows[i]));
            }
            nn::Tape tape;
            nn::Binder bind(tape);
            nn::Ref out = mlp_apply(tape, bind, net, tape.leaf(xb));
            nn::Ref loss = loss_of(tape, out, rows);
            tape.backward(loss);
            for (auto& g : grads) std::fill(g.a.begin(), g.a.end(), 0.0);
            for (size_t p = 0; p < params.size(); ++p) bind.accumulate(*params[p], grads[p]);
            std::vector<const Mat*> gp;
            for (auto& g : grads) gp.push_back(&g);
            optimizer_step(adam, params, gp);
        }
    }
}

} // namespace detail

// Stage one: one shared net predicts all causal variables from each latent
// in isolation (identity masks batched), then abs-Pearson correlations
// between its per-latent predictions and the truth pick the relevant
// latents. Correlations are measured on a held-out quarter of the labels so
// memorized noise cannot pass the threshold.
inline AssignmentResult fit_target_assignment(const Mat& latents, const Mat& true_c, double threshold,
                                              Rng& rng, FitOptions opt = {}) {
    int n = latents.rows, m = latents.cols, k = true_c.cols;
    if (true_c.rows != n || n == 0) throw DimensionError("fit_target_assignment: shape");
    for (int j = 0; j < k; ++j) {
        bool constant = true;
        for (int i = 1; i < n && constant; ++i) constant = (true_c.at(i, j) == true_c.at(0, j));
        if (constant) throw DegenerateData("constant causal variable " + std::to_string(j));
    }

    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    int n_train = std::max(1, (3 * n) / 4);
    int n_held = n - n_train;
    if (n_held < 8) {
        n_train = n;  // too few labels to split; fall back to in-sample correlation
        n_held = n;
    }

    // rows: for each training sample, M masked copies [z * e_i, e_i]
    Mat x(n_train * m, 2 * m);
    Mat target(n_train * m, k);
    for (int s = 0; s < n_train; ++s)
        for (int i = 0; i < m; ++i) {
            int r = s * m + i;
            x.at(r, i) = latents.at(order[s], i);
            x.at(r, m + i) = 1.0;
            for (int j = 0; j < k; ++j) target.at(r, j) = true_c.at(order[s], j);
        }

    nn::Mlp assign = nn::Mlp::make({2 * m, opt.hidden, k}, rng);
    detail::fit_net(
        assign, x,
        [&](nn::Tape& tape, nn::Ref out, const std::vector<int>& rows) {
            Mat tb(static_cast<int>(rows.size()), k);
            for (size_t i = 0; i < rows.size(); ++i) tb.set_row(static_cast<int>(i), target.row_vec(rows[i]));
            nn::Ref diff = tape.sub(out, tape.leaf(tb));
            return tape.scale(tape.sum_all(tape.hadamard(diff, diff)), 1.0 / rows.size());
        },
        opt, rng);

    // held-out correlations between per-mask predictions and ground truth
    AssignmentResult res;
    res.threshold = threshold;
    res.correlation = Mat(m, k);
    int held_base = n - n_held;
    Mat xh(n_held * m, 2 * m);
    for (int s = 0; s < n_held; ++s)
        for (int i = 0; i < m; ++i) {
            int r = s * m + i;
            xh.at(r, i) = latents.at(order[held_base + s], i);
            xh.at(r, m + i) = 1.0;
        }
    Mat pred_rows = mlp_eval(assign, xh);
    std::vector<double> pj(n_held), cj(n_held);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) {
            for (int s = 0; s < n_held; ++s) {
                pj[s] = pred_rows.at(s * m + i, j);
                cj[s] = true_c.at(order[held_base + s], j);
            }
            res.correlation.at(i, j) = pearson_abs(pj, cj);
        }

    res.masks = Mat(k, m);
    for (int j = 0; j < k; ++j) {
        int count = 0;
        for (int i = 0; i < m; ++i)
            if (res.correlation.at(i, j) >= threshold) {
                res.masks.at(j, i) = 1.0;
                ++count;
            }
        if (count == 0) {
            // top-3 fallback keeps the pipeline total
            std::vector<int> idx(m);
            for (int i = 0; i < m; ++i) idx[i] = i;
            std::sort(idx.begin(), idx.end(),
                      [&](int a, int b) { return res.correlation.at(a, j) > res.correlation.at(b, j); });
            for (int t = 0; t < std::min(3, m); ++t) res.masks.at(j, idx[t]) = 1.0;
            res.fallback_vars.push_back(j);
        }
    }
    return res;
}

// Stage two: per-variable predictors reading only their masked latents, with
// typed output heads.
inline CausalMapper fit_causal_predictors(const Mat& latents, const Mat& true_c,
                                          const AssignmentResult& assignment,
                                          const std::vector<VarSpec>& types, Rng& rng,
                                          FitOptions opt = {}) {
    int n = latents.rows, m = latents.cols, k = true_c.cols;
    if (static_cast<int>(types.size()) != k) throw DimensionError("fit_causal_predictors: types");
    CausalMapper mapper;
    mapper.assignment = assignment;
    mapper.types = types;
    mapper.latent_dim = m;

    for (int j = 0; j < k; ++j) {
        bool any = false;
        for (int i = 0; i < m; ++i) any = any || assignment.masks.at(j, i) > 0.5;
        if (!any) throw EmptyMask("variable " + std::to_string(j) + " has an empty mask");

        Mat xj(n, m);
        for (int s = 0; s < n; ++s)
            for (int i = 0; i < m; ++i) xj.at(s, i) = latents.at(s, i) * assignment.masks.at(j, i);

        int out_dim = 1;
        if (types[j].type == VarType::categorical) out_dim = types[j].classes;
        if (types[j].type == VarType::angle) out_dim = 2;
        nn::Mlp net = nn::Mlp::make({m, opt.hidden, out_dim}, rng);

        if (types[j].type == VarType::numerical) {
            detail::fit_net(
                net, xj,
                [&](nn::Tape& tape, nn::Ref out, const std::vector<int>& rows) {
                    Mat tb(static_cast<int>(rows.size()), 1);
                    for (size_t i = 0; i < rows.size(); ++i) tb.at(static_cast<int>(i), 0) = true_c.at(rows[i], j);
                    nn::Ref diff = tape.sub(out, tape.leaf(tb));
                    return tape.scale(tape.sum_all(tape.hadamard(diff, diff)), 1.0 / rows.size());
                },
                opt, rng);
        } else if (types[j].type == VarType::categorical) {
            int classes = types[j].classes;
            detail::fit_net(
                net, xj,
                [&](nn::Tape& tape, nn::Ref out, const std::vector<int>& rows) {
                    // cross entropy via softmax: -sum(onehot*logit) + logsumexp
                    int bsz = static_cast<int>(rows.size());
                    Mat onehot(bsz, classes);
                    for (int i = 0; i < bsz; ++i) {
                        int cls = std::clamp(
                            static_cast<int>(std::lround(true_c.at(rows[i], j) * (classes - 1))), 0,
                            classes - 1);
                        onehot.at(i, cls) = 1.0;
                    }
                    nn::Ref picked = tape.row_sum(tape.hadamard(out, tape.leaf(onehot)));
                    // stable enough at this scale: logsumexp = log(sum(exp))
                    nn::Ref lse = tape.row_sum(tape.exp_act(out));
                    Mat eps(bsz, 1, 1e-12);
                    nn::Ref loglse = tape.log_act(tape.add(lse, tape.leaf(eps)));
                    nn::Ref nll = tape.sub(loglse, picked);
                    return tape.scale(tape.sum_all(nll), 1.0 / bsz);
                },
                opt, rng);
        } else {
            detail::fit_net(
                net, xj,
                [&](nn::Tape& tape, nn::Ref out, const std::vector<int>& rows) {
                    Mat tb(static_cast<int>(rows.size()), 2);
                    for (size_t i = 0; i < rows.size(); ++i) {
                        double ang = true_c.at(rows[i], j) * 2.0 * 3.14159265358979323846;
                        tb.at(static_cast<int>(i), 0) = std::sin(ang);
                        tb.at(static_cast<int>(i), 1) = std::cos(ang);
                    }
                    nn::Ref diff = tape.sub(tape.softcap(out, 2.0), tape.leaf(tb));
                    return tape.scale(tape.sum_all(tape.hadamard(diff, diff)), 1.0 / rows.size());
                },
                opt, rng);
        }
        mapper.predictors.push_back(std::move(net));
    }
    return mapper;
}

// Deterministic prediction of the causal vector from one latent vector.
inline std::vector<double> map_latents(const CausalMapper& mapper, const std::vector<double>& z) {
    if (static_cast<int>(z.size()) != mapper.latent_dim) throw DimensionError("map_latents: dim");
    int k = static_cast<int>(mapper.predictors.size());
    std::vector<double> c(k, 0.0);
    for (int j = 0; j < k; ++j) {
        Mat in(1, mapper.latent_dim);
        for (int i = 0; i < mapper.latent_dim; ++i) in.at(0, i) = z[i] * mapper.assignment.masks.at(j, i);
        Mat out = mlp_eval(mapper.predictors[j], in);
        switch (mapper.types[j].type) {
            case VarType::numerical:
                c[j] = std::clamp(out.at(0, 0), 0.0, 1.0);
                break;
            case VarType::categorical: {
                int best = 0;
                for (int cl = 1; cl < mapper.types[j].classes; ++cl)
                    if (out.at(0, cl) > out.at(0, best)) best = cl;
                c[j] = static_cast<double>(best) / (mapper.types[j].classes - 1);
                break;
            }
            case VarType::angle: {
                double ang = std::atan2(out.at(0, 0), out.at(0, 1));
                if (ang < 0) ang += 2.0 * 3.14159265358979323846;
                c[j] = ang / (2.0 * 3.14159265358979323846);
                break;
            }
        }
    }
    return c;
}

} // namespace cwm::decoder
