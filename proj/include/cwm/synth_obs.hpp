// Entangling observation map: an injective affine mix of the causal vector,
// optionally wrapped in a smooth elementwise bijection, plus the fixed
// encoder that projects observations to pre-flow latents E.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "cwm/mat.hpp"
#include "cwm/rng.hpp"

namespace cwm::obs {

using nlohmann::json;

enum class Nonlinearity { linear, smooth };

// y = sinh(a x)/a, strictly increasing with analytic inverse.
inline double smooth_fwd(double x) { return std::sinh(0.8 * x) / 0.8; }
inline double smooth_inv(double y) { return std::asinh(0.8 * y) / 0.8; }

struct ObservationMap {
    Mat mixing;       // D x K, full column rank with margin
    std::vector<double> bias;  // D
    Mat projection;   // M x D, full row rank; the fixed encoder weights
    Nonlinearity nonlinearity = Nonlinearity::linear;
    int causal_dim = 0;       // K
    int obs_dim = 0;          // D
    int latent_dim = 0;       // M
};

inline ObservationMap make_mixing(int k, int d, int m, Rng& rng,
                                  Nonlinearity nl = Nonlinearity::smooth) {
    if (d < k) throw DimensionError("make_mixing: need D >= K");
    if (m > d) throw DimensionError("make_mixing: need M <= D");
    ObservationMap map;
    map.causal_dim = k;
    map.obs_dim = d;
    map.latent_dim = m;
    map.nonlinearity = nl;
    const double margin = 1e-3;
    do {
        map.mixing = Mat::randn(d, k, rng, 1.0 / std::sqrt(k));
    } while (min_singular_value(map.mixing) <= margin);
    do {
        map.projection = Mat::randn(m, d, rng, 1.0 / std::sqrt(d));
    } while (min_singular_value(transpose(map.projection)) <= margin);
    map.bias.resize(d);
    for (auto& b : map.bias) b = 0.25 * rng.normal();
    return map;
}

// X = nl(mixing C + bias)
inline std::vector<double> observe(const ObservationMap& map, const std::vector<double>& c) {
    if (static_cast<int>(c.size()) != map.causal_dim) throw DimensionError("observe: bad causal dim");
    std::vector<double> x(map.obs_dim, 0.0);
    for (int i = 0; i < map.obs_dim; ++i) {
        double s = map.bias[i];
        for (int j = 0; j < map.causal_dim; ++j) s += map.mixing.at(i, j) * c[j];
        x[i] = (map.nonlinearity == Nonlinearity::smooth) ? smooth_fwd(s) : s;
    }
    return x;
}

// E = projection . nl^{-1}(X); dimension M, causal variables still entangled.
inline std::vector<double> encode(const ObservationMap& map, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != map.obs_dim) throw DimensionError("encode: bad obs dim");
    std::vector<double> lin(map.obs_dim);
    for (int i = 0; i < map.obs_dim; ++i)
        lin[i] = (map.nonlinearity == Nonlinearity::smooth) ? smooth_inv(x[i]) : x[i];
    std::vector<double> e(map.latent_dim, 0.0);
    for (int i = 0; i < map.latent_dim; ++i) {
        double s = 0.0;
        for (int j = 0; j < map.obs_dim; ++j) s += map.projection.at(i, j) * lin[j];
        e[i] = s;
    }
    return e;
}

inline json mat_to_json(const Mat& m) {
    json rows = json::array();
    for (int i = 0; i < m.rows; ++i) rows.push_back(m.row_vec(i));
    return json{{"rows", m.rows}, {"cols", m.cols}, {"data", rows}};
}

inline Mat mat_from_json(const json& j) {
    Mat m(j.at("rows").get<int>(), j.at("cols").get<int>());
    int r = 0;
    for (const auto& row : j.at("data")) {
        m.set_row(r++, row.get<std::vector<double>>());
    }
    return m;
}

inline json to_json(const ObservationMap& map) {
    return json{{"mixing", mat_to_json(map.mixing)},
                {"projection", mat_to_json(map.projection)},
                {"bias", map.bias},
                {"nonlinearity", map.nonlinearity == Nonlinearity::smooth ? "smooth" : "linear"},
                {"causal_dim", map.causal_dim},
                {"obs_dim", map.obs_dim},
                {"latent_dim", map.latent_dim}};
}

inline ObservationMap observation_map_from_json(const json& j) {
    ObservationMap m;
    m.mixing = mat_from_json(j.at("mixing"));
    m.projection = mat_from_json(j.at("projection"));
    m.bias = j.at("bias").get<std::vector<double>>();
    m.nonlinearity = j.at("nonlinearity").get<std::string>() == "smooth" ? Nonlinearity::smooth
                                                                         : Nonlinearity::linear;
    m.causal_dim = j.at("causal_dim").get<int>();
    m.obs_dim = j.at("obs_dim").get<int>();
    m.latent_dim = j.at("latent_dim").get<int>();
    return m;
}

} // namespace cwm::obs
