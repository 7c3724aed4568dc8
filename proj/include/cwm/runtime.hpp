// Inference with the trained world model: encode an observation once, then
// autoregress in latent space, decoding each latent state to causal
// variables and text. Also hosts the line-delimited JSON protocol that lets
// external agents drive the model over stdio.
#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "cwm/crl.hpp"
#include "cwm/decoder.hpp"

namespace cwm::runtime {

using crl::CwmParams;
using nlohmann::json;

struct LatentState {
    std::vector<double> z;
    enum class Source { encoded, transitioned } source = Source::encoded;
    enum class Mode { mean, sample } mode = Mode::mean;
};

struct RolloutStep {
    LatentState z_next;
    std::string text_current;
    std::string text_next;
};

inline LatentState encode_obs(const CwmParams& params, const std::vector<double>& x) {
    auto e = obs::encode(params.obsmap, x);
    Mat em = Mat::row(e);
    LatentState s;
    s.z = nn::flow_forward_eval(params.flow, em).first.row_vec(0);
    s.source = LatentState::Source::encoded;
    return s;
}

// Action text (and optional interaction coordinates for the CB/HB
// modalities) to the action vector consumed by the transition model.
inline Mat encode_action(const CwmParams& params, const std::string& action_text,
                         std::array<double, 2> coords = {-1.0, -1.0}) {
    auto tokens = text::tokenize_pad(action_text, params.token_len, params.vocab).ids;
    Mat cm(1, 2);
    cm.at(0, 0) = coords[0];
    cm.at(0, 1) = coords[1];
    return crl::embed_action_eval(params.embedder, {tokens}, cm);
}

inline std::vector<double> map_causal(const CwmParams& params, const LatentState& s) {
    if (!params.mapper) throw io::DataError("checkpoint has no fitted causal mapper");
    return decoder::map_latents(*params.mapper, s.z);
}

inline std::string decode_state(const CwmParams& params, const LatentState& s) {
    return decoder::describe_state(map_causal(params, s), params.meta);
}

inline RolloutStep sample_next_state(const CwmParams& params, const LatentState& state,
                                     const Mat& action, LatentState::Mode mode, Rng* rng = nullptr) {
    Mat z_prev = Mat::row(state.z);
    auto gates = crl::interaction_gates_eval(params.transition, action, z_prev);
    std::vector<double> mean, log_std;
    crl::transition_heads_eval(params.transition, z_prev, gates, mean, log_std);
    RolloutStep out;
    out.z_next.source = LatentState::Source::transitioned;
    out.z_next.mode = mode;
    out.z_next.z = mean;
    if (mode == LatentState::Mode::sample) {
        if (!rng) throw io::DataError("sample mode needs a random stream");
        for (size_t i = 0; i < out.z_next.z.size(); ++i)
            out.z_next.z[i] = mean[i] + std::exp(log_std[i]) * rng->normal();
    }
    if (params.mapper) {
        out.text_current = decode_state(params, state);
        out.text_next = decode_state(params, out.z_next);
    }
    return out;
}

// Yields (z0, text0), then one pair per action; latents recurse without
// touching the observation encoder after step 0.
inline std::vector<std::pair<LatentState, std::string>> inference_trajectory(
    const CwmParams& params, const std::vector<double>& x0,
    const std::vector<std::string>& action_texts, LatentState::Mode mode = LatentState::Mode::mean,
    Rng* rng = nullptr) {
    std::vector<std::pair<LatentState, std::string>> out;
    LatentState z = encode_obs(params, x0);
    out.push_back({z, params.mapper ? decode_state(params, z) : std::string{}});
    for (const auto& text : action_texts) {
        auto step = sample_next_state(params, z, encode_action(params, text), mode, rng);
        z = step.z_next;
        out.push_back({z, step.text_next});
    }
    return out;
}

// ------------------------------------------------------------ stdio server

// One request per line:
//   {"op":"encode","observation":[...]}
//   {"op":"step","z":[...],"action":"...","mode":"mean"|"sample"}
//   {"op":"describe","z":[...]}
// One JSON response per line; {"ok":false,"error":...} on failure.
inline json handle_request(const CwmParams& params, const json& req, Rng& rng) {
    auto op = req.at("op").get<std::string>();
    if (op == "encode") {
        auto x = req.at("observation").get<std::vector<double>>();
        LatentState s = encode_obs(params, x);
        json res{{"ok", true}, {"z", s.z}};
        if (params.mapper) res["text"] = decode_state(params, s);
        return res;
    }
    if (op == "step") {
        LatentState s;
        s.z = req.at("z").get<std::vector<double>>();
        if (static_cast<int>(s.z.size()) != params.m) throw DimensionError("step: bad z length");
        auto mode = req.value("mode", "mean") == "sample" ? LatentState::Mode::sample
                                                          : LatentState::Mode::mean;
        std::array<double, 2> coords{-1.0, -1.0};
        if (req.contains("coords")) {
            auto cv = req.at("coords").get<std::vector<double>>();
            coords = {cv.at(0), cv.at(1)};
        }
        auto action = encode_action(params, req.at("action").get<std::string>(), coords);
        auto step = sample_next_state(params, s, action, mode, &rng);
        json res{{"ok", true}, {"z", step.z_next.z}};
        if (params.mapper) {
            res["text"] = step.text_next;
            res["text_prev"] = step.text_current;
        }
        return res;
    }
    if (op == "describe") {
        LatentState s;
        s.z = req.at("z").get<std::vector<double>>();
        if (static_cast<int>(s.z.size()) != params.m) throw DimensionError("describe: bad z length");
        auto causal = map_causal(params, s);
        return json{{"ok", true}, {"text", decoder::describe_state(causal, params.meta)},
                    {"causal", causal}};
    }
    return json{{"ok", false}, {"error", "unknown op: " + op}};
}

inline void serve(const CwmParams& params, std::istream& in, std::ostream& out, uint64_t seed = 0) {
    Rng rng(seed);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json res;
        try {
            res = handle_request(params, json::parse(line), rng);
        } catch (const std::exception& e) {
            res = json{{"ok", false}, {"error", e.what()}};
        }
        out << res.dump() << "\n" << std::flush;
    }
}

} // namespace cwm::runtime
