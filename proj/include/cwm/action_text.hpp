// Natural-language intervention descriptions: a small PCFG over modifiers,
// verbs and adjectives, a fixed color palette, hash-bucket tokenization, and
// a keyword parser mapping free-form action text back to interventions.
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cwm/gridworld.hpp"
#include "cwm/rng.hpp"

namespace cwm::text {

using nlohmann::json;
using env::GridState;
using env::Intervention;
using env::InterventionKind;
using env::Rgb;

// ----------------------------------------------------------------- palette

struct PaletteEntry {
    const char* name;
    Rgb rgb;
};

// Fixed 12-name palette; color_name picks the nearest entry in RGB space.
inline const std::array<PaletteEntry, 12>& palette() {
    static const std::array<PaletteEntry, 12> p{{
        {"red", {255, 0, 0}},
        {"green", {0, 255, 0}},
        {"blue", {0, 0, 255}},
        {"cyan", {0, 255, 255}},
        {"magenta", {255, 0, 255}},
        {"yellow", {255, 255, 0}},
        {"orange", {255, 165, 0}},
        {"purple", {128, 0, 128}},
        {"pink", {255, 192, 203}},
        {"brown", {139, 69, 19}},
        {"white", {255, 255, 255}},
        {"black", {0, 0, 0}},
    }};
    return p;
}

inline std::string color_name(const Rgb& c) {
    double best = 1e30;
    const char* name = "black";
    for (const auto& e : palette()) {
        double d = 0;
        for (int i = 0; i < 3; ++i) d += double(c[i] - e.rgb[i]) * double(c[i] - e.rgb[i]);
        if (d < best) {
            best = d;
            name = e.name;
        }
    }
    return name;
}

// ------------------------------------------------------------------- PCFG

struct Pcfg {
    std::vector<std::string> modifiers{"skillfully", "carefully", "swiftly", "deftly", "casually"};
    std::vector<std::string> vehicle_adjectives{"sleek", "shiny", "small", "speedy"};
    std::vector<std::string> obstacle_adjectives{"large", "heavy", "sturdy", "rough"};
    std::vector<std::string> light_adjectives{"bright", "tall", "blinking", "old"};
    std::vector<std::string> toggle_verbs{"toggled", "switched", "flipped"};
    std::vector<std::string> move_vehicle_verbs{"moved", "advanced", "drove"};
    std::vector<std::string> move_obstacle_verbs{"moved", "shifted", "pushed"};
    std::string noop_sentence = "You did nothing.";

    void validate() const {
        for (const auto* set : {&modifiers, &vehicle_adjectives, &obstacle_adjectives, &light_adjectives,
                                &toggle_verbs, &move_vehicle_verbs, &move_obstacle_verbs})
            if (set->empty()) throw env::ConfigError("pcfg: empty production set");
    }
};

inline json to_json(const Pcfg& g) {
    return json{{"modifiers", g.modifiers},
                {"vehicle_adjectives", g.vehicle_adjectives},
                {"obstacle_adjectives", g.obstacle_adjectives},
                {"light_adjectives", g.light_adjectives},
                {"toggle_verbs", g.toggle_verbs},
                {"move_vehicle_verbs", g.move_vehicle_verbs},
                {"move_obstacle_verbs", g.move_obstacle_verbs},
                {"noop_sentence", g.noop_sentence}};
}

inline Pcfg pcfg_from_json(const json& j) {
    Pcfg g;
    try {
        g.modifiers = j.at("modifiers").get<std::vector<std::string>>();
        g.vehicle_adjectives = j.at("vehicle_adjectives").get<std::vector<std::string>>();
        g.obstacle_adjectives = j.at("obstacle_adjectives").get<std::vector<std::string>>();
        g.light_adjectives = j.at("light_adjectives").get<std::vector<std::string>>();
        g.toggle_verbs = j.at("toggle_verbs").get<std::vector<std::string>>();
        g.move_vehicle_verbs = j.at("move_vehicle_verbs").get<std::vector<std::string>>();
        g.move_obstacle_verbs = j.at("move_obstacle_verbs").get<std::vector<std::string>>();
        g.noop_sentence = j.at("noop_sentence").get<std::string>();
    } catch (const json::exception& e) {
        throw env::ConfigError(std::string("grammar: ") + e.what());
    }
    g.validate();
    return g;
}

namespace detail {
inline const std::string& pick(const std::vector<std::string>& v, Rng& rng) {
    return v[rng.index(v.size())];
}

struct Target {
    std::string color;
    std::string noun;      // "traffic light" | "car" | "obstacle"
    std::string suffix;    // e.g. " forward"
    const std::vector<std::string>* adjectives;
    const std::vector<std::string>* verbs;
};

inline Target target_of(const Intervention& iv, const GridState& s, const Pcfg& g) {
    switch (iv.kind) {
        case InterventionKind::toggle_light: {
            if (iv.entity < 0 || iv.entity >= static_cast<int>(s.lights.size()))
                throw env::UnknownEntity("describe: no light " + std::to_string(iv.entity));
            return {color_name(s.lights[iv.entity].color), "traffic light", "", &g.light_adjectives,
                    &g.toggle_verbs};
        }
        case InterventionKind::move_vehicle: {
            if (iv.entity < 0 || iv.entity >= static_cast<int>(s.vehicles.size()))
                throw env::UnknownEntity("describe: no vehicle " + std::to_string(iv.entity));
            return {color_name(s.vehicles[iv.entity].color), "car", " forward", &g.vehicle_adjectives,
                    &g.move_vehicle_verbs};
        }
        case InterventionKind::move_obstacle: {
            if (iv.entity < 0 || iv.entity >= static_cast<int>(s.obstacles.size()))
                throw env::UnknownEntity("describe: no obstacle " + std::to_string(iv.entity));
            return {color_name(s.obstacles[iv.entity].color), "obstacle", "", &g.obstacle_adjectives,
                    &g.move_obstacle_verbs};
        }
        default:
            throw env::UnknownEntity("describe: noop has no target");
    }
}
} // namespace detail

// Sentence per the production m . v . "the" . adj . color . object, with the
// surface form "You <m> <v> the <adj>, <color> <object><suffix>."
inline std::string describe_action(const Intervention& iv, const GridState& s, const Pcfg& g, Rng& rng) {
    if (iv.kind == InterventionKind::noop) return g.noop_sentence;
    auto t = detail::target_of(iv, s, g);
    const std::string& m = detail::pick(g.modifiers, rng);
    const std::string& v = detail::pick(*t.verbs, rng);
    const std::string& adj = detail::pick(*t.adjectives, rng);
    std::ostringstream out;
    out << "You " << m << ' ' << v << " the " << adj << ", " << t.color << ' ' << t.noun << t.suffix << '.';
    return out.str();
}

// Deterministic modifier-free surface form, bijective with the action set.
inline std::string canonical_describe(const Intervention& iv, const GridState& s) {
    switch (iv.kind) {
        case InterventionKind::noop:
            return "you did nothing";
        case InterventionKind::toggle_light:
            if (iv.entity < 0 || iv.entity >= static_cast<int>(s.lights.size()))
                throw env::UnknownEntity("canonical_describe: no light " + std::to_string(iv.entity));
            return "you toggled the " + color_name(s.lights[iv.entity].color) + " traffic light";
        case InterventionKind::move_vehicle:
            if (iv.entity < 0 || iv.entity >= static_cast<int>(s.vehicles.size()))
                throw env::UnknownEntity("canonical_describe: no vehicle " + std::to_string(iv.entity));
            return "you moved the " + color_name(s.vehicles[iv.entity].color) + " car forward";
        case InterventionKind::move_obstacle:
            if (iv.entity < 0 || iv.entity >= static_cast<int>(s.obstacles.size()))
                throw env::UnknownEntity("canonical_describe: no obstacle " + std::to_string(iv.entity));
            return "you moved the " + color_name(s.obstacles[iv.entity].color) + " obstacle";
    }
    return "you did nothing";
}

// ------------------------------------------------------------ tokenization

inline std::vector<std::string> words_of(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct TokenSeq {
    std::vector<int> ids;    // length exactly l; 0 is the pad id
    int attention_len = 0;   // count of non-pad tokens
};

// Word-id vocabulary with a hash-bucket tail for unknown words. Id 0 is pad,
// ids 1..V are vocabulary words, V+1..V+buckets are hash buckets.
struct Vocabulary {
    std::vector<std::string> words;
    int hash_buckets = 1024;

    int id_of(const std::string& w) const {
        for (size_t i = 0; i < words.size(); ++i)
            if (words[i] == w) return static_cast<int>(i) + 1;
        return static_cast<int>(words.size()) + 1 + static_cast<int>(fnv1a(w) % static_cast<uint64_t>(hash_buckets));
    }
    int id_count() const { return static_cast<int>(words.size()) + 1 + hash_buckets; }

    std::string serialize() const {
        std::string out;
        for (const auto& w : words) {
            out += w;
            out += '\n';
        }
        return out;
    }
    static Vocabulary deserialize(const std::string& blob, int buckets = 1024) {
        Vocabulary v;
        v.hash_buckets = buckets;
        std::istringstream in(blob);
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) v.words.push_back(line);
        return v;
    }
    uint64_t hash() const { return fnv1a(serialize()); }
};

// Closure of every word the grammar and the state descriptor can emit.
inline Vocabulary build_vocabulary(const Pcfg& g) {
    std::vector<std::string> w;
    auto add_all = [&](const std::vector<std::string>& xs) {
        for (const auto& x : xs)
            for (const auto& word : words_of(x)) w.push_back(word);
    };
    add_all(g.modifiers);
    add_all(g.vehicle_adjectives);
    add_all(g.obstacle_adjectives);
    add_all(g.light_adjectives);
    add_all(g.toggle_verbs);
    add_all(g.move_vehicle_verbs);
    add_all(g.move_obstacle_verbs);
    for (const auto& e : palette()) w.push_back(e.name);
    for (const char* s : {"you", "the", "did", "nothing", "traffic", "light", "car", "obstacle",
                          "forward", "is", "at", "red", "green", "a", "to"})
        w.push_back(s);
    for (const auto& word : words_of(g.noop_sentence)) w.push_back(word);
    std::sort(w.begin(), w.end());
    w.erase(std::unique(w.begin(), w.end()), w.end());
    Vocabulary v;
    v.words = std::move(w);
    return v;
}

inline TokenSeq tokenize_pad(const std::string& text, int l, const Vocabulary& vocab) {
    if (l < 1) throw std::invalid_argument("tokenize_pad: l must be >= 1");
    TokenSeq t;
    t.ids.assign(l, 0);
    auto ws = words_of(text);
    int n = std::min<int>(l, static_cast<int>(ws.size()));
    for (int i = 0; i < n; ++i) t.ids[i] = vocab.id_of(ws[i]);
    t.attention_len = n;
    return t;
}

// ----------------------------------------------------------------- parsing

namespace detail {
inline bool contains_word(const std::vector<std::string>& words, const std::string& w) {
    return std::find(words.begin(), words.end(), w) != words.end();
}
inline bool contains_any(const std::vector<std::string>& words, const std::vector<std::string>& set) {
    for (const auto& s : set)
        if (contains_word(words, s)) return true;
    return false;
}
} // namespace detail

// Match free-form text against the canonical form of every currently valid
// intervention by verb class, color and noun keywords. Unmatched or
// ambiguous input falls back to noop.
inline Intervention parse_action(const std::string& action_text, const GridState& s,
                                 const Pcfg& g = Pcfg{},
                                 env::ActionMode mode = env::ActionMode::full) {
    auto words = words_of(action_text);
    if (words.empty()) return Intervention::noop();

    std::vector<Intervention> matches;
    for (const auto& iv : valid_interventions(s, mode)) {
        if (iv.kind == InterventionKind::noop) continue;
        auto t = detail::target_of(iv, s, g);
        if (!detail::contains_word(words, t.color)) continue;
        bool noun_ok = false;
        if (t.noun == "traffic light")
            noun_ok = detail::contains_word(words, "light") || detail::contains_word(words, "traffic");
        else
            noun_ok = detail::contains_word(words, t.noun);
        if (!noun_ok) continue;
        if (!detail::contains_any(words, *t.verbs)) continue;
        matches.push_back(iv);
    }
    if (matches.size() == 1) return matches[0];
    return Intervention::noop();
}

} // namespace cwm::text
