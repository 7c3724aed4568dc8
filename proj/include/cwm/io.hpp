// File helpers and the checkpoint format: a JSON manifest (names, shapes,
// dtype, metadata) next to a flat little-endian f64 tensor blob.
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cwm/mat.hpp"

namespace cwm::io {

using nlohmann::json;

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
    auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << content;
}

inline uint64_t fnv1a_bytes(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ------------------------------------------------------------- checkpoints

// Named tensors registered for save/load. Registration order is the blob order.
struct TensorBag {
    std::vector<std::pair<std::string, Mat*>> entries;

    void add(const std::string& name, Mat& m) { entries.push_back({name, &m}); }

    // prefix helper for nested modules
    struct Scope {
        TensorBag& bag;
        std::string prefix;
        void add(const std::string& name, Mat& m) { bag.add(prefix + name, m); }
        Scope scope(const std::string& sub) { return {bag, prefix + sub + "."}; }
    };
    Scope scope(const std::string& sub) { return {*this, sub + "."}; }
};

inline void save_checkpoint(const std::string& stem, const TensorBag& bag, const json& meta) {
    json tensors = json::array();
    std::string blob;
    size_t offset = 0;
    for (const auto& [name, mat] : bag.entries) {
        tensors.push_back(json{{"name", name}, {"shape", {mat->rows, mat->cols}}, {"offset", offset}});
        const char* bytes = reinterpret_cast<const char*>(mat->a.data());
        blob.append(bytes, mat->a.size() * sizeof(double));
        offset += mat->a.size() * sizeof(double);
    }
    json manifest{{"version", 1}, {"dtype", "f64"}, {"tensors", tensors}, {"meta", meta}};
    write_text_file(stem + ".json", manifest.dump(2) + "\n");
    write_text_file(stem + ".bin", blob);
}

inline json read_manifest(const std::string& stem) {
    json manifest = json::parse(read_text_file(stem + ".json"));
    if (manifest.at("version").get<int>() != 1) throw DataError("unsupported checkpoint version");
    if (manifest.at("dtype").get<std::string>() != "f64") throw DataError("unsupported dtype");
    return manifest;
}

// The bag must be registered with matching names; shapes come from the manifest.
inline void load_checkpoint(const std::string& stem, TensorBag& bag) {
    json manifest = read_manifest(stem);
    std::string blob = read_text_file(stem + ".bin");
    for (auto& [name, mat] : bag.entries) {
        const json* found = nullptr;
        for (const auto& t : manifest.at("tensors"))
            if (t.at("name").get<std::string>() == name) {
                found = &t;
                break;
            }
        if (!found) throw DataError("checkpoint missing tensor " + name);
        int rows = (*found)["shape"][0].get<int>();
        int cols = (*found)["shape"][1].get<int>();
        size_t offset = (*found)["offset"].get<size_t>();
        size_t bytes = static_cast<size_t>(rows) * cols * sizeof(double);
        if (offset + bytes > blob.size()) throw DataError("checkpoint blob truncated at " + name);
        *mat = Mat(rows, cols);
        std::memcpy(mat->a.data(), blob.data() + offset, bytes);
    }
}

// --------------------------------------------------------------- JSONL

inline void write_jsonl(const std::string& path, const json& header, const std::vector<json>& lines) {
    std::string out = header.dump() + "\n";
    for (const auto& l : lines) out += l.dump() + "\n";
    write_text_file(path, out);
}

struct JsonlFile {
    json header;
    std::vector<json> lines;
};

inline JsonlFile read_jsonl(const std::string& path) {
    std::istringstream in(read_text_file(path));
    JsonlFile f;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        if (first) {
            f.header = std::move(j);
            first = false;
        } else {
            f.lines.push_back(std::move(j));
        }
    }
    if (first) throw DataError("empty jsonl file " + path);
    return f;
}

} // namespace cwm::io
