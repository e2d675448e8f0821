#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "rfae/core.hpp"
#include "rfae/data.hpp"
#include "rfae/decode/synthetic.hpp"
#include "rfae/forest.hpp"
#include "rfae/spectral.hpp"

namespace rfae {

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 15];
    return s;
}

/// Everything needed to encode and decode after fitting. The synthetic
/// training rows route exactly like the real ones, so they also serve as the
/// kernel reference and the real rows need not be stored.
struct ModelBundle {
    static constexpr int format_version = 1;

    Schema schema;                     // feature columns
    std::optional<std::string> label;  // response column dropped from queries, supervised mode only
    std::string mode;
    Forest forest;
    SpectralModel model;
    SyntheticTrainingSet synthetic;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format"] = "rfae-bundle";
        j["version"] = format_version;
        j["mode"] = mode;
        j["label"] = label ? nlohmann::json(*label) : nlohmann::json(nullptr);
        j["schema"] = schema.to_json();
        const std::string f = forest.serialize();
        j["forest_hash"] = hex64(fnv1a(f));
        j["forest"] = forest.to_json();
        j["spectral"] = model.to_json();
        j["synthetic"] = {{"seed", synthetic.seed}, {"rows", synthetic.x.rows()}, {"cells", synthetic.x.cells()}};
        return j;
    }

    static ModelBundle from_json(const nlohmann::json& j) {
        if (j.value("format", "") != "rfae-bundle") throw Error("cli", "not a model bundle");
        const int v = j.at("version").get<int>();
        if (v != format_version)
            throw Error("cli", "bundle format version " + std::to_string(v) + " is not supported (expected " +
                                   std::to_string(format_version) + ")");
        ModelBundle b;
        b.mode = j.at("mode").get<std::string>();
        if (!j.at("label").is_null()) b.label = j.at("label").get<std::string>();
        b.schema = Schema::from_json(j.at("schema"));
        b.forest = Forest::from_json(j.at("forest"));
        if (hex64(fnv1a(b.forest.serialize())) != j.at("forest_hash").get<std::string>())
            throw Error("cli", "bundle forest hash mismatch; the file is corrupt or was edited");
        if (!(b.forest.schema() == b.schema)) throw Error("cli", "bundle schema does not match its forest");
        b.model = SpectralModel::from_json(j.at("spectral"));
        const auto& s = j.at("synthetic");
        b.synthetic.seed = s.at("seed").get<std::uint64_t>();
        b.synthetic.x = Table(b.schema, s.at("cells").get<std::vector<double>>());
        if (b.synthetic.x.rows() != s.at("rows").get<std::size_t>() || b.synthetic.x.rows() != b.model.n)
            throw Error("cli", "bundle components disagree on the training size");
        return b;
    }

    std::string serialize() const { return to_json().dump(); }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cli", "cannot write '" + path + "'");
        out << serialize() << '\n';
        if (!out) throw Error("cli", "failed writing '" + path + "'");
    }

    static ModelBundle load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cli", "cannot read '" + path + "'");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw Error("cli", "bundle '" + path + "' is not valid JSON: " + e.what());
        }
        return from_json(j);
    }
};

}  // namespace rfae
