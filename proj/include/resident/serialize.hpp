#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "resident/model.hpp"

namespace resident {

// .rsid model file:
//   bytes 0..3    magic "RSID"
//   bytes 4..7    format version, u32 little-endian (currently 1)
//   bytes 8..15   metadata length J, u64 little-endian
//   bytes 16..    J bytes of JSON: config, label vocabulary, parameter
//                 manifest (name, shape, offset into the blob)
//   then          raw IEEE-754 32-bit little-endian parameter values in
//                 manifest order
// Weights are stored as 32-bit floats; a loaded model computes from exactly
// those values upcast to 64-bit, so save -> load -> save is byte-identical.

constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const std::string& s, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i)
        v = (v << 8) | static_cast<std::uint8_t>(s[at + static_cast<std::size_t>(i)]);
    return v;
}

inline std::uint64_t get_u64(const std::string& s, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i)
        v = (v << 8) | static_cast<std::uint8_t>(s[at + static_cast<std::size_t>(i)]);
    return v;
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
    return nlohmann::json{{"n_blocks", c.n_blocks},
                          {"d_b", c.d_b},
                          {"conv_filters", c.conv_filters},
                          {"windows", {c.window1, c.window2}},
                          {"pool", c.pool},
                          {"merge_mode", merge_mode_name(c.merge)},
                          {"block_dropout", c.block_dropout},
                          {"gru_hidden", c.gru_hidden},
                          {"gru_dropout", c.gru_dropout},
                          {"n_classes", c.n_classes},
                          {"max_len", c.max_len}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.n_blocks = j.at("n_blocks").get<int>();
    c.d_b = j.at("d_b").get<int>();
    c.conv_filters = j.at("conv_filters").get<int>();
    c.window1 = j.at("windows").at(0).get<int>();
    c.window2 = j.at("windows").at(1).get<int>();
    c.pool = j.at("pool").get<int>();
    c.merge = merge_mode_from(j.at("merge_mode").get<std::string>());
    c.block_dropout = j.at("block_dropout").get<double>();
    c.gru_hidden = j.at("gru_hidden").get<int>();
    c.gru_dropout = j.at("gru_dropout").get<double>();
    c.n_classes = j.at("n_classes").get<int>();
    c.max_len = j.at("max_len").get<int>();
    return c;
}

inline std::vector<ParamRef> all_param_refs(Model& m) {
    std::vector<ParamRef> refs = trainable_params(m);
    for (ParamRef r : buffer_params(m)) refs.push_back(r);
    return refs;
}

}  // namespace detail

inline std::string serialize_model(Model& model) {
    std::vector<ParamRef> refs = detail::all_param_refs(model);

    nlohmann::json manifest = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const ParamRef& r : refs) {
        manifest.push_back({{"name", r.name}, {"shape", r.tensor->shape}, {"offset", offset}});
        offset += r.tensor->numel() * 4;
    }
    nlohmann::json meta{{"config", detail::config_to_json(model.config)},
                        {"labels", model.labels.codes()},
                        {"manifest", manifest}};
    const std::string json_text = meta.dump();

    std::string out;
    out.reserve(16 + json_text.size() + offset);
    out += "RSID";
    detail::put_u32(out, kModelFormatVersion);
    detail::put_u64(out, json_text.size());
    out += json_text;
    for (const ParamRef& r : refs)
        for (double v : r.tensor->data) {
            const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            detail::put_u32(out, bits);
        }
    return out;
}

inline void save_model(Model& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    const std::string bytes = serialize_model(model);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing '" + path + "'");
}

inline Model deserialize_model(const std::string& bytes) {
    if (bytes.size() < 16) throw FormatError("truncated header", bytes.size());
    if (bytes.compare(0, 4, "RSID") != 0) throw FormatError("bad magic", 0);
    const std::uint32_t version = detail::get_u32(bytes, 4);
    if (version != kModelFormatVersion)
        throw FormatError("unsupported format version " + std::to_string(version), 4);
    const std::uint64_t json_len = detail::get_u64(bytes, 8);
    if (json_len > bytes.size() - 16) throw FormatError("truncated metadata", bytes.size());

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(bytes.begin() + 16,
                                     bytes.begin() + 16 + static_cast<std::ptrdiff_t>(json_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad metadata: ") + e.what(), 16);
    }

    Model model;
    LabelVocab labels;
    try {
        ModelConfig config = detail::config_from_json(meta.at("config"));
        labels = LabelVocab::from_ordered(meta.at("labels").get<std::vector<std::string>>());
        model = build_model(config, labels, 0);  // shapes only; values overwritten below
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad metadata: ") + e.what(), 16);
    } catch (const ConfigError& e) {
        throw FormatError(std::string("bad config: ") + e.what(), 16);
    }

    const std::size_t blob_start = 16 + json_len;
    std::vector<ParamRef> refs = detail::all_param_refs(model);
    if (!meta.contains("manifest") || meta["manifest"].size() != refs.size())
        throw FormatError("manifest does not match model structure", 16);
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const nlohmann::json& entry = meta["manifest"][i];
        const std::string name = entry.at("name").get<std::string>();
        const Shape shape = entry.at("shape").get<Shape>();
        const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
        if (name != refs[i].name || shape != refs[i].tensor->shape)
            throw FormatError("manifest entry '" + name + "' does not match expected '" +
                                  refs[i].name + "' " + shape_str(refs[i].tensor->shape),
                              blob_start + offset);
        const std::size_t need = refs[i].tensor->numel() * 4;
        if (offset > bytes.size() - blob_start || need > bytes.size() - blob_start - offset)
            throw FormatError("truncated parameter data for '" + name + "'", bytes.size());
        for (std::size_t e = 0; e < refs[i].tensor->numel(); ++e) {
            const std::uint32_t bits = detail::get_u32(bytes, blob_start + offset + e * 4);
            refs[i].tensor->data[e] = static_cast<double>(std::bit_cast<float>(bits));
        }
    }
    return model;
}

inline Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_model(bytes);
}

}  // namespace resident
