// SPDX-License-Identifier: Apache-2.0
//
// lgmimo: deep MIMO detection and learngene transfer workbench
// ------------------------------------------------------------------------

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lgmimo/container.hpp"
#include "lgmimo/nn/accounting.hpp"
#include "lgmimo/nn/model.hpp"

namespace lgmimo::nn {

inline constexpr std::string_view kCheckpointFormat = "lgmimo-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline io::json info_to_json(const ModelInfo& info)
{
    return {{"family", info.family},       {"n_conv", info.n_conv},   {"nt", info.nt},
            {"nr", info.nr},               {"upsampled", info.upsampled}, {"h_scale", info.h_scale},
            {"zf_clip", info.zf_clip},     {"seed", info.seed},       {"config_hash", info.config_hash}};
}

inline ModelInfo info_from_json(const io::json& j)
{
    ModelInfo info;
    info.family = j.at("family").get<std::string>();
    info.n_conv = j.at("n_conv").get<int>();
    info.nt = j.at("nt").get<int>();
    info.nr = j.at("nr").get<int>();
    info.upsampled = j.at("upsampled").get<bool>();
    info.h_scale = j.at("h_scale").get<double>();
    info.zf_clip = j.at("zf_clip").get<double>();
    info.seed = j.at("seed").get<std::uint64_t>();
    info.config_hash = j.at("config_hash").get<std::string>();
    return info;
}

/// Manifest describing the architecture plus the float64 blob with every
/// parameter block and batchnorm running statistic, in layer order.
inline std::pair<io::json, std::string> encode_model(const Model& model)
{
    io::json layers = io::json::array();
    std::string blob;
    std::size_t offset = 0;
    auto add_array = [&](io::json& arrays, const std::string& name, const std::vector<double>& values) {
        arrays.push_back({{"name", name}, {"offset", offset}, {"count", values.size()}});
        io::append_le<double>(blob, values);
        offset += values.size();
    };
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
        const auto& l = model.layers()[i];
        io::json arrays = io::json::array();
        for (const auto& p : l.params)
            add_array(arrays, p.name, p.value);
        if (l.spec.kind == LayerKind::BatchNorm) {
            add_array(arrays, "running_mean", l.running_mean);
            add_array(arrays, "running_var", l.running_var);
        }
        layers.push_back({{"index", i},
                          {"kind", std::string(to_string(l.spec.kind))},
                          {"in", l.spec.in},
                          {"out", l.spec.out},
                          {"trainable", l.spec.trainable},
                          {"significant_id", l.spec.significant_id},
                          {"out_shape", {l.out_shape.h, l.out_shape.w, l.out_shape.c}},
                          {"arrays", arrays}});
    }
    const auto& s = model.input_shape();
    io::json manifest = {{"format", kCheckpointFormat},
                         {"format_version", kCheckpointVersion},
                         {"input_shape", {s.h, s.w, s.c}},
                         {"info", info_to_json(model.info())},
                         {"trainable_params", count_params(model).total},
                         {"layers", layers}};
    return {manifest, blob};
}

/// Rebuilds a model from a manifest and decoded float64 values. Layer records
/// must appear in index order and chain shapes correctly.
inline Model decode_model(const io::json& manifest, const std::vector<double>& values)
{
    const auto& shp = manifest.at("input_shape");
    const Shape input{shp.at(0).get<int>(), shp.at(1).get<int>(), shp.at(2).get<int>()};
    std::vector<LayerSpec> specs;
    const auto& layers = manifest.at("layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.at("index").get<std::size_t>() != i)
            fail(ErrorKind::FormatVersionMismatch, "layer records out of order at position " + std::to_string(i));
        LayerSpec spec;
        spec.kind = layer_kind_from_string(l.at("kind").get<std::string>());
        spec.in = l.at("in").get<int>();
        spec.out = l.at("out").get<int>();
        spec.trainable = l.at("trainable").get<bool>();
        spec.significant_id = l.at("significant_id").get<int>();
        specs.push_back(spec);
    }
    Model model;
    try {
        model = Model(input, specs, info_from_json(manifest.at("info")));
    } catch (const Error& e) {
        fail(ErrorKind::FormatVersionMismatch, std::string("manifest architecture invalid: ") + e.what());
    }
    std::size_t expected_offset = 0;
    auto load_array = [&](const io::json& rec, const std::string& name, std::vector<double>& dst) {
        if (rec.at("name").get<std::string>() != name)
            fail(ErrorKind::FormatVersionMismatch, "expected array '" + name + "'");
        const auto off = rec.at("offset").get<std::size_t>();
        const auto count = rec.at("count").get<std::size_t>();
        if (off != expected_offset || count != dst.size() || off + count > values.size())
            fail(ErrorKind::CorruptBlob, "array '" + name + "' has inconsistent offset/count");
        std::copy(values.begin() + static_cast<std::ptrdiff_t>(off),
                  values.begin() + static_cast<std::ptrdiff_t>(off + count), dst.begin());
        expected_offset += count;
    };
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& layer = model.layers()[i];
        const auto& arrays = layers[i].at("arrays");
        std::size_t a = 0;
        const std::size_t expected = layer.params.size() + (layer.spec.kind == LayerKind::BatchNorm ? 2 : 0);
        if (arrays.size() != expected)
            fail(ErrorKind::FormatVersionMismatch, "layer " + std::to_string(i) + " has wrong array count");
        for (auto& p : layer.params)
            load_array(arrays[a++], p.name, p.value);
        if (layer.spec.kind == LayerKind::BatchNorm) {
            load_array(arrays[a++], "running_mean", layer.running_mean);
            load_array(arrays[a++], "running_var", layer.running_var);
        }
    }
    if (expected_offset != values.size())
        fail(ErrorKind::CorruptBlob, "blob holds " + std::to_string(values.size()) + " values, manifest describes " +
                                         std::to_string(expected_offset));
    return model;
}

/// Saves `model` to `path` (manifest) and `path.bin` (float64 blob). `extra`
/// is stored verbatim under "provenance".
inline void save_checkpoint(const Model& model, const std::filesystem::path& path, const io::json& extra = io::json::object())
{
    auto [manifest, blob] = encode_model(model);
    manifest["provenance"] = extra;
    io::write_container(path, manifest, blob, "float64-le");
}

struct LoadedCheckpoint {
    Model model;
    io::json manifest;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path)
{
    auto c = io::read_container(path, kCheckpointFormat, kCheckpointVersion);
    if (c.manifest["blob"].value("dtype", "") != "float64-le" || c.blob.size() % sizeof(double) != 0)
        fail(ErrorKind::CorruptBlob, "checkpoint blob is not float64");
    const auto values = io::decode_le<double>(c.blob);
    return {decode_model(c.manifest, values), std::move(c.manifest)};
}

} // namespace lgmimo::nn
