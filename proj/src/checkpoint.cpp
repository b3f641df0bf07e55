#include "subsel/checkpoint.hpp"

#include <bit>
#include <fstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs assume a little-endian host");

namespace subsel {

using nlohmann::json;

void save_checkpoint(const std::filesystem::path& manifest_path,
                     const std::filesystem::path& blob_path, const ParamSet& params) {
    json entries = json::array();
    std::vector<float> blob;
    for (const auto& p : params.all()) {
        json e;
        e["name"] = p->name;
        e["shape"] = p->value.shape;
        e["dtype"] = "f32";
        e["offset"] = blob.size() * sizeof(float);
        entries.push_back(e);
        for (double v : p->value.data) blob.push_back(static_cast<float>(v));
    }
    json manifest;
    manifest["format"] = "f32-blob-v1";
    manifest["params"] = entries;
    manifest["total_bytes"] = blob.size() * sizeof(float);

    std::ofstream mf(manifest_path);
    if (!mf) throw std::runtime_error("cannot write " + manifest_path.string());
    mf << manifest.dump(2) << "\n";

    std::ofstream bf(blob_path, std::ios::binary);
    if (!bf) throw std::runtime_error("cannot write " + blob_path.string());
    bf.write(reinterpret_cast<const char*>(blob.data()),
             static_cast<std::streamsize>(blob.size() * sizeof(float)));
}

void load_checkpoint(const std::filesystem::path& manifest_path,
                     const std::filesystem::path& blob_path, ParamSet& params) {
    std::ifstream mf(manifest_path);
    if (!mf) throw std::runtime_error("cannot read " + manifest_path.string());
    json manifest = json::parse(mf);

    std::ifstream bf(blob_path, std::ios::binary);
    if (!bf) throw std::runtime_error("cannot read " + blob_path.string());
    std::vector<char> raw((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

    std::size_t seen = 0;
    for (const auto& e : manifest.at("params")) {
        const std::string name = e.at("name").get<std::string>();
        if (!params.has(name))
            throw std::runtime_error("checkpoint names unknown parameter: " + name);
        Parameter& p = params.at(name);
        const auto shape = e.at("shape").get<std::vector<std::size_t>>();
        if (shape != p.value.shape)
            throw std::runtime_error("checkpoint shape mismatch for " + name);
        const std::size_t offset = e.at("offset").get<std::size_t>();
        const std::size_t bytes = p.value.numel() * sizeof(float);
        if (offset + bytes > raw.size())
            throw std::runtime_error("checkpoint blob truncated at " + name);
        const float* src = reinterpret_cast<const float*>(raw.data() + offset);
        for (std::size_t i = 0; i < p.value.numel(); ++i)
            p.value.data[i] = static_cast<double>(src[i]);
        ++seen;
    }
    if (seen != params.size())
        throw std::runtime_error("checkpoint covers " + std::to_string(seen) + " of " +
                                 std::to_string(params.size()) + " parameters");
}

void round_to_f32(ParamSet& params) {
    for (const auto& p : params.all())
        for (double& v : p->value.data) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace subsel
