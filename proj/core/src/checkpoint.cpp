#include "cgs/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cgs {

namespace {
constexpr char kMagic[8] = {'C', 'G', 'S', 'C', 'K', 'P', 'T', '1'};
}

void Checkpoint::save(const std::string& path) const {
    nlohmann::json header = meta;
    header["checkpoint_version"] = kVersion;
    nlohmann::json dir = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["offset"] = offset;
        offset += static_cast<uint64_t>(t.numel()) * sizeof(double);
        dir.push_back(std::move(e));
    }
    header["tensors"] = std::move(dir);
    const std::string hs = header.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("checkpoint: cannot open " + tmp);
        out.write(kMagic, sizeof(kMagic));
        const uint64_t hlen = hs.size();
        out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
        out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        for (const auto& [name, t] : tensors) {
            (void)name;
            out.write(reinterpret_cast<const char*>(t.data()),
                      static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.numel())));
        }
        if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp);
    }
    std::remove(path.c_str());
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("checkpoint: rename failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);

    Checkpoint ck;
    ck.meta = nlohmann::json::parse(hs);
    if (ck.meta.value("checkpoint_version", 0) != kVersion)
        throw std::runtime_error("checkpoint: unsupported version in " + path);
    for (const auto& e : ck.meta.at("tensors")) {
        const std::string name = e.at("name").get<std::string>();
        const std::vector<int64_t> shape = e.at("shape").get<std::vector<int64_t>>();
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.numel())));
        if (!in) throw std::runtime_error("checkpoint: truncated tensor " + name);
        ck.tensors.emplace(name, std::move(t));
    }
    ck.meta.erase("tensors");
    return ck;
}

const Tensor& Checkpoint::get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint: missing tensor " + name);
    return it->second;
}

}  // namespace cgs
