#include "snet/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

namespace snet {

namespace {
constexpr char kMagic[4] = {'S', 'N', 'C', 'K'};
constexpr uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write checkpoint: " + path);
    f.write(kMagic, 4);
    f.write(reinterpret_cast<const char*>(&kVersion), 4);
    nlohmann::json header = {{"config_hash", ckpt.config_hash},
                             {"seed", ckpt.seed},
                             {"epoch", ckpt.epoch},
                             {"step", ckpt.step},
                             {"config", ckpt.config_json}};
    const std::string hs = header.dump();
    const uint32_t hlen = static_cast<uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(hs.data(), hlen);
    const uint32_t count = static_cast<uint32_t>(ckpt.tensors.size());
    f.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& b : ckpt.tensors) {
        const uint16_t nlen = static_cast<uint16_t>(b.name.size());
        f.write(reinterpret_cast<const char*>(&nlen), 2);
        f.write(b.name.data(), nlen);
        const uint8_t nd = static_cast<uint8_t>(b.shape.size());
        f.write(reinterpret_cast<const char*>(&nd), 1);
        for (int64_t d : b.shape) {
            const uint32_t dd = static_cast<uint32_t>(d);
            f.write(reinterpret_cast<const char*>(&dd), 4);
        }
        f.write(reinterpret_cast<const char*>(b.data.data()),
                static_cast<std::streamsize>(4 * b.data.size()));
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    uint32_t version = 0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&version), 4);
    if (std::string(magic, 4) != std::string(kMagic, 4) || version != kVersion)
        throw DataError("bad checkpoint file: " + path);
    uint32_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 4);
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    const auto header = nlohmann::json::parse(hs);
    Checkpoint c;
    c.config_hash = header.value("config_hash", 0ULL);
    c.seed = header.value("seed", 0ULL);
    c.epoch = header.value("epoch", 0LL);
    c.step = header.value("step", 0LL);
    c.config_json = header.value("config", std::string());
    uint32_t count = 0;
    f.read(reinterpret_cast<char*>(&count), 4);
    for (uint32_t i = 0; i < count; ++i) {
        TensorBlob b;
        uint16_t nlen = 0;
        f.read(reinterpret_cast<char*>(&nlen), 2);
        b.name.resize(nlen);
        f.read(b.name.data(), nlen);
        uint8_t nd = 0;
        f.read(reinterpret_cast<char*>(&nd), 1);
        int64_t numel = 1;
        for (int d = 0; d < nd; ++d) {
            uint32_t dd = 0;
            f.read(reinterpret_cast<char*>(&dd), 4);
            b.shape.push_back(dd);
            numel *= dd;
        }
        b.data.resize(numel);
        f.read(reinterpret_cast<char*>(b.data.data()), static_cast<std::streamsize>(4 * numel));
        if (!f) throw DataError("truncated checkpoint: " + path);
        c.tensors.push_back(std::move(b));
    }
    return c;
}

Checkpoint average_checkpoints(const std::vector<std::string>& paths) {
    if (paths.empty()) throw DataError("average_checkpoints: no inputs");
    Checkpoint avg = load_checkpoint(paths[0]);
    std::vector<std::vector<double>> acc(avg.tensors.size());
    for (size_t i = 0; i < avg.tensors.size(); ++i)
        acc[i].assign(avg.tensors[i].data.begin(), avg.tensors[i].data.end());
    for (size_t k = 1; k < paths.size(); ++k) {
        const Checkpoint c = load_checkpoint(paths[k]);
        if (c.tensors.size() != avg.tensors.size())
            throw DataError("average_checkpoints: tensor count mismatch in " + paths[k]);
        for (size_t i = 0; i < c.tensors.size(); ++i) {
            if (c.tensors[i].name != avg.tensors[i].name ||
                c.tensors[i].shape != avg.tensors[i].shape)
                throw DataError(sformat("average_checkpoints: mismatched entry %s in %s",
                                        c.tensors[i].name.c_str(), paths[k].c_str()));
            for (size_t j = 0; j < c.tensors[i].data.size(); ++j)
                acc[i][j] += c.tensors[i].data[j];
        }
    }
    const double inv = 1.0 / static_cast<double>(paths.size());
    for (size_t i = 0; i < avg.tensors.size(); ++i)
        for (size_t j = 0; j < acc[i].size(); ++j)
            avg.tensors[i].data[j] = static_cast<float>(acc[i][j] * inv);
    return avg;
}

}  // namespace snet
