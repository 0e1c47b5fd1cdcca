#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "earseg/layers.hpp"

namespace earseg {

// Versioned binary checkpoint: magic, config hash, epoch counter, then every
// store entry in name order with its shape header, values, and (when present)
// optimizer momentum buffer. Load followed by save is byte-identical.
struct Checkpoint {
    std::uint64_t config_hash = 0;
    std::uint32_t epoch = 0;
    ParamStore<float> params;

    bool has_eam() const { return params.entries.count("eam.conv1.w") > 0; }
};

namespace ckpt_detail {

inline constexpr char kMagic[8] = {'E', 'A', 'R', 'S', 'G', 'K', '0', '1'};

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw StateError("checkpoint parse error: truncated file");
    return v;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    namespace d = ckpt_detail;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InputError("cannot write checkpoint: " + path.string());
    os.write(d::kMagic, 8);
    d::put(os, ck.config_hash);
    d::put(os, ck.epoch);
    d::put(os, std::uint32_t(ck.params.entries.size()));
    for (const auto& [name, e] : ck.params.entries) {
        d::put(os, std::uint32_t(name.size()));
        os.write(name.data(), std::streamsize(name.size()));
        d::put(os, std::uint8_t(e.trainable ? 1 : 0));
        d::put(os, std::uint32_t(e.shape.size()));
        for (int dim : e.shape) d::put(os, std::uint32_t(dim));
        d::put(os, std::uint8_t(e.momentum.empty() ? 0 : 1));
        os.write(reinterpret_cast<const char*>(e.value.data()), std::streamsize(e.value.size() * sizeof(float)));
        if (!e.momentum.empty())
            os.write(reinterpret_cast<const char*>(e.momentum.data()), std::streamsize(e.momentum.size() * sizeof(float)));
    }
    if (!os) throw InputError("checkpoint write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    namespace d = ckpt_detail;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("checkpoint not found: " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, d::kMagic, 8) != 0) throw StateError("checkpoint parse error: bad magic in " + path.string());
    Checkpoint ck;
    ck.config_hash = d::take<std::uint64_t>(is);
    ck.epoch = d::take<std::uint32_t>(is);
    auto n = d::take<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < n; ++i) {
        auto name_len = d::take<std::uint32_t>(is);
        if (name_len > 4096) throw StateError("checkpoint parse error: oversized name");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        auto trainable = d::take<std::uint8_t>(is);
        auto ndims = d::take<std::uint32_t>(is);
        if (ndims > 8) throw StateError("checkpoint parse error: oversized shape");
        std::vector<int> shape;
        std::size_t count = 1;
        for (std::uint32_t k = 0; k < ndims; ++k) {
            shape.push_back(int(d::take<std::uint32_t>(is)));
            count *= std::size_t(shape.back());
        }
        auto has_momentum = d::take<std::uint8_t>(is);
        auto& e = ck.params.add(name, shape, trainable != 0);
        is.read(reinterpret_cast<char*>(e.value.data()), std::streamsize(count * sizeof(float)));
        if (has_momentum) {
            e.momentum.assign(count, 0.0f);
            is.read(reinterpret_cast<char*>(e.momentum.data()), std::streamsize(count * sizeof(float)));
        }
        if (!is) throw StateError("checkpoint parse error: truncated tensor data in " + path.string());
    }
    return ck;
}

}  // namespace earseg
