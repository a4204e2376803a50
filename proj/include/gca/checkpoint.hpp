#pragma once

#include <array>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "gca/module.hpp"

namespace gca {

// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
inline u32 crc32(const unsigned char* data, size_t len, u32 crc = 0) {
    static const auto table = [] {
        std::array<u32, 256> t{};
        for (u32 i = 0; i < 256; ++i) {
            u32 c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    crc ^= 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

// Checkpoint layout (little-endian):
//   magic "GCAC" | version u32=1 | entry count u32
//   per entry: name length u32 | UTF-8 name | rank u32 | extents u32*rank |
//              dtype u8 (0 = f32) | raw f32 values
//   trailing CRC32 over all preceding bytes
inline constexpr char kCheckpointMagic[4] = {'G', 'C', 'A', 'C'};
inline constexpr u32 kCheckpointVersion = 1;

struct CheckpointEntry {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;
};

namespace detail {

template <typename V>
void put_raw(std::vector<unsigned char>& buf, const V& v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    buf.insert(buf.end(), p, p + sizeof(V));
}

template <typename V>
V get_raw(const std::vector<unsigned char>& buf, size_t& off) {
    check(off + sizeof(V) <= buf.size(), "checkpoint: truncated file");
    V v;
    std::memcpy(&v, buf.data() + off, sizeof(V));
    off += sizeof(V);
    return v;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path,
                             const std::vector<CheckpointEntry>& entries) {
    std::vector<unsigned char> buf;
    buf.insert(buf.end(), kCheckpointMagic, kCheckpointMagic + 4);
    detail::put_raw(buf, kCheckpointVersion);
    detail::put_raw(buf, u32(entries.size()));
    for (const auto& e : entries) {
        detail::put_raw(buf, u32(e.name.size()));
        buf.insert(buf.end(), e.name.begin(), e.name.end());
        detail::put_raw(buf, u32(e.shape.size()));
        for (int ext : e.shape) detail::put_raw(buf, u32(ext));
        buf.push_back(0);  // dtype f32
        const auto* p = reinterpret_cast<const unsigned char*>(e.values.data());
        buf.insert(buf.end(), p, p + e.values.size() * sizeof(float));
    }
    const u32 crc = crc32(buf.data(), buf.size());
    detail::put_raw(buf, crc);
    std::ofstream f(path, std::ios::binary);
    check(f.good(), "cannot write checkpoint: " + path);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
}

inline std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check(f.good(), "cannot open checkpoint: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    check(buf.size() >= 16, "checkpoint: truncated file");
    const u32 stored_crc = [&] {
        size_t off = buf.size() - 4;
        return detail::get_raw<u32>(buf, off);
    }();
    check(crc32(buf.data(), buf.size() - 4) == stored_crc, "checkpoint: CRC mismatch");

    size_t off = 0;
    check(std::memcmp(buf.data(), kCheckpointMagic, 4) == 0, "checkpoint: bad magic");
    off = 4;
    check(detail::get_raw<u32>(buf, off) == kCheckpointVersion,
          "checkpoint: unsupported version");
    const u32 count = detail::get_raw<u32>(buf, off);
    std::vector<CheckpointEntry> entries;
    entries.reserve(count);
    const size_t payload_end = buf.size() - 4;
    for (u32 i = 0; i < count; ++i) {
        CheckpointEntry e;
        const u32 name_len = detail::get_raw<u32>(buf, off);
        check(off + name_len <= payload_end, "checkpoint: truncated file");
        e.name.assign(reinterpret_cast<const char*>(buf.data() + off), name_len);
        off += name_len;
        const u32 rank = detail::get_raw<u32>(buf, off);
        check(rank >= 1 && rank <= 4, "checkpoint: bad rank");
        i64 numel = 1;
        for (u32 r = 0; r < rank; ++r) {
            const u32 ext = detail::get_raw<u32>(buf, off);
            e.shape.push_back(int(ext));
            numel *= ext;
        }
        const unsigned char dtype = detail::get_raw<unsigned char>(buf, off);
        check(dtype == 0, "checkpoint: unsupported dtype");
        check(off + size_t(numel) * sizeof(float) <= payload_end,
              "checkpoint: truncated file");
        e.values.resize(static_cast<size_t>(numel));
        std::memcpy(e.values.data(), buf.data() + off, e.values.size() * sizeof(float));
        off += e.values.size() * sizeof(float);
        entries.push_back(std::move(e));
    }
    check(off == payload_end, "checkpoint: trailing bytes");
    return entries;
}

// --- model <-> checkpoint ----------------------------------------------------------

template <typename T>
std::vector<CheckpointEntry> snapshot_params(const ParamRefs<T>& params, i64 iteration) {
    std::vector<CheckpointEntry> out;
    for (const Param<T>* p : params) {
        CheckpointEntry e;
        e.name = p->path;
        e.shape = p->value.shape();
        e.values.reserve(p->value.data().size());
        for (T v : p->value.data()) e.values.push_back(float(v));
        out.push_back(std::move(e));
    }
    out.push_back({"trainer.iteration", {1}, {float(iteration)}});
    return out;
}

// Strict: the file must contain exactly the model's parameters (plus the
// iteration marker); unknown or missing names are errors.
template <typename T>
i64 restore_params(const ParamRefs<T>& params, const std::vector<CheckpointEntry>& entries) {
    i64 iteration = 0;
    std::vector<char> used(entries.size(), 0);
    auto find = [&](const std::string& name) -> const CheckpointEntry* {
        for (size_t i = 0; i < entries.size(); ++i)
            if (entries[i].name == name) {
                used[i] = 1;
                return &entries[i];
            }
        return nullptr;
    };
    for (Param<T>* p : params) {
        const auto* e = find(p->path);
        check(e != nullptr, "checkpoint: missing parameter " + p->path);
        check(e->shape == p->value.shape(), "checkpoint: shape mismatch for " + p->path);
        for (size_t i = 0; i < e->values.size(); ++i) p->value.data()[i] = T(e->values[i]);
    }
    if (const auto* it = find("trainer.iteration")) iteration = i64(it->values[0]);
    for (size_t i = 0; i < entries.size(); ++i)
        check(used[i] != 0, "checkpoint: unknown parameter " + entries[i].name);
    return iteration;
}

}  // namespace gca
