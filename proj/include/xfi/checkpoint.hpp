#pragma once

// Versioned binary checkpoint:
//
//   magic "XFICKPT\0" | u32 version | u32 digest length | digest bytes
//   u64 tensor count | per tensor: u32 name length, name, u32 rank,
//   u64 dims..., u64 offset (in doubles) | u64 value count | f64 values...
//
// Integers and doubles are stored little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "xfi/errors.hpp"
#include "xfi/parameter_store.hpp"

namespace xfi {

inline constexpr std::array<char, 8> kCheckpointMagic{'X', 'F', 'I', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace detail {

class BinaryWriter {
public:
    explicit BinaryWriter(std::ofstream& out) : out_(out) {}
    template <class T>
    void put(T v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void put_string(const std::string& s) {
        put(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

private:
    std::ofstream& out_;
};

class BinaryReader {
public:
    BinaryReader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}
    template <class T>
    T get() {
        T v{};
        in_.read(reinterpret_cast<char*>(&v), sizeof v);
        if (!in_) throw IoError("checkpoint '" + path_ + "' is truncated");
        return v;
    }
    std::string get_string(std::size_t limit = 1 << 20) {
        const auto n = get<std::uint32_t>();
        if (n > limit) throw IoError("checkpoint '" + path_ + "' has an implausible string length");
        std::string s(n, '\0');
        in_.read(s.data(), n);
        if (!in_) throw IoError("checkpoint '" + path_ + "' is truncated");
        return s;
    }

private:
    std::ifstream& in_;
    std::string path_;
};

} // namespace detail

inline void save_checkpoint(const std::string& path, const ParameterStore& params, const std::string& config_digest) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + path + "'");
    detail::BinaryWriter w(out);
    out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    w.put(kCheckpointVersion);
    w.put_string(config_digest);
    w.put(static_cast<std::uint64_t>(params.size()));
    std::uint64_t offset = 0;
    for (const auto& [name, t] : params) {
        w.put_string(name);
        w.put(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) w.put(static_cast<std::uint64_t>(d));
        w.put(offset);
        offset += t.size();
    }
    w.put(offset);
    for (const auto& [name, t] : params)
        for (double v : t.values()) w.put(v);
    if (!out) throw IoError("failed while writing checkpoint '" + path + "'");
}

struct CheckpointHeader {
    std::uint32_t version = 0;
    std::string config_digest;
};

/// Restores every parameter of `params` by name. The stored digest must match
/// `expected_digest`, and names and shapes must match exactly.
inline CheckpointHeader load_checkpoint(const std::string& path, ParameterStore& params,
                                        const std::string& expected_digest) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint '" + path + "' not found or unreadable");
    detail::BinaryReader r(in, path);
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kCheckpointMagic) throw IoError("'" + path + "' is not an xfi checkpoint");
    CheckpointHeader header;
    header.version = r.get<std::uint32_t>();
    if (header.version != kCheckpointVersion)
        throw IoError("checkpoint '" + path + "' has unsupported version " + std::to_string(header.version));
    header.config_digest = r.get_string();
    if (header.config_digest != expected_digest)
        throw ConfigError("checkpoint '" + path + "' was written for config digest " + header.config_digest +
                          ", current config digest is " + expected_digest);

    struct Entry {
        std::string name;
        Shape shape;
        std::uint64_t offset;
    };
    const auto count = r.get<std::uint64_t>();
    if (count != params.size())
        throw IoError("checkpoint '" + path + "' holds " + std::to_string(count) + " tensors, model has " +
                      std::to_string(params.size()));
    std::vector<Entry> entries;
    for (std::uint64_t k = 0; k < count; ++k) {
        Entry e;
        e.name = r.get_string();
        const auto rank = r.get<std::uint32_t>();
        if (rank > 8) throw IoError("checkpoint '" + path + "' has an implausible tensor rank");
        for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
        e.offset = r.get<std::uint64_t>();
        if (!params.contains(e.name)) throw IoError("checkpoint tensor '" + e.name + "' is unknown to the model");
        if (params.at(e.name).shape() != e.shape)
            throw IoError("checkpoint tensor '" + e.name + "' has shape " + to_string(e.shape) + ", model expects " +
                          to_string(params.at(e.name).shape()));
        entries.push_back(std::move(e));
    }
    const auto total = r.get<std::uint64_t>();
    if (total != params.scalar_count()) throw IoError("checkpoint '" + path + "' scalar count mismatch");
    std::vector<double> values(total);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(total * sizeof(double)));
    if (!in) throw IoError("checkpoint '" + path + "' is truncated");
    for (const auto& e : entries) {
        auto& data = params.at(e.name).data();
        if (e.offset + data.size() > total) throw IoError("checkpoint tensor '" + e.name + "' overruns the payload");
        std::memcpy(data.data(), values.data() + e.offset, data.size() * sizeof(double));
    }
    return header;
}

} // namespace xfi
