#include "dt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace dt {

namespace {

constexpr char kMagic[4] = {'D', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw LengthError(path + ": truncated checkpoint");
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor<float>>>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<std::uint32_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) put_u32(os, static_cast<std::uint32_t>(t.dim(i)));
        for (float v : t.values()) put_u32(os, std::bit_cast<std::uint32_t>(v));
    }
    if (!os) throw IoError("write failed for " + path);
}

std::vector<std::pair<std::string, Tensor<float>>> load_tensors(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError(path + ": bad magic, not a DTCK checkpoint");
    const std::uint32_t version = get_u32(is, path);
    if (version != kVersion)
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = get_u32(is, path);
    if (count > (1u << 20)) throw FormatError(path + ": implausible tensor count");
    std::vector<std::pair<std::string, Tensor<float>>> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = get_u32(is, path);
        if (name_len > 4096) throw FormatError(path + ": implausible name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw LengthError(path + ": truncated tensor name");
        const std::uint32_t rank = get_u32(is, path);
        if (rank > 8) throw FormatError(path + ": implausible rank for " + name);
        Shape shape(rank);
        long numel = 1;
        for (auto& e : shape) {
            e = static_cast<int>(get_u32(is, path));
            if (e < 1 || e > (1 << 28)) throw FormatError(path + ": bad extent in " + name);
            numel *= e;
        }
        std::vector<float> data(static_cast<size_t>(numel));
        for (auto& v : data) v = std::bit_cast<float>(get_u32(is, path));
        out.emplace_back(std::move(name), Tensor<float>::from(std::move(shape), std::move(data)));
    }
    if (is.peek() != std::char_traits<char>::eof())
        throw FormatError(path + ": trailing bytes after last tensor");
    return out;
}

void save_checkpoint(const std::string& path, const ParamStore<float>& params) {
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    tensors.reserve(params.size());
    for (size_t i = 0; i < params.size(); ++i)
        tensors.emplace_back(params.names()[i], params.at(i));
    save_tensors(path, tensors);
}

void load_checkpoint(const std::string& path, ParamStore<float>& params) {
    auto loaded = load_tensors(path);
    if (loaded.size() != params.size())
        throw ConfigError(path + ": checkpoint has " + std::to_string(loaded.size()) +
                          " tensors, model expects " + std::to_string(params.size()));
    for (auto& [name, t] : loaded) {
        if (!params.has(name)) throw ConfigError(path + ": unexpected tensor " + name);
        Tensor<float>& dst = params.get(name);
        if (dst.shape() != t.shape())
            throw ConfigError(path + ": shape mismatch for " + name + ": checkpoint " +
                              shape_str(t.shape()) + " vs model " + shape_str(dst.shape()));
        auto sv = t.values();
        auto dv = dst.values();
        std::copy(sv.begin(), sv.end(), dv.begin());
    }
}

}  // namespace dt
