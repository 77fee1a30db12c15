#include "ssos/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace ssos {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'O', 'S', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& sections) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("checkpoint: cannot open " + tmp);
        os.write(kMagic, sizeof(kMagic));
        write_u32(os, kVersion);
        for (const auto& s : sections) {
            write_u32(os, static_cast<uint32_t>(s.name.size()));
            os.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
            write_u32(os, static_cast<uint32_t>(s.dims.size()));
            for (uint32_t d : s.dims) write_u32(os, d);
            size_t count = 1;
            for (uint32_t d : s.dims) count *= d;
            if (count != s.data.size())
                throw std::invalid_argument("checkpoint: dims do not match data in " + s.name);
            os.write(reinterpret_cast<const char*>(s.data.data()),
                     static_cast<std::streamsize>(s.data.size() * sizeof(double)));
        }
        if (!os) throw std::runtime_error("checkpoint: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    uint32_t version = read_u32(is);
    if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version");

    Checkpoint sections;
    while (true) {
        uint32_t name_len = 0;
        is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        if (is.eof()) break;
        if (!is) throw std::runtime_error("checkpoint: truncated section header");
        CheckpointSection s;
        s.name.resize(name_len);
        is.read(s.name.data(), name_len);
        uint32_t ndims = read_u32(is);
        s.dims.resize(ndims);
        size_t count = 1;
        for (uint32_t i = 0; i < ndims; ++i) {
            s.dims[i] = read_u32(is);
            count *= s.dims[i];
        }
        s.data.resize(count);
        is.read(reinterpret_cast<char*>(s.data.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!is) throw std::runtime_error("checkpoint: truncated payload in " + s.name);
        sections.push_back(std::move(s));
    }
    return sections;
}

const CheckpointSection* find_section(const Checkpoint& ckpt, const std::string& name) {
    for (const auto& s : ckpt)
        if (s.name == name) return &s;
    return nullptr;
}

const CheckpointSection& require_section(const Checkpoint& ckpt, const std::string& name) {
    const CheckpointSection* s = find_section(ckpt, name);
    if (!s) throw std::runtime_error("checkpoint: missing section " + name);
    return *s;
}

void append_net_sections(Checkpoint& ckpt, const std::string& prefix, const DenseNet& net) {
    for (size_t i = 0; i < net.layers.size(); ++i) {
        const DenseLayer& l = net.layers[i];
        std::string base = prefix + ".layer" + std::to_string(i);
        ckpt.push_back({base + ".weight",
                        {static_cast<uint32_t>(l.out_dim), static_cast<uint32_t>(l.in_dim)},
                        l.weight});
        ckpt.push_back({base + ".bias", {static_cast<uint32_t>(l.out_dim)}, l.bias});
    }
}

DenseNet net_from_sections(const Checkpoint& ckpt, const std::string& prefix,
                           const std::vector<Activation>& acts) {
    DenseNet net;
    for (size_t i = 0; i < acts.size(); ++i) {
        std::string base = prefix + ".layer" + std::to_string(i);
        const CheckpointSection& w = require_section(ckpt, base + ".weight");
        const CheckpointSection& b = require_section(ckpt, base + ".bias");
        if (w.dims.size() != 2 || b.dims.size() != 1)
            throw std::runtime_error("checkpoint: bad layer dims for " + base);
        DenseLayer layer;
        layer.out_dim = static_cast<int>(w.dims[0]);
        layer.in_dim = static_cast<int>(w.dims[1]);
        layer.act = acts[i];
        layer.weight = w.data;
        layer.bias = b.data;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

}  // namespace ssos
