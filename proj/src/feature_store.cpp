#include "ssos/feature_store.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "feature store format assumes a little-endian host");

namespace ssos {

namespace {

constexpr uint32_t kVersion = 1;

struct Header {
    char magic[4];
    uint32_t version;
    uint32_t count;
    uint32_t dim;
};

void write_header(std::ostream& os, const char* magic, uint32_t count, uint32_t dim) {
    os.write(magic, 4);
    for (uint32_t v : {kVersion, count, dim})
        os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

Header read_header(std::istream& is, const char* expected_magic, const std::string& path) {
    Header h{};
    is.read(h.magic, 4);
    is.read(reinterpret_cast<char*>(&h.version), sizeof(h.version));
    is.read(reinterpret_cast<char*>(&h.count), sizeof(h.count));
    is.read(reinterpret_cast<char*>(&h.dim), sizeof(h.dim));
    if (!is) throw std::runtime_error("feature store: truncated header in " + path);
    if (std::memcmp(h.magic, expected_magic, 4) != 0)
        throw std::runtime_error("feature store: bad magic in " + path);
    if (h.version != kVersion)
        throw std::runtime_error("feature store: unsupported version in " + path);
    return h;
}

void write_index(const std::string& path, const std::vector<FeatureIndexEntry>& index) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : index)
        j.push_back({{"image_id", e.image_id}, {"annotation_id", e.annotation_id}});
    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        if (!os) throw std::runtime_error("feature store: cannot open " + tmp);
        os << j.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, path);
}

std::vector<FeatureIndexEntry> read_index(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("feature store: missing index " + path);
    nlohmann::json j;
    is >> j;
    std::vector<FeatureIndexEntry> index;
    for (const auto& e : j)
        index.push_back({e.at("image_id").get<int>(), e.at("annotation_id").get<int>()});
    return index;
}

}  // namespace

void write_vector_store(const std::string& path, const std::vector<std::vector<double>>& vectors,
                        const std::vector<FeatureIndexEntry>& index) {
    if (!index.empty() && index.size() != vectors.size())
        throw std::invalid_argument("feature store: index/record count mismatch");
    uint32_t dim = vectors.empty() ? 0 : static_cast<uint32_t>(vectors[0].size());
    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("feature store: cannot open " + tmp);
        write_header(os, "OFV1", static_cast<uint32_t>(vectors.size()), dim);
        std::vector<float> row(dim);
        for (const auto& v : vectors) {
            if (v.size() != dim) throw std::invalid_argument("feature store: ragged vectors");
            for (uint32_t i = 0; i < dim; ++i) row[i] = static_cast<float>(v[i]);
            os.write(reinterpret_cast<const char*>(row.data()),
                     static_cast<std::streamsize>(dim * sizeof(float)));
        }
        if (!os) throw std::runtime_error("feature store: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
    write_index(path + ".idx.json", index);
}

std::vector<std::vector<double>> read_vector_store(const std::string& path,
                                                   std::vector<FeatureIndexEntry>* index) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("feature store: cannot open " + path);
    Header h = read_header(is, "OFV1", path);
    std::vector<std::vector<double>> vectors(h.count);
    std::vector<float> row(h.dim);
    for (uint32_t r = 0; r < h.count; ++r) {
        is.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(h.dim * sizeof(float)));
        if (!is) throw std::runtime_error("feature store: truncated payload in " + path);
        vectors[r].assign(row.begin(), row.end());
    }
    if (index) *index = read_index(path + ".idx.json");
    return vectors;
}

void write_map_store(const std::string& path, const std::vector<FeatureMap>& maps,
                     const std::vector<FeatureIndexEntry>& index) {
    if (!index.empty() && index.size() != maps.size())
        throw std::invalid_argument("feature store: index/record count mismatch");
    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("feature store: cannot open " + tmp);
        write_header(os, "OFM1", static_cast<uint32_t>(maps.size()), 0);
        for (const auto& m : maps) {
            uint32_t dims[3] = {static_cast<uint32_t>(m.height), static_cast<uint32_t>(m.width),
                                static_cast<uint32_t>(m.channels)};
            os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
            std::vector<float> payload(m.data.size());
            for (size_t i = 0; i < m.data.size(); ++i) payload[i] = static_cast<float>(m.data[i]);
            os.write(reinterpret_cast<const char*>(payload.data()),
                     static_cast<std::streamsize>(payload.size() * sizeof(float)));
        }
        if (!os) throw std::runtime_error("feature store: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
    write_index(path + ".idx.json", index);
}

std::vector<FeatureMap> read_map_store(const std::string& path,
                                       std::vector<FeatureIndexEntry>* index) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("feature store: cannot open " + path);
    Header h = read_header(is, "OFM1", path);
    std::vector<FeatureMap> maps(h.count);
    for (uint32_t r = 0; r < h.count; ++r) {
        uint32_t dims[3];
        is.read(reinterpret_cast<char*>(dims), sizeof(dims));
        if (!is) throw std::runtime_error("feature store: truncated record header in " + path);
        FeatureMap m;
        m.height = static_cast<int>(dims[0]);
        m.width = static_cast<int>(dims[1]);
        m.channels = static_cast<int>(dims[2]);
        size_t n = static_cast<size_t>(dims[0]) * dims[1] * dims[2];
        std::vector<float> payload(n);
        is.read(reinterpret_cast<char*>(payload.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        if (!is) throw std::runtime_error("feature store: truncated payload in " + path);
        m.data.assign(payload.begin(), payload.end());
        maps[r] = std::move(m);
    }
    if (index) *index = read_index(path + ".idx.json");
    return maps;
}

}  // namespace ssos
