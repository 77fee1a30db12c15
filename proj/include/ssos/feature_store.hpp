#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssos/geometry.hpp"

namespace ssos {

// Record index entry carried by the JSON sidecar ("<path>.idx.json").
struct FeatureIndexEntry {
    int image_id = 0;
    int annotation_id = -1;  // -1 for whole-image records
};

// "OFV1": count x dim little-endian f32 rows. Values are promoted to double
// on load. The sidecar index maps each record to image/annotation ids.
void write_vector_store(const std::string& path, const std::vector<std::vector<double>>& vectors,
                        const std::vector<FeatureIndexEntry>& index);
std::vector<std::vector<double>> read_vector_store(const std::string& path,
                                                   std::vector<FeatureIndexEntry>* index = nullptr);

// "OFM1": per-record H, W, C u32 triple followed by H*W*C f32 values.
void write_map_store(const std::string& path, const std::vector<FeatureMap>& maps,
                     const std::vector<FeatureIndexEntry>& index);
std::vector<FeatureMap> read_map_store(const std::string& path,
                                       std::vector<FeatureIndexEntry>* index = nullptr);

}  // namespace ssos
