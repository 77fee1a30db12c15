#pragma once

#include <vector>

#include "ssos/geometry.hpp"

namespace ssos {

// One scored detection produced by the inference pass.
struct DetectionRecord {
    Box box;
    double score = 0.0;        // fused quality score s
    double energy = 0.0;       // free energy E
    double uncertainty = 0.0;  // lambda = phi(E)
    bool is_anomaly = false;
    int image_id = 0;
};

struct ImageGroundTruth {
    int image_id = 0;
    std::vector<Box> boxes;
};

}  // namespace ssos
