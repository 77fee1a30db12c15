#pragma once

#include <vector>

#include "ssos/geometry.hpp"

namespace ssos {

struct AnnotatedBox {
    Box box;
    int annotation_id = 0;
    int cluster_id = -1;  // generating cluster for synthetic data, -1 when unknown
};

// A proposal with the quality predictions supplied by the harness provider.
struct CandidateBox {
    Box box;
    QualityTargets quality;
};

// One image worth of data: the backbone feature map stand-in, ground-truth
// boxes, and candidate boxes with quality predictions.
struct Scene {
    int image_id = 0;
    FeatureMap features;
    std::vector<AnnotatedBox> ground_truth;
    std::vector<CandidateBox> candidates;
};

}  // namespace ssos
