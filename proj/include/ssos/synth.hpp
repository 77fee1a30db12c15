#pragma once

#include <cstdint>
#include <vector>

#include "ssos/scene.hpp"

namespace ssos {

// Synthetic stand-in for a backbone + dataset: noise feature maps with
// rectangular regions whose channel profile identifies a latent cluster.
struct SyntheticSceneSpec {
    int n_scenes = 200;
    int map_h = 32;
    int map_w = 32;
    int channels = 16;
    int n_clusters_in = 5;
    int n_clusters_ood = 1;
    double cluster_sep = 2.0;
    double noise_sd = 1.5;
    int boxes_min = 1;
    int boxes_max = 3;
    uint64_t seed = 0;
};

struct SyntheticDataset {
    std::vector<Scene> train;
    std::vector<Scene> test_in;   // in-distribution clusters, held-out scenes
    std::vector<Scene> test_ood;  // held-out cluster patterns
    std::vector<std::vector<double>> cluster_means;  // all n_in + n_ood patterns
};

// Deterministic per seed. Train uses n_scenes scenes; each test split uses
// max(1, n_scenes / 4). Candidate boxes are the ground-truth boxes plus two
// jittered copies each (uniform +-10% of box size), with centreness and
// box-quality predictions computed against the best-overlapping ground truth.
SyntheticDataset generate_synthetic(const SyntheticSceneSpec& spec);

}  // namespace ssos
