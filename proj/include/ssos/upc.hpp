#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ssos {

// Cluster centres and per-object assignments, warm-started across epochs.
struct PseudoLabelState {
    std::vector<std::vector<double>> centres;
    std::vector<int> assignments;  // parallel to the feature list that was clustered
    int epoch = 0;
};

struct KmeansConfig {
    int k = 5;
    int batch_size = 256;
    int iterations = 10;  // passes over the data
    uint64_t seed = 0;
    bool standardize = false;  // optional per-dimension standardization before clustering
};

// k i.i.d. standard-normal centres of the given dimension.
std::vector<std::vector<double>> init_centres(int k, int dim, uint64_t seed);

// Sculley mini-batch k-means: per mini-batch, assign each point to its
// nearest centre and move the centre toward the point with per-centre rate
// 1/(assignment count so far). Final assignments come from one full
// nearest-centre pass; empty clusters are re-seeded to the point farthest
// from its assigned centre.
PseudoLabelState minibatch_kmeans(const std::vector<std::vector<double>>& features,
                                  const KmeansConfig& cfg,
                                  const std::vector<std::vector<double>>* warm_start = nullptr);

// Index of the nearest centre under L2 distance; ties break to the lowest index.
int assign_pseudo_label(const std::vector<double>& z,
                        const std::vector<std::vector<double>>& centres);

double squared_distance(const std::vector<double>& a, const std::vector<double>& b);

struct PclsLoss {
    double loss = 0.0;
    std::vector<double> grad;  // d loss / d logits = softmax - one_hot
};

// Numerically stabilized softmax cross-entropy against a pseudo-label.
PclsLoss pcls_loss(const std::vector<double>& logits, int label);

// CSV dump "object_id,label", one row per object.
void write_pseudo_label_csv(const std::string& path,
                            const std::vector<std::pair<int, int>>& labels);

}  // namespace ssos
