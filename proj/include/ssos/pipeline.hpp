#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssos/anomaly.hpp"
#include "ssos/detections.hpp"
#include "ssos/flow.hpp"
#include "ssos/gaussian.hpp"
#include "ssos/nn.hpp"
#include "ssos/scene.hpp"
#include "ssos/upc.hpp"

namespace ssos {

enum class SynthMode { ssos, ffs };

std::string to_string(SynthMode mode);
SynthMode synth_mode_from_string(const std::string& s);

struct TrainConfig {
    SynthMode mode = SynthMode::ssos;
    int k_pseudo = 5;
    int epochs = 8;
    double alpha = 1.0;    // pseudo-classification loss weight
    double beta = 0.1;     // anomaly loss weight
    double gamma = 1e-4;   // flow NLL weight (ffs mode)
    int sample_count = 10000;  // 300 in ffs mode
    int outliers_per_iter = 1;
    int embed_dim = 32;
    uint64_t seed = 0;
    SgdState sgd;

    // desk-scale knobs
    int roi_out = 3;
    int samples_per_bin = 2;
    int batch_scenes = 2;
    int embed_hidden = 64;
    int pcls_hidden = 64;
    int phi_hidden = 512;
    int flow_layers = 4;
    int flow_hidden = 32;
    int kmeans_batch = 256;
    int kmeans_passes = 10;
    bool kmeans_standardize = false;
    int queue_capacity = 256;
    int queue_min_fill = 32;
    double valid_iou = 0.3;
    double ridge_scale = 1e-6;
};

// Paper defaults with the mode-dependent sampling size applied.
TrainConfig default_train_config(SynthMode mode);

// The trained parameter bundle: shared head g, pseudo-class head, energy
// weights, uncertainty head phi, the synthesis model, and cluster centres.
struct Model {
    TrainConfig cfg;
    DenseNet shared_head;
    DenseNet pcls_head;
    EnergyWeights energy_w;
    UncertaintyHead phi;
    GaussianBank bank;  // ssos mode
    CouplingFlow flow;  // ffs mode
    std::vector<std::vector<double>> centres;
};

struct LossBreakdown {
    double total = 0.0;
    double rpn = 0.0;
    double bbox = 0.0;
    double pcls = 0.0;
    double anomaly = 0.0;
    double nll = 0.0;
};

struct TrainResult {
    Model model;
    std::vector<LossBreakdown> iteration_losses;
    std::vector<std::pair<int, int>> pseudo_labels;  // (annotation_id, label), final epoch
};

// Full training loop: epoch-wise warm-started re-clustering of ground-truth
// features, then mini-batch updates of all heads with virtual-outlier
// synthesis and the weighted loss sum.
TrainResult train(const std::vector<Scene>& scenes, const TrainConfig& cfg);

// Score every candidate box: pooled feature -> embedding -> logits ->
// energy -> uncertainty, plus the fused quality score. is_anomaly is left
// unset until flag_anomalies.
std::vector<DetectionRecord> infer(const Model& model, const std::vector<Scene>& scenes);

// Largest uncertainty value that keeps >= 95% of the given in-distribution
// records at or above it.
double pick_uncertainty_threshold(const std::vector<DetectionRecord>& in_dist_records);

// is_anomaly = (uncertainty < tau), strictly below.
void flag_anomalies(std::vector<DetectionRecord>& records, double tau);

void save_model(const Model& model, const std::string& path);  // + <path>.json sidecar
Model load_model(const std::string& path);

}  // namespace ssos
