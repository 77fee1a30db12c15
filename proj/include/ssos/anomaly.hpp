#pragma once

#include <cstdint>
#include <vector>

#include "ssos/nn.hpp"

namespace ssos {

// Learned per-pseudo-class energy weights, initialized to 1.
struct EnergyWeights {
    std::vector<double> w;

    static EnergyWeights ones(int num_classes) {
        return EnergyWeights{std::vector<double>(num_classes, 1.0)};
    }
};

// Free energy E = -log sum_k exp(f_k * w_k), log-sum-exp stabilized.
// Greater energy indicates a more anomalous object.
double energy(const std::vector<double>& logits, const EnergyWeights& weights);

// Energy plus gradients wrt logits and weights (either output may be null).
double energy_grad(const std::vector<double>& logits, const EnergyWeights& weights,
                   std::vector<double>* d_logits, std::vector<double>* d_weights);

// Uncertainty MLP phi: scalar energy -> lambda in (0, 1). Normal objects
// score higher lambda than outliers.
struct UncertaintyHead {
    DenseNet net;  // 1 -> hidden (relu) -> 1 (sigmoid)

    static UncertaintyHead make(int hidden, uint64_t seed);
};

double uncertainty(const UncertaintyHead& head, double e);
double uncertainty(const UncertaintyHead& head, double e, ForwardCache& cache);

struct AnomalyLoss {
    double loss = 0.0;
    std::vector<double> grad_normal;   // d loss / d lambda_i
    std::vector<double> grad_outlier;  // d loss / d lambda_tilde_i
};

// Binary cross-entropy of normal (target 1) vs synthesized outlier
// (target 0) uncertainty scores, averaged over all N_n + N_o items.
AnomalyLoss anomaly_loss(const std::vector<double>& lambda_normal,
                         const std::vector<double>& lambda_outlier);

}  // namespace ssos
