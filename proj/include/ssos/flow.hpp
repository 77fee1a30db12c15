#pragma once

#include <cstdint>
#include <vector>

#include "ssos/nn.hpp"

namespace ssos {

// RealNVP-style affine coupling block. Dims with mask 1 pass through and
// feed the scale/translation nets; dims with mask 0 are transformed. Scale
// outputs are bounded by scale_cap * tanh to keep the inverse stable.
struct CouplingLayer {
    std::vector<double> mask;  // 1 = passthrough, 0 = transformed
    DenseNet scale_net;        // d -> hidden -> d, identity output
    DenseNet translate_net;
    double scale_cap = 2.0;
};

struct CouplingFlow {
    int dim = 0;
    std::vector<CouplingLayer> layers;
};

// Alternating half-mask stack. Net hidden layers are randomly initialized,
// output layers start at zero so the flow begins as the identity map.
CouplingFlow make_coupling_flow(int dim, int n_layers, int hidden, uint64_t seed);

struct FlowResult {
    std::vector<double> latent;
    double log_det = 0.0;  // log |det J| of the forward map
};

FlowResult flow_forward(const CouplingFlow& flow, const std::vector<double>& v);

// Exact algebraic inverse of each coupling block in reverse order.
std::vector<double> flow_inverse(const CouplingFlow& flow, const std::vector<double>& latent);

struct FlowGrads {
    std::vector<NetGrads> scale;
    std::vector<NetGrads> translate;

    void init_like(const CouplingFlow& flow);
    void reset();
    void scale_by(double factor);
};

// Mean negative log-likelihood -log p(v) = 0.5 ||f(v)||^2 + (d/2) log 2 pi
// - log |det J| over the batch. Parameter gradients are accumulated into
// *grads when given.
double flow_nll(const CouplingFlow& flow, const std::vector<std::vector<double>>& batch,
                FlowGrads* grads = nullptr);

// Draw n_samples standard-normal latents, keep the n_outliers with the
// lowest latent density (largest norm), and project them back through the
// inverse map. Most outlying first.
std::vector<std::vector<double>> sample_flow_outliers(const CouplingFlow& flow, int n_samples,
                                                      int n_outliers, uint64_t seed);

void sgd_step(CouplingFlow& flow, const FlowGrads& grads, const SgdState& state, long iter,
              int epoch);

}  // namespace ssos
