#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ssos/rng.hpp"

namespace ssos {

enum class Activation { identity, relu, sigmoid };

struct DenseLayer {
    int in_dim = 0;
    int out_dim = 0;
    Activation act = Activation::identity;
    std::vector<double> weight;  // out_dim x in_dim, row-major
    std::vector<double> bias;    // out_dim
};

struct DenseNet {
    std::vector<DenseLayer> layers;

    int input_dim() const { return layers.empty() ? 0 : layers.front().in_dim; }
    int output_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }
    size_t param_count() const;
};

// dims = {in, h1, ..., out}; acts has one entry per layer. Weights are drawn
// from uniform(-sqrt(6/(in+out)), +sqrt(6/(in+out))), biases start at zero.
DenseNet make_dense_net(const std::vector<int>& dims, const std::vector<Activation>& acts,
                        Rng& rng);

// Per-layer inputs and pre-activations recorded by the caching forward pass.
struct ForwardCache {
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> pre;
    std::vector<double> output;
};

std::vector<double> forward(const DenseNet& net, const std::vector<double>& in);
const std::vector<double>& forward(const DenseNet& net, const std::vector<double>& in,
                                   ForwardCache& cache);

struct NetGrads {
    std::vector<std::vector<double>> weight;
    std::vector<std::vector<double>> bias;

    void init_like(const DenseNet& net);
    void reset();
    void scale(double factor);
};

// Reverse-mode gradients of the cached forward pass. Parameter gradients are
// accumulated into `grads`; the return value is the gradient wrt the input.
std::vector<double> backward(const DenseNet& net, const ForwardCache& cache,
                             const std::vector<double>& upstream, NetGrads& grads);

struct SgdState {
    double learning_rate = 0.001;
    double weight_decay = 1e-4;
    int warmup_iters = 100;
    std::vector<int> decay_epochs = {4};
    double decay_factor = 0.1;
};

// Linear warmup over the first warmup_iters iterations (iter counts from 1),
// then one decay_factor step at each epoch listed in decay_epochs.
double effective_lr(const SgdState& state, long iter, int epoch);

// p <- p - lr * (g + weight_decay * p). Throws on non-finite gradients.
void sgd_step(std::span<double> params, std::span<const double> grads, const SgdState& state,
              long iter, int epoch);
void sgd_step(DenseNet& net, const NetGrads& grads, const SgdState& state, long iter, int epoch);

}  // namespace ssos
