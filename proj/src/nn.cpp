#include "ssos/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace ssos {

size_t DenseNet::param_count() const {
    size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

DenseNet make_dense_net(const std::vector<int>& dims, const std::vector<Activation>& acts,
                        Rng& rng) {
    if (dims.size() < 2 || acts.size() != dims.size() - 1)
        throw std::invalid_argument("make_dense_net: dims/acts mismatch");
    DenseNet net;
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
        DenseLayer layer;
        layer.in_dim = dims[i];
        layer.out_dim = dims[i + 1];
        layer.act = acts[i];
        double bound = std::sqrt(6.0 / (layer.in_dim + layer.out_dim));
        layer.weight.resize(static_cast<size_t>(layer.in_dim) * layer.out_dim);
        for (auto& w : layer.weight) w = rng.uniform(-bound, bound);
        layer.bias.assign(layer.out_dim, 0.0);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

namespace {

double apply_act(Activation act, double x) {
    switch (act) {
        case Activation::relu: return x > 0.0 ? x : 0.0;
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-x));
        case Activation::identity: break;
    }
    return x;
}

double act_grad(Activation act, double pre, double post) {
    switch (act) {
        case Activation::relu: return pre > 0.0 ? 1.0 : 0.0;
        case Activation::sigmoid: return post * (1.0 - post);
        case Activation::identity: break;
    }
    return 1.0;
}

std::vector<double> layer_forward(const DenseLayer& l, const std::vector<double>& in,
                                  std::vector<double>* pre_out) {
    if (static_cast<int>(in.size()) != l.in_dim)
        throw std::invalid_argument("forward: input dimension mismatch");
    std::vector<double> pre(l.out_dim);
    for (int o = 0; o < l.out_dim; ++o) {
        const double* wrow = l.weight.data() + static_cast<size_t>(o) * l.in_dim;
        double acc = l.bias[o];
        for (int i = 0; i < l.in_dim; ++i) acc += wrow[i] * in[i];
        pre[o] = acc;
    }
    std::vector<double> post(l.out_dim);
    for (int o = 0; o < l.out_dim; ++o) post[o] = apply_act(l.act, pre[o]);
    if (pre_out) *pre_out = std::move(pre);
    return post;
}

}  // namespace

std::vector<double> forward(const DenseNet& net, const std::vector<double>& in) {
    std::vector<double> x = in;
    for (const auto& l : net.layers) x = layer_forward(l, x, nullptr);
    return x;
}

const std::vector<double>& forward(const DenseNet& net, const std::vector<double>& in,
                                   ForwardCache& cache) {
    cache.inputs.assign(net.layers.size(), {});
    cache.pre.assign(net.layers.size(), {});
    std::vector<double> x = in;
    for (size_t li = 0; li < net.layers.size(); ++li) {
        cache.inputs[li] = x;
        x = layer_forward(net.layers[li], x, &cache.pre[li]);
    }
    cache.output = std::move(x);
    return cache.output;
}

void NetGrads::init_like(const DenseNet& net) {
    weight.resize(net.layers.size());
    bias.resize(net.layers.size());
    for (size_t i = 0; i < net.layers.size(); ++i) {
        weight[i].assign(net.layers[i].weight.size(), 0.0);
        bias[i].assign(net.layers[i].bias.size(), 0.0);
    }
}

void NetGrads::reset() {
    for (auto& w : weight) std::fill(w.begin(), w.end(), 0.0);
    for (auto& b : bias) std::fill(b.begin(), b.end(), 0.0);
}

void NetGrads::scale(double factor) {
    for (auto& w : weight)
        for (auto& v : w) v *= factor;
    for (auto& b : bias)
        for (auto& v : b) v *= factor;
}

std::vector<double> backward(const DenseNet& net, const ForwardCache& cache,
                             const std::vector<double>& upstream, NetGrads& grads) {
    if (net.layers.empty()) return upstream;
    if (static_cast<int>(upstream.size()) != net.output_dim())
        throw std::invalid_argument("backward: upstream dimension mismatch");
    std::vector<double> g = upstream;
    for (size_t i = net.layers.size(); i-- > 0;) {
        const DenseLayer& l = net.layers[i];
        const std::vector<double>& in = cache.inputs[i];
        const std::vector<double>& pre = cache.pre[i];
        // post-activation values only needed for sigmoid; recompute cheaply
        for (int o = 0; o < l.out_dim; ++o) {
            double post = apply_act(l.act, pre[o]);
            g[o] *= act_grad(l.act, pre[o], post);
        }
        std::vector<double> gin(l.in_dim, 0.0);
        for (int o = 0; o < l.out_dim; ++o) {
            double go = g[o];
            double* wg = grads.weight[i].data() + static_cast<size_t>(o) * l.in_dim;
            const double* wrow = l.weight.data() + static_cast<size_t>(o) * l.in_dim;
            for (int j = 0; j < l.in_dim; ++j) {
                wg[j] += go * in[j];
                gin[j] += go * wrow[j];
            }
            grads.bias[i][o] += go;
        }
        g = std::move(gin);
    }
    return g;
}

double effective_lr(const SgdState& state, long iter, int epoch) {
    double lr = state.learning_rate;
    if (state.warmup_iters > 0 && iter < state.warmup_iters)
        lr *= static_cast<double>(iter) / state.warmup_iters;
    for (int e : state.decay_epochs)
        if (epoch >= e) lr *= state.decay_factor;
    return lr;
}

void sgd_step(std::span<double> params, std::span<const double> grads, const SgdState& state,
              long iter, int epoch) {
    if (params.size() != grads.size()) throw std::invalid_argument("sgd_step: shape mismatch");
    double lr = effective_lr(state, iter, epoch);
    for (size_t i = 0; i < params.size(); ++i) {
        if (!std::isfinite(grads[i])) throw std::runtime_error("sgd_step: non-finite gradient");
        params[i] -= lr * (grads[i] + state.weight_decay * params[i]);
    }
}

void sgd_step(DenseNet& net, const NetGrads& grads, const SgdState& state, long iter, int epoch) {
    for (size_t i = 0; i < net.layers.size(); ++i) {
        sgd_step(net.layers[i].weight, grads.weight[i], state, iter, epoch);
        sgd_step(net.layers[i].bias, grads.bias[i], state, iter, epoch);
    }
}

}  // namespace ssos
