#include "ssos/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ssos/rng.hpp"

namespace ssos {

CouplingFlow make_coupling_flow(int dim, int n_layers, int hidden, uint64_t seed) {
    if (dim < 1 || n_layers < 1 || hidden < 1)
        throw std::invalid_argument("make_coupling_flow: invalid architecture");
    Rng rng(seed);
    CouplingFlow flow;
    flow.dim = dim;
    int half = dim / 2;
    for (int i = 0; i < n_layers; ++i) {
        CouplingLayer layer;
        layer.mask.assign(dim, 0.0);
        for (int d = 0; d < dim; ++d) {
            bool first_half = d < half;
            layer.mask[d] = (i % 2 == 0) == first_half ? 1.0 : 0.0;
        }
        layer.scale_net = make_dense_net({dim, hidden, dim},
                                         {Activation::relu, Activation::identity}, rng);
        layer.translate_net = make_dense_net({dim, hidden, dim},
                                             {Activation::relu, Activation::identity}, rng);
        // zero output layers: the stack starts as the identity map
        for (DenseNet* net : {&layer.scale_net, &layer.translate_net}) {
            std::fill(net->layers.back().weight.begin(), net->layers.back().weight.end(), 0.0);
            std::fill(net->layers.back().bias.begin(), net->layers.back().bias.end(), 0.0);
        }
        flow.layers.push_back(std::move(layer));
    }
    return flow;
}

namespace {

struct LayerCache {
    std::vector<double> input;
    std::vector<double> s;  // bounded scale per dim (0 on passthrough dims)
    ForwardCache scale_cache;
    ForwardCache trans_cache;
};

void check_finite(const std::vector<double>& v, const char* where) {
    for (double x : v)
        if (!std::isfinite(x)) throw std::invalid_argument(std::string(where) + ": non-finite input");
}

std::vector<double> layer_forward(const CouplingLayer& layer, const std::vector<double>& x,
                                  double& log_det, LayerCache* cache) {
    const int d = static_cast<int>(layer.mask.size());
    std::vector<double> masked(d);
    for (int i = 0; i < d; ++i) masked[i] = x[i] * layer.mask[i];

    std::vector<double> s_raw, t;
    if (cache) {
        cache->input = x;
        s_raw = forward(layer.scale_net, masked, cache->scale_cache);
        t = forward(layer.translate_net, masked, cache->trans_cache);
    } else {
        s_raw = forward(layer.scale_net, masked);
        t = forward(layer.translate_net, masked);
    }

    std::vector<double> y(d), s(d, 0.0);
    for (int i = 0; i < d; ++i) {
        if (layer.mask[i] != 0.0) {
            y[i] = x[i];
        } else {
            s[i] = layer.scale_cap * std::tanh(s_raw[i] / layer.scale_cap);
            y[i] = x[i] * std::exp(s[i]) + t[i];
            log_det += s[i];
        }
    }
    if (cache) cache->s = std::move(s);
    return y;
}

}  // namespace

FlowResult flow_forward(const CouplingFlow& flow, const std::vector<double>& v) {
    if (static_cast<int>(v.size()) != flow.dim)
        throw std::invalid_argument("flow_forward: dimension mismatch");
    check_finite(v, "flow_forward");
    FlowResult r;
    r.latent = v;
    for (const auto& layer : flow.layers) r.latent = layer_forward(layer, r.latent, r.log_det, nullptr);
    return r;
}

std::vector<double> flow_inverse(const CouplingFlow& flow, const std::vector<double>& latent) {
    if (static_cast<int>(latent.size()) != flow.dim)
        throw std::invalid_argument("flow_inverse: dimension mismatch");
    check_finite(latent, "flow_inverse");
    const int d = flow.dim;
    std::vector<double> x = latent;
    for (auto it = flow.layers.rbegin(); it != flow.layers.rend(); ++it) {
        const CouplingLayer& layer = *it;
        std::vector<double> masked(d);
        for (int i = 0; i < d; ++i) masked[i] = x[i] * layer.mask[i];
        std::vector<double> s_raw = forward(layer.scale_net, masked);
        std::vector<double> t = forward(layer.translate_net, masked);
        for (int i = 0; i < d; ++i) {
            if (layer.mask[i] != 0.0) continue;
            double s = layer.scale_cap * std::tanh(s_raw[i] / layer.scale_cap);
            x[i] = (x[i] - t[i]) * std::exp(-s);
        }
    }
    return x;
}

void FlowGrads::init_like(const CouplingFlow& flow) {
    scale.resize(flow.layers.size());
    translate.resize(flow.layers.size());
    for (size_t i = 0; i < flow.layers.size(); ++i) {
        scale[i].init_like(flow.layers[i].scale_net);
        translate[i].init_like(flow.layers[i].translate_net);
    }
}

void FlowGrads::reset() {
    for (auto& g : scale) g.reset();
    for (auto& g : translate) g.reset();
}

void FlowGrads::scale_by(double factor) {
    for (auto& g : scale) g.scale(factor);
    for (auto& g : translate) g.scale(factor);
}

double flow_nll(const CouplingFlow& flow, const std::vector<std::vector<double>>& batch,
                FlowGrads* grads) {
    if (batch.empty()) throw std::invalid_argument("flow_nll: empty batch");
    const int d = flow.dim;
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    const double log_2pi = std::log(2.0 * M_PI);

    double loss = 0.0;
    std::vector<LayerCache> caches(flow.layers.size());
    for (const auto& v : batch) {
        if (static_cast<int>(v.size()) != d)
            throw std::invalid_argument("flow_nll: dimension mismatch");
        check_finite(v, "flow_nll");
        double log_det = 0.0;
        std::vector<double> z = v;
        for (size_t li = 0; li < flow.layers.size(); ++li)
            z = layer_forward(flow.layers[li], z, log_det, grads ? &caches[li] : nullptr);
        double sq = 0.0;
        for (double t : z) sq += t * t;
        loss += inv_n * (0.5 * sq + 0.5 * d * log_2pi - log_det);

        if (!grads) continue;
        // d loss / d latent and d loss / d log_det for this sample
        std::vector<double> gy(d);
        for (int i = 0; i < d; ++i) gy[i] = inv_n * z[i];
        const double g_ld = -inv_n;
        for (size_t li = flow.layers.size(); li-- > 0;) {
            const CouplingLayer& layer = flow.layers[li];
            LayerCache& cache = caches[li];
            std::vector<double> gs(d, 0.0), gt(d, 0.0), gx(d, 0.0);
            for (int i = 0; i < d; ++i) {
                if (layer.mask[i] != 0.0) {
                    gx[i] = gy[i];
                } else {
                    double es = std::exp(cache.s[i]);
                    gs[i] = gy[i] * cache.input[i] * es + g_ld;
                    gt[i] = gy[i];
                    gx[i] = gy[i] * es;
                    // through the tanh bound: s = cap * tanh(s_raw / cap)
                    double th = cache.s[i] / layer.scale_cap;
                    gs[i] *= 1.0 - th * th;
                }
            }
            std::vector<double> g_masked_s =
                backward(layer.scale_net, cache.scale_cache, gs, grads->scale[li]);
            std::vector<double> g_masked_t =
                backward(layer.translate_net, cache.trans_cache, gt, grads->translate[li]);
            for (int i = 0; i < d; ++i)
                gx[i] += layer.mask[i] * (g_masked_s[i] + g_masked_t[i]);
            gy = std::move(gx);
        }
    }
    return loss;
}

std::vector<std::vector<double>> sample_flow_outliers(const CouplingFlow& flow, int n_samples,
                                                      int n_outliers, uint64_t seed) {
    if (n_samples < 1) throw std::invalid_argument("sample_flow_outliers: n_samples must be >= 1");
    if (n_outliers > n_samples)
        throw std::invalid_argument("sample_flow_outliers: n_outliers > n_samples");
    Rng rng(seed);
    std::vector<std::vector<double>> latents(n_samples, std::vector<double>(flow.dim));
    std::vector<double> norms(n_samples);
    for (int i = 0; i < n_samples; ++i) {
        double sq = 0.0;
        for (int j = 0; j < flow.dim; ++j) {
            latents[i][j] = rng.normal();
            sq += latents[i][j] * latents[i][j];
        }
        norms[i] = sq;
    }
    std::vector<int> order(n_samples);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return norms[a] > norms[b]; });

    std::vector<std::vector<double>> out;
    out.reserve(n_outliers);
    for (int i = 0; i < n_outliers; ++i) out.push_back(flow_inverse(flow, latents[order[i]]));
    return out;
}

void sgd_step(CouplingFlow& flow, const FlowGrads& grads, const SgdState& state, long iter,
              int epoch) {
    for (size_t i = 0; i < flow.layers.size(); ++i) {
        sgd_step(flow.layers[i].scale_net, grads.scale[i], state, iter, epoch);
        sgd_step(flow.layers[i].translate_net, grads.translate[i], state, iter, epoch);
    }
}

}  // namespace ssos
