#include "ssos/anomaly.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ssos {

double energy(const std::vector<double>& logits, const EnergyWeights& weights) {
    return energy_grad(logits, weights, nullptr, nullptr);
}

double energy_grad(const std::vector<double>& logits, const EnergyWeights& weights,
                   std::vector<double>* d_logits, std::vector<double>* d_weights) {
    if (logits.empty() || logits.size() != weights.w.size())
        throw std::invalid_argument("energy: logits/weights dimension mismatch");
    const size_t k = logits.size();
    std::vector<double> a(k);
    for (size_t i = 0; i < k; ++i) a[i] = logits[i] * weights.w[i];
    double m = *std::max_element(a.begin(), a.end());
    double sum = 0.0;
    for (double v : a) sum += std::exp(v - m);
    double e = -(m + std::log(sum));

    if (d_logits || d_weights) {
        if (d_logits) d_logits->resize(k);
        if (d_weights) d_weights->resize(k);
        for (size_t i = 0; i < k; ++i) {
            double p = std::exp(a[i] - m) / sum;  // softmax over weighted logits
            if (d_logits) (*d_logits)[i] = -p * weights.w[i];
            if (d_weights) (*d_weights)[i] = -p * logits[i];
        }
    }
    return e;
}

UncertaintyHead UncertaintyHead::make(int hidden, uint64_t seed) {
    Rng rng(seed);
    return UncertaintyHead{
        make_dense_net({1, hidden, 1}, {Activation::relu, Activation::sigmoid}, rng)};
}

namespace {

// sigmoid output can round to exactly 0 or 1 in double; keep lambda inside
// the open interval required by the BCE terms
double clamp_open(double v) { return std::clamp(v, 1e-12, 1.0 - 1e-12); }

}  // namespace

double uncertainty(const UncertaintyHead& head, double e) {
    if (!std::isfinite(e)) throw std::invalid_argument("uncertainty: non-finite energy");
    return clamp_open(forward(head.net, {e})[0]);
}

double uncertainty(const UncertaintyHead& head, double e, ForwardCache& cache) {
    if (!std::isfinite(e)) throw std::invalid_argument("uncertainty: non-finite energy");
    return clamp_open(forward(head.net, {e}, cache)[0]);
}

AnomalyLoss anomaly_loss(const std::vector<double>& lambda_normal,
                         const std::vector<double>& lambda_outlier) {
    const size_t n = lambda_normal.size() + lambda_outlier.size();
    if (n == 0) throw std::invalid_argument("anomaly_loss: no samples");
    for (double l : lambda_normal)
        if (!(l > 0.0 && l < 1.0)) throw std::invalid_argument("anomaly_loss: lambda outside (0,1)");
    for (double l : lambda_outlier)
        if (!(l > 0.0 && l < 1.0)) throw std::invalid_argument("anomaly_loss: lambda outside (0,1)");

    AnomalyLoss out;
    const double inv_n = 1.0 / static_cast<double>(n);
    out.grad_normal.resize(lambda_normal.size());
    out.grad_outlier.resize(lambda_outlier.size());
    for (size_t i = 0; i < lambda_normal.size(); ++i) {
        out.loss -= inv_n * std::log(lambda_normal[i]);
        out.grad_normal[i] = -inv_n / lambda_normal[i];
    }
    for (size_t i = 0; i < lambda_outlier.size(); ++i) {
        out.loss -= inv_n * std::log(1.0 - lambda_outlier[i]);
        out.grad_outlier[i] = inv_n / (1.0 - lambda_outlier[i]);
    }
    return out;
}

}  // namespace ssos
