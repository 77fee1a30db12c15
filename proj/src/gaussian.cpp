#include "ssos/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ssos/rng.hpp"

namespace ssos {

namespace {

// Lower-triangular Cholesky factor of a symmetric PD matrix (row-major).
// Returns false if a non-positive pivot is hit.
bool cholesky(const std::vector<double>& a, int n, std::vector<double>& l) {
    l.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a[static_cast<size_t>(i) * n + j];
            for (int k = 0; k < j; ++k)
                s -= l[static_cast<size_t>(i) * n + k] * l[static_cast<size_t>(j) * n + k];
            if (i == j) {
                if (s <= 0.0) return false;
                l[static_cast<size_t>(i) * n + i] = std::sqrt(s);
            } else {
                l[static_cast<size_t>(i) * n + j] = s / l[static_cast<size_t>(j) * n + j];
            }
        }
    }
    return true;
}

// Solve L y = b for lower-triangular L.
void forward_solve(const std::vector<double>& l, int n, const std::vector<double>& b,
                   std::vector<double>& y) {
    y.resize(n);
    for (int i = 0; i < n; ++i) {
        double s = b[i];
        for (int k = 0; k < i; ++k) s -= l[static_cast<size_t>(i) * n + k] * y[k];
        y[i] = s / l[static_cast<size_t>(i) * n + i];
    }
}

}  // namespace

GaussianBank fit_gaussians(const std::vector<std::vector<double>>& features,
                           const std::vector<int>& labels, int num_classes, double ridge_scale) {
    if (features.empty()) throw std::invalid_argument("fit_gaussians: no features");
    if (features.size() != labels.size())
        throw std::invalid_argument("fit_gaussians: features/labels length mismatch");
    if (num_classes < 1) throw std::invalid_argument("fit_gaussians: num_classes must be >= 1");
    const int dim = static_cast<int>(features[0].size());
    for (const auto& f : features)
        if (static_cast<int>(f.size()) != dim)
            throw std::invalid_argument("fit_gaussians: ragged features");

    GaussianBank bank;
    bank.dim = dim;
    bank.num_classes = num_classes;
    bank.means.assign(num_classes, {});
    bank.active.assign(num_classes, false);
    bank.counts.assign(num_classes, 0);

    for (size_t i = 0; i < features.size(); ++i) {
        int k = labels[i];
        if (k < 0 || k >= num_classes) throw std::invalid_argument("fit_gaussians: label out of range");
        if (bank.means[k].empty()) bank.means[k].assign(dim, 0.0);
        for (int d = 0; d < dim; ++d) bank.means[k][d] += features[i][d];
        bank.counts[k] += 1;
    }
    for (int k = 0; k < num_classes; ++k) {
        if (bank.counts[k] == 0) continue;
        bank.active[k] = true;
        for (double& m : bank.means[k]) m /= bank.counts[k];
    }

    bank.tied_cov.assign(static_cast<size_t>(dim) * dim, 0.0);
    std::vector<double> dev(dim);
    for (size_t i = 0; i < features.size(); ++i) {
        const std::vector<double>& mu = bank.means[labels[i]];
        for (int d = 0; d < dim; ++d) dev[d] = features[i][d] - mu[d];
        for (int r = 0; r < dim; ++r) {
            double dr = dev[r];
            double* row = bank.tied_cov.data() + static_cast<size_t>(r) * dim;
            for (int c = 0; c <= r; ++c) row[c] += dr * dev[c];
        }
    }
    const double inv_n = 1.0 / static_cast<double>(features.size());
    for (int r = 0; r < dim; ++r)
        for (int c = 0; c <= r; ++c) {
            double v = bank.tied_cov[static_cast<size_t>(r) * dim + c] * inv_n;
            bank.tied_cov[static_cast<size_t>(r) * dim + c] = v;
            bank.tied_cov[static_cast<size_t>(c) * dim + r] = v;
        }

    double diag_mean = 0.0;
    for (int d = 0; d < dim; ++d) diag_mean += bank.tied_cov[static_cast<size_t>(d) * dim + d];
    diag_mean /= dim;
    bank.ridge = std::max(ridge_scale * diag_mean, 1e-12);

    std::vector<double> regularized = bank.tied_cov;
    for (int attempt = 0; attempt < 8; ++attempt) {
        for (int d = 0; d < dim; ++d)
            regularized[static_cast<size_t>(d) * dim + d] =
                bank.tied_cov[static_cast<size_t>(d) * dim + d] + bank.ridge;
        if (cholesky(regularized, dim, bank.chol)) return bank;
        bank.ridge *= 10.0;
    }
    throw std::runtime_error("fit_gaussians: covariance not positive definite after ridging");
}

double log_density(const GaussianBank& bank, int k, const std::vector<double>& v) {
    if (k < 0 || k >= bank.num_classes || !bank.active[k])
        throw std::invalid_argument("log_density: inactive class");
    if (static_cast<int>(v.size()) != bank.dim)
        throw std::invalid_argument("log_density: dimension mismatch");
    const int n = bank.dim;
    std::vector<double> diff(n);
    for (int d = 0; d < n; ++d) diff[d] = v[d] - bank.means[k][d];
    std::vector<double> y;
    forward_solve(bank.chol, n, diff, y);
    double quad = 0.0;
    for (double t : y) quad += t * t;
    double log_det = 0.0;
    for (int d = 0; d < n; ++d) log_det += std::log(bank.chol[static_cast<size_t>(d) * n + d]);
    log_det *= 2.0;
    return -0.5 * (n * std::log(2.0 * M_PI) + log_det + quad);
}

std::vector<std::vector<double>> sample_virtual_outliers(const GaussianBank& bank, int k,
                                                         int n_samples, int n_outliers,
                                                         uint64_t seed) {
    if (n_samples < 1) throw std::invalid_argument("sample_virtual_outliers: n_samples must be >= 1");
    if (n_outliers > n_samples)
        throw std::invalid_argument("sample_virtual_outliers: n_outliers > n_samples");
    if (k < 0 || k >= bank.num_classes || !bank.active[k])
        throw std::invalid_argument("sample_virtual_outliers: inactive class");

    const int n = bank.dim;
    Rng rng(seed);
    // flat buffers: this loop runs with n_samples up to 10,000 per class per
    // training iteration
    std::vector<double> draws(static_cast<size_t>(n_samples) * n);
    std::vector<double> density(n_samples);
    std::vector<double> eps(n);
    const double* chol = bank.chol.data();
    const double* mu = bank.means[k].data();
    for (int i = 0; i < n_samples; ++i) {
        for (int d = 0; d < n; ++d) eps[d] = rng.normal();
        double* draw = draws.data() + static_cast<size_t>(i) * n;
        // x = mu + L eps, and the standardized quadratic form is |eps|^2
        double quad = 0.0;
        for (int r = 0; r < n; ++r) {
            const double* row = chol + static_cast<size_t>(r) * n;
            double acc = mu[r];
            for (int c = 0; c <= r; ++c) acc += row[c] * eps[c];
            draw[r] = acc;
            quad += eps[r] * eps[r];
        }
        density[i] = quad;  // monotone stand-in for -log density of this draw
    }

    std::vector<int> order(n_samples);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return density[a] > density[b]; });

    std::vector<std::vector<double>> out;
    out.reserve(n_outliers);
    for (int i = 0; i < n_outliers; ++i) {
        const double* draw = draws.data() + static_cast<size_t>(order[i]) * n;
        out.emplace_back(draw, draw + n);
    }
    return out;
}

FeatureQueue::FeatureQueue(int num_classes, int capacity, int min_fill)
    : buffers_(num_classes), capacity_(capacity), min_fill_(min_fill) {
    if (num_classes < 1 || capacity < 1 || min_fill < 1)
        throw std::invalid_argument("FeatureQueue: invalid configuration");
}

void FeatureQueue::push(int label, std::vector<double> v) {
    if (label < 0 || label >= num_classes())
        throw std::invalid_argument("FeatureQueue: label out of range");
    auto& buf = buffers_[label];
    buf.push_back(std::move(v));
    while (static_cast<int>(buf.size()) > capacity_) buf.pop_front();
}

bool FeatureQueue::ready(int label) const {
    return static_cast<int>(buffers_[label].size()) >= min_fill_;
}

int FeatureQueue::size(int label) const { return static_cast<int>(buffers_[label].size()); }

void FeatureQueue::snapshot(std::vector<std::vector<double>>& features,
                            std::vector<int>& labels) const {
    features.clear();
    labels.clear();
    for (size_t k = 0; k < buffers_.size(); ++k)
        for (const auto& v : buffers_[k]) {
            features.push_back(v);
            labels.push_back(static_cast<int>(k));
        }
}

}  // namespace ssos
