#pragma once

#include <cstdint>
#include <deque>
#include <vector>

namespace ssos {

// Class-conditional Gaussians with a single tied covariance shared by all
// classes. The Cholesky factor is taken of (tied_cov + ridge * I).
struct GaussianBank {
    int dim = 0;
    int num_classes = 0;
    std::vector<std::vector<double>> means;  // per class; empty for inactive classes
    std::vector<bool> active;                // class has >= 1 member
    std::vector<int> counts;
    std::vector<double> tied_cov;  // dim x dim, row-major
    std::vector<double> chol;      // lower-triangular factor, dim x dim
    double ridge = 0.0;
};

// Per-class means and tied covariance Cov = (1/N) sum_k sum_{i in k}
// (v - mu_k)(v - mu_k)^T. Classes with no members are flagged inactive.
// The ridge is ridge_scale * mean(diag Cov), floored at 1e-12.
GaussianBank fit_gaussians(const std::vector<std::vector<double>>& features,
                           const std::vector<int>& labels, int num_classes,
                           double ridge_scale = 1e-6);

// Exact log-density of N(mu_k, Cov + ridge I) at v, via the Cholesky factor.
double log_density(const GaussianBank& bank, int k, const std::vector<double>& v);

// Draw n_samples from class k's Gaussian and return the n_outliers draws with
// the lowest log-density (most outlying first).
std::vector<std::vector<double>> sample_virtual_outliers(const GaussianBank& bank, int k,
                                                         int n_samples, int n_outliers,
                                                         uint64_t seed);

// Per-class FIFO buffers of embedded features, used to stabilize the
// Gaussian fit across mini-batches. Synthesis stays inactive for a class
// until its buffer reaches min_fill.
class FeatureQueue {
public:
    FeatureQueue() = default;
    FeatureQueue(int num_classes, int capacity, int min_fill);

    void push(int label, std::vector<double> v);
    bool ready(int label) const;
    int size(int label) const;
    int num_classes() const { return static_cast<int>(buffers_.size()); }

    // Concatenated contents as (features, labels), in class-major FIFO order.
    void snapshot(std::vector<std::vector<double>>& features, std::vector<int>& labels) const;

private:
    std::vector<std::deque<std::vector<double>>> buffers_;
    int capacity_ = 256;
    int min_fill_ = 32;
};

}  // namespace ssos
