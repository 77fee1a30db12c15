#include "ssos/upc.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "ssos/rng.hpp"

namespace ssos {

std::vector<std::vector<double>> init_centres(int k, int dim, uint64_t seed) {
    if (k < 1 || dim < 1) throw std::invalid_argument("init_centres: k and dim must be >= 1");
    Rng rng(seed);
    std::vector<std::vector<double>> centres(k, std::vector<double>(dim));
    for (auto& c : centres)
        for (auto& v : c) v = rng.normal();
    return centres;
}

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double t = a[i] - b[i];
        d += t * t;
    }
    return d;
}

int assign_pseudo_label(const std::vector<double>& z,
                        const std::vector<std::vector<double>>& centres) {
    if (centres.empty()) throw std::invalid_argument("assign_pseudo_label: no centres");
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < centres.size(); ++k) {
        if (centres[k].size() != z.size())
            throw std::invalid_argument("assign_pseudo_label: dimension mismatch");
        double d = squared_distance(z, centres[k]);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(k);
        }
    }
    return best;
}

namespace {

std::vector<int> full_assignment_pass(const std::vector<std::vector<double>>& points,
                                      const std::vector<std::vector<double>>& centres) {
    std::vector<int> labels(points.size());
    for (size_t i = 0; i < points.size(); ++i) labels[i] = assign_pseudo_label(points[i], centres);
    return labels;
}

}  // namespace

PseudoLabelState minibatch_kmeans(const std::vector<std::vector<double>>& features,
                                  const KmeansConfig& cfg,
                                  const std::vector<std::vector<double>>* warm_start) {
    if (features.empty()) throw std::invalid_argument("minibatch_kmeans: empty feature set");
    if (cfg.k < 1 || cfg.batch_size < 1 || cfg.iterations < 1)
        throw std::invalid_argument("minibatch_kmeans: invalid config");
    const size_t dim = features[0].size();
    for (const auto& f : features)
        if (f.size() != dim) throw std::invalid_argument("minibatch_kmeans: ragged features");

    std::vector<std::vector<double>> points = features;
    std::vector<double> mean, scale;
    if (cfg.standardize) {
        mean.assign(dim, 0.0);
        scale.assign(dim, 0.0);
        for (const auto& p : points)
            for (size_t d = 0; d < dim; ++d) mean[d] += p[d];
        for (double& m : mean) m /= static_cast<double>(points.size());
        for (const auto& p : points)
            for (size_t d = 0; d < dim; ++d) scale[d] += (p[d] - mean[d]) * (p[d] - mean[d]);
        for (double& s : scale) s = std::sqrt(s / static_cast<double>(points.size()));
        for (auto& p : points)
            for (size_t d = 0; d < dim; ++d) p[d] = (p[d] - mean[d]) / (scale[d] > 0 ? scale[d] : 1.0);
    }

    std::vector<std::vector<double>> centres;
    if (warm_start) {
        if (static_cast<int>(warm_start->size()) != cfg.k)
            throw std::invalid_argument("minibatch_kmeans: warm start k mismatch");
        for (const auto& c : *warm_start)
            if (c.size() != dim) throw std::invalid_argument("minibatch_kmeans: warm start dim mismatch");
        centres = *warm_start;
        if (cfg.standardize)
            for (auto& c : centres)
                for (size_t d = 0; d < dim; ++d)
                    c[d] = (c[d] - mean[d]) / (scale[d] > 0 ? scale[d] : 1.0);
    } else {
        centres = init_centres(cfg.k, static_cast<int>(dim), cfg.seed);
    }

    Rng rng(derive_seed(cfg.seed, 0x6b6d65616e73ull));
    std::vector<size_t> order(points.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<long> counts(cfg.k, 0);

    for (int pass = 0; pass < cfg.iterations; ++pass) {
        // Fisher-Yates with our deterministic source
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_int(i)]);
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            size_t end = std::min(order.size(), start + cfg.batch_size);
            for (size_t j = start; j < end; ++j) {
                const std::vector<double>& p = points[order[j]];
                int c = assign_pseudo_label(p, centres);
                counts[c] += 1;
                double eta = 1.0 / static_cast<double>(counts[c]);
                std::vector<double>& centre = centres[c];
                for (size_t d = 0; d < dim; ++d) centre[d] += eta * (p[d] - centre[d]);
            }
        }
    }

    std::vector<int> labels = full_assignment_pass(points, centres);

    // Re-seed empty clusters to the points farthest from their assigned centres.
    std::vector<bool> stolen(points.size(), false);
    for (int c = 0; c < cfg.k; ++c) {
        bool empty = std::find(labels.begin(), labels.end(), c) == labels.end();
        if (!empty) continue;
        double worst = -1.0;
        int pick = -1;
        for (size_t i = 0; i < points.size(); ++i) {
            if (stolen[i]) continue;
            double d = squared_distance(points[i], centres[labels[i]]);
            if (d > worst) {
                worst = d;
                pick = static_cast<int>(i);
            }
        }
        if (pick < 0 || worst <= 0.0) break;  // fewer distinct points than clusters
        centres[c] = points[pick];
        stolen[pick] = true;
        labels = full_assignment_pass(points, centres);
    }

    if (cfg.standardize) {
        // map centres back to the original feature scale
        for (auto& c : centres)
            for (size_t d = 0; d < dim; ++d) c[d] = c[d] * (scale[d] > 0 ? scale[d] : 1.0) + mean[d];
    }

    PseudoLabelState state;
    state.centres = std::move(centres);
    state.assignments = std::move(labels);
    return state;
}

PclsLoss pcls_loss(const std::vector<double>& logits, int label) {
    if (logits.empty()) throw std::invalid_argument("pcls_loss: empty logits");
    if (label < 0 || label >= static_cast<int>(logits.size()))
        throw std::invalid_argument("pcls_loss: label out of range");
    double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double f : logits) sum += std::exp(f - m);
    double log_z = m + std::log(sum);

    PclsLoss out;
    out.loss = log_z - logits[label];
    out.grad.resize(logits.size());
    for (size_t k = 0; k < logits.size(); ++k) {
        out.grad[k] = std::exp(logits[k] - log_z);
        if (static_cast<int>(k) == label) out.grad[k] -= 1.0;
    }
    return out;
}

void write_pseudo_label_csv(const std::string& path,
                            const std::vector<std::pair<int, int>>& labels) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        if (!os) throw std::runtime_error("pseudo-label dump: cannot open " + tmp);
        os << "object_id,label\n";
        for (const auto& [id, label] : labels) os << id << "," << label << "\n";
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace ssos
