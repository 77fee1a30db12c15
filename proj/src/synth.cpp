#include "ssos/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ssos/rng.hpp"
#include "ssos/upc.hpp"

namespace ssos {

namespace {

bool far_from_all(const std::vector<double>& cand, const std::vector<std::vector<double>>& means,
                  double sep) {
    for (const auto& m : means)
        if (std::sqrt(squared_distance(cand, m)) < sep) return false;
    return true;
}

// In-distribution means are drawn at mutual distance >= sep. Held-out means
// go near the centroid of the in-distribution means: an unseen pattern
// inside the known clusters' hull is the case where class-conditional
// synthesis differs from a single global fit. The >= sep constraint is kept
// for every pair (centroid placement satisfies it easily except in very low
// channel counts, where the generic draw is used instead).
std::vector<std::vector<double>> draw_cluster_means(int n_in, int n_ood, int channels, double sep,
                                                    Rng& rng) {
    std::vector<std::vector<double>> means;
    double scale = sep;
    int attempts = 0;
    auto draw_far = [&]() {
        while (true) {
            std::vector<double> cand(channels);
            for (double& v : cand) v = rng.normal(0.0, scale);
            if (far_from_all(cand, means, sep)) {
                attempts = 0;
                return cand;
            }
            if (++attempts > 1000) {
                scale *= 2.0;
                attempts = 0;
            }
        }
    };
    for (int i = 0; i < n_in; ++i) means.push_back(draw_far());

    std::vector<double> centroid(channels, 0.0);
    for (const auto& m : means)
        for (int c = 0; c < channels; ++c) centroid[c] += m[c] / n_in;
    for (int i = 0; i < n_ood; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
            std::vector<double> cand(channels);
            for (int c = 0; c < channels; ++c) cand[c] = centroid[c] + rng.normal(0.0, 0.25 * sep);
            if (far_from_all(cand, means, sep)) {
                means.push_back(std::move(cand));
                placed = true;
            }
        }
        if (!placed) means.push_back(draw_far());
    }
    return means;
}

Box jitter_box(const Box& b, Rng& rng) {
    Box j;
    j.x = b.x + rng.uniform(-0.1, 0.1) * b.w;
    j.y = b.y + rng.uniform(-0.1, 0.1) * b.h;
    j.w = b.w * (1.0 + rng.uniform(-0.1, 0.1));
    j.h = b.h * (1.0 + rng.uniform(-0.1, 0.1));
    return j;
}

// quality predictions for a candidate, measured against its best ground truth
QualityTargets candidate_quality(const Box& cand, const std::vector<AnnotatedBox>& gt) {
    QualityTargets q;
    double best_iou = 0.0;
    const AnnotatedBox* best = nullptr;
    for (const auto& g : gt) {
        double v = iou(cand, g.box);
        if (v > best_iou) {
            best_iou = v;
            best = &g;
        }
    }
    q.box_quality = best_iou;
    if (best) {
        double px = cand.cx();
        double py = cand.cy();
        const Box& gb = best->box;
        bool inside = px >= gb.x && px <= gb.x + gb.w && py >= gb.y && py <= gb.y + gb.h;
        q.centreness = inside ? centreness_target(px, py, gb) : 0.0;
    }
    return q;
}

Scene make_scene(int image_id, int& next_annotation_id, const SyntheticSceneSpec& spec,
                 const std::vector<std::vector<double>>& means,
                 const std::vector<int>& cluster_pool, Rng& rng) {
    Scene scene;
    scene.image_id = image_id;
    scene.features = FeatureMap::zeros(spec.map_h, spec.map_w, spec.channels);
    for (double& v : scene.features.data) v = rng.normal(0.0, spec.noise_sd);

    // One fixed box side, placed clear of the map border, so equal-cluster
    // regions pool to identical features (no clamped sampling at the edges).
    int side = std::max(3, std::min(spec.map_h, spec.map_w) / 4);
    if (side + 2 >= spec.map_h || side + 2 >= spec.map_w)
        throw std::invalid_argument("generate_synthetic: boxes cannot fit the map");

    int target = spec.boxes_min +
                 static_cast<int>(rng.uniform_int(spec.boxes_max - spec.boxes_min + 1));
    for (int b = 0; b < target; ++b) {
        Box box;
        bool placed = false;
        for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
            int x = 1 + static_cast<int>(rng.uniform_int(spec.map_w - side - 1));
            int y = 1 + static_cast<int>(rng.uniform_int(spec.map_h - side - 1));
            box = Box{static_cast<double>(x), static_cast<double>(y), static_cast<double>(side),
                      static_cast<double>(side)};
            placed = true;
            // keep a 1-pixel gap between regions so bilinear samples near one
            // box edge never read another box's pattern
            Box inflated{box.x - 1, box.y - 1, box.w + 2, box.h + 2};
            for (const auto& existing : scene.ground_truth)
                if (iou(inflated, existing.box) > 0.0) {
                    placed = false;
                    break;
                }
        }
        if (!placed) break;  // scene is crowded; keep the boxes placed so far

        int cluster = cluster_pool[rng.uniform_int(cluster_pool.size())];
        const std::vector<double>& mean = means[cluster];
        for (int y = static_cast<int>(box.y); y < static_cast<int>(box.y + box.h); ++y)
            for (int x = static_cast<int>(box.x); x < static_cast<int>(box.x + box.w); ++x)
                for (int c = 0; c < spec.channels; ++c)
                    scene.features.at(y, x, c) = mean[c] + rng.normal(0.0, spec.noise_sd);

        scene.ground_truth.push_back({box, next_annotation_id++, cluster});
    }
    if (scene.ground_truth.empty())
        throw std::runtime_error("generate_synthetic: failed to place any box");

    // candidates: ground truth plus two jittered copies per box
    for (const auto& g : scene.ground_truth) {
        scene.candidates.push_back({g.box, candidate_quality(g.box, scene.ground_truth)});
        for (int j = 0; j < 2; ++j) {
            Box jb = jitter_box(g.box, rng);
            scene.candidates.push_back({jb, candidate_quality(jb, scene.ground_truth)});
        }
    }
    return scene;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSceneSpec& spec) {
    if (spec.n_scenes < 1 || spec.map_h < 1 || spec.map_w < 1 || spec.channels < 1 ||
        spec.n_clusters_in < 1 || spec.cluster_sep <= 0.0 || spec.boxes_min < 1 ||
        spec.boxes_max < spec.boxes_min)
        throw std::invalid_argument("generate_synthetic: invalid spec");

    Rng rng(derive_seed(spec.seed, 0x73796e7468ull));
    SyntheticDataset ds;
    ds.cluster_means = draw_cluster_means(spec.n_clusters_in, spec.n_clusters_ood, spec.channels,
                                          spec.cluster_sep, rng);

    std::vector<int> in_pool(spec.n_clusters_in);
    for (int i = 0; i < spec.n_clusters_in; ++i) in_pool[i] = i;
    std::vector<int> ood_pool(spec.n_clusters_ood);
    for (int i = 0; i < spec.n_clusters_ood; ++i) ood_pool[i] = spec.n_clusters_in + i;

    int n_test = std::max(1, spec.n_scenes / 4);
    int next_annotation = 1;
    int image_id = 0;
    for (int i = 0; i < spec.n_scenes; ++i)
        ds.train.push_back(make_scene(image_id++, next_annotation, spec, ds.cluster_means, in_pool, rng));
    for (int i = 0; i < n_test; ++i)
        ds.test_in.push_back(make_scene(image_id++, next_annotation, spec, ds.cluster_means, in_pool, rng));
    if (spec.n_clusters_ood > 0)
        for (int i = 0; i < n_test; ++i)
            ds.test_ood.push_back(
                make_scene(image_id++, next_annotation, spec, ds.cluster_means, ood_pool, rng));
    return ds;
}

}  // namespace ssos
