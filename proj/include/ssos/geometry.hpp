#pragma once

#include <optional>
#include <vector>

namespace ssos {

// Axis-aligned rectangle, top-left corner + width/height, feature-map units.
struct Box {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    double area() const { return w * h; }
    double cx() const { return x + 0.5 * w; }
    double cy() const { return y + 0.5 * h; }
    bool valid() const;
};

// Localization-quality scalars attached to a proposal or detection.
struct QualityTargets {
    double centreness = 0.0;
    double box_quality = 0.0;
    std::optional<double> mask_quality;
};

// Dense H x W x C grid, row-major, standing in for a backbone feature map.
struct FeatureMap {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    static FeatureMap zeros(int h, int w, int c);

    double at(int y, int x, int c) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    double& at(int y, int x, int c) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    bool empty() const { return data.empty(); }
};

struct ScoredBox {
    double quality = 0.0;  // centreness for RPN terms, box quality for bbox terms
    Box box;
};

double iou(const Box& a, const Box& b);

// FCOS-style centreness of a point inside `box`: 1 at the centre, 0 on any
// edge. Throws std::invalid_argument when the point lies outside the box.
double centreness_target(double px, double py, const Box& box);

// Mean over proposals of L1(centreness) + matched * L1(box params). Box
// params are compared as raw (x, y, w, h) divided by the given extents.
double rpn_loss(const std::vector<ScoredBox>& pred, const std::vector<ScoredBox>& target,
                const std::vector<bool>& matched, double extent_w = 1.0, double extent_h = 1.0);

// Mean over valid proposals of L1(box quality) + L1(box params).
double bbox_loss(const std::vector<ScoredBox>& pred, const std::vector<ScoredBox>& target,
                 double extent_w = 1.0, double extent_h = 1.0);

// Geometric mean of the 2 (or 3, with mask quality) quality scalars.
double fuse_score(const QualityTargets& q);

// Average-pooled bilinear sampling of `box` into an out_h x out_w x C grid.
// Bins partition the box uniformly; each bin averages samples_per_bin^2
// bilinear samples on a regular interior grid. Pixel (ix, iy) sits at
// continuous coordinate (ix, iy); samples outside the map are clamped.
FeatureMap roi_align(const FeatureMap& map, const Box& box, int out_h, int out_w,
                     int samples_per_bin);

// Row-major flattening of a pooled map into a single vector.
std::vector<double> flatten_pooled(const FeatureMap& pooled);

}  // namespace ssos
