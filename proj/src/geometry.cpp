#include "ssos/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ssos {

bool Box::valid() const {
    return w >= 0.0 && h >= 0.0 && std::isfinite(x) && std::isfinite(y) && std::isfinite(w) &&
           std::isfinite(h);
}

FeatureMap FeatureMap::zeros(int h, int w, int c) {
    FeatureMap m;
    m.height = h;
    m.width = w;
    m.channels = c;
    m.data.assign(static_cast<size_t>(h) * w * c, 0.0);
    return m;
}

double iou(const Box& a, const Box& b) {
    double ix = std::max(a.x, b.x);
    double iy = std::max(a.y, b.y);
    double ix2 = std::min(a.x + a.w, b.x + b.w);
    double iy2 = std::min(a.y + a.h, b.y + b.h);
    double iw = std::max(0.0, ix2 - ix);
    double ih = std::max(0.0, iy2 - iy);
    double inter = iw * ih;
    double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

double centreness_target(double px, double py, const Box& box) {
    double l = px - box.x;
    double r = box.x + box.w - px;
    double t = py - box.y;
    double b = box.y + box.h - py;
    if (l < 0.0 || r < 0.0 || t < 0.0 || b < 0.0)
        throw std::invalid_argument("centreness_target: point outside box");
    double hx = std::max(l, r) > 0.0 ? std::min(l, r) / std::max(l, r) : 0.0;
    double hy = std::max(t, b) > 0.0 ? std::min(t, b) / std::max(t, b) : 0.0;
    return std::sqrt(hx * hy);
}

namespace {

double box_l1(const Box& a, const Box& b, double ew, double eh) {
    return std::abs(a.x - b.x) / ew + std::abs(a.y - b.y) / eh + std::abs(a.w - b.w) / ew +
           std::abs(a.h - b.h) / eh;
}

}  // namespace

double rpn_loss(const std::vector<ScoredBox>& pred, const std::vector<ScoredBox>& target,
                const std::vector<bool>& matched, double extent_w, double extent_h) {
    if (pred.empty()) throw std::invalid_argument("rpn_loss: empty proposal list");
    if (pred.size() != target.size() || pred.size() != matched.size())
        throw std::invalid_argument("rpn_loss: length mismatch");
    double sum = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        sum += std::abs(pred[i].quality - target[i].quality);
        if (matched[i]) sum += box_l1(pred[i].box, target[i].box, extent_w, extent_h);
    }
    return sum / static_cast<double>(pred.size());
}

double bbox_loss(const std::vector<ScoredBox>& pred, const std::vector<ScoredBox>& target,
                 double extent_w, double extent_h) {
    if (pred.empty()) throw std::invalid_argument("bbox_loss: empty proposal list");
    if (pred.size() != target.size()) throw std::invalid_argument("bbox_loss: length mismatch");
    double sum = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        sum += std::abs(pred[i].quality - target[i].quality);
        sum += box_l1(pred[i].box, target[i].box, extent_w, extent_h);
    }
    return sum / static_cast<double>(pred.size());
}

double fuse_score(const QualityTargets& q) {
    if (q.mask_quality)
        return std::cbrt(q.centreness * q.box_quality * *q.mask_quality);
    return std::sqrt(q.centreness * q.box_quality);
}

namespace {

double bilinear_at(const FeatureMap& map, double x, double y, int c) {
    x = std::clamp(x, 0.0, static_cast<double>(map.width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(map.height - 1));
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    int x1 = std::min(x0 + 1, map.width - 1);
    int y1 = std::min(y0 + 1, map.height - 1);
    double fx = x - x0;
    double fy = y - y0;
    double top = map.at(y0, x0, c) * (1.0 - fx) + map.at(y0, x1, c) * fx;
    double bot = map.at(y1, x0, c) * (1.0 - fx) + map.at(y1, x1, c) * fx;
    return top * (1.0 - fy) + bot * fy;
}

}  // namespace

FeatureMap roi_align(const FeatureMap& map, const Box& box, int out_h, int out_w,
                     int samples_per_bin) {
    if (out_h < 1 || out_w < 1 || samples_per_bin < 1)
        throw std::invalid_argument("roi_align: output dims and sample count must be >= 1");
    if (box.w <= 0.0 || box.h <= 0.0) throw std::invalid_argument("roi_align: zero-area box");
    if (map.empty()) throw std::invalid_argument("roi_align: empty feature map");

    FeatureMap out = FeatureMap::zeros(out_h, out_w, map.channels);
    double bin_w = box.w / out_w;
    double bin_h = box.h / out_h;
    double norm = 1.0 / (samples_per_bin * samples_per_bin);
    for (int by = 0; by < out_h; ++by) {
        for (int bx = 0; bx < out_w; ++bx) {
            for (int c = 0; c < map.channels; ++c) {
                double sum = 0.0;
                for (int sy = 0; sy < samples_per_bin; ++sy) {
                    double y = box.y + bin_h * (by + (sy + 0.5) / samples_per_bin);
                    for (int sx = 0; sx < samples_per_bin; ++sx) {
                        double x = box.x + bin_w * (bx + (sx + 0.5) / samples_per_bin);
                        sum += bilinear_at(map, x, y, c);
                    }
                }
                out.at(by, bx, c) = sum * norm;
            }
        }
    }
    return out;
}

std::vector<double> flatten_pooled(const FeatureMap& pooled) { return pooled.data; }

}  // namespace ssos
