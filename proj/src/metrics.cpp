#include "ssos/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ssos {

namespace {

constexpr double kAreaSmall = 32.0 * 32.0;
constexpr double kAreaMedium = 96.0 * 96.0;

std::vector<double> iou_thresholds() {
    std::vector<double> t;
    for (int i = 50; i <= 95; i += 5) t.push_back(i / 100.0);
    return t;
}

// detections of one image, sorted by descending score, capped at max_dets
std::vector<const DetectionRecord*> top_detections(const std::vector<DetectionRecord>& detections,
                                                   int image_id, int max_dets) {
    std::vector<const DetectionRecord*> out;
    for (const auto& d : detections)
        if (d.image_id == image_id) out.push_back(&d);
    std::stable_sort(out.begin(), out.end(),
                     [](const DetectionRecord* a, const DetectionRecord* b) {
                         return a->score > b->score;
                     });
    if (max_dets >= 0 && static_cast<int>(out.size()) > max_dets) out.resize(max_dets);
    return out;
}

// greedy COCO matching: detections in score order each take the highest-IoU
// unmatched ground truth with IoU >= thresh
int greedy_matches(const std::vector<const DetectionRecord*>& dets, const std::vector<Box>& gt,
                   double thresh) {
    std::vector<bool> taken(gt.size(), false);
    int matched = 0;
    for (const DetectionRecord* d : dets) {
        int best = -1;
        double best_iou = -1.0;
        for (size_t g = 0; g < gt.size(); ++g) {
            if (taken[g]) continue;
            double v = iou(d->box, gt[g]);
            if (v >= thresh && v > best_iou) {
                best_iou = v;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0) {
            taken[best] = true;
            ++matched;
        }
    }
    return matched;
}

double recall_over_thresholds(const std::vector<DetectionRecord>& detections,
                              const std::vector<ImageGroundTruth>& gt, int max_dets) {
    size_t total_gt = 0;
    for (const auto& img : gt) total_gt += img.boxes.size();
    if (total_gt == 0) throw std::invalid_argument("average_recall: no ground truth");

    double sum = 0.0;
    for (double t : iou_thresholds()) {
        size_t matched = 0;
        for (const auto& img : gt) {
            auto dets = top_detections(detections, img.image_id, max_dets);
            matched += greedy_matches(dets, img.boxes, t);
        }
        sum += static_cast<double>(matched) / static_cast<double>(total_gt);
    }
    return sum / 10.0;
}

}  // namespace

double average_recall(const std::vector<DetectionRecord>& detections,
                      const std::vector<ImageGroundTruth>& gt, int max_dets) {
    return recall_over_thresholds(detections, gt, max_dets);
}

std::map<std::string, std::optional<double>> ar_by_size(
    const std::vector<DetectionRecord>& detections, const std::vector<ImageGroundTruth>& gt,
    int max_dets) {
    std::map<std::string, std::optional<double>> out;
    auto in_bin = [](char name, double a) {
        if (name == 'S') return a < kAreaSmall;
        if (name == 'M') return a >= kAreaSmall && a <= kAreaMedium;
        return a > kAreaMedium;
    };
    for (char name : {'S', 'M', 'L'}) {
        std::vector<ImageGroundTruth> filtered;
        size_t total = 0;
        for (const auto& img : gt) {
            ImageGroundTruth f;
            f.image_id = img.image_id;
            for (const auto& b : img.boxes)
                if (in_bin(name, b.area())) f.boxes.push_back(b);
            total += f.boxes.size();
            filtered.push_back(std::move(f));
        }
        if (total == 0)
            out[std::string(1, name)] = std::nullopt;
        else
            out[std::string(1, name)] = recall_over_thresholds(detections, filtered, max_dets);
    }
    return out;
}

double f1_optimal_threshold(const std::vector<DetectionRecord>& detections,
                            const std::vector<ImageGroundTruth>& gt, double iou_thresh) {
    if (iou_thresh <= 0.0 || iou_thresh >= 1.0)
        throw std::invalid_argument("f1_optimal_threshold: iou_thresh must be in (0,1)");
    if (detections.empty()) return 0.0;

    size_t total_gt = 0;
    for (const auto& img : gt) total_gt += img.boxes.size();

    std::vector<double> cuts;
    for (const auto& d : detections) cuts.push_back(d.score);
    std::sort(cuts.begin(), cuts.end(), std::greater<>());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    double best_f1 = -1.0;
    double best_cut = 0.0;
    for (double cut : cuts) {  // descending, so ties keep the larger cutoff
        std::vector<DetectionRecord> kept;
        for (const auto& d : detections)
            if (d.score >= cut) kept.push_back(d);
        size_t tp = 0;
        for (const auto& img : gt) {
            auto dets = top_detections(kept, img.image_id, -1);
            tp += greedy_matches(dets, img.boxes, iou_thresh);
        }
        size_t fp = kept.size() - tp;
        size_t fn = total_gt - tp;
        double f1 = (2.0 * tp + fp + fn) > 0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
        if (f1 > best_f1) {
            best_f1 = f1;
            best_cut = cut;
        }
    }
    return best_cut;
}

double auroc(const std::vector<double>& pos_scores, const std::vector<double>& neg_scores) {
    if (pos_scores.empty() || neg_scores.empty())
        throw std::invalid_argument("auroc: empty score list");
    struct Item {
        double score;
        bool pos;
    };
    std::vector<Item> all;
    all.reserve(pos_scores.size() + neg_scores.size());
    for (double s : pos_scores) all.push_back({s, true});
    for (double s : neg_scores) all.push_back({s, false});
    std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

    // midrank sum of the positives (Mann-Whitney with ties counted 0.5)
    double rank_sum = 0.0;
    size_t i = 0;
    while (i < all.size()) {
        size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
        for (size_t t = i; t < j; ++t)
            if (all[t].pos) rank_sum += midrank;
        i = j;
    }
    double n_pos = static_cast<double>(pos_scores.size());
    double n_neg = static_cast<double>(neg_scores.size());
    double u = rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    return u / (n_pos * n_neg);
}

double threshold_keeping_fraction(std::vector<double> scores, double fraction) {
    if (scores.empty()) throw std::invalid_argument("threshold_keeping_fraction: empty input");
    std::sort(scores.begin(), scores.end(), std::greater<>());
    const double n = static_cast<double>(scores.size());
    // walk candidates from the largest observed value down; count >= candidate
    double best = scores.back();
    for (size_t i = 0; i < scores.size(); ++i) {
        double cand = scores[i];
        size_t count = i + 1;
        while (count < scores.size() && scores[count] == cand) ++count;  // include ties
        if (static_cast<double>(count) / n >= fraction) {
            best = cand;
            break;
        }
    }
    return best;
}

double fpr_at_95_tpr(const std::vector<double>& pos_scores, const std::vector<double>& neg_scores) {
    if (pos_scores.empty() || neg_scores.empty())
        throw std::invalid_argument("fpr_at_95_tpr: empty score list");
    double thresh = threshold_keeping_fraction(pos_scores, 0.95);
    size_t above = 0;
    for (double s : neg_scores)
        if (s >= thresh) ++above;
    return static_cast<double>(above) / static_cast<double>(neg_scores.size());
}

MetricReport evaluate(const std::vector<DetectionRecord>& id_records,
                      const std::vector<ImageGroundTruth>& id_gt,
                      const std::vector<DetectionRecord>* ood_records,
                      const std::vector<ImageGroundTruth>* ood_gt) {
    MetricReport report;
    report.n_images = static_cast<int>(id_gt.size());
    for (const auto& img : id_gt) report.n_gt += static_cast<int>(img.boxes.size());
    report.n_detections = static_cast<int>(id_records.size());

    for (int k : {1, 10, 100}) report.ar_at[k] = average_recall(id_records, id_gt, k);
    report.ar_size = ar_by_size(id_records, id_gt, 100);
    report.f1_threshold = f1_optimal_threshold(id_records, id_gt);

    if (ood_records && ood_gt) {
        report.n_ood_images = static_cast<int>(ood_gt->size());
        for (const auto& img : *ood_gt) report.n_ood_gt += static_cast<int>(img.boxes.size());
        report.n_ood_detections = static_cast<int>(ood_records->size());

        // in-distribution detections above the F1-optimal confidence cutoff
        std::vector<double> id_lambda;
        for (const auto& r : id_records)
            if (r.score >= report.f1_threshold) id_lambda.push_back(r.uncertainty);
        std::vector<double> ood_lambda;
        for (const auto& r : *ood_records) ood_lambda.push_back(r.uncertainty);

        if (!id_lambda.empty() && !ood_lambda.empty()) {
            report.auroc = auroc(id_lambda, ood_lambda);
            report.fpr95 = fpr_at_95_tpr(id_lambda, ood_lambda);
            double tau = threshold_keeping_fraction(id_lambda, 0.95);
            report.uncertainty_threshold = tau;

            std::vector<DetectionRecord> flagged;
            size_t n_flagged = 0;
            for (const auto& r : *ood_records)
                if (r.uncertainty < tau) {
                    flagged.push_back(r);
                    ++n_flagged;
                }
            report.ood_flag_recall =
                static_cast<double>(n_flagged) / static_cast<double>(ood_records->size());
            for (int k : {1, 10, 100}) {
                if (report.n_ood_gt == 0)
                    report.ood_ar_at[k] = std::nullopt;
                else
                    report.ood_ar_at[k] = average_recall(flagged, *ood_gt, k);
            }
        }
    }
    return report;
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) {
    if (!v) return nullptr;
    return *v;
}

void csv_row(std::ostringstream& os, const std::string& name, double v) {
    os << name << ",";
    std::ostringstream num;
    num.precision(17);
    num << v;
    os << num.str() << "\n";
}

void csv_row(std::ostringstream& os, const std::string& name, const std::optional<double>& v) {
    csv_row(os, name, v ? *v : -1.0);
}

}  // namespace

std::string report_to_json(const MetricReport& r) {
    nlohmann::json j;
    for (const auto& [k, v] : r.ar_at) j["ar"]["ar" + std::to_string(k)] = v;
    for (const auto& [name, v] : r.ar_size) j["ar"]["ar" + name] = opt_json(v);
    j["f1_threshold"] = r.f1_threshold;
    j["auroc"] = opt_json(r.auroc);
    j["fpr95"] = opt_json(r.fpr95);
    j["uncertainty_threshold"] = opt_json(r.uncertainty_threshold);
    j["ood_flag_recall"] = opt_json(r.ood_flag_recall);
    for (const auto& [k, v] : r.ood_ar_at) j["ood_ar"]["ar" + std::to_string(k)] = opt_json(v);
    j["counts"] = {{"images", r.n_images},
                   {"gt", r.n_gt},
                   {"detections", r.n_detections},
                   {"ood_images", r.n_ood_images},
                   {"ood_gt", r.n_ood_gt},
                   {"ood_detections", r.n_ood_detections}};
    return j.dump(2) + "\n";
}

std::string report_to_csv(const MetricReport& r) {
    std::ostringstream os;
    os << "metric,value\n";
    for (const auto& [k, v] : r.ar_at) csv_row(os, "ar" + std::to_string(k), v);
    for (const auto& [name, v] : r.ar_size) csv_row(os, "ar" + name, v);
    csv_row(os, "f1_threshold", r.f1_threshold);
    csv_row(os, "auroc", r.auroc);
    csv_row(os, "fpr95", r.fpr95);
    csv_row(os, "uncertainty_threshold", r.uncertainty_threshold);
    csv_row(os, "ood_flag_recall", r.ood_flag_recall);
    for (const auto& [k, v] : r.ood_ar_at) csv_row(os, "ood_ar" + std::to_string(k), v);
    csv_row(os, "n_images", r.n_images);
    csv_row(os, "n_gt", r.n_gt);
    csv_row(os, "n_detections", r.n_detections);
    csv_row(os, "n_ood_images", r.n_ood_images);
    csv_row(os, "n_ood_gt", r.n_ood_gt);
    csv_row(os, "n_ood_detections", r.n_ood_detections);
    return os.str();
}

bool report_is_finite(const MetricReport& r) {
    auto ok = [](double v) { return std::isfinite(v); };
    for (const auto& [k, v] : r.ar_at)
        if (!ok(v)) return false;
    for (const auto& [name, v] : r.ar_size)
        if (v && !ok(*v)) return false;
    if (!ok(r.f1_threshold)) return false;
    for (const auto& v : {r.auroc, r.fpr95, r.uncertainty_threshold, r.ood_flag_recall})
        if (v && !ok(*v)) return false;
    for (const auto& [k, v] : r.ood_ar_at)
        if (v && !ok(*v)) return false;
    return true;
}

}  // namespace ssos
