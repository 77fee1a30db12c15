#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssos/detections.hpp"

namespace ssos {

// Class-agnostic COCO-style average recall: per image keep the top max_dets
// detections by score, greedily match against ground truth at IoU
// thresholds 0.50:0.05:0.95, and average recall over the 10 thresholds.
double average_recall(const std::vector<DetectionRecord>& detections,
                      const std::vector<ImageGroundTruth>& gt, int max_dets);

// average_recall restricted to ground truth in the COCO area bins
// S (< 32^2), M (32^2..96^2), L (> 96^2). Empty bins are reported as
// nullopt rather than 0.
std::map<std::string, std::optional<double>> ar_by_size(
    const std::vector<DetectionRecord>& detections, const std::vector<ImageGroundTruth>& gt,
    int max_dets);

// The detection-score cutoff maximising F1 at the given IoU threshold;
// candidate cutoffs are the distinct detection scores, ties take the larger
// cutoff. Returns 0 when there are no detections.
double f1_optimal_threshold(const std::vector<DetectionRecord>& detections,
                            const std::vector<ImageGroundTruth>& gt, double iou_thresh = 0.5);

// Probability that a random positive outranks a random negative, ties 0.5.
double auroc(const std::vector<double>& pos_scores, const std::vector<double>& neg_scores);

// Fraction of negatives at or above the largest threshold that keeps at
// least 95% of the positives.
double fpr_at_95_tpr(const std::vector<double>& pos_scores, const std::vector<double>& neg_scores);

// The largest observed score v such that #{s >= v} / n >= fraction.
double threshold_keeping_fraction(std::vector<double> scores, double fraction);

struct MetricReport {
    std::map<int, double> ar_at;                           // in-distribution AR@{1,10,100}
    std::map<std::string, std::optional<double>> ar_size;  // S, M, L
    double f1_threshold = 0.0;
    std::optional<double> auroc;
    std::optional<double> fpr95;
    std::optional<double> uncertainty_threshold;  // 95% in-distribution cutoff
    std::optional<double> ood_flag_recall;        // fraction of OoD detections flagged
    std::map<int, std::optional<double>> ood_ar_at;  // anomaly AR on the OoD set
    int n_images = 0;
    int n_gt = 0;
    int n_detections = 0;
    int n_ood_images = 0;
    int n_ood_gt = 0;
    int n_ood_detections = 0;
};

// Full evaluation protocol: in-distribution AR metrics, F1-optimal
// confidence cutoff, and (when OoD inputs are given) the 95%-recall
// uncertainty threshold, AUROC/FPR95 of lambda, and anomaly AR over the
// flagged OoD detections.
MetricReport evaluate(const std::vector<DetectionRecord>& id_records,
                      const std::vector<ImageGroundTruth>& id_gt,
                      const std::vector<DetectionRecord>* ood_records = nullptr,
                      const std::vector<ImageGroundTruth>* ood_gt = nullptr);

std::string report_to_json(const MetricReport& report);
std::string report_to_csv(const MetricReport& report);  // one row per metric, -1 for undefined
bool report_is_finite(const MetricReport& report);

}  // namespace ssos
