#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ssos/metrics.hpp"
#include "ssos/rng.hpp"

using namespace ssos;

namespace {

DetectionRecord det(int image_id, Box box, double score) {
    DetectionRecord r;
    r.image_id = image_id;
    r.box = box;
    r.score = score;
    return r;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("average recall basics") {
    std::vector<ImageGroundTruth> gt{{0, {{0, 0, 10, 10}}}};
    CHECK(average_recall({det(0, {0, 0, 10, 10}, 0.9)}, gt, 100) == doctest::Approx(1.0));
    CHECK(average_recall({}, gt, 100) == doctest::Approx(0.0));

    // IoU exactly 60/100: matched at thresholds 0.50, 0.55, 0.60
    CHECK(average_recall({det(0, {0, 0, 6, 10}, 0.9)}, gt, 100) == doctest::Approx(0.3));

    CHECK_THROWS_AS(average_recall({}, {{0, {}}}, 100), std::invalid_argument);
}

TEST_CASE("average recall caps detections per image and is monotone in max_dets") {
    std::vector<ImageGroundTruth> gt{{0, {{0, 0, 4, 4}, {10, 10, 4, 4}}}};
    std::vector<DetectionRecord> dets{
        det(0, {20, 20, 4, 4}, 0.99),  // top-scored miss
        det(0, {0, 0, 4, 4}, 0.5),
        det(0, {10, 10, 4, 4}, 0.4),
    };
    double ar1 = average_recall(dets, gt, 1);
    double ar2 = average_recall(dets, gt, 2);
    double ar3 = average_recall(dets, gt, 3);
    CHECK(ar1 == doctest::Approx(0.0));
    CHECK(ar2 == doctest::Approx(0.5));
    CHECK(ar3 == doctest::Approx(1.0));
    CHECK(ar1 <= ar2);
    CHECK(ar2 <= ar3);
}

TEST_CASE("average recall only depends on the score ordering") {
    Rng rng(31);
    std::vector<ImageGroundTruth> gt;
    std::vector<DetectionRecord> dets;
    for (int img = 0; img < 5; ++img) {
        ImageGroundTruth g;
        g.image_id = img;
        for (int b = 0; b < 3; ++b) {
            Box box{rng.uniform(0, 40), rng.uniform(0, 40), rng.uniform(3, 10), rng.uniform(3, 10)};
            g.boxes.push_back(box);
            Box near{box.x + rng.uniform(-1, 1), box.y + rng.uniform(-1, 1), box.w, box.h};
            dets.push_back(det(img, near, rng.uniform(0.1, 0.9)));
        }
        gt.push_back(g);
    }
    double base = average_recall(dets, gt, 2);
    std::vector<DetectionRecord> transformed = dets;
    for (auto& d : transformed) d.score = std::exp(3.0 * d.score) + 1.0;  // strictly monotone
    CHECK(average_recall(transformed, gt, 2) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("ar by size bins") {
    // 40x40 = 1600 > 32^2: M ; 10x10 = 100: S ; 200x200: L
    std::vector<ImageGroundTruth> gt_large{{0, {{0, 0, 200, 200}}}};
    auto by_size = ar_by_size({det(0, {0, 0, 200, 200}, 0.9)}, gt_large, 100);
    CHECK(by_size.at("L").has_value());
    CHECK(*by_size.at("L") == doctest::Approx(1.0));
    CHECK_FALSE(by_size.at("S").has_value());
    CHECK_FALSE(by_size.at("M").has_value());

    // area 1000 (about 31.6^2) falls in bin S
    std::vector<ImageGroundTruth> gt_s{{0, {{0, 0, 25, 40}}}};
    auto s_bins = ar_by_size({det(0, {0, 0, 25, 40}, 0.9)}, gt_s, 100);
    CHECK(s_bins.at("S").has_value());
    CHECK(*s_bins.at("S") == doctest::Approx(1.0));

    // mixed fixture agrees with per-bin re-evaluation
    std::vector<ImageGroundTruth> mixed{{0, {{0, 0, 10, 10}, {20, 20, 50, 50}, {100, 100, 120, 120}}}};
    std::vector<DetectionRecord> dets{det(0, {0, 0, 10, 10}, 0.9), det(0, {20, 20, 50, 50}, 0.8),
                                      det(0, {100, 100, 60, 120}, 0.7)};
    auto bins = ar_by_size(dets, mixed, 100);
    CHECK(*bins.at("S") == doctest::Approx(average_recall(dets, {{0, {{0, 0, 10, 10}}}}, 100)));
    CHECK(*bins.at("M") == doctest::Approx(average_recall(dets, {{0, {{20, 20, 50, 50}}}}, 100)));
    CHECK(*bins.at("L") ==
          doctest::Approx(average_recall(dets, {{0, {{100, 100, 120, 120}}}}, 100)));
}

TEST_CASE("f1 optimal threshold") {
    std::vector<ImageGroundTruth> gt{{0, {{0, 0, 10, 10}}}};
    CHECK(f1_optimal_threshold({det(0, {0, 0, 10, 10}, 0.8)}, gt) == doctest::Approx(0.8));
    CHECK(f1_optimal_threshold({det(0, {0, 0, 10, 10}, 0.9), det(0, {50, 50, 5, 5}, 0.1)}, gt) ==
          doctest::Approx(0.9));
    CHECK(f1_optimal_threshold({}, gt) == 0.0);
    CHECK_THROWS_AS(f1_optimal_threshold({det(0, {0, 0, 1, 1}, 0.5)}, gt, 0.0),
                    std::invalid_argument);

    // five-detection fixture against a brute-force sweep
    std::vector<ImageGroundTruth> gt2{{0, {{0, 0, 10, 10}, {20, 0, 10, 10}}},
                                      {1, {{5, 5, 8, 8}}}};
    std::vector<DetectionRecord> dets{
        det(0, {0, 0, 10, 10}, 0.95), det(0, {20, 1, 10, 10}, 0.7), det(0, {40, 40, 5, 5}, 0.65),
        det(1, {5, 5, 8, 8}, 0.5),    det(1, {30, 30, 4, 4}, 0.2),
    };
    double got = f1_optimal_threshold(dets, gt2);

    // oracle: try every cutoff, count TP/FP/FN directly
    double best_f1 = -1, best_cut = 0;
    std::vector<double> cuts;
    for (const auto& d : dets) cuts.push_back(d.score);
    std::sort(cuts.begin(), cuts.end(), std::greater<>());
    for (double cut : cuts) {
        int tp = 0, kept = 0;
        for (const auto& img : gt2) {
            std::vector<bool> taken(img.boxes.size(), false);
            std::vector<const DetectionRecord*> list;
            for (const auto& d : dets)
                if (d.image_id == img.image_id && d.score >= cut) list.push_back(&d);
            std::sort(list.begin(), list.end(),
                      [](auto* a, auto* b) { return a->score > b->score; });
            for (auto* d : list) {
                int best = -1;
                double bv = 0.5;
                for (size_t g = 0; g < img.boxes.size(); ++g) {
                    if (taken[g]) continue;
                    double v = iou(d->box, img.boxes[g]);
                    if (v >= bv && (best < 0 || v > bv)) {
                        bv = v;
                        best = static_cast<int>(g);
                    }
                }
                if (best >= 0) {
                    taken[best] = true;
                    ++tp;
                }
            }
        }
        for (const auto& d : dets)
            if (d.score >= cut) ++kept;
        int fp = kept - tp;
        int fn = 3 - tp;
        double f1 = 2.0 * tp / (2.0 * tp + fp + fn);
        if (f1 > best_f1) {
            best_f1 = f1;
            best_cut = cut;
        }
    }
    CHECK(got == doctest::Approx(best_cut));

    // permutation invariance
    std::vector<DetectionRecord> shuffled{dets[3], dets[0], dets[4], dets[2], dets[1]};
    CHECK(f1_optimal_threshold(shuffled, gt2) == doctest::Approx(got));
}

TEST_CASE("auroc") {
    CHECK(auroc({2.0, 3.0}, {0.0, 1.0}) == doctest::Approx(1.0));
    CHECK(auroc({1.0, 2.0}, {1.0, 2.0}) == doctest::Approx(0.5));
    CHECK(auroc({0.9, 0.4}, {0.5, 0.1}) == doctest::Approx(0.75));
    CHECK_THROWS_AS(auroc({}, {1.0}), std::invalid_argument);

    // complement identity holds exactly under the tie convention
    Rng rng(3);
    std::vector<double> pos, neg;
    for (int i = 0; i < 30; ++i) pos.push_back(std::round(rng.uniform() * 10) / 10.0);
    for (int i = 0; i < 20; ++i) neg.push_back(std::round(rng.uniform() * 10) / 10.0);
    CHECK(auroc(pos, neg) + auroc(neg, pos) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("threshold keeping fraction") {
    std::vector<double> lam;
    for (int i = 1; i <= 20; ++i) lam.push_back(i * 5 / 100.0);
    CHECK(threshold_keeping_fraction(lam, 0.95) == 10 / 100.0);
    CHECK(threshold_keeping_fraction({0.7, 0.7, 0.7}, 0.95) == 0.7);
    CHECK(threshold_keeping_fraction({0.42}, 0.95) == 0.42);
}

TEST_CASE("fpr at 95 tpr") {
    std::vector<double> pos, neg;
    for (int i = 0; i < 40; ++i) pos.push_back(1.0 + i * 0.01);
    for (int i = 0; i < 40; ++i) neg.push_back(-1.0 - i * 0.01);
    CHECK(fpr_at_95_tpr(pos, neg) == doctest::Approx(0.0));

    CHECK(fpr_at_95_tpr(pos, pos) >= 0.95);

    // 20 positives / 10 negatives vs a sorted-scan oracle
    Rng rng(9);
    std::vector<double> p, n;
    for (int i = 0; i < 20; ++i) p.push_back(rng.normal(1.0, 1.0));
    for (int i = 0; i < 10; ++i) n.push_back(rng.normal(-1.0, 1.0));
    double got = fpr_at_95_tpr(p, n);
    // oracle: walk distinct positive values descending, pick the largest
    // keeping >= 95% of positives, count negatives at or above it
    std::vector<double> sorted = p;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double thresh = sorted.back();
    for (double cand : sorted) {
        int keep = 0;
        for (double v : p)
            if (v >= cand) ++keep;
        if (keep >= 19) {  // ceil(0.95 * 20)
            thresh = cand;
            break;
        }
    }
    int above = 0;
    for (double v : n)
        if (v >= thresh) ++above;
    CHECK(got == doctest::Approx(static_cast<double>(above) / 10.0));
    CHECK_THROWS_AS(fpr_at_95_tpr({}, {1.0}), std::invalid_argument);
}

TEST_CASE("evaluate assembles the full report") {
    std::vector<ImageGroundTruth> gt{{0, {{0, 0, 10, 10}}}, {1, {{0, 0, 10, 10}}}};
    std::vector<DetectionRecord> id_records{det(0, {0, 0, 10, 10}, 0.9),
                                            det(1, {0, 0, 10, 10}, 0.8)};
    id_records[0].uncertainty = 0.9;
    id_records[1].uncertainty = 0.85;

    std::vector<ImageGroundTruth> ood_gt{{2, {{0, 0, 10, 10}}}};
    std::vector<DetectionRecord> ood_records{det(2, {0, 0, 10, 10}, 0.9)};
    ood_records[0].uncertainty = 0.1;

    MetricReport r = evaluate(id_records, gt, &ood_records, &ood_gt);
    CHECK(r.ar_at.at(100) == doctest::Approx(1.0));
    CHECK(r.auroc.has_value());
    CHECK(*r.auroc == doctest::Approx(1.0));
    CHECK(*r.fpr95 == doctest::Approx(0.0));
    CHECK(*r.ood_flag_recall == doctest::Approx(1.0));
    CHECK(*r.ood_ar_at.at(100) == doctest::Approx(1.0));
    CHECK(report_is_finite(r));

    std::string json = report_to_json(r);
    CHECK(json.find("\"auroc\": 1.0") != std::string::npos);
    std::string csv = report_to_csv(r);
    CHECK(csv.rfind("metric,value", 0) == 0);
    CHECK(csv.find("arM,-1") != std::string::npos);  // undefined bin sentinel
}

}  // TEST_SUITE
