#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ssos/anomaly.hpp"
#include "ssos/flow.hpp"
#include "ssos/gaussian.hpp"
#include "ssos/geometry.hpp"
#include "ssos/harness.hpp"
#include "ssos/metrics.hpp"
#include "ssos/pipeline.hpp"
#include "ssos/synth.hpp"
#include "ssos/upc.hpp"

namespace py = pybind11;
using namespace ssos;

namespace {

// generate -> train -> infer -> evaluate on one synthetic dataset; the
// convenience entry point for python-side experiments
py::dict synthetic_experiment(const std::string& mode, int k_pseudo, int epochs, int sample_count,
                              int n_scenes, uint64_t seed) {
    SyntheticSceneSpec spec;
    spec.n_scenes = n_scenes;
    spec.seed = seed;
    SyntheticDataset ds = generate_synthetic(spec);

    TrainConfig cfg = default_train_config(synth_mode_from_string(mode));
    cfg.k_pseudo = k_pseudo;
    cfg.epochs = epochs;
    cfg.sample_count = sample_count;
    cfg.seed = seed;
    TrainResult r = train(ds.train, cfg);

    std::vector<DetectionRecord> id_records = infer(r.model, ds.test_in);
    std::vector<DetectionRecord> ood_records = infer(r.model, ds.test_ood);
    std::vector<ImageGroundTruth> id_gt = ground_truth_of(ds.test_in);
    std::vector<ImageGroundTruth> ood_gt = ground_truth_of(ds.test_ood);
    MetricReport report = evaluate(id_records, id_gt, &ood_records, &ood_gt);

    py::dict out;
    out["auroc"] = report.auroc.value_or(0.0);
    out["fpr95"] = report.fpr95.value_or(1.0);
    out["ood_flag_recall"] = report.ood_flag_recall.value_or(0.0);
    out["ar100"] = report.ar_at.at(100);
    out["f1_threshold"] = report.f1_threshold;
    return out;
}

FeatureMap map_from_nested(const std::vector<std::vector<std::vector<double>>>& grid) {
    if (grid.empty() || grid[0].empty() || grid[0][0].empty())
        throw std::invalid_argument("feature map must be non-empty H x W x C");
    FeatureMap m = FeatureMap::zeros(static_cast<int>(grid.size()),
                                     static_cast<int>(grid[0].size()),
                                     static_cast<int>(grid[0][0].size()));
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            for (int c = 0; c < m.channels; ++c) m.at(y, x, c) = grid[y][x][c];
    return m;
}

}  // namespace

PYBIND11_MODULE(ssos, m) {
    m.doc() = "class-agnostic object-level anomaly detection via outlier synthesis";

    py::class_<Box>(m, "Box")
        .def(py::init<double, double, double, double>(), py::arg("x"), py::arg("y"), py::arg("w"),
             py::arg("h"))
        .def_readwrite("x", &Box::x)
        .def_readwrite("y", &Box::y)
        .def_readwrite("w", &Box::w)
        .def_readwrite("h", &Box::h)
        .def("area", &Box::area);

    m.def("iou", &iou, py::arg("a"), py::arg("b"));
    m.def("centreness_target", &centreness_target, py::arg("px"), py::arg("py"), py::arg("box"));
    m.def(
        "fuse_score",
        [](double centreness, double box_quality, std::optional<double> mask_quality) {
            QualityTargets q{centreness, box_quality, mask_quality};
            return fuse_score(q);
        },
        py::arg("centreness"), py::arg("box_quality"), py::arg("mask_quality") = py::none());
    m.def(
        "roi_align",
        [](const std::vector<std::vector<std::vector<double>>>& grid, const Box& box, int out_h,
           int out_w, int samples_per_bin) {
            FeatureMap pooled = roi_align(map_from_nested(grid), box, out_h, out_w, samples_per_bin);
            return flatten_pooled(pooled);
        },
        py::arg("feature_map"), py::arg("box"), py::arg("out_h") = 3, py::arg("out_w") = 3,
        py::arg("samples_per_bin") = 2, "pooled box features, flattened row-major");

    m.def("init_centres", &init_centres, py::arg("k"), py::arg("dim"), py::arg("seed"));
    m.def("assign_pseudo_label", &assign_pseudo_label, py::arg("z"), py::arg("centres"));
    m.def(
        "minibatch_kmeans",
        [](const std::vector<std::vector<double>>& features, int k, int batch_size, int iterations,
           uint64_t seed, std::optional<std::vector<std::vector<double>>> warm_start) {
            KmeansConfig cfg;
            cfg.k = k;
            cfg.batch_size = batch_size;
            cfg.iterations = iterations;
            cfg.seed = seed;
            PseudoLabelState s =
                minibatch_kmeans(features, cfg, warm_start ? &*warm_start : nullptr);
            return py::make_tuple(s.centres, s.assignments);
        },
        py::arg("features"), py::arg("k"), py::arg("batch_size") = 256, py::arg("iterations") = 10,
        py::arg("seed") = 0, py::arg("warm_start") = py::none(),
        "returns (centres, assignments)");
    m.def(
        "pcls_loss",
        [](const std::vector<double>& logits, int label) {
            PclsLoss l = pcls_loss(logits, label);
            return py::make_tuple(l.loss, l.grad);
        },
        py::arg("logits"), py::arg("label"), "returns (loss, grad)");

    py::class_<GaussianBank>(m, "GaussianBank")
        .def_readonly("means", &GaussianBank::means)
        .def_readonly("tied_cov", &GaussianBank::tied_cov)
        .def_readonly("active", &GaussianBank::active)
        .def_readonly("counts", &GaussianBank::counts)
        .def_readonly("ridge", &GaussianBank::ridge)
        .def_readonly("dim", &GaussianBank::dim);
    m.def("fit_gaussians", &fit_gaussians, py::arg("features"), py::arg("labels"),
          py::arg("num_classes"), py::arg("ridge_scale") = 1e-6);
    m.def("log_density", &log_density, py::arg("bank"), py::arg("k"), py::arg("v"));
    m.def("sample_virtual_outliers", &sample_virtual_outliers, py::arg("bank"), py::arg("k"),
          py::arg("n_samples"), py::arg("n_outliers"), py::arg("seed"));

    py::class_<CouplingFlow>(m, "CouplingFlow").def_readonly("dim", &CouplingFlow::dim);
    m.def("make_coupling_flow", &make_coupling_flow, py::arg("dim"), py::arg("n_layers") = 4,
          py::arg("hidden") = 32, py::arg("seed") = 0);
    m.def(
        "flow_forward",
        [](const CouplingFlow& flow, const std::vector<double>& v) {
            FlowResult r = flow_forward(flow, v);
            return py::make_tuple(r.latent, r.log_det);
        },
        py::arg("flow"), py::arg("v"), "returns (latent, log_det)");
    m.def("flow_inverse", &flow_inverse, py::arg("flow"), py::arg("latent"));
    m.def(
        "flow_nll",
        [](const CouplingFlow& flow, const std::vector<std::vector<double>>& batch) {
            return flow_nll(flow, batch);
        },
        py::arg("flow"), py::arg("batch"));
    m.def("sample_flow_outliers", &sample_flow_outliers, py::arg("flow"), py::arg("n_samples"),
          py::arg("n_outliers"), py::arg("seed"));

    m.def(
        "energy",
        [](const std::vector<double>& logits, const std::vector<double>& weights) {
            return energy(logits, EnergyWeights{weights});
        },
        py::arg("logits"), py::arg("weights"));

    m.def("auroc", &auroc, py::arg("pos_scores"), py::arg("neg_scores"));
    m.def("fpr_at_95_tpr", &fpr_at_95_tpr, py::arg("pos_scores"), py::arg("neg_scores"));
    m.def("threshold_keeping_fraction", &threshold_keeping_fraction, py::arg("scores"),
          py::arg("fraction") = 0.95);

    m.def("synthetic_experiment", &synthetic_experiment, py::arg("mode") = "ssos",
          py::arg("k_pseudo") = 5, py::arg("epochs") = 2, py::arg("sample_count") = 300,
          py::arg("n_scenes") = 60, py::arg("seed") = 0,
          "end-to-end train/infer/evaluate on a small synthetic dataset");
}
