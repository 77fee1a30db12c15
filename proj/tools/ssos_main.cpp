#include <cstdio>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssos/feature_store.hpp"
#include "ssos/harness.hpp"
#include "ssos/metrics.hpp"
#include "ssos/pipeline.hpp"
#include "ssos/synth.hpp"

namespace {

using namespace ssos;

void write_scene_files(const std::vector<Scene>& scenes, const std::string& prefix,
                       const std::string& split) {
    std::vector<FeatureMap> maps;
    std::vector<FeatureIndexEntry> index;
    for (const auto& s : scenes) {
        maps.push_back(s.features);
        index.push_back({s.image_id, -1});
    }
    write_map_store(prefix + "_" + split + "_features.ofm", maps, index);
    atomic_write_text(prefix + "_" + split + "_scenes.json", scenes_to_json(scenes));
}

std::vector<Scene> load_scene_files(const std::string& scenes_path,
                                    const std::string& features_path) {
    CocoLoadResult loaded = load_coco_annotations(scenes_path);
    if (loaded.skipped > 0)
        std::cerr << "warning: skipped " << loaded.skipped << " malformed annotations\n";
    attach_feature_maps(loaded.scenes, features_path);
    return loaded.scenes;
}

struct ConfigFlags {
    std::string config_path;
    std::optional<std::string> mode;
    std::optional<int> k_pseudo, epochs, sample_count, embed_dim, batch_scenes;
    std::optional<double> alpha, beta, gamma, learning_rate;
    std::optional<uint64_t> seed;

    void add_to(CLI::App* cmd, bool with_grid_axes = true) {
        cmd->add_option("--config", config_path, "TrainConfig JSON file");
        cmd->add_option("--mode", mode, "ssos or ffs");
        if (with_grid_axes) {
            cmd->add_option("--k", k_pseudo, "number of pseudo-classes");
            cmd->add_option("--samples", sample_count, "outlier sampling size");
        }
        cmd->add_option("--epochs", epochs);
        cmd->add_option("--embed-dim", embed_dim);
        cmd->add_option("--batch-scenes", batch_scenes);
        cmd->add_option("--alpha", alpha);
        cmd->add_option("--beta", beta);
        cmd->add_option("--gamma", gamma);
        cmd->add_option("--lr", learning_rate);
        cmd->add_option("--seed", seed);
    }

    TrainConfig resolve() const {
        TrainConfig cfg;
        if (!config_path.empty())
            cfg = train_config_from_json(read_text(config_path));
        if (mode) {
            SynthMode m = synth_mode_from_string(*mode);
            if (config_path.empty())
                cfg = default_train_config(m);  // applies the per-mode sampling default
            else
                cfg.mode = m;
        }
        if (k_pseudo) cfg.k_pseudo = *k_pseudo;
        if (epochs) cfg.epochs = *epochs;
        if (sample_count) cfg.sample_count = *sample_count;
        if (embed_dim) cfg.embed_dim = *embed_dim;
        if (batch_scenes) cfg.batch_scenes = *batch_scenes;
        if (alpha) cfg.alpha = *alpha;
        if (beta) cfg.beta = *beta;
        if (gamma) cfg.gamma = *gamma;
        if (learning_rate) cfg.sgd.learning_rate = *learning_rate;
        if (seed) cfg.seed = *seed;
        return cfg;
    }
};

int run_synth(const SyntheticSceneSpec& spec, const std::string& prefix) {
    SyntheticDataset ds = generate_synthetic(spec);
    write_scene_files(ds.train, prefix, "train");
    write_scene_files(ds.test_in, prefix, "test_id");
    write_scene_files(ds.test_ood, prefix, "test_ood");
    return 0;
}

int run_train(const ConfigFlags& flags, const std::string& scenes_path,
              const std::string& features_path, const std::string& out_path,
              const std::string& labels_path) {
    TrainConfig cfg = flags.resolve();
    std::vector<Scene> scenes = load_scene_files(scenes_path, features_path);
    TrainResult result = train(scenes, cfg);
    save_model(result.model, out_path);
    if (!labels_path.empty()) write_pseudo_label_csv(labels_path, result.pseudo_labels);
    return 0;
}

int run_infer(const std::string& bundle_path, const std::string& scenes_path,
              const std::string& features_path, const std::string& out_path) {
    Model model = load_model(bundle_path);
    std::vector<Scene> scenes = load_scene_files(scenes_path, features_path);
    std::vector<DetectionRecord> records = infer(model, scenes);
    atomic_write_text(out_path, records_to_json(records));
    return 0;
}

int run_eval(const std::string& records_path, const std::string& gt_path,
             const std::string& ood_records_path, const std::string& ood_gt_path,
             const std::string& json_path, const std::string& csv_path) {
    std::vector<DetectionRecord> records = records_from_json(read_text(records_path));
    std::vector<ImageGroundTruth> gt = ground_truth_of(load_coco_annotations(gt_path).scenes);

    std::vector<DetectionRecord> ood_records;
    std::vector<ImageGroundTruth> ood_gt;
    bool have_ood = !ood_records_path.empty();
    if (have_ood) {
        if (ood_gt_path.empty()) throw std::runtime_error("--ood-records requires --ood-gt");
        ood_records = records_from_json(read_text(ood_records_path));
        ood_gt = ground_truth_of(load_coco_annotations(ood_gt_path).scenes);
    }
    MetricReport report = evaluate(records, gt, have_ood ? &ood_records : nullptr,
                                   have_ood ? &ood_gt : nullptr);
    if (!report_is_finite(report)) throw std::runtime_error("eval: non-finite metric value");
    if (!json_path.empty()) atomic_write_text(json_path, report_to_json(report));
    if (!csv_path.empty()) atomic_write_text(csv_path, report_to_csv(report));
    return 0;
}

struct SweepCell {
    int k_pseudo;
    int sample_count;
    MetricReport report;
};

int run_sweep(const ConfigFlags& flags, const std::string& scenes_path,
              const std::string& features_path, const std::string& test_scenes_path,
              const std::string& test_features_path, const std::string& ood_scenes_path,
              const std::string& ood_features_path, std::vector<int> ks,
              std::vector<int> sample_counts, const std::string& out_path) {
    std::vector<Scene> train_scenes = load_scene_files(scenes_path, features_path);
    std::vector<Scene> test_scenes = load_scene_files(test_scenes_path, test_features_path);
    std::vector<Scene> ood_scenes = load_scene_files(ood_scenes_path, ood_features_path);
    std::vector<ImageGroundTruth> test_gt = ground_truth_of(test_scenes);
    std::vector<ImageGroundTruth> ood_gt = ground_truth_of(ood_scenes);

    TrainConfig base = flags.resolve();
    std::vector<std::pair<int, int>> grid;
    for (int k : ks)
        for (int s : sample_counts) grid.emplace_back(k, s);

    auto run_cell = [&](size_t cell_index) {
        TrainConfig cfg = base;
        cfg.k_pseudo = grid[cell_index].first;
        cfg.sample_count = grid[cell_index].second;
        cfg.seed = base.seed ^ static_cast<uint64_t>(cell_index);  // independent per-cell streams
        TrainResult result = train(train_scenes, cfg);
        std::vector<DetectionRecord> id_records = infer(result.model, test_scenes);
        std::vector<DetectionRecord> ood_records = infer(result.model, ood_scenes);
        SweepCell cell;
        cell.k_pseudo = cfg.k_pseudo;
        cell.sample_count = cfg.sample_count;
        cell.report = evaluate(id_records, test_gt, &ood_records, &ood_gt);
        return cell;
    };

    // cells are seed-isolated, so results do not depend on scheduling; the
    // thread cap only bounds how many run at once
    std::vector<SweepCell> cells(grid.size());
    size_t cap = static_cast<size_t>(thread_cap());
    if (cap <= 1) {
        for (size_t i = 0; i < grid.size(); ++i) cells[i] = run_cell(i);
    } else {
        for (size_t start = 0; start < grid.size(); start += cap) {
            size_t end = std::min(grid.size(), start + cap);
            std::vector<std::future<SweepCell>> futures;
            for (size_t i = start; i < end; ++i)
                futures.push_back(std::async(std::launch::async, run_cell, i));
            for (size_t i = start; i < end; ++i) cells[i] = futures[i - start].get();
        }
    }

    std::string csv = "k_pseudo,sample_count,ar10,ar100,auroc,fpr95\n";
    for (const auto& cell : cells) {
        auto field = [](const std::optional<double>& v) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.17g", v ? *v : -1.0);
            return std::string(buf);
        };
        auto ood_ar = [&](int k) -> std::optional<double> {
            auto it = cell.report.ood_ar_at.find(k);
            return it == cell.report.ood_ar_at.end() ? std::nullopt : it->second;
        };
        if (!report_is_finite(cell.report)) throw std::runtime_error("sweep: non-finite metric");
        csv += std::to_string(cell.k_pseudo) + "," + std::to_string(cell.sample_count) + "," +
               field(ood_ar(10)) + "," + field(ood_ar(100)) + "," + field(cell.report.auroc) +
               "," + field(cell.report.fpr95) + "\n";
    }
    atomic_write_text(out_path, csv);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"class-agnostic object-level anomaly detection via outlier synthesis"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic feature dataset");
    SyntheticSceneSpec spec;
    std::string prefix = "synthetic";
    synth->add_option("--out-prefix", prefix, "output file prefix");
    synth->add_option("--scenes", spec.n_scenes);
    synth->add_option("--map-h", spec.map_h);
    synth->add_option("--map-w", spec.map_w);
    synth->add_option("--channels", spec.channels);
    synth->add_option("--clusters-in", spec.n_clusters_in);
    synth->add_option("--clusters-ood", spec.n_clusters_ood);
    synth->add_option("--sep", spec.cluster_sep);
    synth->add_option("--noise-sd", spec.noise_sd);
    synth->add_option("--boxes-min", spec.boxes_min);
    synth->add_option("--boxes-max", spec.boxes_max);
    synth->add_option("--seed", spec.seed);

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model bundle");
    ConfigFlags train_flags;
    std::string train_scenes, train_features, bundle_out, labels_out;
    train_cmd->add_option("--scenes", train_scenes)->required();
    train_cmd->add_option("--features", train_features)->required();
    train_cmd->add_option("--out", bundle_out)->required();
    train_cmd->add_option("--dump-pseudo-labels", labels_out, "CSV of object_id,label");
    train_flags.add_to(train_cmd);

    // infer
    auto* infer_cmd = app.add_subcommand("infer", "score candidate boxes with a trained bundle");
    std::string infer_bundle, infer_scenes, infer_features, records_out;
    infer_cmd->add_option("--bundle", infer_bundle)->required();
    infer_cmd->add_option("--scenes", infer_scenes)->required();
    infer_cmd->add_option("--features", infer_features)->required();
    infer_cmd->add_option("--out", records_out)->required();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "compute detection and anomaly metrics");
    std::string eval_records, eval_gt, eval_ood_records, eval_ood_gt, report_json, report_csv;
    eval_cmd->add_option("--records", eval_records)->required();
    eval_cmd->add_option("--gt", eval_gt)->required();
    eval_cmd->add_option("--ood-records", eval_ood_records);
    eval_cmd->add_option("--ood-gt", eval_ood_gt);
    eval_cmd->add_option("--json", report_json);
    eval_cmd->add_option("--csv", report_csv);

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "grid over k_pseudo and sample_count");
    ConfigFlags sweep_flags;
    std::string sweep_scenes, sweep_features, sweep_test_scenes, sweep_test_features;
    std::string sweep_ood_scenes, sweep_ood_features, sweep_out;
    std::vector<int> sweep_ks{5}, sweep_samples{10000};
    sweep_cmd->add_option("--scenes", sweep_scenes)->required();
    sweep_cmd->add_option("--features", sweep_features)->required();
    sweep_cmd->add_option("--test-scenes", sweep_test_scenes)->required();
    sweep_cmd->add_option("--test-features", sweep_test_features)->required();
    sweep_cmd->add_option("--ood-scenes", sweep_ood_scenes)->required();
    sweep_cmd->add_option("--ood-features", sweep_ood_features)->required();
    sweep_cmd->add_option("--k", sweep_ks, "pseudo-class counts")->delimiter(',');
    sweep_cmd->add_option("--samples", sweep_samples, "sampling sizes")->delimiter(',');
    sweep_cmd->add_option("--out", sweep_out)->required();
    sweep_flags.add_to(sweep_cmd, /*with_grid_axes=*/false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return run_synth(spec, prefix);
        if (train_cmd->parsed())
            return run_train(train_flags, train_scenes, train_features, bundle_out, labels_out);
        if (infer_cmd->parsed())
            return run_infer(infer_bundle, infer_scenes, infer_features, records_out);
        if (eval_cmd->parsed())
            return run_eval(eval_records, eval_gt, eval_ood_records, eval_ood_gt, report_json,
                            report_csv);
        if (sweep_cmd->parsed())
            return run_sweep(sweep_flags, sweep_scenes, sweep_features, sweep_test_scenes,
                             sweep_test_features, sweep_ood_scenes, sweep_ood_features, sweep_ks,
                             sweep_samples, sweep_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
