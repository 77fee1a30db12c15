#include "ssos/harness.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "ssos/feature_store.hpp"

namespace ssos {

using nlohmann::json;

void atomic_write_text(const std::string& path, const std::string& contents) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot open " + tmp);
        os << contents;
        if (!os) throw std::runtime_error("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::string read_text(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

namespace {

Box bbox_from_json(const json& arr) {
    if (!arr.is_array() || arr.size() != 4) throw std::runtime_error("bbox must be [x,y,w,h]");
    Box b{arr[0].get<double>(), arr[1].get<double>(), arr[2].get<double>(), arr[3].get<double>()};
    if (!b.valid()) throw std::runtime_error("bbox has negative or non-finite extent");
    return b;
}

json bbox_to_json(const Box& b) { return json::array({b.x, b.y, b.w, b.h}); }

}  // namespace

CocoLoadResult load_coco_annotations(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw std::runtime_error("annotations: malformed JSON in " + path + ": " + e.what());
    }
    if (!j.contains("images") || !j.contains("annotations"))
        throw std::runtime_error("annotations: missing images[] or annotations[] in " + path);

    CocoLoadResult result;
    std::map<int, size_t> scene_of_image;
    for (const auto& img : j.at("images")) {
        Scene scene;
        scene.image_id = img.at("id").get<int>();
        scene_of_image[scene.image_id] = result.scenes.size();
        result.scenes.push_back(std::move(scene));
    }
    for (const auto& ann : j.at("annotations")) {
        try {
            int image_id = ann.at("image_id").get<int>();
            auto it = scene_of_image.find(image_id);
            if (it == scene_of_image.end()) throw std::runtime_error("unknown image_id");
            AnnotatedBox box;
            box.box = bbox_from_json(ann.at("bbox"));
            box.annotation_id = ann.at("id").get<int>();
            if (ann.contains("cluster_id")) box.cluster_id = ann.at("cluster_id").get<int>();
            result.scenes[it->second].ground_truth.push_back(box);
        } catch (const std::exception&) {
            ++result.skipped;  // malformed annotation: skip, keep count
        }
    }
    if (j.contains("candidates")) {
        for (const auto& cand : j.at("candidates")) {
            int image_id = cand.at("image_id").get<int>();
            auto it = scene_of_image.find(image_id);
            if (it == scene_of_image.end())
                throw std::runtime_error("annotations: candidate with unknown image_id");
            CandidateBox cb;
            cb.box = bbox_from_json(cand.at("bbox"));
            cb.quality.centreness = cand.at("centreness").get<double>();
            cb.quality.box_quality = cand.at("box_quality").get<double>();
            if (cand.contains("mask_quality"))
                cb.quality.mask_quality = cand.at("mask_quality").get<double>();
            result.scenes[it->second].candidates.push_back(cb);
        }
    }
    return result;
}

std::string scenes_to_json(const std::vector<Scene>& scenes) {
    json j;
    j["images"] = json::array();
    j["annotations"] = json::array();
    j["candidates"] = json::array();
    for (const auto& scene : scenes) {
        j["images"].push_back({{"id", scene.image_id},
                               {"height", scene.features.height},
                               {"width", scene.features.width}});
        for (const auto& g : scene.ground_truth) {
            json ann = {{"id", g.annotation_id},
                        {"image_id", scene.image_id},
                        {"bbox", bbox_to_json(g.box)}};
            if (g.cluster_id >= 0) ann["cluster_id"] = g.cluster_id;
            j["annotations"].push_back(std::move(ann));
        }
        for (const auto& c : scene.candidates) {
            json cand = {{"image_id", scene.image_id},
                         {"bbox", bbox_to_json(c.box)},
                         {"centreness", c.quality.centreness},
                         {"box_quality", c.quality.box_quality}};
            if (c.quality.mask_quality) cand["mask_quality"] = *c.quality.mask_quality;
            j["candidates"].push_back(std::move(cand));
        }
    }
    return j.dump(2) + "\n";
}

void attach_feature_maps(std::vector<Scene>& scenes, const std::string& map_store_path) {
    std::vector<FeatureIndexEntry> index;
    std::vector<FeatureMap> maps = read_map_store(map_store_path, &index);
    if (index.size() != maps.size())
        throw std::runtime_error("feature store: index/record count mismatch");
    std::map<int, size_t> record_of_image;
    for (size_t i = 0; i < index.size(); ++i) record_of_image[index[i].image_id] = i;
    for (auto& scene : scenes) {
        auto it = record_of_image.find(scene.image_id);
        if (it == record_of_image.end())
            throw std::runtime_error("feature store: no features for image " +
                                     std::to_string(scene.image_id));
        scene.features = std::move(maps[it->second]);
    }
}

std::vector<ImageGroundTruth> ground_truth_of(const std::vector<Scene>& scenes) {
    std::vector<ImageGroundTruth> gt;
    for (const auto& scene : scenes) {
        ImageGroundTruth img;
        img.image_id = scene.image_id;
        for (const auto& g : scene.ground_truth) img.boxes.push_back(g.box);
        gt.push_back(std::move(img));
    }
    return gt;
}

std::string records_to_json(const std::vector<DetectionRecord>& records) {
    json j = json::array();
    for (const auto& r : records)
        j.push_back({{"image_id", r.image_id},
                     {"bbox", bbox_to_json(r.box)},
                     {"score", r.score},
                     {"energy", r.energy},
                     {"uncertainty", r.uncertainty},
                     {"is_anomaly", r.is_anomaly}});
    return j.dump(2) + "\n";
}

std::vector<DetectionRecord> records_from_json(const std::string& text) {
    json j = json::parse(text);
    std::vector<DetectionRecord> records;
    for (const auto& e : j) {
        DetectionRecord r;
        r.image_id = e.at("image_id").get<int>();
        r.box = bbox_from_json(e.at("bbox"));
        r.score = e.at("score").get<double>();
        r.energy = e.at("energy").get<double>();
        r.uncertainty = e.at("uncertainty").get<double>();
        r.is_anomaly = e.at("is_anomaly").get<bool>();
        records.push_back(r);
    }
    return records;
}

namespace {

// flat keys, named exactly after the TrainConfig fields
const char* kConfigKeys[] = {
    "mode",          "k_pseudo",       "epochs",        "alpha",          "beta",
    "gamma",         "sample_count",   "outliers_per_iter", "embed_dim",  "seed",
    "learning_rate", "weight_decay",   "warmup_iters",  "decay_epochs",   "decay_factor",
    "roi_out",       "samples_per_bin", "batch_scenes", "embed_hidden",   "pcls_hidden",
    "phi_hidden",    "flow_layers",    "flow_hidden",   "kmeans_batch",   "kmeans_passes",
    "kmeans_standardize", "queue_capacity", "queue_min_fill", "valid_iou", "ridge_scale"};

}  // namespace

TrainConfig train_config_from_json(const std::string& text) {
    json j = json::parse(text);
    if (!j.is_object()) throw std::runtime_error("config: expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const char* k : kConfigKeys)
            if (key == k) known = true;
        if (!known) throw std::runtime_error("config: unknown key \"" + key + "\"");
    }

    SynthMode mode =
        j.contains("mode") ? synth_mode_from_string(j.at("mode").get<std::string>()) : SynthMode::ssos;
    TrainConfig cfg = default_train_config(mode);

    auto get_int = [&](const char* key, int& field) {
        if (j.contains(key)) field = j.at(key).get<int>();
    };
    auto get_double = [&](const char* key, double& field) {
        if (j.contains(key)) field = j.at(key).get<double>();
    };
    get_int("k_pseudo", cfg.k_pseudo);
    get_int("epochs", cfg.epochs);
    get_double("alpha", cfg.alpha);
    get_double("beta", cfg.beta);
    get_double("gamma", cfg.gamma);
    get_int("sample_count", cfg.sample_count);
    get_int("outliers_per_iter", cfg.outliers_per_iter);
    get_int("embed_dim", cfg.embed_dim);
    if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
    get_double("learning_rate", cfg.sgd.learning_rate);
    get_double("weight_decay", cfg.sgd.weight_decay);
    get_int("warmup_iters", cfg.sgd.warmup_iters);
    if (j.contains("decay_epochs")) cfg.sgd.decay_epochs = j.at("decay_epochs").get<std::vector<int>>();
    get_double("decay_factor", cfg.sgd.decay_factor);
    get_int("roi_out", cfg.roi_out);
    get_int("samples_per_bin", cfg.samples_per_bin);
    get_int("batch_scenes", cfg.batch_scenes);
    get_int("embed_hidden", cfg.embed_hidden);
    get_int("pcls_hidden", cfg.pcls_hidden);
    get_int("phi_hidden", cfg.phi_hidden);
    get_int("flow_layers", cfg.flow_layers);
    get_int("flow_hidden", cfg.flow_hidden);
    get_int("kmeans_batch", cfg.kmeans_batch);
    get_int("kmeans_passes", cfg.kmeans_passes);
    if (j.contains("kmeans_standardize")) cfg.kmeans_standardize = j.at("kmeans_standardize").get<bool>();
    get_int("queue_capacity", cfg.queue_capacity);
    get_int("queue_min_fill", cfg.queue_min_fill);
    get_double("valid_iou", cfg.valid_iou);
    get_double("ridge_scale", cfg.ridge_scale);
    return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
    json j;
    j["mode"] = to_string(cfg.mode);
    j["k_pseudo"] = cfg.k_pseudo;
    j["epochs"] = cfg.epochs;
    j["alpha"] = cfg.alpha;
    j["beta"] = cfg.beta;
    j["gamma"] = cfg.gamma;
    j["sample_count"] = cfg.sample_count;
    j["outliers_per_iter"] = cfg.outliers_per_iter;
    j["embed_dim"] = cfg.embed_dim;
    j["seed"] = cfg.seed;
    j["learning_rate"] = cfg.sgd.learning_rate;
    j["weight_decay"] = cfg.sgd.weight_decay;
    j["warmup_iters"] = cfg.sgd.warmup_iters;
    j["decay_epochs"] = cfg.sgd.decay_epochs;
    j["decay_factor"] = cfg.sgd.decay_factor;
    j["roi_out"] = cfg.roi_out;
    j["samples_per_bin"] = cfg.samples_per_bin;
    j["batch_scenes"] = cfg.batch_scenes;
    j["embed_hidden"] = cfg.embed_hidden;
    j["pcls_hidden"] = cfg.pcls_hidden;
    j["phi_hidden"] = cfg.phi_hidden;
    j["flow_layers"] = cfg.flow_layers;
    j["flow_hidden"] = cfg.flow_hidden;
    j["kmeans_batch"] = cfg.kmeans_batch;
    j["kmeans_passes"] = cfg.kmeans_passes;
    j["kmeans_standardize"] = cfg.kmeans_standardize;
    j["queue_capacity"] = cfg.queue_capacity;
    j["queue_min_fill"] = cfg.queue_min_fill;
    j["valid_iou"] = cfg.valid_iou;
    j["ridge_scale"] = cfg.ridge_scale;
    return j.dump(2) + "\n";
}

int thread_cap() {
    const char* env = std::getenv("SSOS_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    return n >= 1 ? n : 1;
}

}  // namespace ssos
