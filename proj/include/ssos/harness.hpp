#pragma once

#include <string>
#include <vector>

#include "ssos/detections.hpp"
#include "ssos/pipeline.hpp"
#include "ssos/scene.hpp"

namespace ssos {

// write-to-temp-then-rename; output files are never left half-written
void atomic_write_text(const std::string& path, const std::string& contents);
std::string read_text(const std::string& path);

struct CocoLoadResult {
    std::vector<Scene> scenes;  // boxes and ids only, no features
    int skipped = 0;            // malformed annotations dropped with a warning
};

// COCO-style JSON: images[] and annotations[] with bbox [x, y, w, h].
// category_id is ignored (the pipeline is class-agnostic). A "candidates"
// array, when present, is read into Scene::candidates.
CocoLoadResult load_coco_annotations(const std::string& path);

// scenes -> COCO-style JSON (images, annotations, candidates)
std::string scenes_to_json(const std::vector<Scene>& scenes);

// Attach feature maps from an OFM1 store to scenes, matching image ids via
// the sidecar index.
void attach_feature_maps(std::vector<Scene>& scenes, const std::string& map_store_path);

std::vector<ImageGroundTruth> ground_truth_of(const std::vector<Scene>& scenes);

std::string records_to_json(const std::vector<DetectionRecord>& records);
std::vector<DetectionRecord> records_from_json(const std::string& text);

// Flat-key TrainConfig JSON; unknown keys are rejected. Fields not present
// keep their defaults (sample_count defaults per mode).
TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);

// SSOS_THREADS environment cap; 1 (the default) forces deterministic mode.
int thread_cap();

}  // namespace ssos
