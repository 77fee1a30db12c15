#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "ssos/feature_store.hpp"
#include "ssos/geometry.hpp"
#include "ssos/harness.hpp"
#include "ssos/rng.hpp"
#include "ssos/synth.hpp"
#include "ssos/upc.hpp"

using namespace ssos;

namespace {

std::filesystem::path tmpdir() {
    auto p = std::filesystem::temp_directory_path() / "ssos_harness_test";
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("vector store round trip is bit-exact") {
    auto path = (tmpdir() / "vecs.ofv").string();
    Rng rng(3);
    std::vector<std::vector<double>> vecs;
    std::vector<FeatureIndexEntry> index;
    for (int i = 0; i < 17; ++i) {
        std::vector<double> v(5);
        for (auto& x : v) x = static_cast<float>(rng.normal());  // f32-representable values
        vecs.push_back(v);
        index.push_back({i, 100 + i});
    }
    write_vector_store(path, vecs, index);
    std::vector<FeatureIndexEntry> index2;
    auto back = read_vector_store(path, &index2);
    CHECK(back == vecs);
    CHECK(index2.size() == index.size());
    CHECK(index2[3].image_id == 3);
    CHECK(index2[3].annotation_id == 103);
}

TEST_CASE("empty store and format errors") {
    auto path = (tmpdir() / "empty.ofv").string();
    write_vector_store(path, {}, {});
    CHECK(read_vector_store(path).empty());

    // corrupted magic
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE";
        std::vector<char> garbage(12, 0);
        os.write(garbage.data(), garbage.size());
    }
    CHECK_THROWS_WITH_AS(read_vector_store(path), doctest::Contains("bad magic"),
                         std::runtime_error);

    // map magic is distinct from vector magic
    auto mpath = (tmpdir() / "maps.ofm").string();
    FeatureMap m = FeatureMap::zeros(2, 3, 1);
    m.data = {1, 2, 3, 4, 5, 6};
    write_map_store(mpath, {m}, {{0, -1}});
    CHECK_THROWS_AS(read_vector_store(mpath), std::runtime_error);

    // truncated payload
    auto tpath = (tmpdir() / "trunc.ofm").string();
    write_map_store(tpath, {m}, {{0, -1}});
    auto size = std::filesystem::file_size(tpath);
    std::filesystem::resize_file(tpath, size - 4);
    CHECK_THROWS_WITH_AS(read_map_store(tpath), doctest::Contains("truncated"),
                         std::runtime_error);
}

TEST_CASE("map store round trip") {
    auto path = (tmpdir() / "maps2.ofm").string();
    Rng rng(9);
    std::vector<FeatureMap> maps;
    std::vector<FeatureIndexEntry> index;
    for (int i = 0; i < 4; ++i) {
        FeatureMap m = FeatureMap::zeros(2 + i, 3, 2);
        for (auto& v : m.data) v = static_cast<float>(rng.normal());
        maps.push_back(m);
        index.push_back({i, -1});
    }
    write_map_store(path, maps, index);
    auto back = read_map_store(path);
    REQUIRE(back.size() == 4);
    for (int i = 0; i < 4; ++i) {
        CHECK(back[i].height == maps[i].height);
        CHECK(back[i].data == maps[i].data);
    }
}

TEST_CASE("coco annotation loading") {
    auto path = (tmpdir() / "coco.json").string();

    SUBCASE("empty annotations") {
        atomic_write_text(path, R"({"images":[{"id":1}],"annotations":[]})");
        CocoLoadResult r = load_coco_annotations(path);
        CHECK(r.scenes.size() == 1);
        CHECK(r.scenes[0].ground_truth.empty());
        CHECK(r.skipped == 0);
    }

    SUBCASE("single annotation") {
        atomic_write_text(path, R"({"images":[{"id":1}],
            "annotations":[{"id":7,"image_id":1,"bbox":[0,0,10,10],"category_id":3}]})");
        CocoLoadResult r = load_coco_annotations(path);
        REQUIRE(r.scenes[0].ground_truth.size() == 1);
        const AnnotatedBox& b = r.scenes[0].ground_truth[0];
        CHECK(b.annotation_id == 7);
        CHECK(b.box.w == 10.0);
    }

    SUBCASE("malformed annotations are skipped with a count") {
        atomic_write_text(path, R"({"images":[{"id":1}],"annotations":[
            {"id":1,"image_id":1,"bbox":[0,0,5,5]},
            {"id":2,"image_id":1,"bbox":[0,0,-3,5]},
            {"id":3,"image_id":1,"bbox":[1,1,2,2]}]})");
        CocoLoadResult r = load_coco_annotations(path);
        CHECK(r.scenes[0].ground_truth.size() == 2);
        CHECK(r.skipped == 1);
    }

    SUBCASE("missing top-level keys") {
        atomic_write_text(path, R"({"images":[]})");
        CHECK_THROWS_WITH_AS(load_coco_annotations(path), doctest::Contains("missing"),
                             std::runtime_error);
    }

    SUBCASE("malformed json") {
        atomic_write_text(path, "{not json");
        CHECK_THROWS_WITH_AS(load_coco_annotations(path), doctest::Contains("malformed"),
                             std::runtime_error);
    }
}

TEST_CASE("scene json round trip") {
    SyntheticSceneSpec spec;
    spec.n_scenes = 4;
    spec.seed = 5;
    SyntheticDataset ds = generate_synthetic(spec);

    std::string json = scenes_to_json(ds.train);
    auto path = (tmpdir() / "scenes.json").string();
    atomic_write_text(path, json);
    CocoLoadResult r = load_coco_annotations(path);
    REQUIRE(r.scenes.size() == ds.train.size());
    for (size_t i = 0; i < r.scenes.size(); ++i) {
        CHECK(r.scenes[i].image_id == ds.train[i].image_id);
        REQUIRE(r.scenes[i].ground_truth.size() == ds.train[i].ground_truth.size());
        for (size_t b = 0; b < r.scenes[i].ground_truth.size(); ++b) {
            CHECK(r.scenes[i].ground_truth[b].box.x == ds.train[i].ground_truth[b].box.x);
            CHECK(r.scenes[i].ground_truth[b].cluster_id == ds.train[i].ground_truth[b].cluster_id);
        }
        REQUIRE(r.scenes[i].candidates.size() == ds.train[i].candidates.size());
        CHECK(r.scenes[i].candidates[0].quality.box_quality ==
              ds.train[i].candidates[0].quality.box_quality);
    }

    // feature maps reattach by image id
    auto mpath = (tmpdir() / "scenes.ofm").string();
    std::vector<FeatureMap> maps;
    std::vector<FeatureIndexEntry> index;
    for (const auto& s : ds.train) {
        maps.push_back(s.features);
        index.push_back({s.image_id, -1});
    }
    write_map_store(mpath, maps, index);
    attach_feature_maps(r.scenes, mpath);
    CHECK(r.scenes[2].features.height == ds.train[2].features.height);
}

TEST_CASE("boxes that cannot fit the map are an error") {
    SyntheticSceneSpec spec;
    spec.map_h = 4;
    spec.map_w = 4;
    CHECK_THROWS_AS(generate_synthetic(spec), std::invalid_argument);

    SyntheticSceneSpec bad;
    bad.n_scenes = 0;
    CHECK_THROWS_AS(generate_synthetic(bad), std::invalid_argument);
}

TEST_CASE("synthetic generation is deterministic and cluster-clean") {
    SyntheticSceneSpec spec;
    spec.n_scenes = 12;
    spec.seed = 42;
    SyntheticDataset a = generate_synthetic(spec);
    SyntheticDataset b = generate_synthetic(spec);
    REQUIRE(a.train.size() == b.train.size());
    for (size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].features.data == b.train[i].features.data);
        CHECK(a.train[i].candidates.size() == b.train[i].candidates.size());
    }
    CHECK(a.test_in.size() == 3);
    CHECK(a.test_ood.size() == 3);

    // OoD scenes draw from the held-out cluster
    for (const auto& s : a.test_ood)
        for (const auto& g : s.ground_truth) CHECK(g.cluster_id >= spec.n_clusters_in);
}

TEST_CASE("noise-free pooled features are identical within a cluster") {
    SyntheticSceneSpec spec;
    spec.n_scenes = 10;
    spec.noise_sd = 0.0;
    spec.seed = 7;
    SyntheticDataset ds = generate_synthetic(spec);
    std::map<int, std::vector<double>> rep;
    for (const auto& s : ds.train)
        for (const auto& g : s.ground_truth) {
            auto z = flatten_pooled(roi_align(s.features, g.box, 3, 3, 2));
            auto [it, fresh] = rep.try_emplace(g.cluster_id, z);
            if (!fresh)
                for (size_t i = 0; i < z.size(); ++i)
                    CHECK(z[i] == doctest::Approx(it->second[i]).epsilon(1e-12));
        }
}

TEST_CASE("single-cluster data recovers the pattern mean with k=1") {
    SyntheticSceneSpec spec;
    spec.n_scenes = 8;
    spec.n_clusters_in = 1;
    spec.n_clusters_ood = 0;
    spec.noise_sd = 0.0;
    spec.seed = 3;
    SyntheticDataset ds = generate_synthetic(spec);
    std::vector<std::vector<double>> feats;
    for (const auto& s : ds.train)
        for (const auto& g : s.ground_truth)
            feats.push_back(flatten_pooled(roi_align(s.features, g.box, 3, 3, 2)));
    KmeansConfig cfg;
    cfg.k = 1;
    cfg.iterations = 2;
    cfg.batch_size = 8;
    PseudoLabelState state = minibatch_kmeans(feats, cfg);
    for (size_t d = 0; d < feats[0].size(); ++d)
        CHECK(state.centres[0][d] == doctest::Approx(feats[0][d]).epsilon(1e-9));
}

TEST_CASE("well-separated clusters give high assignment purity") {
    SyntheticSceneSpec spec;
    spec.n_scenes = 60;
    spec.cluster_sep = 6.0;
    spec.noise_sd = 0.3;
    spec.seed = 11;
    SyntheticDataset ds = generate_synthetic(spec);

    std::vector<std::vector<double>> feats;
    std::vector<int> truth;
    for (const auto& s : ds.train)
        for (const auto& g : s.ground_truth) {
            feats.push_back(flatten_pooled(roi_align(s.features, g.box, 3, 3, 2)));
            truth.push_back(g.cluster_id);
        }
    KmeansConfig cfg;
    cfg.k = spec.n_clusters_in;
    cfg.iterations = 10;
    cfg.batch_size = 64;
    cfg.seed = 1;
    PseudoLabelState state = minibatch_kmeans(feats, cfg);

    // best label permutation (K=5: 120 permutations)
    std::vector<int> perm(spec.n_clusters_in);
    for (int i = 0; i < spec.n_clusters_in; ++i) perm[i] = i;
    int best = 0;
    do {
        int hits = 0;
        for (size_t i = 0; i < truth.size(); ++i)
            if (perm[state.assignments[i]] == truth[i]) ++hits;
        best = std::max(best, hits);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(static_cast<double>(best) / truth.size() >= 0.95);
}

TEST_CASE("train config json") {
    TrainConfig cfg = default_train_config(SynthMode::ffs);
    CHECK(cfg.sample_count == 300);
    cfg.k_pseudo = 7;
    cfg.sgd.decay_epochs = {2, 5};
    std::string json = train_config_to_json(cfg);
    TrainConfig back = train_config_from_json(json);
    CHECK(back.mode == SynthMode::ffs);
    CHECK(back.k_pseudo == 7);
    CHECK(back.sample_count == 300);
    CHECK(back.sgd.decay_epochs == std::vector<int>{2, 5});

    // mode-dependent sampling default
    TrainConfig ffs_default = train_config_from_json(R"({"mode":"ffs"})");
    CHECK(ffs_default.sample_count == 300);
    TrainConfig ssos_default = train_config_from_json(R"({"mode":"ssos"})");
    CHECK(ssos_default.sample_count == 10000);

    CHECK_THROWS_WITH_AS(train_config_from_json(R"({"bogus":1})"), doctest::Contains("unknown key"),
                         std::runtime_error);
}

TEST_CASE("records json round trip") {
    std::vector<DetectionRecord> records;
    DetectionRecord r;
    r.box = {1, 2, 3, 4};
    r.score = 0.75;
    r.energy = -3.5;
    r.uncertainty = 0.625;
    r.is_anomaly = true;
    r.image_id = 9;
    records.push_back(r);
    auto back = records_from_json(records_to_json(records));
    REQUIRE(back.size() == 1);
    CHECK(back[0].box.w == 3.0);
    CHECK(back[0].score == 0.75);
    CHECK(back[0].energy == -3.5);
    CHECK(back[0].uncertainty == 0.625);
    CHECK(back[0].is_anomaly);
    CHECK(back[0].image_id == 9);
}

}  // TEST_SUITE
