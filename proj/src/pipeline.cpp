#include "ssos/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <stdexcept>

#include "ssos/checkpoint.hpp"
#include "ssos/harness.hpp"
#include "ssos/metrics.hpp"
#include "ssos/rng.hpp"

namespace ssos {

std::string to_string(SynthMode mode) { return mode == SynthMode::ssos ? "ssos" : "ffs"; }

SynthMode synth_mode_from_string(const std::string& s) {
    if (s == "ssos") return SynthMode::ssos;
    if (s == "ffs") return SynthMode::ffs;
    throw std::invalid_argument("unknown mode: " + s);
}

TrainConfig default_train_config(SynthMode mode) {
    TrainConfig cfg;
    cfg.mode = mode;
    cfg.sample_count = mode == SynthMode::ssos ? 10000 : 300;
    return cfg;
}

namespace {

std::vector<double> pooled_feature(const FeatureMap& map, const Box& box, const TrainConfig& cfg) {
    return flatten_pooled(roi_align(map, box, cfg.roi_out, cfg.roi_out, cfg.samples_per_bin));
}

struct ProposalTarget {
    int gt_index = -1;  // best-overlap ground truth
    double iou = 0.0;
    double centreness = 0.0;  // target centreness at the proposal centre
    bool matched = false;     // iou >= valid_iou
};

ProposalTarget match_proposal(const Box& proposal, const std::vector<AnnotatedBox>& gt,
                              double valid_iou) {
    ProposalTarget t;
    for (size_t g = 0; g < gt.size(); ++g) {
        double v = iou(proposal, gt[g].box);
        if (v > t.iou) {
            t.iou = v;
            t.gt_index = static_cast<int>(g);
        }
    }
    if (t.gt_index >= 0) {
        t.matched = t.iou >= valid_iou;
        const Box& gb = gt[t.gt_index].box;
        double px = proposal.cx();
        double py = proposal.cy();
        bool inside = px >= gb.x && px <= gb.x + gb.w && py >= gb.y && py <= gb.y + gb.h;
        t.centreness = inside ? centreness_target(px, py, gb) : 0.0;
    }
    return t;
}

struct GradientSet {
    NetGrads shared_head;
    NetGrads pcls_head;
    std::vector<double> energy_w;
    NetGrads phi;
    FlowGrads flow;

    void init(const Model& m) {
        shared_head.init_like(m.shared_head);
        pcls_head.init_like(m.pcls_head);
        energy_w.assign(m.energy_w.w.size(), 0.0);
        phi.init_like(m.phi.net);
        if (!m.flow.layers.empty()) flow.init_like(m.flow);
    }
    void reset() {
        shared_head.reset();
        pcls_head.reset();
        std::fill(energy_w.begin(), energy_w.end(), 0.0);
        phi.reset();
        flow.reset();
    }
};

// One object whose lambda enters the anomaly BCE. Inliers carry the caches
// needed to push gradients back through g; synthesized outliers stop at the
// pseudo-class head.
struct EnergyItem {
    std::vector<double> feature;  // embedded v, or synthesized v-tilde
    int label = -1;               // pseudo-label (inliers only)
    ForwardCache pcls_cache;
    ForwardCache phi_cache;
    std::vector<double> logits;
    double e = 0.0;
    double lambda = 0.0;
    const ForwardCache* embed_cache = nullptr;  // inliers only
};

}  // namespace

TrainResult train(const std::vector<Scene>& scenes, const TrainConfig& cfg) {
    if (scenes.empty()) throw std::invalid_argument("train: empty dataset");
    if (cfg.k_pseudo < 1 || cfg.epochs < 1 || cfg.embed_dim < 1)
        throw std::invalid_argument("train: invalid config");
    if (cfg.alpha < 0 || cfg.beta < 0 || cfg.gamma < 0)
        throw std::invalid_argument("train: loss weights must be nonnegative");
    for (const auto& s : scenes) {
        if (s.ground_truth.empty())
            throw std::invalid_argument("train: every scene needs at least one ground-truth box");
        if (s.features.empty()) throw std::invalid_argument("train: scene without features");
        if (s.features.channels != scenes[0].features.channels)
            throw std::invalid_argument("train: inconsistent channel counts");
    }

    const int z_dim = cfg.roi_out * cfg.roi_out * scenes[0].features.channels;
    Rng init_rng(derive_seed(cfg.seed, 0x696e6974ull));

    Model model;
    model.cfg = cfg;
    model.shared_head = make_dense_net({z_dim, cfg.embed_hidden, cfg.embed_dim},
                                       {Activation::relu, Activation::identity}, init_rng);
    model.pcls_head = make_dense_net({cfg.embed_dim, cfg.pcls_hidden, cfg.k_pseudo},
                                     {Activation::relu, Activation::identity}, init_rng);
    model.energy_w = EnergyWeights::ones(cfg.k_pseudo);
    model.phi = UncertaintyHead::make(cfg.phi_hidden, derive_seed(cfg.seed, 0x706869ull));
    if (cfg.mode == SynthMode::ffs)
        model.flow = make_coupling_flow(cfg.embed_dim, cfg.flow_layers, cfg.flow_hidden,
                                        derive_seed(cfg.seed, 0x666c6f77ull));

    // Ground-truth pooled features; the backbone stand-in is fixed data, so
    // pooling once is equivalent to re-pooling before every epoch.
    std::vector<std::vector<double>> gt_features;
    std::vector<int> gt_annotation_ids;
    std::vector<std::vector<int>> gt_index_of(scenes.size());
    for (size_t si = 0; si < scenes.size(); ++si)
        for (const auto& g : scenes[si].ground_truth) {
            gt_index_of[si].push_back(static_cast<int>(gt_features.size()));
            gt_features.push_back(pooled_feature(scenes[si].features, g.box, cfg));
            gt_annotation_ids.push_back(g.annotation_id);
        }

    // random-normal initial centres, warm-started across epochs
    model.centres = init_centres(cfg.k_pseudo, z_dim, derive_seed(cfg.seed, 0x63656e74ull));

    FeatureQueue queues(cfg.k_pseudo, cfg.queue_capacity, cfg.queue_min_fill);
    GradientSet grads;
    grads.init(model);

    TrainResult result;
    result.model = std::move(model);
    Model& m = result.model;

    std::vector<int> pseudo_labels(gt_features.size(), 0);
    long iter = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // ---- ground-truth boxes clustering ----
        KmeansConfig kmeans_cfg;
        kmeans_cfg.k = cfg.k_pseudo;
        kmeans_cfg.batch_size = cfg.kmeans_batch;
        kmeans_cfg.iterations = cfg.kmeans_passes;
        kmeans_cfg.seed = derive_seed(cfg.seed, 0x6b6d0000ull + epoch);
        kmeans_cfg.standardize = cfg.kmeans_standardize;
        PseudoLabelState state = minibatch_kmeans(gt_features, kmeans_cfg, &m.centres);
        m.centres = state.centres;
        pseudo_labels = state.assignments;

        // ---- model training ----
        Rng epoch_rng(derive_seed(cfg.seed, 0x65700000ull + epoch));
        std::vector<size_t> order(scenes.size());
        std::iota(order.begin(), order.end(), 0);
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[epoch_rng.uniform_int(i)]);

        for (size_t batch_start = 0; batch_start < order.size(); batch_start += cfg.batch_scenes) {
            size_t batch_end = std::min(order.size(), batch_start + cfg.batch_scenes);
            grads.reset();
            LossBreakdown losses;

            // -- collect proposals: geometry losses and embedded inliers --
            std::deque<ForwardCache> embed_caches;
            std::vector<EnergyItem> inliers;
            std::vector<std::vector<double>> flow_batch;
            int scenes_in_batch = 0;

            for (size_t oi = batch_start; oi < batch_end; ++oi) {
                const Scene& scene = scenes[order[oi]];
                ++scenes_in_batch;
                double ew = scene.features.width;
                double eh = scene.features.height;

                std::vector<ScoredBox> rpn_pred, rpn_target, bbox_pred, bbox_target;
                std::vector<bool> rpn_matched;
                for (const auto& cand : scene.candidates) {
                    ProposalTarget t = match_proposal(cand.box, scene.ground_truth, cfg.valid_iou);
                    const Box target_box =
                        t.gt_index >= 0 ? scene.ground_truth[t.gt_index].box : cand.box;

                    rpn_pred.push_back({cand.quality.centreness, cand.box});
                    rpn_target.push_back({t.centreness, target_box});
                    rpn_matched.push_back(t.matched);
                    if (!t.matched) continue;
                    bbox_pred.push_back({cand.quality.box_quality, cand.box});
                    bbox_target.push_back({t.iou, target_box});

                    std::vector<double> u = pooled_feature(scene.features, cand.box, cfg);
                    embed_caches.emplace_back();
                    std::vector<double> v = forward(m.shared_head, u, embed_caches.back());

                    EnergyItem item;
                    item.feature = std::move(v);
                    item.label = pseudo_labels[gt_index_of[order[oi]][t.gt_index]];
                    item.embed_cache = &embed_caches.back();
                    forward(m.pcls_head, item.feature, item.pcls_cache);
                    item.logits = item.pcls_cache.output;
                    inliers.push_back(std::move(item));
                }
                if (!rpn_pred.empty())
                    losses.rpn += rpn_loss(rpn_pred, rpn_target, rpn_matched, ew, eh);
                if (!bbox_pred.empty()) losses.bbox += bbox_loss(bbox_pred, bbox_target, ew, eh);
            }
            if (scenes_in_batch > 0) {
                losses.rpn /= scenes_in_batch;
                losses.bbox /= scenes_in_batch;
            }

            // -- pseudo-classification loss (mean over matched proposals) --
            if (!inliers.empty()) {
                double inv_n = 1.0 / static_cast<double>(inliers.size());
                for (auto& item : inliers) {
                    PclsLoss pl = pcls_loss(item.logits, item.label);
                    losses.pcls += inv_n * pl.loss;
                    if (cfg.alpha > 0.0) {
                        std::vector<double> up(pl.grad.size());
                        for (size_t k = 0; k < pl.grad.size(); ++k)
                            up[k] = cfg.alpha * inv_n * pl.grad[k];
                        std::vector<double> gv =
                            backward(m.pcls_head, item.pcls_cache, up, grads.pcls_head);
                        backward(m.shared_head, *item.embed_cache, gv, grads.shared_head);
                    }
                }
            }

            // -- feed the synthesis model --
            for (const auto& item : inliers) {
                if (cfg.mode == SynthMode::ssos)
                    queues.push(item.label, item.feature);
                else
                    flow_batch.push_back(item.feature);
            }

            // -- outlier synthesis --
            std::vector<std::vector<double>> outlier_features;
            if (cfg.mode == SynthMode::ssos) {
                std::vector<std::vector<double>> qfeat;
                std::vector<int> qlabels;
                queues.snapshot(qfeat, qlabels);
                if (!qfeat.empty()) {
                    m.bank = fit_gaussians(qfeat, qlabels, cfg.k_pseudo, cfg.ridge_scale);
                    for (int k = 0; k < cfg.k_pseudo; ++k) {
                        if (!m.bank.active[k] || !queues.ready(k)) continue;
                        auto outs = sample_virtual_outliers(
                            m.bank, k, cfg.sample_count, cfg.outliers_per_iter,
                            derive_seed(cfg.seed, 0x6f000000ull + iter * 131 + k));
                        for (auto& o : outs) outlier_features.push_back(std::move(o));
                    }
                }
            } else if (!flow_batch.empty()) {
                // The flow shares no parameters with the other losses, so the
                // gamma weight would only rescale its effective learning rate;
                // the flow steps on the unweighted NLL gradient (gamma still
                // gates the term and weights the reported total).
                FlowGrads* fg = cfg.gamma > 0.0 ? &grads.flow : nullptr;
                losses.nll = flow_nll(m.flow, flow_batch, fg);
                auto outs =
                    sample_flow_outliers(m.flow, cfg.sample_count, cfg.outliers_per_iter,
                                         derive_seed(cfg.seed, 0x6f000000ull + iter));
                for (auto& o : outs) outlier_features.push_back(std::move(o));
            }

            // -- energies, uncertainty, anomaly BCE --
            std::vector<EnergyItem> outliers;
            for (auto& of : outlier_features) {
                EnergyItem item;
                item.feature = std::move(of);
                outliers.push_back(std::move(item));
            }
            auto eval_energy = [&](EnergyItem& item) {
                if (item.logits.empty()) {
                    forward(m.pcls_head, item.feature, item.pcls_cache);
                    item.logits = item.pcls_cache.output;
                }
                item.e = energy(item.logits, m.energy_w);
                item.lambda = uncertainty(m.phi, item.e, item.phi_cache);
            };
            for (auto& item : inliers) eval_energy(item);
            for (auto& item : outliers) eval_energy(item);

            if (!inliers.empty() && !outliers.empty()) {
                std::vector<double> ln, lo;
                for (const auto& i : inliers) ln.push_back(i.lambda);
                for (const auto& o : outliers) lo.push_back(o.lambda);
                AnomalyLoss al = anomaly_loss(ln, lo);
                losses.anomaly = al.loss;

                if (cfg.beta > 0.0) {
                    auto backprop_item = [&](EnergyItem& item, double dl_dlambda, bool into_shared) {
                        std::vector<double> up{cfg.beta * dl_dlambda};
                        std::vector<double> de = backward(m.phi.net, item.phi_cache, up, grads.phi);
                        std::vector<double> dlogits, dweights;
                        energy_grad(item.logits, m.energy_w, &dlogits, &dweights);
                        for (size_t k = 0; k < dweights.size(); ++k)
                            grads.energy_w[k] += de[0] * dweights[k];
                        for (auto& g : dlogits) g *= de[0];
                        std::vector<double> gv =
                            backward(m.pcls_head, item.pcls_cache, dlogits, grads.pcls_head);
                        if (into_shared && item.embed_cache)
                            backward(m.shared_head, *item.embed_cache, gv, grads.shared_head);
                    };
                    for (size_t i = 0; i < inliers.size(); ++i)
                        backprop_item(inliers[i], al.grad_normal[i], true);
                    for (size_t i = 0; i < outliers.size(); ++i)
                        backprop_item(outliers[i], al.grad_outlier[i], false);
                }
            }

            losses.total = losses.rpn + losses.bbox + cfg.alpha * losses.pcls +
                           cfg.beta * losses.anomaly + cfg.gamma * losses.nll;
            if (!std::isfinite(losses.total))
                throw std::runtime_error("train: non-finite loss at iteration " +
                                         std::to_string(iter));
            result.iteration_losses.push_back(losses);

            ++iter;
            sgd_step(m.shared_head, grads.shared_head, cfg.sgd, iter, epoch);
            sgd_step(m.pcls_head, grads.pcls_head, cfg.sgd, iter, epoch);
            sgd_step(m.energy_w.w, grads.energy_w, cfg.sgd, iter, epoch);
            sgd_step(m.phi.net, grads.phi, cfg.sgd, iter, epoch);
            if (cfg.mode == SynthMode::ffs) sgd_step(m.flow, grads.flow, cfg.sgd, iter, epoch);
        }
    }

    for (size_t i = 0; i < gt_annotation_ids.size(); ++i)
        result.pseudo_labels.emplace_back(gt_annotation_ids[i], pseudo_labels[i]);
    return result;
}

std::vector<DetectionRecord> infer(const Model& model, const std::vector<Scene>& scenes) {
    std::vector<DetectionRecord> records;
    for (const auto& scene : scenes) {
        if (scene.features.empty()) throw std::invalid_argument("infer: scene without features");
        for (const auto& cand : scene.candidates) {
            std::vector<double> u = pooled_feature(scene.features, cand.box, model.cfg);
            std::vector<double> v = forward(model.shared_head, u);
            std::vector<double> logits = forward(model.pcls_head, v);
            DetectionRecord r;
            r.box = cand.box;
            r.image_id = scene.image_id;
            r.energy = energy(logits, model.energy_w);
            r.uncertainty = uncertainty(model.phi, r.energy);
            r.score = fuse_score(cand.quality);
            records.push_back(r);
        }
    }
    return records;
}

double pick_uncertainty_threshold(const std::vector<DetectionRecord>& in_dist_records) {
    if (in_dist_records.empty())
        throw std::invalid_argument("pick_uncertainty_threshold: empty input");
    std::vector<double> lambdas;
    lambdas.reserve(in_dist_records.size());
    for (const auto& r : in_dist_records) lambdas.push_back(r.uncertainty);
    return threshold_keeping_fraction(std::move(lambdas), 0.95);
}

void flag_anomalies(std::vector<DetectionRecord>& records, double tau) {
    if (std::isnan(tau)) throw std::invalid_argument("flag_anomalies: tau must not be NaN");
    for (auto& r : records) r.is_anomaly = r.uncertainty < tau;
}

namespace {

std::vector<double> flatten2(const std::vector<std::vector<double>>& rows) {
    std::vector<double> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return flat;
}

std::vector<std::vector<double>> unflatten2(const std::vector<double>& flat, size_t rows,
                                            size_t cols) {
    std::vector<std::vector<double>> out(rows, std::vector<double>(cols));
    for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < cols; ++c) out[r][c] = flat[r * cols + c];
    return out;
}

}  // namespace

void save_model(const Model& model, const std::string& path) {
    Checkpoint ckpt;
    append_net_sections(ckpt, "g", model.shared_head);
    append_net_sections(ckpt, "pcls", model.pcls_head);
    append_net_sections(ckpt, "phi", model.phi.net);
    ckpt.push_back({"energy.w", {static_cast<uint32_t>(model.energy_w.w.size())}, model.energy_w.w});
    if (!model.centres.empty())
        ckpt.push_back({"centres",
                        {static_cast<uint32_t>(model.centres.size()),
                         static_cast<uint32_t>(model.centres[0].size())},
                        flatten2(model.centres)});
    if (model.cfg.mode == SynthMode::ssos && model.bank.dim > 0) {
        const GaussianBank& b = model.bank;
        std::vector<std::vector<double>> means = b.means;
        for (auto& mu : means)
            if (mu.empty()) mu.assign(b.dim, 0.0);  // placeholder rows for inactive classes
        ckpt.push_back({"bank.means",
                        {static_cast<uint32_t>(b.num_classes), static_cast<uint32_t>(b.dim)},
                        flatten2(means)});
        std::vector<double> active(b.num_classes), counts(b.num_classes);
        for (int k = 0; k < b.num_classes; ++k) {
            active[k] = b.active[k] ? 1.0 : 0.0;
            counts[k] = b.counts[k];
        }
        ckpt.push_back({"bank.active", {static_cast<uint32_t>(b.num_classes)}, active});
        ckpt.push_back({"bank.counts", {static_cast<uint32_t>(b.num_classes)}, counts});
        ckpt.push_back({"bank.cov",
                        {static_cast<uint32_t>(b.dim), static_cast<uint32_t>(b.dim)},
                        b.tied_cov});
        ckpt.push_back({"bank.chol",
                        {static_cast<uint32_t>(b.dim), static_cast<uint32_t>(b.dim)},
                        b.chol});
        ckpt.push_back({"bank.ridge", {1}, {b.ridge}});
    }
    if (model.cfg.mode == SynthMode::ffs) {
        for (size_t i = 0; i < model.flow.layers.size(); ++i) {
            const CouplingLayer& layer = model.flow.layers[i];
            std::string base = "flow.layer" + std::to_string(i);
            ckpt.push_back({base + ".mask",
                            {static_cast<uint32_t>(layer.mask.size())},
                            layer.mask});
            ckpt.push_back({base + ".cap", {1}, {layer.scale_cap}});
            append_net_sections(ckpt, base + ".scale", layer.scale_net);
            append_net_sections(ckpt, base + ".translate", layer.translate_net);
        }
    }
    write_checkpoint(path, ckpt);
    atomic_write_text(path + ".json", train_config_to_json(model.cfg));
}

Model load_model(const std::string& path) {
    Checkpoint ckpt = read_checkpoint(path);
    Model model;
    model.cfg = train_config_from_json(read_text(path + ".json"));

    const std::vector<Activation> head_acts{Activation::relu, Activation::identity};
    model.shared_head = net_from_sections(ckpt, "g", head_acts);
    model.pcls_head = net_from_sections(ckpt, "pcls", head_acts);
    model.phi.net = net_from_sections(ckpt, "phi", {Activation::relu, Activation::sigmoid});
    model.energy_w.w = require_section(ckpt, "energy.w").data;

    if (const CheckpointSection* c = find_section(ckpt, "centres"))
        model.centres = unflatten2(c->data, c->dims[0], c->dims[1]);

    if (model.cfg.mode == SynthMode::ssos) {
        if (const CheckpointSection* means = find_section(ckpt, "bank.means")) {
            GaussianBank& b = model.bank;
            b.num_classes = static_cast<int>(means->dims[0]);
            b.dim = static_cast<int>(means->dims[1]);
            b.means = unflatten2(means->data, means->dims[0], means->dims[1]);
            const auto& active = require_section(ckpt, "bank.active").data;
            const auto& counts = require_section(ckpt, "bank.counts").data;
            b.active.resize(b.num_classes);
            b.counts.resize(b.num_classes);
            for (int k = 0; k < b.num_classes; ++k) {
                b.active[k] = active[k] != 0.0;
                b.counts[k] = static_cast<int>(counts[k]);
                if (!b.active[k]) b.means[k].clear();
            }
            b.tied_cov = require_section(ckpt, "bank.cov").data;
            b.chol = require_section(ckpt, "bank.chol").data;
            b.ridge = require_section(ckpt, "bank.ridge").data[0];
        }
    } else {
        model.flow.dim = model.cfg.embed_dim;
        for (int i = 0;; ++i) {
            std::string base = "flow.layer" + std::to_string(i);
            const CheckpointSection* mask = find_section(ckpt, base + ".mask");
            if (!mask) break;
            CouplingLayer layer;
            layer.mask = mask->data;
            layer.scale_cap = require_section(ckpt, base + ".cap").data[0];
            layer.scale_net = net_from_sections(ckpt, base + ".scale", head_acts);
            layer.translate_net = net_from_sections(ckpt, base + ".translate", head_acts);
            model.flow.layers.push_back(std::move(layer));
        }
    }
    return model;
}

}  // namespace ssos
