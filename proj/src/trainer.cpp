#include "sadrive/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;

namespace sadrive {

Stage stage_from_name(const std::string& name) {
    if (name == "dense-pretrain") return Stage::kDensePretrain;
    if (name == "joint") return Stage::kJoint;
    throw TensorError("unknown stage: " + name);
}

const char* stage_name(Stage stage) {
    return stage == Stage::kDensePretrain ? "dense-pretrain" : "joint";
}

MaskSource mask_source_from_name(const std::string& name) {
    if (name == "learned") return MaskSource::kLearned;
    if (name == "road") return MaskSource::kRoad;
    if (name == "vehicle") return MaskSource::kVehicle;
    if (name == "proximity") return MaskSource::kProximity;
    if (name == "dense") return MaskSource::kDense;
    throw TensorError("unknown mask source: " + name);
}

const char* mask_source_name(MaskSource source) {
    switch (source) {
        case MaskSource::kLearned: return "learned";
        case MaskSource::kRoad: return "road";
        case MaskSource::kVehicle: return "vehicle";
        case MaskSource::kProximity: return "proximity";
        case MaskSource::kDense: return "dense";
    }
    return "learned";
}

BackboneConfig desk_model_profile() {
    BackboneConfig cfg;
    cfg.stem_channels = 16;
    cfg.base_channels = 32;
    cfg.branch_widths[0] = 16;
    cfg.branch_widths[1] = 24;
    cfg.branch_widths[2] = 32;
    cfg.gated_hidden = 32;
    cfg.blocks = 2;
    return cfg;
}

void save_run_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw TensorError("save_run_config: cannot open " + path);
    out.precision(17);
    out << "sadrive-run v1\n"
        << "seed " << cfg.seed << "\n"
        << "train_scenes " << cfg.train_scenes << "\n"
        << "eval_scenes " << cfg.eval_scenes << "\n"
        << "stage " << stage_name(cfg.stage) << "\n"
        << "epochs " << cfg.epochs << "\n"
        << "lr " << cfg.lr << "\n"
        << "batch_size " << cfg.batch_size << "\n"
        << "negatives " << cfg.negatives << "\n"
        << "plan_samples " << cfg.plan_samples << "\n"
        << "lambda_plan " << cfg.weights.lambda_plan << "\n"
        << "lambda_cls " << cfg.weights.lambda_cls << "\n"
        << "lambda_reg " << cfg.weights.lambda_reg << "\n"
        << "lambda_attn " << cfg.weights.lambda_attn << "\n"
        << "weight_decay " << cfg.weights.weight_decay << "\n"
        << "gamma0 " << cfg.weights.gamma0 << "\n"
        << "gamma1 " << cfg.weights.gamma1 << "\n"
        << "v_penalty " << cfg.weights.v_penalty << "\n"
        << "mask_source " << mask_source_name(cfg.mask_source) << "\n"
        << "difficulty " << difficulty_name(cfg.difficulty) << "\n"
        << "height_m " << cfg.bounds.height_m << "\n"
        << "width_m " << cfg.bounds.width_m << "\n"
        << "resolution " << cfg.bounds.resolution << "\n"
        << "pretrain_checkpoint " << cfg.pretrain_checkpoint << "\n"
        << "dataset_dir " << cfg.dataset_dir << "\n";
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TensorError("load_run_config: cannot open " + path);
    std::string header;
    std::getline(in, header);
    if (header != "sadrive-run v1")
        throw TensorError("load_run_config: bad header '" + header + "'");
    RunConfig cfg;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string key, value;
        ss >> key;
        std::getline(ss, value);
        if (!value.empty() && value.front() == ' ') value.erase(0, 1);
        if (key == "seed") cfg.seed = std::stoull(value);
        else if (key == "train_scenes") cfg.train_scenes = std::stoi(value);
        else if (key == "eval_scenes") cfg.eval_scenes = std::stoi(value);
        else if (key == "stage") cfg.stage = stage_from_name(value);
        else if (key == "epochs") cfg.epochs = std::stod(value);
        else if (key == "lr") cfg.lr = std::stof(value);
        else if (key == "batch_size") cfg.batch_size = std::stoi(value);
        else if (key == "negatives") cfg.negatives = std::stoi(value);
        else if (key == "plan_samples") cfg.plan_samples = std::stoi(value);
        else if (key == "lambda_plan") cfg.weights.lambda_plan = std::stof(value);
        else if (key == "lambda_cls") cfg.weights.lambda_cls = std::stof(value);
        else if (key == "lambda_reg") cfg.weights.lambda_reg = std::stof(value);
        else if (key == "lambda_attn") cfg.weights.lambda_attn = std::stof(value);
        else if (key == "weight_decay") cfg.weights.weight_decay = std::stof(value);
        else if (key == "gamma0") cfg.weights.gamma0 = std::stof(value);
        else if (key == "gamma1") cfg.weights.gamma1 = std::stof(value);
        else if (key == "v_penalty") cfg.weights.v_penalty = std::stod(value);
        else if (key == "mask_source") cfg.mask_source = mask_source_from_name(value);
        else if (key == "difficulty") cfg.difficulty = difficulty_from_name(value);
        else if (key == "height_m") cfg.bounds.height_m = std::stod(value);
        else if (key == "width_m") cfg.bounds.width_m = std::stod(value);
        else if (key == "resolution") cfg.bounds.resolution = std::stod(value);
        else if (key == "pretrain_checkpoint") cfg.pretrain_checkpoint = value;
        else if (key == "dataset_dir") cfg.dataset_dir = value;
        else throw TensorError("load_run_config: unknown key '" + key + "'");
    }
    return cfg;
}

double lr_at(double base_lr, double epoch_progress) {
    if (epoch_progress < 1.0) return base_lr;
    if (epoch_progress < 1.6) return base_lr * 0.1;
    return base_lr * 0.01;
}

Model::Model(const BackboneConfig& config, std::mt19937_64& rng)
    : cfg(config),
      backbone(config, rng),
      scorer(config.base_channels, rng),
      detection(config.base_channels, rng),
      planning(config.base_channels, rng) {}

void Model::register_params(ParamSet& params) {
    backbone.register_params(params, "backbone.");
    scorer.register_params(params, "scorer.");
    detection.register_params(params, "det.");
    planning.register_params(params, "plan.");
}

void Model::bind(Tape& tape) {
    backbone.bind(tape);
    scorer.bind(tape);
    detection.bind(tape);
    planning.bind(tape);
}

SceneForward run_model(Tape& tape, const Model& model, const Tensor& raster,
                       const Scene& scene, MaskSource mask_source, bool gated,
                       bool training, std::mt19937_64& rng) {
    SceneForward out;
    const Backbone::Prefix prefix = model.backbone.forward_prefix(tape, raster);
    if (!gated) {
        out.features = model.backbone.forward_suffix(tape, prefix, nullptr);
    } else {
        if (mask_source == MaskSource::kLearned) {
            const Tensor z = model.scorer.forward(tape, prefix.tap);
            Tensor g0, g1;
            if (training) {
                g0 = sample_gumbel(rng, z.shape);
                g1 = sample_gumbel(rng, z.shape);
            } else {
                g0 = Tensor::zeros(z.shape);
                g1 = Tensor::zeros(z.shape);
            }
            out.mask = binarize(tape, make_logits(z, g0, g1), model.cfg.temperature);
        } else if (mask_source == MaskSource::kDense) {
            out.mask.hard = Tensor::full({1, prefix.tap.dim(1), prefix.tap.dim(2)}, 1.f);
            out.mask.soft = out.mask.hard;
        } else {
            BaselineKind kind = BaselineKind::kRoad;
            if (mask_source == MaskSource::kVehicle) kind = BaselineKind::kVehicle;
            if (mask_source == MaskSource::kProximity) kind = BaselineKind::kProximity;
            out.mask = baseline_mask(kind, scene);
        }
        out.features = model.backbone.forward_suffix(tape, prefix, &out.mask.hard);
    }
    out.detection = model.detection.forward(tape, out.features);
    out.cost_volume = model.planning.forward(tape, out.features);
    return out;
}

double ego_speed(const Scene& scene) {
    const Waypoint a = scene.ego_now();
    const Waypoint b = scene.ego_future(1);
    return std::hypot(b.x - a.x, b.y - a.y) / kStepSeconds;
}

Trajectory ego_ground_truth(const Scene& scene) {
    Trajectory gt;
    gt.v0 = ego_speed(scene);
    for (int t = 1; t <= kFutureSteps; ++t) gt.waypoints.push_back(scene.ego_future(t));
    return gt;
}

void generate_dataset(const std::string& dir, int count, std::uint64_t seed,
                      Difficulty difficulty, const SceneBounds& bounds) {
    fs::create_directories(dir);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < count; ++i) {
        const Scene scene = generate_scene(seed * 1000003ULL + i, difficulty, bounds);
        std::ostringstream name;
        name << "scene_" << std::setw(5) << std::setfill('0') << i << ".scene";
        save_scene((fs::path(dir) / name.str()).string(), scene);
    }
}

namespace {

std::vector<Scene> load_or_generate(const RunConfig& cfg, int count,
                                    std::uint64_t seed_offset) {
    std::vector<Scene> scenes;
    scenes.reserve(count);
    if (!cfg.dataset_dir.empty()) {
        std::vector<std::string> paths;
        for (const auto& entry : fs::directory_iterator(cfg.dataset_dir))
            if (entry.path().extension() == ".scene") paths.push_back(entry.path().string());
        std::sort(paths.begin(), paths.end());
        if (static_cast<int>(paths.size()) < count)
            throw TensorError("dataset has " + std::to_string(paths.size()) +
                              " scenes, need " + std::to_string(count));
        for (int i = 0; i < count; ++i) scenes.push_back(load_scene(paths[i]));
    } else {
        scenes.resize(count);
#pragma omp parallel for schedule(dynamic)
        for (int i = 0; i < count; ++i)
            scenes[static_cast<std::size_t>(i)] = generate_scene(
                cfg.seed * 1000003ULL + seed_offset + i, cfg.difficulty, cfg.bounds);
    }
    return scenes;
}

struct SceneLoss {
    LossParts parts;
    double sparsity = 0;
};

SceneLoss scene_loss(Tape& tape, const Model& model, const RunConfig& cfg,
                     const Scene& scene, const Tensor& raster,
                     const DetectionLabels& labels, std::mt19937_64& rng) {
    const bool gated = cfg.stage == Stage::kJoint;
    SceneLoss out;
    const SceneForward fwd =
        run_model(tape, model, raster, scene, cfg.mask_source, gated, true, rng);

    const Trajectory gt = ego_ground_truth(scene);
    std::vector<Trajectory> negatives =
        sample_trajectories(scene.ego_now(), gt.v0, cfg.negatives, rng);
    out.parts.plan =
        planning_loss(tape, fwd.cost_volume, gt, negatives, scene, cfg.weights);

    const Tensor cls_map = cls_loss_map(tape, fwd.detection.score, labels.score);
    const Tensor reg_map = reg_loss_map(tape, fwd.detection.regression, labels);
    if (gated && fwd.mask.hard.numel() > 0) {
        out.parts.cls = reweight(tape, cls_map, fwd.mask, cfg.weights.gamma0,
                                 cfg.weights.gamma1);
        out.parts.reg = reweight(tape, reg_map, fwd.mask, cfg.weights.gamma0,
                                 cfg.weights.gamma1);
        out.parts.attn = cfg.mask_source == MaskSource::kLearned
                             ? sparsity_loss(tape, fwd.mask)
                             : Tensor::zeros({1});
        out.sparsity = fwd.mask.sparsity();
    } else {
        out.parts.cls = sum_all(tape, cls_map);
        out.parts.reg = sum_all(tape, reg_map);
        out.parts.attn = Tensor::zeros({1});
    }
    return out;
}

void dump_nan(const RunConfig& cfg, int step, const Scene& scene, const SceneLoss& loss,
              float total) {
    std::ofstream out((fs::path(cfg.run_dir) / "nan_dump.txt").string());
    out << "non-finite loss at step " << step << "\n"
        << "scene_seed " << scene.seed << "\n"
        << "total " << total << "\n"
        << "plan " << loss.parts.plan.data[0] << "\n"
        << "cls " << loss.parts.cls.data[0] << "\n"
        << "reg " << loss.parts.reg.data[0] << "\n"
        << "attn " << loss.parts.attn.data[0] << "\n";
}

}  // namespace

void train(const RunConfig& cfg) {
    if (cfg.stage == Stage::kJoint && cfg.pretrain_checkpoint.empty())
        throw TensorError("joint stage requires a pretrain checkpoint");
    fs::create_directories(cfg.run_dir);
    save_run_config((fs::path(cfg.run_dir) / "config.txt").string(), cfg);
    save_model_config((fs::path(cfg.run_dir) / "model.cfg").string(), cfg.model);

    std::mt19937_64 init_rng(cfg.seed);
    Model model(cfg.model, init_rng);
    ParamSet params;
    model.register_params(params);
    if (cfg.stage == Stage::kJoint) load_checkpoint(cfg.pretrain_checkpoint, params);

    const std::vector<Scene> scenes = load_or_generate(cfg, cfg.train_scenes, 0);
    std::vector<Tensor> rasters(scenes.size());
    std::vector<DetectionLabels> labels(scenes.size());
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < static_cast<int>(scenes.size()); ++i) {
        rasters[static_cast<std::size_t>(i)] = rasterize(scenes[i]);
        labels[static_cast<std::size_t>(i)] = rasterize_labels(scenes[i]);
    }

    std::map<std::string, AdamState> opt;
    std::map<std::string, std::vector<float>> grads;
    for (const auto& [name, tensor] : params.items())
        grads[name].assign(tensor->data.size(), 0.f);

    const int steps_per_epoch =
        (cfg.train_scenes + cfg.batch_size - 1) / cfg.batch_size;
    const int total_steps =
        std::max(1, static_cast<int>(std::lround(cfg.epochs * steps_per_epoch)));

    std::ofstream log((fs::path(cfg.run_dir) / "loss_log.csv").string());
    log << "step,lr,plan,cls,reg,attn,sparsity,total\n";
    log.precision(8);

    std::mt19937_64 train_rng(cfg.seed ^ 0x5DEECE66DULL);
    std::vector<int> order(scenes.size());
    std::iota(order.begin(), order.end(), 0);
    int cursor = 0;
    int epoch_mark = 1;

    for (int step = 0; step < total_steps; ++step) {
        const double progress = static_cast<double>(step) / steps_per_epoch;
        // decay points sit at fixed fractions of the run (1.0 and 1.6 of 2 epochs)
        const float lr = static_cast<float>(lr_at(cfg.lr, progress * 2.0 / cfg.epochs));
        if (cursor == 0)
            std::shuffle(order.begin(), order.end(),
                         std::mt19937_64(cfg.seed + 77ULL * static_cast<unsigned>(step)));

        for (auto& [name, g] : grads) std::fill(g.begin(), g.end(), 0.f);
        double plan = 0, cls = 0, reg = 0, attn = 0, sparsity = 0, total_val = 0;
        const int batch = std::min<int>(cfg.batch_size, scenes.size());
        for (int b = 0; b < batch; ++b) {
            const int idx = order[static_cast<std::size_t>(cursor)];
            cursor = (cursor + 1) % static_cast<int>(scenes.size());
            Tape tape;
            model.bind(tape);
            SceneLoss loss = scene_loss(tape, model, cfg, scenes[idx],
                                        rasters[idx], labels[idx], train_rng);
            const Tensor total = total_loss(tape, loss.parts, cfg.weights, &params);
            if (!std::isfinite(total.data[0])) {
                dump_nan(cfg, step, scenes[idx], loss, total.data[0]);
                throw NumericError("non-finite loss at step " + std::to_string(step) +
                                   ", diagnostics in " + cfg.run_dir + "/nan_dump.txt");
            }
            tape.backward(total);
            for (const auto& [name, tensor] : params.items()) {
                const auto& g = tape.grad(*tensor);
                auto& acc = grads[name];
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
            }
            plan += loss.parts.plan.data[0];
            cls += loss.parts.cls.data[0];
            reg += loss.parts.reg.data[0];
            attn += loss.parts.attn.data[0];
            sparsity += loss.sparsity;
            total_val += total.data[0];
        }
        const float inv = 1.f / batch;
        for (auto& [name, tensor] : params.items()) {
            auto& g = grads[name];
            for (auto& v : g) v *= inv;
            adam_step(*tensor, g, opt[name], lr);
        }
        log << step << ',' << lr << ',' << plan * inv << ',' << cls * inv << ','
            << reg * inv << ',' << attn * inv << ',' << sparsity * inv << ','
            << total_val * inv << '\n';

        if ((step + 1.0) / steps_per_epoch >= epoch_mark) {
            save_checkpoint((fs::path(cfg.run_dir) /
                             ("ckpt_epoch_" + std::to_string(epoch_mark) + ".ckpt"))
                                .string(),
                            params);
            ++epoch_mark;
        }
    }
    save_checkpoint((fs::path(cfg.run_dir) / "final.ckpt").string(), params);
}

namespace {

struct ScoredHit {
    double score = 0;
    bool tp = false;
};

// per-scene greedy matching; results are pooled across scenes for global AP
void match_detections(const std::vector<Detection>& dets,
                      const std::vector<OrientedBox>& gts, double thresh,
                      std::vector<ScoredHit>& pool) {
    std::vector<Detection> ranked = dets;
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<bool> used(gts.size(), false);
    for (const auto& d : ranked) {
        int best = -1;
        double best_iou = thresh;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (used[g]) continue;
            const double iou = box_iou(d.box, gts[g]);
            if (iou >= best_iou) {
                best_iou = iou;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0) used[static_cast<std::size_t>(best)] = true;
        pool.push_back({d.score, best >= 0});
    }
}

double pooled_ap(std::vector<ScoredHit> pool, std::int64_t total_gts) {
    if (total_gts == 0) return 0.0;
    std::stable_sort(pool.begin(), pool.end(),
                     [](const ScoredHit& a, const ScoredHit& b) { return a.score > b.score; });
    std::vector<double> precision(pool.size()), recall(pool.size());
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool[i].tp) ++hits;
        precision[i] = static_cast<double>(hits) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(hits) / static_cast<double>(total_gts);
    }
    double ap = 0;
    for (int k = 0; k <= 10; ++k) {
        double p = 0;
        for (std::size_t i = 0; i < pool.size(); ++i)
            if (recall[i] >= k / 10.0) p = std::max(p, precision[i]);
        ap += p / 11.0;
    }
    return ap;
}

std::vector<Detection> detections_in_mask(const std::vector<Detection>& dets,
                                          const Tensor& mask, const SceneBounds& bounds) {
    std::vector<Detection> out;
    for (const auto& d : dets) {
        std::vector<OrientedBox> one = {d.box};
        if (!attended_subset(one, mask, bounds).empty()) out.push_back(d);
    }
    return out;
}

}  // namespace

MetricsReport evaluate_run(const RunConfig& cfg, const std::string& checkpoint) {
    std::mt19937_64 init_rng(cfg.seed);
    Model model(cfg.model, init_rng);
    ParamSet params;
    model.register_params(params);
    try {
        load_checkpoint(checkpoint, params);
    } catch (const TensorError& e) {
        throw TensorError(std::string("checkpoint does not match the model config: ") +
                          e.what());
    }

    const std::vector<Scene> scenes =
        load_or_generate(cfg, cfg.eval_scenes, 0x10000000ULL);

    MetricsReport report;
    report.scenes = static_cast<int>(scenes.size());
    int collisions = 0, violations = 0;
    double dense_flops = 0, sparse_flops = 0, sparsity = 0;
    std::vector<ScoredHit> pool_full[3], pool_att[3];
    std::int64_t gts_full = 0, gts_att = 0;

    const int rows = cfg.bounds.rows(), cols = cfg.bounds.cols();
    std::vector<ConvLayerSpec> layers = model.backbone.flop_layers(rows, cols);
    for (const auto& l : model.detection.flop_layers(rows / 4, cols / 4))
        layers.push_back(l);
    for (const auto& l : model.planning.flop_layers(rows / 4, cols / 4))
        layers.push_back(l);
    FlopReport last_flops;

    for (const Scene& scene : scenes) {
        const Tensor raster = rasterize(scene);
        Tape tape;
        std::mt19937_64 rng(scene.seed ^ 0xEDA7ULL);
        const SceneForward fwd =
            run_model(tape, model, raster, scene, cfg.mask_source, true, false, rng);

        const Trajectory gt = ego_ground_truth(scene);
        std::mt19937_64 plan_rng(scene.seed ^ 0x9E3779B9ULL);
        const auto samples =
            sample_trajectories(scene.ego_now(), gt.v0, cfg.plan_samples, plan_rng);
        const PlanResult plan = select(samples, fwd.cost_volume, cfg.bounds);

        const auto l2 = planning_l2(plan.chosen, gt);
        for (int t = 0; t < kFutureSteps; ++t) report.l2_per_step[t] += l2[t];
        if (has_collision(plan.chosen, scene)) ++collisions;
        if (has_lane_violation(plan.chosen, scene)) ++violations;

        const auto dets = extract_detections(fwd.detection.score, fwd.detection.regression,
                                             cfg.bounds, 0);
        std::vector<OrientedBox> gt_boxes;
        for (const auto& actor : scene.actors) gt_boxes.push_back(actor.box_at(0));
        gts_full += static_cast<std::int64_t>(gt_boxes.size());
        const auto att_boxes = attended_subset(gt_boxes, fwd.mask.hard, cfg.bounds);
        gts_att += static_cast<std::int64_t>(att_boxes.size());
        const auto att_dets = detections_in_mask(dets, fwd.mask.hard, cfg.bounds);
        for (int k = 0; k < 3; ++k) {
            match_detections(dets, gt_boxes, kMapIouThresholds[k], pool_full[k]);
            match_detections(att_dets, att_boxes, kMapIouThresholds[k], pool_att[k]);
        }

        last_flops = count_flops(layers, fwd.mask.hard, cfg.model.block_size);
        dense_flops += last_flops.dense_flops;
        sparse_flops += last_flops.sparse_flops;
        sparsity += fwd.mask.sparsity();
    }

    const double n = static_cast<double>(scenes.size());
    for (auto& v : report.l2_per_step) v /= n;
    report.planning_l2_at_3s = report.l2_per_step.back();
    report.collision_rate_pct = 100.0 * collisions / n;
    report.lane_violation_pct = 100.0 * violations / n;
    for (int k = 0; k < 3; ++k) {
        report.map_full[k] = pooled_ap(pool_full[k], gts_full);
        report.map_attended[k] = pooled_ap(pool_att[k], gts_att);
    }
    report.sparsity = sparsity / n;
    report.dense_flops = dense_flops / n;
    report.sparse_flops = sparse_flops / n;

    fs::create_directories(cfg.run_dir);
    save_metrics_csv((fs::path(cfg.run_dir) / "metrics.csv").string(), report);
    last_flops.dense_flops = report.dense_flops;
    last_flops.sparse_flops = report.sparse_flops;
    save_flops_csv((fs::path(cfg.run_dir) / "flops.csv").string(), last_flops);
    return report;
}

std::vector<SweepRow> sweep_sparsity(const RunConfig& base,
                                     const std::vector<float>& lambdas) {
    std::vector<SweepRow> rows;
    fs::create_directories(base.run_dir);
    std::ofstream csv((fs::path(base.run_dir) / "sweep.csv").string());
    csv << "lambda_attn,sparsity,l2_at_3s,collision_pct,lane_violation_pct\n";
    csv.precision(8);
    for (float lambda : lambdas) {
        RunConfig cfg = base;
        cfg.stage = Stage::kJoint;
        cfg.weights.lambda_attn = lambda;
        std::ostringstream sub;
        sub << "lambda_" << std::scientific << std::setprecision(1) << lambda;
        cfg.run_dir = (fs::path(base.run_dir) / sub.str()).string();
        train(cfg);
        const MetricsReport report =
            evaluate_run(cfg, (fs::path(cfg.run_dir) / "final.ckpt").string());
        SweepRow row;
        row.lambda_attn = lambda;
        row.sparsity = report.sparsity;
        row.l2 = report.planning_l2_at_3s;
        row.collision_pct = report.collision_rate_pct;
        row.lane_violation_pct = report.lane_violation_pct;
        rows.push_back(row);
        csv << lambda << ',' << row.sparsity << ',' << row.l2 << ','
            << row.collision_pct << ',' << row.lane_violation_pct << '\n';
        csv.flush();
    }
    return rows;
}

void save_composite_ppm(const std::string& path, const Scene& scene,
                        const AttentionMask* mask, const Trajectory* planned) {
    const int rows = scene.bounds.rows(), cols = scene.bounds.cols();
    std::vector<unsigned char> px(static_cast<std::size_t>(rows) * cols * 3, 0);
    auto at = [&](int r, int c) -> unsigned char* {
        return &px[(static_cast<std::size_t>(r) * cols + c) * 3];
    };

    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            if (scene.on_lane_surface(
                    {scene.bounds.x_of_col(c), scene.bounds.y_of_row(r)})) {
                unsigned char* p = at(r, c);
                p[0] = p[1] = p[2] = 100;
            }
    for (const auto& actor : scene.actors) {
        const OrientedBox box = actor.box_at(0);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c)
                if (box.contains({scene.bounds.x_of_col(c), scene.bounds.y_of_row(r)}))
                    at(r, c)[1] = 255;
    }
    {
        const Waypoint e = scene.ego_now();
        const OrientedBox ego{e.x, e.y, kAnchorLength, kAnchorWidth, e.theta};
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c)
                if (ego.contains({scene.bounds.x_of_col(c), scene.bounds.y_of_row(r)}))
                    at(r, c)[2] = 255;
    }
    if (planned) {
        Waypoint prev = scene.ego_now();
        for (const auto& w : planned->waypoints) {
            for (int s = 0; s <= 20; ++s) {
                const double f = s / 20.0;
                const double x = prev.x + f * (w.x - prev.x);
                const double y = prev.y + f * (w.y - prev.y);
                if (!scene.bounds.inside(x, y)) continue;
                unsigned char* p = at(scene.bounds.row_of(y), scene.bounds.col_of(x));
                p[1] = std::max<unsigned char>(p[1], 160);
                p[2] = 255;
            }
            prev = w;
        }
    }
    if (mask && mask->hard.numel() > 0) {
        const int mh = mask->hard.dim(1), mw = mask->hard.dim(2);
        const int ur = rows / mh, uc = cols / mw;
        for (int i = 0; i < mh; ++i)
            for (int j = 0; j < mw; ++j)
                if (mask->hard.at3(0, i, j) != 0.f)
                    for (int r = i * ur; r < (i + 1) * ur; ++r)
                        for (int c = j * uc; c < (j + 1) * uc; ++c) at(r, c)[0] = 255;
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw TensorError("save_composite_ppm: cannot open " + path);
    out << "P6\n" << cols << " " << rows << "\n255\n";
    out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

void visualize(const RunConfig& cfg, const std::string& checkpoint,
               std::uint64_t scene_seed, const std::string& prefix) {
    std::mt19937_64 init_rng(cfg.seed);
    Model model(cfg.model, init_rng);
    ParamSet params;
    model.register_params(params);
    load_checkpoint(checkpoint, params);

    const Scene scene = generate_scene(scene_seed, cfg.difficulty, cfg.bounds);
    const Tensor raster = rasterize(scene);
    Tape tape;
    std::mt19937_64 rng(scene_seed);
    const SceneForward fwd =
        run_model(tape, model, raster, scene, cfg.mask_source, true, false, rng);
    std::mt19937_64 plan_rng(scene_seed ^ 0x9E3779B9ULL);
    const auto samples = sample_trajectories(scene.ego_now(), ego_speed(scene),
                                             cfg.plan_samples, plan_rng);
    const PlanResult plan = select(samples, fwd.cost_volume, cfg.bounds);

    save_mask_pgm(prefix + "_mask.pgm", fwd.mask);
    save_composite_ppm(prefix + "_scene.ppm", scene, &fwd.mask, &plan.chosen);
}

}  // namespace sadrive
