#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sadrive/trainer.hpp"

namespace fs = std::filesystem;
using namespace sadrive;

namespace {

struct CommonFlags {
    std::string run_dir = "run";
    std::uint64_t seed = 1;
    std::string difficulty = "urban";
    double height_m = 48.0, width_m = 48.0, resolution = 1.0;
    std::string model_config;
    std::string mask = "learned";
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--run-dir", flags.run_dir, "output directory for this run");
    cmd->add_option("--seed", flags.seed, "master RNG seed");
    cmd->add_option("--difficulty", flags.difficulty, "sparse | urban | dense");
    cmd->add_option("--height", flags.height_m, "grid height, meters");
    cmd->add_option("--width", flags.width_m, "grid width, meters");
    cmd->add_option("--resolution", flags.resolution, "meters per cell");
    cmd->add_option("--model-config", flags.model_config,
                    "model config file (default: built-in CPU profile)");
    cmd->add_option("--mask", flags.mask,
                    "learned | road | vehicle | proximity | dense");
    cmd->set_config("--config", "", "read options from a config file; flags override");
}

RunConfig build_config(const CommonFlags& flags) {
    RunConfig cfg;
    cfg.seed = flags.seed;
    cfg.run_dir = flags.run_dir;
    cfg.difficulty = difficulty_from_name(flags.difficulty);
    cfg.bounds.height_m = flags.height_m;
    cfg.bounds.width_m = flags.width_m;
    cfg.bounds.resolution = flags.resolution;
    cfg.model = flags.model_config.empty() ? desk_model_profile()
                                           : load_model_config(flags.model_config);
    cfg.mask_source = mask_source_from_name(flags.mask);
    return cfg;
}

int run(int argc, char** argv) {
    CLI::App app{"sparse-attention motion planner trainer"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a scene dataset");
    CommonFlags gen_flags;
    add_common(gen, gen_flags);
    std::string gen_out = "data";
    int gen_count = 100;
    gen->add_option("--out", gen_out, "dataset directory");
    gen->add_option("--count", gen_count, "number of scenes");

    // train
    auto* tr = app.add_subcommand("train", "train one stage");
    CommonFlags tr_flags;
    add_common(tr, tr_flags);
    std::string tr_stage = "dense-pretrain", tr_pretrain, tr_data;
    int tr_scenes = 2000, tr_batch = 4, tr_negatives = 24;
    double tr_epochs = 2.0;
    float tr_lr = 1e-4f, tr_lambda_a = 1e-6f, tr_gamma1 = 0.9f, tr_decay = 0.f;
    tr->add_option("--stage", tr_stage, "dense-pretrain | joint");
    tr->add_option("--pretrain", tr_pretrain, "checkpoint for the joint stage");
    tr->add_option("--data", tr_data, "scene dataset directory (default: generated)");
    tr->add_option("--scenes", tr_scenes, "training scenes");
    tr->add_option("--epochs", tr_epochs, "training epochs");
    tr->add_option("--batch", tr_batch, "batch size");
    tr->add_option("--negatives", tr_negatives, "planning-loss negatives");
    tr->add_option("--lr", tr_lr, "initial learning rate");
    tr->add_option("--lambda-a", tr_lambda_a, "attention sparsity weight");
    tr->add_option("--gamma1", tr_gamma1, "attended loss weight (gamma0 = 1 - gamma1)");
    tr->add_option("--weight-decay", tr_decay, "L2 weight decay");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    CommonFlags ev_flags;
    add_common(ev, ev_flags);
    std::string ev_ckpt, ev_data;
    int ev_scenes = 500, ev_samples = 200;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--data", ev_data, "scene dataset directory (default: generated)");
    ev->add_option("--scenes", ev_scenes, "evaluation scenes");
    ev->add_option("--plan-samples", ev_samples, "trajectory samples per scene");

    // sweep
    auto* sw = app.add_subcommand("sweep", "sparsity sweep over lambda_A");
    CommonFlags sw_flags;
    add_common(sw, sw_flags);
    std::string sw_pretrain;
    int sw_scenes = 200, sw_eval = 100, sw_batch = 4;
    double sw_epochs = 2.0;
    float sw_gamma1 = 0.9f;
    std::vector<float> sw_lambdas = {1e-8f, 1e-7f, 5e-7f, 1e-6f, 5e-6f};
    sw->add_option("--pretrain", sw_pretrain, "dense checkpoint")->required();
    sw->add_option("--scenes", sw_scenes, "training scenes per point");
    sw->add_option("--eval-scenes", sw_eval, "evaluation scenes per point");
    sw->add_option("--epochs", sw_epochs, "epochs per point");
    sw->add_option("--batch", sw_batch, "batch size");
    sw->add_option("--gamma1", sw_gamma1, "attended loss weight");
    sw->add_option("--lambda-list", sw_lambdas, "lambda_A grid");

    // viz
    auto* vz = app.add_subcommand("viz", "render mask and scene composite");
    CommonFlags vz_flags;
    add_common(vz, vz_flags);
    std::string vz_ckpt, vz_prefix = "viz";
    std::uint64_t vz_scene = 1;
    vz->add_option("--checkpoint", vz_ckpt, "checkpoint file")->required();
    vz->add_option("--scene-seed", vz_scene, "scene to render");
    vz->add_option("--out-prefix", vz_prefix, "output file prefix");

    // flops
    auto* fl = app.add_subcommand("flops", "per-layer FLOP report");
    CommonFlags fl_flags;
    add_common(fl, fl_flags);
    double fl_sparsity = 0.95;
    std::string fl_out = "flops.csv";
    fl->add_option("--sparsity", fl_sparsity, "target mask sparsity");
    fl->add_option("--out", fl_out, "CSV output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // help/version vs bad usage
    }

    if (gen->parsed()) {
        const RunConfig cfg = build_config(gen_flags);
        generate_dataset(gen_out, gen_count, cfg.seed, cfg.difficulty, cfg.bounds);
        std::cout << "wrote " << gen_count << " scenes to " << gen_out << "\n";
        return 0;
    }
    if (tr->parsed()) {
        RunConfig cfg = build_config(tr_flags);
        cfg.stage = stage_from_name(tr_stage);
        cfg.pretrain_checkpoint = tr_pretrain;
        cfg.dataset_dir = tr_data;
        cfg.train_scenes = tr_scenes;
        cfg.epochs = tr_epochs;
        cfg.batch_size = tr_batch;
        cfg.negatives = tr_negatives;
        cfg.lr = tr_lr;
        cfg.weights.lambda_attn = tr_lambda_a;
        cfg.weights.gamma1 = tr_gamma1;
        cfg.weights.gamma0 = 1.f - tr_gamma1;
        cfg.weights.weight_decay = tr_decay;
        train(cfg);
        std::cout << "checkpoint: " << (fs::path(cfg.run_dir) / "final.ckpt").string()
                  << "\n";
        return 0;
    }
    if (ev->parsed()) {
        RunConfig cfg = build_config(ev_flags);
        cfg.dataset_dir = ev_data;
        cfg.eval_scenes = ev_scenes;
        cfg.plan_samples = ev_samples;
        const MetricsReport report = evaluate_run(cfg, ev_ckpt);
        std::cout << format_metrics_table(report);
        return 0;
    }
    if (sw->parsed()) {
        RunConfig cfg = build_config(sw_flags);
        cfg.stage = Stage::kJoint;
        cfg.pretrain_checkpoint = sw_pretrain;
        cfg.train_scenes = sw_scenes;
        cfg.eval_scenes = sw_eval;
        cfg.epochs = sw_epochs;
        cfg.batch_size = sw_batch;
        cfg.weights.gamma1 = sw_gamma1;
        cfg.weights.gamma0 = 1.f - sw_gamma1;
        const auto rows = sweep_sparsity(cfg, sw_lambdas);
        std::cout << "lambda_A     sparsity  L2@3s   collision%  lane%\n";
        for (const auto& row : rows)
            std::printf("%-12g %-9.4f %-7.3f %-11.3f %-6.3f\n", row.lambda_attn,
                        row.sparsity, row.l2, row.collision_pct, row.lane_violation_pct);
        return 0;
    }
    if (vz->parsed()) {
        const RunConfig cfg = build_config(vz_flags);
        visualize(cfg, vz_ckpt, vz_scene, vz_prefix);
        std::cout << "wrote " << vz_prefix << "_mask.pgm and " << vz_prefix
                  << "_scene.ppm\n";
        return 0;
    }
    if (fl->parsed()) {
        const RunConfig cfg = build_config(fl_flags);
        std::mt19937_64 rng(cfg.seed);
        Model model(cfg.model, rng);
        const int rows = cfg.bounds.rows(), cols = cfg.bounds.cols();
        std::vector<ConvLayerSpec> layers = model.backbone.flop_layers(rows, cols);
        for (const auto& l : model.detection.flop_layers(rows / 4, cols / 4))
            layers.push_back(l);
        for (const auto& l : model.planning.flop_layers(rows / 4, cols / 4))
            layers.push_back(l);
        // deterministic block-aligned mask at the requested sparsity
        const int mh = rows / 4, mw = cols / 4;
        const int b = cfg.model.block_size;
        Tensor mask = Tensor::zeros({1, mh, mw});
        std::vector<std::pair<int, int>> tiles;
        for (int i = 0; i < mh / b; ++i)
            for (int j = 0; j < mw / b; ++j) tiles.emplace_back(i, j);
        std::shuffle(tiles.begin(), tiles.end(), rng);
        const auto active = static_cast<std::size_t>(
            std::lround((1.0 - fl_sparsity) * static_cast<double>(tiles.size())));
        for (std::size_t t = 0; t < active && t < tiles.size(); ++t)
            for (int r = tiles[t].first * b; r < (tiles[t].first + 1) * b; ++r)
                for (int c = tiles[t].second * b; c < (tiles[t].second + 1) * b; ++c)
                    mask.data[static_cast<std::size_t>(r) * mw + c] = 1.f;
        const FlopReport report = count_flops(layers, mask, cfg.model.block_size);
        save_flops_csv(fl_out, report);
        std::printf("dense %.4g  sparse %.4g  ratio %.3f  (mask sparsity %.3f)\n",
                    report.dense_flops, report.sparse_flops,
                    report.sparse_flops / report.dense_flops, report.sparsity);
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const TensorError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
