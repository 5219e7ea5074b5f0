#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "sadrive/trainer.hpp"

using namespace sadrive;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// small enough to train hundreds of steps in a unit test
RunConfig tiny_run(const std::string& dir) {
    RunConfig cfg;
    cfg.run_dir = dir;
    cfg.seed = 11;
    cfg.train_scenes = 10;
    cfg.eval_scenes = 4;
    cfg.batch_size = 2;
    cfg.negatives = 8;
    cfg.plan_samples = 40;
    cfg.bounds = {32.0, 32.0, 1.0};
    cfg.model.input_channels = kHeightSlices * kPastSweeps + kMapChannels;
    cfg.model.stem_channels = 8;
    cfg.model.base_channels = 16;
    cfg.model.branch_widths[0] = 8;
    cfg.model.branch_widths[1] = 8;
    cfg.model.branch_widths[2] = 16;
    cfg.model.gated_hidden = 16;
    cfg.model.blocks = 1;
    cfg.model.attention_tap = "stem";
    return cfg;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& sub = "") const { return (path / sub).string(); }
};

}  // namespace

TEST_CASE("learning rate schedule") {
    CHECK(lr_at(1e-4, 0.0) == doctest::Approx(1e-4));
    CHECK(lr_at(1e-4, 0.5) == doctest::Approx(1e-4));
    CHECK(lr_at(1e-4, 1.2) == doctest::Approx(1e-5));
    CHECK(lr_at(1e-4, 1.8) == doctest::Approx(1e-6));
}

TEST_CASE("run config round trip") {
    TempDir tmp("sadrive_cfg_test");
    RunConfig cfg = tiny_run(tmp.str("run"));
    cfg.stage = Stage::kJoint;
    cfg.mask_source = MaskSource::kProximity;
    cfg.weights.lambda_attn = 5e-7f;
    cfg.weights.gamma1 = 0.8f;
    cfg.pretrain_checkpoint = "some/ckpt";
    const std::string path = tmp.str("config.txt");
    save_run_config(path, cfg);
    const RunConfig back = load_run_config(path);
    CHECK(back.seed == cfg.seed);
    CHECK(back.train_scenes == cfg.train_scenes);
    CHECK(back.stage == Stage::kJoint);
    CHECK(back.mask_source == MaskSource::kProximity);
    CHECK(back.weights.lambda_attn == cfg.weights.lambda_attn);
    CHECK(back.weights.gamma1 == cfg.weights.gamma1);
    CHECK(back.bounds.resolution == cfg.bounds.resolution);
    CHECK(back.pretrain_checkpoint == "some/ckpt");

    std::ofstream bad(path);
    bad << "sadrive-run v1\nnot_a_key 1\n";
    bad.close();
    CHECK_THROWS_AS(load_run_config(path), TensorError);
    CHECK_THROWS_AS(stage_from_name("nope"), TensorError);
    CHECK_THROWS_AS(mask_source_from_name("nope"), TensorError);
}

TEST_CASE("joint stage requires a pretrain checkpoint") {
    TempDir tmp("sadrive_joint_guard");
    RunConfig cfg = tiny_run(tmp.str("run"));
    cfg.stage = Stage::kJoint;
    cfg.train_scenes = 2;
    cfg.epochs = 0.5;
    CHECK_THROWS_AS(train(cfg), TensorError);
}

TEST_CASE("dense overfit: total loss drops at least 10x in 500 steps") {
    TempDir tmp("sadrive_overfit");
    RunConfig cfg = tiny_run(tmp.str("run"));
    cfg.epochs = 100.0;  // 10 scenes, batch 2 -> 5 steps per epoch, 500 steps
    cfg.lr = 1e-3f;      // overfit aggressively
    train(cfg);

    std::ifstream log(tmp.str("run/loss_log.csv"));
    std::string line;
    std::getline(log, line);  // header
    std::vector<double> totals;
    while (std::getline(log, line)) {
        const auto pos = line.rfind(',');
        totals.push_back(std::stod(line.substr(pos + 1)));
    }
    REQUIRE(totals.size() == 500);
    double early = 0, late = 0;
    for (int i = 0; i < 5; ++i) early += totals[static_cast<std::size_t>(i)] / 5;
    for (int i = 495; i < 500; ++i) late += totals[static_cast<std::size_t>(i)] / 5;
    INFO("early=", early, " late=", late);
    CHECK(late * 10.0 <= early);
    CHECK(fs::exists(tmp.str("run/final.ckpt")));
    CHECK(fs::exists(tmp.str("run/config.txt")));
}

TEST_CASE("training is bit-deterministic given the seed") {
    TempDir tmp("sadrive_deterministic");
    RunConfig a = tiny_run(tmp.str("a"));
    RunConfig b = tiny_run(tmp.str("b"));
    a.epochs = b.epochs = 4.0;
    train(a);
    train(b);
    CHECK(slurp(tmp.str("a/loss_log.csv")) == slurp(tmp.str("b/loss_log.csv")));
    CHECK(slurp(tmp.str("a/final.ckpt")) == slurp(tmp.str("b/final.ckpt")));

    RunConfig c = tiny_run(tmp.str("c"));
    c.seed = 12;
    c.epochs = 4.0;
    train(c);
    CHECK(slurp(tmp.str("a/loss_log.csv")) != slurp(tmp.str("c/loss_log.csv")));
}

TEST_CASE("dataset files reproduce the in-memory scene stream") {
    TempDir tmp("sadrive_dataset");
    generate_dataset(tmp.str("data"), 10, 11, Difficulty::kUrban, {32.0, 32.0, 1.0});
    RunConfig from_disk = tiny_run(tmp.str("disk"));
    from_disk.dataset_dir = tmp.str("data");
    from_disk.epochs = 2.0;
    RunConfig in_memory = tiny_run(tmp.str("mem"));
    in_memory.epochs = 2.0;
    train(from_disk);
    train(in_memory);
    CHECK(slurp(tmp.str("disk/loss_log.csv")) == slurp(tmp.str("mem/loss_log.csv")));

    RunConfig starved = tiny_run(tmp.str("starved"));
    starved.dataset_dir = tmp.str("data");
    starved.train_scenes = 50;
    CHECK_THROWS_AS(train(starved), TensorError);
}

TEST_CASE("joint stage trains from a dense checkpoint and logs sparsity") {
    TempDir tmp("sadrive_joint");
    RunConfig dense = tiny_run(tmp.str("dense"));
    dense.epochs = 2.0;
    train(dense);

    RunConfig joint = tiny_run(tmp.str("joint"));
    joint.stage = Stage::kJoint;
    joint.pretrain_checkpoint = tmp.str("dense/final.ckpt");
    joint.epochs = 2.0;
    joint.weights.lambda_attn = 1e-6f;
    train(joint);

    std::ifstream log(tmp.str("joint/loss_log.csv"));
    std::string header, first;
    std::getline(log, header);
    std::getline(log, first);
    CHECK(header == "step,lr,plan,cls,reg,attn,sparsity,total");
    // zero-init scorer with Gumbel noise: attention term starts near half the cells
    std::istringstream ss(first);
    std::string field;
    for (int i = 0; i <= 5; ++i) std::getline(ss, field, ',');
    CHECK(std::stod(field) > 0.0);
}

TEST_CASE("huge learning rate aborts with a numeric diagnostic") {
    TempDir tmp("sadrive_nan");
    RunConfig cfg = tiny_run(tmp.str("run"));
    cfg.lr = 1e18f;
    cfg.epochs = 20.0;
    CHECK_THROWS_AS(train(cfg), NumericError);
    CHECK(fs::exists(tmp.str("run/nan_dump.txt")));
}

TEST_CASE("evaluation is deterministic and writes reports") {
    TempDir tmp("sadrive_eval");
    RunConfig cfg = tiny_run(tmp.str("run"));
    cfg.epochs = 2.0;
    train(cfg);
    RunConfig eval_cfg = cfg;
    eval_cfg.mask_source = MaskSource::kDense;
    const MetricsReport a = evaluate_run(eval_cfg, tmp.str("run/final.ckpt"));
    const MetricsReport b = evaluate_run(eval_cfg, tmp.str("run/final.ckpt"));
    CHECK(a.planning_l2_at_3s == b.planning_l2_at_3s);
    CHECK(a.collision_rate_pct == b.collision_rate_pct);
    CHECK(a.map_full == b.map_full);
    CHECK(a.sparsity == 0.0);  // dense mask
    CHECK(a.collision_rate_pct >= 0.0);
    CHECK(a.collision_rate_pct <= 100.0);
    CHECK(a.dense_flops > 0.0);
    CHECK(a.sparse_flops <= a.dense_flops + 1e-6);
    CHECK(fs::exists(tmp.str("run/metrics.csv")));
    CHECK(fs::exists(tmp.str("run/flops.csv")));

    // baseline masks give nonzero sparsity
    eval_cfg.mask_source = MaskSource::kProximity;
    const MetricsReport c = evaluate_run(eval_cfg, tmp.str("run/final.ckpt"));
    CHECK(c.sparsity > 0.5);

    RunConfig mismatch = eval_cfg;
    mismatch.model.base_channels = 24;
    CHECK_THROWS_AS(evaluate_run(mismatch, tmp.str("run/final.ckpt")), TensorError);
}

TEST_CASE("composite raster invariants") {
    TempDir tmp("sadrive_ppm");
    const SceneBounds bounds{32.0, 32.0, 1.0};
    const Scene scene = generate_scene(5, Difficulty::kUrban, bounds);
    const int rows = bounds.rows(), cols = bounds.cols();

    AttentionMask mask;
    mask.hard = Tensor::zeros({1, rows / 4, cols / 4});
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> bit(0, 1);
    int active = 0;
    for (auto& v : mask.hard.data) {
        v = static_cast<float>(bit(rng));
        active += v != 0.f;
    }

    const std::string path = tmp.str("scene.ppm");
    save_composite_ppm(path, scene, &mask, nullptr);
    const std::string ppm = slurp(path);
    const auto header_end = ppm.find("255\n") + 4;
    REQUIRE(ppm.size() - header_end == static_cast<std::size_t>(rows) * cols * 3);
    int red = 0, green = 0;
    for (std::size_t i = header_end; i < ppm.size(); i += 3) {
        if (static_cast<unsigned char>(ppm[i]) == 255) ++red;
        if (static_cast<unsigned char>(ppm[i + 1]) == 255) ++green;
    }
    CHECK(red == active * 16);  // 4x4 pixels per mask cell
    CHECK(green > 0);           // urban scene has actors

    // dense mask saturates the red channel everywhere
    AttentionMask dense;
    dense.hard = Tensor::full({1, rows / 4, cols / 4}, 1.f);
    save_composite_ppm(path, scene, &dense, nullptr);
    const std::string dense_ppm = slurp(path);
    for (std::size_t i = header_end; i < dense_ppm.size(); i += 3)
        REQUIRE(static_cast<unsigned char>(dense_ppm[i]) == 255);

    // empty scene: no actors, so no saturated green
    Scene empty;
    empty.bounds = bounds;
    empty.ego_track.assign(kPastSweeps + kFutureSteps, Waypoint{});
    save_composite_ppm(path, empty, nullptr, nullptr);
    const std::string empty_ppm = slurp(path);
    for (std::size_t i = header_end; i < empty_ppm.size(); i += 3)
        REQUIRE(static_cast<unsigned char>(empty_ppm[i + 1]) != 255);
}

TEST_CASE("visualize emits mask and composite files") {
    TempDir tmp("sadrive_viz");
    RunConfig cfg = tiny_run(tmp.str("run"));
    cfg.epochs = 1.0;
    train(cfg);
    visualize(cfg, tmp.str("run/final.ckpt"), 7, tmp.str("viz"));
    CHECK(fs::exists(tmp.str("viz_mask.pgm")));
    CHECK(fs::exists(tmp.str("viz_scene.ppm")));
    const std::string pgm = slurp(tmp.str("viz_mask.pgm"));
    CHECK(pgm.rfind("P5", 0) == 0);
}
