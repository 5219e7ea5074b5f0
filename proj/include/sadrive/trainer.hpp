#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sadrive/attention.hpp"
#include "sadrive/backbone.hpp"
#include "sadrive/eval.hpp"
#include "sadrive/losses.hpp"
#include "sadrive/planner.hpp"
#include "sadrive/scene.hpp"

namespace sadrive {

// Non-finite loss or activations; the CLI maps this to exit code 3.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Stage { kDensePretrain, kJoint };
enum class MaskSource { kLearned, kRoad, kVehicle, kProximity, kDense };

Stage stage_from_name(const std::string& name);
const char* stage_name(Stage stage);
MaskSource mask_source_from_name(const std::string& name);
const char* mask_source_name(MaskSource source);

struct RunConfig {
    std::uint64_t seed = 1;
    int train_scenes = 2000;
    int eval_scenes = 500;
    Stage stage = Stage::kDensePretrain;
    double epochs = 2.0;
    float lr = 1e-4f;
    int batch_size = 4;
    int negatives = 24;            // planning-loss negatives per scene
    int plan_samples = 200;        // trajectories at eval time
    LossWeights weights;
    MaskSource mask_source = MaskSource::kLearned;
    Difficulty difficulty = Difficulty::kUrban;
    SceneBounds bounds{48.0, 48.0, 1.0};
    BackboneConfig model;
    std::string run_dir = "run";
    std::string pretrain_checkpoint;   // required for the joint stage
    std::string dataset_dir;           // empty: generate scenes from the seed
};

// CPU-sized model profile used when no model config is given.
BackboneConfig desk_model_profile();

void save_run_config(const std::string& path, const RunConfig& cfg);
RunConfig load_run_config(const std::string& path);

// 1e-4 schedule with 0.1 decay at 1.0 and 1.6 epochs, scaled to cfg.epochs=2.
double lr_at(double base_lr, double epoch_progress);

// Backbone, attention scorer, and both headers with a shared parameter set.
struct Model {
    BackboneConfig cfg;
    Backbone backbone;
    UNetScorer scorer;
    DetectionHeader detection;
    PlanningHeader planning;

    Model(const BackboneConfig& cfg, std::mt19937_64& rng);
    void register_params(ParamSet& params);
    void bind(Tape& tape);
};

struct SceneForward {
    AttentionMask mask;     // empty hard tensor when running ungated
    Tensor features;
    DetectionOutput detection;
    Tensor cost_volume;     // [T, rows, cols]
};

// One full forward pass. mask_source kLearned draws Gumbel noise from `rng`
// when `training` is set and uses zero noise otherwise; the dense-pretrain
// stage passes gated=false to skip the mask entirely.
SceneForward run_model(Tape& tape, const Model& model, const Tensor& raster,
                       const Scene& scene, MaskSource mask_source, bool gated,
                       bool training, std::mt19937_64& rng);

double ego_speed(const Scene& scene);
Trajectory ego_ground_truth(const Scene& scene);

void generate_dataset(const std::string& dir, int count, std::uint64_t seed,
                      Difficulty difficulty, const SceneBounds& bounds);

// Runs the configured stage; writes config snapshot, per-step loss CSV,
// per-epoch checkpoints, and final.ckpt under cfg.run_dir.
void train(const RunConfig& cfg);

// Loads the checkpoint and evaluates over cfg.eval_scenes held-out scenes;
// writes metrics.csv and flops.csv under cfg.run_dir.
MetricsReport evaluate_run(const RunConfig& cfg, const std::string& checkpoint);

struct SweepRow {
    float lambda_attn = 0;
    double sparsity = 0, l2 = 0, collision_pct = 0, lane_violation_pct = 0;
};

// One joint training per lambda; rows also land in <run_dir>/sweep.csv.
std::vector<SweepRow> sweep_sparsity(const RunConfig& base,
                                     const std::vector<float>& lambdas);

// PPM composite: gray map, green actors, blue ego and plan, red attention
// overlay (red channel saturated exactly on active mask cells).
void save_composite_ppm(const std::string& path, const Scene& scene,
                        const AttentionMask* mask, const Trajectory* planned);

// Emits <prefix>_mask.pgm and <prefix>_scene.ppm for one scene.
void visualize(const RunConfig& cfg, const std::string& checkpoint,
               std::uint64_t scene_seed, const std::string& prefix);

}  // namespace sadrive
