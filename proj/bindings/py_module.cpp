#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <random>

#include "sadrive/attention.hpp"
#include "sadrive/eval.hpp"
#include "sadrive/planner.hpp"
#include "sadrive/scene.hpp"
#include "sadrive/trainer.hpp"

namespace py = pybind11;
using namespace sadrive;

namespace {

py::array_t<float> to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<float> out(shape);
    std::copy(t.data.begin(), t.data.end(), out.mutable_data());
    return out;
}

Tensor from_numpy(const py::array& arr) {
    const auto a = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(arr);
    Tensor t;
    t.shape.assign(a.shape(), a.shape() + a.ndim());
    t.data.assign(a.data(), a.data() + a.size());
    return t;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "sparse-attention motion planner core";

    m.attr("FUTURE_STEPS") = kFutureSteps;
    m.attr("STEP_SECONDS") = kStepSeconds;
    m.attr("PAST_SWEEPS") = kPastSweeps;
    m.attr("HEIGHT_SLICES") = kHeightSlices;
    m.attr("MAP_CHANNELS") = kMapChannels;

    py::register_exception<TensorError>(m, "SadriveError");
    py::register_exception<NumericError>(m, "NumericFailure");

    py::class_<Waypoint>(m, "Waypoint")
        .def(py::init([](double x, double y, double theta) {
                 return Waypoint{x, y, theta};
             }),
             py::arg("x") = 0.0, py::arg("y") = 0.0, py::arg("theta") = 0.0)
        .def_readwrite("x", &Waypoint::x)
        .def_readwrite("y", &Waypoint::y)
        .def_readwrite("theta", &Waypoint::theta)
        .def("__repr__", [](const Waypoint& w) {
            return "Waypoint(x=" + std::to_string(w.x) + ", y=" + std::to_string(w.y) +
                   ", theta=" + std::to_string(w.theta) + ")";
        });

    py::class_<SceneBounds>(m, "SceneBounds")
        .def(py::init([](double height_m, double width_m, double resolution) {
                 return SceneBounds{height_m, width_m, resolution};
             }),
             py::arg("height_m") = 48.0, py::arg("width_m") = 48.0,
             py::arg("resolution") = 0.5)
        .def_readwrite("height_m", &SceneBounds::height_m)
        .def_readwrite("width_m", &SceneBounds::width_m)
        .def_readwrite("resolution", &SceneBounds::resolution)
        .def("rows", &SceneBounds::rows)
        .def("cols", &SceneBounds::cols);

    py::class_<OrientedBox>(m, "OrientedBox")
        .def(py::init([](double cx, double cy, double length, double width, double theta) {
                 return OrientedBox{cx, cy, length, width, theta};
             }),
             py::arg("cx"), py::arg("cy"), py::arg("length"), py::arg("width"),
             py::arg("theta") = 0.0)
        .def_readwrite("cx", &OrientedBox::cx)
        .def_readwrite("cy", &OrientedBox::cy)
        .def_readwrite("length", &OrientedBox::w)
        .def_readwrite("width", &OrientedBox::h)
        .def_readwrite("theta", &OrientedBox::theta);

    py::class_<Actor>(m, "Actor")
        .def_readonly("x", &Actor::x)
        .def_readonly("y", &Actor::y)
        .def_readonly("length", &Actor::length)
        .def_readonly("width", &Actor::width)
        .def_readonly("theta", &Actor::theta)
        .def_readonly("speed", &Actor::speed)
        .def("box_at", &Actor::box_at, py::arg("step"));

    py::class_<Scene>(m, "Scene")
        .def_readonly("seed", &Scene::seed)
        .def_readonly("actors", &Scene::actors)
        .def_readonly("bounds", &Scene::bounds)
        .def_property_readonly("num_actors",
                               [](const Scene& s) { return s.actors.size(); })
        .def_property_readonly("num_lanes",
                               [](const Scene& s) { return s.lanes.size(); })
        .def("ego_now", [](const Scene& s) { return s.ego_now(); })
        .def("ego_future", &Scene::ego_future, py::arg("step"))
        .def("on_lane_surface", [](const Scene& s, double x, double y) {
            return s.on_lane_surface({x, y});
        });

    m.def(
        "generate_scene",
        [](std::uint64_t seed, const std::string& difficulty, const SceneBounds& bounds) {
            return generate_scene(seed, difficulty_from_name(difficulty), bounds);
        },
        py::arg("seed"), py::arg("difficulty") = "urban",
        py::arg("bounds") = SceneBounds{});
    m.def("rasterize", [](const Scene& s) { return to_numpy(rasterize(s)); },
          py::arg("scene"), "Occupancy + map raster, shape [Z*T'+M, H, W].");
    m.def(
        "rasterize_labels",
        [](const Scene& s) {
            const DetectionLabels labels = rasterize_labels(s);
            return py::make_tuple(to_numpy(labels.score), to_numpy(labels.regression));
        },
        py::arg("scene"), "Quarter-resolution (score, regression) label maps.");
    m.def("save_scene", &save_scene, py::arg("path"), py::arg("scene"));
    m.def("load_scene", &load_scene, py::arg("path"));

    py::class_<Trajectory>(m, "Trajectory")
        .def_readonly("v0", &Trajectory::v0)
        .def_readonly("accel", &Trajectory::accel)
        .def_readonly("kappa0", &Trajectory::kappa0)
        .def_readonly("kappa_rate", &Trajectory::kappa_rate)
        .def_readonly("waypoints", &Trajectory::waypoints)
        .def_property_readonly("kind", [](const Trajectory& t) {
            switch (t.kind) {
                case Trajectory::Kind::kStraight: return "straight";
                case Trajectory::Kind::kCircle: return "circle";
                default: return "clothoid";
            }
        });

    m.def(
        "make_trajectory",
        [](const std::string& kind, const Waypoint& pose, double v0, double accel,
           double kappa0, double kappa_rate) {
            Trajectory::Kind k = Trajectory::Kind::kStraight;
            if (kind == "circle") k = Trajectory::Kind::kCircle;
            else if (kind == "clothoid") k = Trajectory::Kind::kClothoid;
            else if (kind != "straight") throw TensorError("unknown trajectory kind: " + kind);
            return make_trajectory(k, pose, v0, accel, kappa0, kappa_rate);
        },
        py::arg("kind"), py::arg("pose"), py::arg("v0"), py::arg("accel") = 0.0,
        py::arg("kappa0") = 0.0, py::arg("kappa_rate") = 0.0);
    m.def(
        "sample_trajectories",
        [](const Waypoint& pose, double speed, int n, std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            return sample_trajectories(pose, speed, n, rng);
        },
        py::arg("pose"), py::arg("speed"), py::arg("n"), py::arg("seed") = 0);
    m.def(
        "evaluate_cost",
        [](const Trajectory& traj, const py::array& cost_volume, const SceneBounds& bounds) {
            return evaluate_cost(traj, from_numpy(cost_volume), bounds);
        },
        py::arg("trajectory"), py::arg("cost_volume"), py::arg("bounds"));
    m.def(
        "select",
        [](const std::vector<Trajectory>& trajs, const py::array& cost_volume,
           const SceneBounds& bounds) {
            const PlanResult result =
                select(std::span(trajs.data(), trajs.size()), from_numpy(cost_volume), bounds);
            return py::make_tuple(result.index, result.cost, result.chosen);
        },
        py::arg("trajectories"), py::arg("cost_volume"), py::arg("bounds"),
        "Argmin over trajectories; returns (index, cost, trajectory).");

    m.def("gumbel_noise", &gumbel_noise, py::arg("u"));
    m.def(
        "binarize",
        [](const py::array& logits) {
            Tensor z = from_numpy(logits);
            if (z.ndim() == 2) z.shape = {1, z.dim(0), z.dim(1)};
            const Tensor zero = Tensor::zeros(z.shape);
            Tape tape;
            const AttentionMask mask = binarize(tape, make_logits(z, zero, zero), 1.f);
            return to_numpy(mask.hard);
        },
        py::arg("logits"), "Zero-noise hard mask: 1 where sigmoid(logit) >= 0.5.");
    m.def(
        "baseline_mask",
        [](const std::string& kind, const Scene& scene, double target_sparsity) {
            return to_numpy(
                baseline_mask(baseline_kind_from_name(kind), scene, target_sparsity).hard);
        },
        py::arg("kind"), py::arg("scene"), py::arg("target_sparsity") = 0.94);

    m.def("planning_l2", &planning_l2, py::arg("pred"), py::arg("gt"));
    m.def("has_collision", &has_collision, py::arg("trajectory"), py::arg("scene"));
    m.def("has_lane_violation", &has_lane_violation, py::arg("trajectory"), py::arg("scene"));
    m.def(
        "average_precision",
        [](const std::vector<std::pair<OrientedBox, double>>& detections,
           const std::vector<OrientedBox>& gts, double iou_threshold) {
            std::vector<Detection> dets;
            dets.reserve(detections.size());
            for (const auto& [box, score] : detections) dets.push_back({box, score});
            return average_precision(std::move(dets), gts, iou_threshold);
        },
        py::arg("detections"), py::arg("gts"), py::arg("iou_threshold") = 0.5,
        "detections: list of (OrientedBox, score) pairs.");

    py::class_<MetricsReport>(m, "MetricsReport")
        .def_readonly("planning_l2_at_3s", &MetricsReport::planning_l2_at_3s)
        .def_readonly("collision_rate_pct", &MetricsReport::collision_rate_pct)
        .def_readonly("lane_violation_pct", &MetricsReport::lane_violation_pct)
        .def_readonly("sparsity", &MetricsReport::sparsity)
        .def_readonly("dense_flops", &MetricsReport::dense_flops)
        .def_readonly("sparse_flops", &MetricsReport::sparse_flops)
        .def_readonly("scenes", &MetricsReport::scenes)
        .def_property_readonly("l2_per_step",
                               [](const MetricsReport& r) {
                                   return std::vector<double>(r.l2_per_step.begin(),
                                                              r.l2_per_step.end());
                               })
        .def_property_readonly("map_full",
                               [](const MetricsReport& r) {
                                   return std::vector<double>(r.map_full.begin(),
                                                              r.map_full.end());
                               })
        .def_property_readonly("map_attended", [](const MetricsReport& r) {
            return std::vector<double>(r.map_attended.begin(), r.map_attended.end());
        });

    py::class_<RunConfig>(m, "RunConfig")
        .def(py::init<>())
        .def_readwrite("seed", &RunConfig::seed)
        .def_readwrite("train_scenes", &RunConfig::train_scenes)
        .def_readwrite("eval_scenes", &RunConfig::eval_scenes)
        .def_readwrite("epochs", &RunConfig::epochs)
        .def_readwrite("lr", &RunConfig::lr)
        .def_readwrite("batch_size", &RunConfig::batch_size)
        .def_readwrite("negatives", &RunConfig::negatives)
        .def_readwrite("plan_samples", &RunConfig::plan_samples)
        .def_readwrite("bounds", &RunConfig::bounds)
        .def_readwrite("run_dir", &RunConfig::run_dir)
        .def_readwrite("pretrain_checkpoint", &RunConfig::pretrain_checkpoint)
        .def_readwrite("dataset_dir", &RunConfig::dataset_dir)
        .def_property(
            "stage", [](const RunConfig& c) { return std::string(stage_name(c.stage)); },
            [](RunConfig& c, const std::string& s) { c.stage = stage_from_name(s); })
        .def_property(
            "mask_source",
            [](const RunConfig& c) { return std::string(mask_source_name(c.mask_source)); },
            [](RunConfig& c, const std::string& s) {
                c.mask_source = mask_source_from_name(s);
            })
        .def_property(
            "difficulty",
            [](const RunConfig& c) { return std::string(difficulty_name(c.difficulty)); },
            [](RunConfig& c, const std::string& s) {
                c.difficulty = difficulty_from_name(s);
            })
        .def_property(
            "lambda_attn", [](const RunConfig& c) { return c.weights.lambda_attn; },
            [](RunConfig& c, float v) { c.weights.lambda_attn = v; })
        .def_property(
            "gamma1", [](const RunConfig& c) { return c.weights.gamma1; },
            [](RunConfig& c, float v) {
                c.weights.gamma1 = v;
                c.weights.gamma0 = 1.f - v;
            });

    m.def(
        "tiny_model",
        [](RunConfig& cfg) {
            cfg.model.stem_channels = 8;
            cfg.model.base_channels = 16;
            cfg.model.branch_widths[0] = 8;
            cfg.model.branch_widths[1] = 8;
            cfg.model.branch_widths[2] = 16;
            cfg.model.gated_hidden = 16;
            cfg.model.blocks = 1;
            cfg.model.attention_tap = "stem";
        },
        py::arg("config"), "Shrink the model profile for fast smoke runs.");

    m.def(
        "generate_dataset",
        [](const std::string& dir, int count, std::uint64_t seed,
           const std::string& difficulty, const SceneBounds& bounds) {
            generate_dataset(dir, count, seed, difficulty_from_name(difficulty), bounds);
        },
        py::arg("dir"), py::arg("count"), py::arg("seed") = 1,
        py::arg("difficulty") = "urban", py::arg("bounds") = SceneBounds{});
    m.def("train", &train, py::arg("config"),
          py::call_guard<py::gil_scoped_release>());
    m.def("evaluate_run", &evaluate_run, py::arg("config"), py::arg("checkpoint"),
          py::call_guard<py::gil_scoped_release>());
    m.def("visualize", &visualize, py::arg("config"), py::arg("checkpoint"),
          py::arg("scene_seed"), py::arg("prefix"));
}
