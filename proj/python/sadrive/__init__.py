"""Sparse-attention motion planner: scene synthesis, planning, training, eval."""

from ._core import (
    FUTURE_STEPS,
    HEIGHT_SLICES,
    MAP_CHANNELS,
    PAST_SWEEPS,
    STEP_SECONDS,
    Actor,
    MetricsReport,
    NumericFailure,
    OrientedBox,
    RunConfig,
    SadriveError,
    Scene,
    SceneBounds,
    Trajectory,
    Waypoint,
    average_precision,
    baseline_mask,
    binarize,
    evaluate_cost,
    evaluate_run,
    generate_dataset,
    generate_scene,
    gumbel_noise,
    has_collision,
    has_lane_violation,
    load_scene,
    make_trajectory,
    planning_l2,
    rasterize,
    rasterize_labels,
    sample_trajectories,
    save_scene,
    select,
    tiny_model,
    train,
    visualize,
)

__all__ = [name for name in dir() if not name.startswith("_")]
