//! Module invariants checked over 1000 generated cases each.

mod support;

use support::invariants::ALL;

const CASES: u32 = 1000;

fn check(module: &str, name: &str) {
    let (_, _, f) = ALL
        .iter()
        .find(|(m, n, _)| *m == module && *n == name)
        .unwrap_or_else(|| panic!("no check {module}/{name}"));
    if let Err(e) = f(CASES) {
        panic!("{module}: {name}: {e}");
    }
}

#[test]
fn every_check_has_a_test() {
    assert_eq!(ALL.len(), 28);
}

#[test]
fn geom_local_frame_round_trip() {
    check("geom", "local frame round trip");
}

#[test]
fn geom_rotation6d_round_trip() {
    check("geom", "6D rotation decode of encode");
}

#[test]
fn geom_vertices_periodic() {
    check("geom", "box vertices periodic in yaw");
}

#[test]
fn scene_sit_target_lift() {
    check("scene", "sit target 0.10 m above seat");
}

#[test]
fn scene_raster_monotone() {
    check("scene", "rasterization monotone in obstacles");
}

#[test]
fn scene_randomize_in_bounds() {
    check("scene", "randomized objects stay in bounds");
}

#[test]
fn character_step_bounded() {
    check("character", "step deterministic, speed bounded");
}

#[test]
fn character_no_penetration() {
    check("character", "no obstacle penetration");
}

#[test]
fn character_observe_translation() {
    check("character", "observation translation invariant");
}

#[test]
fn tasks_rewards_in_unit_interval() {
    check("tasks", "rewards in (0, 1]");
}

#[test]
fn tasks_rewards_decreasing() {
    check("tasks", "near and traj rewards strictly decreasing");
}

#[test]
fn tasks_far_peak() {
    check("tasks", "far reward peaks at target speed");
}

#[test]
fn tasks_iet_monotone() {
    check("tasks", "IET accumulator monotone, reset to 0");
}

#[test]
fn tasks_goal_invariance() {
    check("tasks", "goal invariant under rigid world motion");
}

#[test]
fn tasks_termination_priority() {
    check("tasks", "termination priority");
}

#[test]
fn net_gradient_check() {
    check("net", "finite-difference gradient");
}

#[test]
fn net_forward_pure() {
    check("net", "forward is pure");
}

#[test]
fn net_serialization_round_trip() {
    check("net", "parameter serialization bit-exact");
}

#[test]
fn trainer_gae_oracle() {
    check("trainer", "GAE equals brute force");
}

#[test]
fn trainer_mixed_reward() {
    check("trainer", "mixed reward is the weighted sum");
}

#[test]
fn trainer_ppo_clipping() {
    check("trainer", "PPO clipped region is flat");
}

#[test]
fn trainer_style_reward_range() {
    check("trainer", "style reward in [floor, 1]");
}

#[test]
fn trainer_reproducible() {
    check("trainer", "training bit-reproducible");
}

#[test]
fn planner_astar_optimal() {
    check("planner", "A* cost equals Dijkstra");
}

#[test]
fn planner_window_continuous() {
    check("planner", "query window continuous");
}

#[test]
fn planner_trajectory_spacing() {
    check("planner", "trajectory spacing model");
}

#[test]
fn scheduler_execution() {
    check("scheduler", "targets, ordering, timers, transitions");
}

#[test]
fn eval_summary_from_csv() {
    check("eval", "summary recomputed from trial CSV");
}
