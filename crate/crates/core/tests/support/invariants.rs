//! Property checks for every module's invariants. Each check runs its own
//! deterministic proptest runner so the same list can back both the
//! per-module property tests and the acceptance report.

#![allow(dead_code)]

use std::collections::BinaryHeap;
use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hsi_core::character::{observe, step, Action, PostureMode, StepConfig, SurrogateState};
use hsi_core::control::Controller;
use hsi_core::eval::{read_trials_csv, summarize, write_trials_csv, TrialResult};
use hsi_core::geom::{
    normalize_angle, rotate2, rotation6d_decode, rotation6d_encode, OrientedBox, Pose2D, Vec2, Vec3,
};
use hsi_core::net::Mlp;
use hsi_core::oracle::OracleController;
use hsi_core::planner::{
    astar, generate_training_trajectory, path_to_trajectory, TrajectoryGenConfig,
};
use hsi_core::scene::{
    randomize_object, rasterize, Bounds, ObjectCategory, ObjectInstance, OccupancyGrid, Scene,
};
use hsi_core::scheduler::{validate, ActionSpec, Scheduler, SchedulerConfig, Status, TickEvent};
use hsi_core::tasks::{
    build_goal, check_iet, reward_far, reward_getup, reward_lie_getup, reward_liedown, reward_near,
    reward_sit, reward_traj, terminate, EnvResources, GoalSource, TaskConfig, TaskEnv, TaskKind,
    Termination,
};
use hsi_core::trainer::amp::STYLE_REWARD_FLOOR;
use hsi_core::trainer::ppo::surrogate;
use hsi_core::trainer::{compute_gae, mixed_reward, style_reward, Trainer, TrainerConfig};

pub type Check = fn(u32) -> Result<(), String>;

/// `(module, invariant, check)` for every property.
pub const ALL: &[(&str, &str, Check)] = &[
    (
        "geom",
        "local frame round trip",
        geom_local_frame_round_trip,
    ),
    (
        "geom",
        "6D rotation decode of encode",
        geom_rotation6d_round_trip,
    ),
    (
        "geom",
        "box vertices periodic in yaw",
        geom_vertices_periodic,
    ),
    (
        "scene",
        "sit target 0.10 m above seat",
        scene_sit_target_lift,
    ),
    (
        "scene",
        "rasterization monotone in obstacles",
        scene_raster_monotone,
    ),
    (
        "scene",
        "randomized objects stay in bounds",
        scene_randomize_in_bounds,
    ),
    (
        "character",
        "step deterministic, speed bounded",
        character_step_bounded,
    ),
    (
        "character",
        "no obstacle penetration",
        character_no_penetration,
    ),
    (
        "character",
        "observation translation invariant",
        character_observe_translation,
    ),
    ("tasks", "rewards in (0, 1]", tasks_rewards_in_unit_interval),
    (
        "tasks",
        "near and traj rewards strictly decreasing",
        tasks_rewards_decreasing,
    ),
    ("tasks", "far reward peaks at target speed", tasks_far_peak),
    (
        "tasks",
        "IET accumulator monotone, reset to 0",
        tasks_iet_monotone,
    ),
    (
        "tasks",
        "goal invariant under rigid world motion",
        tasks_goal_invariance,
    ),
    ("tasks", "termination priority", tasks_termination_priority),
    ("net", "finite-difference gradient", net_gradient_check),
    ("net", "forward is pure", net_forward_pure),
    (
        "net",
        "parameter serialization bit-exact",
        net_serialization_round_trip,
    ),
    ("trainer", "GAE equals brute force", trainer_gae_oracle),
    (
        "trainer",
        "mixed reward is the weighted sum",
        trainer_mixed_reward,
    ),
    (
        "trainer",
        "PPO clipped region is flat",
        trainer_ppo_clipping,
    ),
    (
        "trainer",
        "style reward in [floor, 1]",
        trainer_style_reward_range,
    ),
    ("trainer", "training bit-reproducible", trainer_reproducible),
    ("planner", "A* cost equals Dijkstra", planner_astar_optimal),
    (
        "planner",
        "query window continuous",
        planner_window_continuous,
    ),
    (
        "planner",
        "trajectory spacing model",
        planner_trajectory_spacing,
    ),
    (
        "scheduler",
        "targets, ordering, timers, transitions",
        scheduler_execution,
    ),
    (
        "eval",
        "summary recomputed from trial CSV",
        eval_summary_from_csv,
    ),
];

/// Runner with a fixed seed so failures reproduce.
fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let rng = TestRng::deterministic_rng(RngAlgorithm::ChaCha);
    TestRunner::new_with_rng(config, rng)
        .run(&strategy, test)
        .map_err(|e| e.to_string())
}

fn arb_state() -> impl Strategy<Value = SurrogateState> {
    (
        -20.0f64..20.0,
        -20.0f64..20.0,
        0.2f64..0.95,
        -4.0f64..4.0,
        -1.4f64..1.4,
        -1.4f64..1.4,
        0.0f64..1.0,
    )
        .prop_map(|(x, y, h, hd, vx, vy, p)| {
            let mut s = SurrogateState::standing(Vec2::new(x, y), hd);
            s.root_height = h;
            s.root_vel = Vec2::new(vx, vy);
            s.posture = p;
            s.refresh_derived();
            s
        })
}

fn arb_action() -> impl Strategy<Value = Action> {
    prop::array::uniform5(-1.5f64..1.5).prop_map(|a| Action::from_slice(&a))
}

fn arb_category() -> impl Strategy<Value = ObjectCategory> {
    prop::sample::select(ObjectCategory::ALL.to_vec())
}

fn arb_object() -> impl Strategy<Value = ObjectInstance> {
    (
        arb_category(),
        -3.0f64..3.0,
        -3.0f64..3.0,
        -4.0f64..4.0,
        0.8f64..1.2,
    )
        .prop_map(|(c, x, y, yaw, s)| {
            let (d, w, h, seat) = c.nominal_size();
            ObjectInstance::new(
                "o",
                c,
                Vec2::new(x, y),
                yaw,
                Vec3::new(d * s, w * s, h * s),
                seat * s,
            )
            .unwrap()
        })
}

fn arb_obstacle(range: f64) -> impl Strategy<Value = OrientedBox> {
    (
        -range..range,
        -range..range,
        -PI..PI,
        0.05f64..1.0,
        0.05f64..1.0,
    )
        .prop_map(|(x, y, yaw, hx, hy)| {
            OrientedBox::new(Vec3::new(x, y, 0.5), yaw, Vec3::new(hx, hy, 0.5)).unwrap()
        })
}

// ---- geom

fn geom_local_frame_round_trip(cases: u32) -> Result<(), String> {
    let s = (
        prop::array::uniform3(-50.0f64..50.0),
        -50.0f64..50.0,
        -50.0f64..50.0,
        -4.0f64..4.0,
    );
    run(cases, s, |(p, fx, fy, h)| {
        let f = Pose2D::new(Vec2::new(fx, fy), h);
        let p = Vec3::new(p[0], p[1], p[2]);
        prop_assert!((f.to_world(f.to_local(p)) - p).norm() < 1e-9);
        Ok(())
    })
}

fn geom_rotation6d_round_trip(cases: u32) -> Result<(), String> {
    run(cases, -10.0f64..10.0, |yaw| {
        let back = rotation6d_decode(&rotation6d_encode(yaw)).unwrap();
        prop_assert!(normalize_angle(back - yaw).abs() < 1e-9);
        Ok(())
    })
}

fn geom_vertices_periodic(cases: u32) -> Result<(), String> {
    run(
        cases,
        (-4.0f64..4.0, 0.05f64..3.0, 0.05f64..3.0),
        |(yaw, hx, hy)| {
            let a =
                OrientedBox::new(Vec3::new(1.0, -2.0, 0.4), yaw, Vec3::new(hx, hy, 0.4)).unwrap();
            let b = OrientedBox {
                yaw: yaw + 2.0 * PI,
                ..a
            };
            for (p, q) in a.vertices().iter().zip(b.vertices().iter()) {
                prop_assert!((p - q).norm() < 1e-9);
            }
            Ok(())
        },
    )
}

// ---- scene

fn scene_sit_target_lift(cases: u32) -> Result<(), String> {
    run(
        cases,
        (arb_object(), -5.0f64..5.0, -5.0f64..5.0, -4.0f64..4.0),
        |(o, x, y, yaw)| {
            for obj in [o.clone(), o.placed(Vec2::new(x, y), yaw)] {
                prop_assert!((obj.sit_target.z - obj.seat_height - 0.10).abs() < 1e-12);
            }
            Ok(())
        },
    )
}

fn scene_raster_monotone(cases: u32) -> Result<(), String> {
    let s = (
        prop::collection::vec(arb_obstacle(3.5), 0..4),
        arb_obstacle(3.5),
        0.0f64..0.4,
    );
    run(cases, s, |(obstacles, extra, inflation)| {
        let bounds = Bounds::square(4.0);
        let before = Scene::new(vec![], obstacles.clone(), bounds).unwrap();
        let mut more = obstacles;
        more.push(extra);
        let after = Scene::new(vec![], more, bounds).unwrap();
        let g0 = rasterize(&before, 0.2, inflation, &[]).unwrap();
        let g1 = rasterize(&after, 0.2, inflation, &[]).unwrap();
        for y in 0..g0.height {
            for x in 0..g0.width {
                prop_assert!(!g0.is_blocked((x, y)) || g1.is_blocked((x, y)));
            }
        }
        Ok(())
    })
}

fn scene_randomize_in_bounds(cases: u32) -> Result<(), String> {
    let s = (
        arb_object(),
        -6.0f64..6.0,
        -6.0f64..6.0,
        any::<u64>(),
        any::<bool>(),
    );
    run(cases, s, |(o, cx, cy, seed, full_yaw)| {
        let bounds = Bounds::square(8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = Vec2::new(cx, cy);
        let placed =
            randomize_object(&o, c, &mut rng, (1.0, 5.0), full_yaw, Some(&bounds)).unwrap();
        prop_assert!(bounds.contains_box(&placed.bbox));
        let d = (placed.center_xy() - c).norm();
        prop_assert!((1.0 - 1e-9..=5.0 + 1e-9).contains(&d));
        Ok(())
    })
}

// ---- character

fn open_scene() -> Scene {
    Scene::empty(Bounds::square(100.0))
}

fn character_step_bounded(cases: u32) -> Result<(), String> {
    run(cases, (arb_state(), arb_action()), |(s, a)| {
        let cfg = StepConfig::default();
        let n1 = step(&s, &a, &cfg, &open_scene()).unwrap();
        let n2 = step(&s, &a, &cfg, &open_scene()).unwrap();
        prop_assert_eq!(n1, n2);
        prop_assert!(n1.speed() <= cfg.max_speed + 1e-12);
        Ok(())
    })
}

fn character_no_penetration(cases: u32) -> Result<(), String> {
    let s = (
        prop::collection::vec(arb_obstacle(2.0), 1..4),
        -3.0f64..3.0,
        -3.0f64..3.0,
        -PI..PI,
        prop::collection::vec(arb_action(), 1..20),
    );
    run(cases, s, |(obstacles, x, y, heading, actions)| {
        let cfg = StepConfig::default();
        let scene = Scene::new(vec![], obstacles, Bounds::square(10.0)).unwrap();
        let mut st = SurrogateState::standing(Vec2::new(x, y), heading);
        if scene
            .obstacles()
            .iter()
            .any(|o| o.distance_xy(st.root_pos) < cfg.radius)
        {
            return Ok(());
        }
        // tolerance of one planning cell for crowded corners
        let tol = 0.1;
        for a in &actions {
            st = step(&st, a, &cfg, &scene).unwrap();
            for o in scene.obstacles() {
                prop_assert!(o.distance_xy(st.root_pos) >= cfg.radius - tol);
            }
        }
        Ok(())
    })
}

fn character_observe_translation(cases: u32) -> Result<(), String> {
    run(
        cases,
        (arb_state(), -30.0f64..30.0, -30.0f64..30.0),
        |(s, dx, dy)| {
            prop_assert_eq!(observe(&s), observe(&s.translated(Vec2::new(dx, dy))));
            Ok(())
        },
    )
}

// ---- tasks

fn v3() -> impl Strategy<Value = Vec3> {
    // kept within a room: exp(-10 d²) underflows to 0 beyond d ≈ 8.6 m
    prop::array::uniform3(-2.5f64..2.5).prop_map(|a| Vec3::new(a[0], a[1], a[2].abs()))
}

fn v2(r: f64) -> impl Strategy<Value = Vec2> {
    prop::array::uniform2(-r..r).prop_map(|a| Vec2::new(a[0], a[1]))
}

fn in_unit(r: f64) -> bool {
    r > 0.0 && r <= 1.0
}

fn tasks_rewards_in_unit_interval(cases: u32) -> Result<(), String> {
    let s = (
        v3(),
        v3(),
        v2(2.5),
        v2(2.0),
        0.0f64..2.0,
        0.0f64..2.0,
        v2(2.5),
    );
    run(cases, s, |(g, x, star, vel, head, foot, p)| {
        let cfg = TaskConfig::default();
        let root2 = Vec2::new(x.x, x.y);
        let d = hsi_core::tasks::horizontal_unit(root2, star);
        prop_assert!(in_unit(reward_near(g, x)));
        prop_assert!(in_unit(reward_far(cfg.target_speed, d, vel)));
        prop_assert!(in_unit(reward_sit(g, star, x, vel, &cfg)));
        prop_assert!(in_unit(reward_traj(root2, p)));
        let mut st = SurrogateState::standing(root2, 0.0).with_mode(PostureMode::Lie);
        st.root_height = x.z;
        st.root_vel = vel;
        st.posture = (head / 2.0).min(1.0);
        st.refresh_derived();
        prop_assert!(in_unit(reward_liedown(g, star, &st, &cfg)));
        prop_assert!(in_unit(reward_getup(g, x)));
        prop_assert!(in_unit(reward_lie_getup(g, x, 0.0, foot, 1.65, head)));
        Ok(())
    })
}

fn tasks_rewards_decreasing(cases: u32) -> Result<(), String> {
    run(
        cases,
        (0.0f64..4.0, 1e-6f64..2.0, v2(1.0)),
        |(d1, gap, dir)| {
            let d2 = d1 + gap;
            let u = if dir.norm() > 1e-6 {
                dir.normalize()
            } else {
                Vec2::new(1.0, 0.0)
            };
            let g = Vec3::new(0.3, -0.2, 0.5);
            let at = |d: f64| g + Vec3::new(u.x * d, u.y * d, 0.0);
            prop_assert!(reward_near(g, at(d1)) > reward_near(g, at(d2)));
            let p = Vec2::new(g.x, g.y);
            prop_assert!(reward_traj(p + u * d1, p) > reward_traj(p + u * d2, p));
            Ok(())
        },
    )
}

fn tasks_far_peak(cases: u32) -> Result<(), String> {
    run(cases, (-PI..PI, v2(2.5)), |(angle, vel)| {
        let d = Vec2::new(angle.cos(), angle.sin());
        let peak = reward_far(1.5, Some(d), d * 1.5);
        prop_assert!((peak - 1.0).abs() < 1e-12);
        prop_assert!(reward_far(1.5, Some(d), vel) <= peak);
        Ok(())
    })
}

fn tasks_iet_monotone(cases: u32) -> Result<(), String> {
    let s = (prop::collection::vec(v3(), 1..60), 0u32..40, any::<u64>());
    run(cases, s, |(positions, iet, seed)| {
        let cfg = TaskConfig {
            iet_steps: iet,
            ..TaskConfig::default()
        };
        let g = Vec3::new(0.0, 0.0, 0.5);
        let mut acc = 0;
        for p in positions {
            // pull every other sample into the radius
            let x = if seed % 2 == 0 { g + (p - g) * 0.05 } else { p };
            let (next, fired) = check_iet(acc, x, g, &cfg);
            prop_assert!(next >= acc && next <= acc + 1);
            prop_assert_eq!(fired, iet > 0 && next >= iet);
            acc = next;
        }
        let res = EnvResources {
            objects: vec![ObjectInstance::nominal(
                "c",
                ObjectCategory::Chair,
                Vec2::zeros(),
                0.0,
            )]
            .into(),
            pose_db: None,
        };
        let mut env =
            TaskEnv::new(TaskKind::Sit, cfg, StepConfig::default(), res, seed, true).unwrap();
        let oracle = OracleController::default();
        let mut last = 0;
        for _ in 0..40 {
            let f = env.features();
            let a = oracle.act(&env.control_input(&f));
            let o = env.step(&a);
            if o.termination.is_done() {
                break;
            }
            prop_assert!(env.iet_accum() >= last);
            last = env.iet_accum();
        }
        env.reset();
        prop_assert_eq!(env.iet_accum(), 0);
        Ok(())
    })
}

fn tasks_goal_invariance(cases: u32) -> Result<(), String> {
    let s = (
        arb_state(),
        arb_object(),
        v3(),
        v2(20.0),
        -PI..PI,
        any::<u64>(),
        0.0f64..8.0,
    );
    run(cases, s, |(st, obj, target, shift, angle, seed, t)| {
        let mv2 = |p: Vec2| rotate2(p, angle) + shift;
        let mv3 = |p: Vec3| {
            let q = mv2(Vec2::new(p.x, p.y));
            Vec3::new(q.x, q.y, p.z)
        };
        let st2 = {
            let mut s = st.rotated(angle).translated(shift);
            s.refresh_derived();
            s
        };
        let obj2 = obj.placed(mv2(obj.center_xy()), obj.yaw() + angle);
        let a = build_goal(
            &st,
            GoalSource::Interaction {
                object: &obj,
                target,
            },
        );
        let b = build_goal(
            &st2,
            GoalSource::Interaction {
                object: &obj2,
                target: mv3(target),
            },
        );
        prop_assert_eq!(a.len(), 38);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traj = generate_training_trajectory(
            &mut rng,
            Pose2D::new(st.root_pos, st.heading),
            &Bounds::square(60.0),
            &TrajectoryGenConfig::default(),
        )
        .unwrap();
        let moved =
            hsi_core::Trajectory::new(traj.points().iter().map(|&p| mv2(p)).collect()).unwrap();
        let a = build_goal(
            &st,
            GoalSource::Path {
                trajectory: &traj,
                time: t,
            },
        );
        let b = build_goal(
            &st2,
            GoalSource::Path {
                trajectory: &moved,
                time: t,
            },
        );
        prop_assert_eq!(a.len(), 20);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        Ok(())
    })
}

fn tasks_termination_priority(cases: u32) -> Result<(), String> {
    let s = (
        arb_state(),
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
        0u32..20,
        1u32..20,
        v2(4.0),
    );
    run(
        cases,
        s,
        |(mut st, fall, path, iet, step_i, max_steps, p)| {
            let cfg = TaskConfig::default();
            if fall {
                st.root_height = 0.1;
                st.posture = 0.0;
                st.refresh_derived();
            } else {
                st.root_height = 0.9;
            }
            let point = path.then_some(st.root_pos + p);
            let deviates = point.is_some_and(|q| (st.root_pos - q).norm() > cfg.deviation_limit);
            let expected = if fall {
                Termination::Fall
            } else if deviates {
                Termination::Deviation
            } else if iet {
                Termination::Iet
            } else if step_i >= max_steps {
                Termination::Timeout
            } else {
                Termination::None
            };
            let got = terminate(&st, point, iet, step_i, max_steps, &cfg);
            prop_assert_eq!(got, expected);
            prop_assert_eq!(terminate(&st, point, iet, step_i, max_steps, &cfg), got);
            Ok(())
        },
    )
}

// ---- net

fn arb_shape() -> impl Strategy<Value = Vec<usize>> {
    (
        1usize..8,
        prop::collection::vec(1usize..10, 1..3),
        1usize..4,
    )
        .prop_map(|(i, h, o)| {
            let mut s = vec![i];
            s.extend(h);
            s.push(o);
            s
        })
}

/// `L = Σ w ⊙ f(x)` and its analytic parameter gradient.
fn weighted_loss(net: &Mlp, x: &Array2<f64>, w: &Array2<f64>) -> f64 {
    (net.forward(x.view()) * w).sum()
}

fn net_gradient_check(cases: u32) -> Result<(), String> {
    run(
        cases,
        (arb_shape(), any::<u64>(), 1usize..4),
        |(sizes, seed, batch)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = Mlp::new(&sizes, 1.0, &mut rng);
            // random biases keep pre-activations off the ReLU kink
            for p in net.params_mut() {
                *p += rng.random_range(-0.5..0.5);
            }
            let x = Array2::from_shape_fn((batch, sizes[0]), |_| rng.random_range(-1.0..1.0));
            let w = Array2::from_shape_fn((batch, *sizes.last().unwrap()), |_| {
                rng.random_range(-1.0..1.0)
            });
            let (_, cache) = net.forward_cached(x.view());
            let mut grad = vec![0.0; net.num_params()];
            net.backward(&cache, w.view(), &mut grad);
            let k = rng.random_range(0..net.num_params());
            let h = 1e-6;
            let shifted = |d: f64| {
                let mut n = net.clone();
                n.params_mut()[k] += d;
                weighted_loss(&n, &x, &w)
            };
            let (lp, l0, lm) = (shifted(h), weighted_loss(&net, &x, &w), shifted(-h));
            let (right, left) = ((lp - l0) / h, (l0 - lm) / h);
            if (right - left).abs() > 1e-3 * right.abs().max(left.abs()).max(1.0) {
                // a kink lies inside the stencil
                return Ok(());
            }
            let fd = (lp - lm) / (2.0 * h);
            let err = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-3);
            prop_assert!(err < 1e-4, "param {}: fd {} vs {}", k, fd, grad[k]);
            Ok(())
        },
    )
}

fn net_forward_pure(cases: u32) -> Result<(), String> {
    run(cases, (arb_shape(), any::<u64>()), |(sizes, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&sizes, 1.0, &mut rng);
        let before = net.params().to_vec();
        let x = Array2::from_shape_fn((3, sizes[0]), |_| rng.random_range(-2.0..2.0));
        let a = net.forward(x.view());
        let (b, _) = net.forward_cached(x.view());
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(net.forward(x.view()), a);
        prop_assert_eq!(net.params(), &before[..]);
        Ok(())
    })
}

fn net_serialization_round_trip(cases: u32) -> Result<(), String> {
    run(cases, (arb_shape(), any::<u64>()), |(sizes, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::new(&sizes, 1.0, &mut rng);
        // include awkward magnitudes
        for p in net.params_mut().iter_mut().step_by(3) {
            *p *= rng.random_range(1e-12..1e12);
        }
        let back: Mlp = serde_json::from_str(&serde_json::to_string(&net).unwrap()).unwrap();
        prop_assert_eq!(back.sizes(), net.sizes());
        for (a, b) in back.params().iter().zip(net.params()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        Ok(())
    })
}

// ---- trainer

/// Direct sum `Σ_l (γλ)^l δ_{t+l}` up to the first episode end.
pub fn gae_brute_force(
    rewards: &Array2<f64>,
    values: &Array2<f64>,
    dones: &Array2<bool>,
    bootstrap: &Array1<f64>,
    gamma: f64,
    lambda: f64,
) -> Array2<f64> {
    let (t_max, n) = rewards.dim();
    let mut out = Array2::zeros((t_max, n));
    for e in 0..n {
        let next_v = |t: usize| {
            if t + 1 == t_max {
                bootstrap[e]
            } else {
                values[(t + 1, e)]
            }
        };
        for t in 0..t_max {
            let mut acc = 0.0;
            let mut weight = 1.0;
            for l in t..t_max {
                let live = if dones[(l, e)] { 0.0 } else { 1.0 };
                let delta = rewards[(l, e)] + gamma * next_v(l) * live - values[(l, e)];
                acc += weight * delta;
                if dones[(l, e)] {
                    break;
                }
                weight *= gamma * lambda;
            }
            out[(t, e)] = acc;
        }
    }
    out
}

/// Random rollout batch for GAE checks.
pub fn random_gae_batch(
    rng: &mut impl Rng,
) -> (
    Array2<f64>,
    Array2<f64>,
    Array2<bool>,
    Array1<f64>,
    f64,
    f64,
) {
    let t = rng.random_range(1..40);
    let n = rng.random_range(1..6);
    let r = Array2::from_shape_fn((t, n), |_| rng.random_range(-1.0..1.0));
    let v = Array2::from_shape_fn((t, n), |_| rng.random_range(-5.0..5.0));
    let d = Array2::from_shape_fn((t, n), |_| rng.random_bool(0.15));
    let b = Array1::from_shape_fn(n, |_| rng.random_range(-5.0..5.0));
    (
        r,
        v,
        d,
        b,
        rng.random_range(0.8..1.0),
        rng.random_range(0.0..=1.0),
    )
}

fn trainer_gae_oracle(cases: u32) -> Result<(), String> {
    run(cases, any::<u64>(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, v, d, b, g, l) = random_gae_batch(&mut rng);
        let (adv, ret) = compute_gae(r.view(), v.view(), d.view(), b.view(), g, l);
        let oracle = gae_brute_force(&r, &v, &d, &b, g, l);
        let diff = (&adv - &oracle).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(diff <= 1e-6, "max diff {}", diff);
        prop_assert!((&ret - &(&adv + &v)).iter().all(|x| x.abs() < 1e-12));
        Ok(())
    })
}

fn trainer_mixed_reward(cases: u32) -> Result<(), String> {
    run(
        cases,
        (0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0),
        |(g, s, wg)| {
            let ws = 1.0 - wg;
            let m = mixed_reward(g, s, wg, ws);
            prop_assert_eq!(m, wg * g + ws * s);
            prop_assert!(m >= g.min(s) - 1e-15 && m <= g.max(s) + 1e-15);
            Ok(())
        },
    )
}

fn trainer_ppo_clipping(cases: u32) -> Result<(), String> {
    run(
        cases,
        (
            0.05f64..0.4,
            1e-3f64..5.0,
            any::<bool>(),
            0.0f64..3.0,
            0.0f64..3.0,
        ),
        |(eps, mag, positive, u1, u2)| {
            // ratios beyond the clip edge in the direction the advantage pushes
            let (adv, r1, r2) = if positive {
                (mag, 1.0 + eps + u1, 1.0 + eps + u2)
            } else {
                (-mag, (1.0 - eps) * (-u1).exp(), (1.0 - eps) * (-u2).exp())
            };
            let (l1, g1) = surrogate(r1, adv, eps);
            let (l2, g2) = surrogate(r2, adv, eps);
            prop_assert!((l1 - l2).abs() < 1e-12);
            prop_assert_eq!(g1, 0.0);
            prop_assert_eq!(g2, 0.0);
            Ok(())
        },
    )
}

fn trainer_style_reward_range(cases: u32) -> Result<(), String> {
    let s = prop_oneof![
        -10.0f64..10.0,
        -1e12f64..1e12,
        Just(1.0),
        Just(f64::MAX),
        Just(f64::MIN)
    ];
    run(cases, s, |d| {
        let r = style_reward(d);
        prop_assert!((STYLE_REWARD_FLOOR..=1.0).contains(&r));
        Ok(())
    })
}

fn tiny_trainer_config() -> TrainerConfig {
    TrainerConfig {
        num_envs: 2,
        horizon: 4,
        ppo_batch: 4,
        amp_batch: 4,
        policy_hidden: vec![4],
        value_hidden: vec![4],
        disc_hidden: vec![4],
        reference_episodes: 1,
        ..TrainerConfig::desk()
    }
}

fn trainer_reproducible(cases: u32) -> Result<(), String> {
    let res = EnvResources {
        objects: vec![ObjectInstance::nominal(
            "c",
            ObjectCategory::Stool,
            Vec2::zeros(),
            0.0,
        )]
        .into(),
        pose_db: None,
    };
    let kinds = prop::sample::select(vec![TaskKind::Sit, TaskKind::Follow]);
    run(cases, (any::<u64>(), kinds), |(seed, kind)| {
        let go = || {
            let mut t = Trainer::new(
                kind,
                tiny_trainer_config(),
                TaskConfig::default(),
                res.clone(),
                seed,
            )
            .unwrap();
            let m: Vec<_> = (0..2).map(|_| t.iterate()).collect();
            (m, t.skill().policy.mean.params().to_vec())
        };
        let (m1, p1) = go();
        let (m2, p2) = go();
        prop_assert_eq!(format!("{m1:?}"), format!("{m2:?}"));
        prop_assert!(p1.iter().zip(&p2).all(|(a, b)| a.to_bits() == b.to_bits()));
        Ok(())
    })
}

// ---- planner

/// Random grid with the given blocked fraction.
pub fn random_grid(rng: &mut impl Rng, w: usize, h: usize, blocked: f64) -> OccupancyGrid {
    let mut g = OccupancyGrid::new(Vec2::zeros(), 1.0, w, h);
    for y in 0..h {
        for x in 0..w {
            if rng.random_bool(blocked) {
                g.set_blocked((x, y), true);
            }
        }
    }
    g
}

/// Optimal `(straight, diagonal)` move counts by Dijkstra, with its own
/// neighbour rule: diagonal steps need both side cells free.
pub fn dijkstra_moves(
    g: &OccupancyGrid,
    start: (usize, usize),
    goal: (usize, usize),
) -> Option<(usize, usize)> {
    #[derive(PartialEq)]
    struct Node(f64, usize, usize, usize);
    impl Eq for Node {}
    impl Ord for Node {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            o.0.total_cmp(&self.0)
        }
    }
    impl PartialOrd for Node {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    let (w, h) = (g.width, g.height);
    let free = |x: i64, y: i64| {
        x >= 0
            && y >= 0
            && (x as usize) < w
            && (y as usize) < h
            && !g.is_blocked((x as usize, y as usize))
    };
    if !free(start.0 as i64, start.1 as i64) || !free(goal.0 as i64, goal.1 as i64) {
        return None;
    }
    let mut best: Vec<Option<(usize, usize)>> = vec![None; w * h];
    let cost = |m: (usize, usize)| m.0 as f64 + m.1 as f64 * SQRT_2;
    let mut heap = BinaryHeap::new();
    best[start.1 * w + start.0] = Some((0, 0));
    heap.push(Node(0.0, start.0 + start.1 * w, 0, 0));
    while let Some(Node(c, i, s, d)) = heap.pop() {
        if best[i].is_some_and(|m| cost(m) < c) {
            continue;
        }
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        if (x as usize, y as usize) == goal {
            return Some((s, d));
        }
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                if (dx, dy) == (0, 0) || !free(x + dx, y + dy) {
                    continue;
                }
                let diag = dx != 0 && dy != 0;
                if diag && (!free(x + dx, y) || !free(x, y + dy)) {
                    continue;
                }
                let m = if diag { (s, d + 1) } else { (s + 1, d) };
                let j = (y + dy) as usize * w + (x + dx) as usize;
                if best[j].is_none_or(|b| cost(m) < cost(b)) {
                    best[j] = Some(m);
                    heap.push(Node(cost(m), j, m.0, m.1));
                }
            }
        }
    }
    None
}

/// One random instance: A* and Dijkstra agree on solvability and optimal
/// move counts, and A* returns the same path when rerun.
pub fn astar_instance(
    rng: &mut impl Rng,
    w: usize,
    h: usize,
    blocked: f64,
) -> Result<bool, String> {
    let g = random_grid(rng, w, h, blocked);
    let s = (rng.random_range(0..w), rng.random_range(0..h));
    let t = (rng.random_range(0..w), rng.random_range(0..h));
    let oracle = dijkstra_moves(&g, s, t);
    match (astar(&g, s, t), oracle) {
        (Ok(p), Some(m)) => {
            if (p.straight_moves, p.diagonal_moves) != m {
                return Err(format!(
                    "A* {:?} vs Dijkstra {:?}",
                    (p.straight_moves, p.diagonal_moves),
                    m
                ));
            }
            let again = astar(&g, s, t).map_err(|e| e.to_string())?;
            if again != p {
                return Err("A* path differs between runs".into());
            }
            Ok(true)
        }
        (Err(_), None) => Ok(false),
        (a, b) => Err(format!(
            "solvability disagrees: A* {:?}, Dijkstra {:?}",
            a.is_ok(),
            b
        )),
    }
}

fn planner_astar_optimal(cases: u32) -> Result<(), String> {
    run(
        cases,
        (any::<u64>(), 2usize..24, 2usize..24, 0.0f64..0.4),
        |(seed, w, h, p)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            astar_instance(&mut rng, w, h, p).map_err(TestCaseError::fail)?;
            Ok(())
        },
    )
}

fn planner_window_continuous(cases: u32) -> Result<(), String> {
    run(
        cases,
        (any::<u64>(), 0.0f64..14.0, 1e-4f64..0.05),
        |(seed, t, dt)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let traj = generate_training_trajectory(
                &mut rng,
                Pose2D::identity(),
                &Bounds::square(40.0),
                &TrajectoryGenConfig::default(),
            )
            .unwrap();
            let speed = traj.max_spacing() / 0.1;
            let a = traj.query_window(t);
            let b = traj.query_window(t + dt);
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).norm() <= speed * dt + 1e-9);
            }
            Ok(())
        },
    )
}

fn planner_trajectory_spacing(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 0.5f64..2.0), |(seed, speed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_grid(&mut rng, 30, 30, 0.15);
        let s = (rng.random_range(0..30), rng.random_range(0..30));
        let t = (rng.random_range(0..30), rng.random_range(0..30));
        let Ok(path) = astar(&g, s, t) else {
            return Ok(());
        };
        let traj = path_to_trajectory(&path, speed, &g).unwrap();
        let pts = traj.points();
        prop_assert!((traj.duration() - (pts.len() - 1) as f64 * 0.1).abs() < 1e-12);
        prop_assert!(traj.max_spacing() <= speed * 0.1 + 1e-9);
        prop_assert!((traj.start() - g.cell_center(s)).norm() < 1e-9);
        prop_assert!((traj.end() - g.cell_center(t)).norm() < 1e-9);
        Ok(())
    })
}

// ---- scheduler

fn scheduler_execution(cases: u32) -> Result<(), String> {
    let objs = vec![
        ObjectInstance::nominal("a", ObjectCategory::Chair, Vec2::new(-2.5, 0.0), 0.0),
        ObjectInstance::nominal("b", ObjectCategory::Stool, Vec2::new(2.5, 1.0), PI),
    ];
    let scene = Scene::new(objs, vec![], Bounds::square(5.0)).unwrap();
    let specs = vec![
        ActionSpec::interact(TaskKind::Sit, "a"),
        ActionSpec::interact(TaskKind::GetUp, "a"),
        ActionSpec::follow_auto(),
        ActionSpec::interact(TaskKind::Sit, "b"),
    ];
    let plan = validate(&specs, &scene, std::path::Path::new(".")).unwrap();
    let oracle: Arc<dyn Controller> = Arc::new(OracleController::default());
    run(
        cases,
        (-1.5f64..-0.5, -1.0f64..1.0, -PI..PI, 0usize..4),
        |(x, y, heading, len)| {
            let plan = &plan[..len.max(1)];
            let step_cfg = StepConfig::default();
            let dt = step_cfg.control_dt();
            let mut state = SurrogateState::standing(Vec2::new(x, y), heading);
            let task_cfg = TaskConfig::default();
            let mut sched = Scheduler::new(
                &scene,
                plan,
                task_cfg,
                SchedulerConfig::default(),
                &mut state,
            );
            let mut transitions = 0;
            let mut last_idx = 0;
            let mut ticks = 0;
            while sched.status() == Status::Running {
                let idx = sched.index();
                prop_assert!(idx >= last_idx && idx < plan.len());
                last_idx = idx;
                let inst = &plan[idx];
                match inst.kind {
                    TaskKind::Follow => prop_assert!(sched.trajectory().is_some()),
                    _ => {
                        let id = sched.object().map(|o| o.id.clone());
                        prop_assert_eq!(id, inst.object.clone());
                    }
                }
                let mut features = observe(&state).to_vec();
                features.extend(sched.goal(&state));
                let input = hsi_core::ControlInput {
                    kind: inst.kind,
                    state: &state,
                    features: &features,
                    target: sched.target(),
                    object: sched.object(),
                    trajectory: sched.trajectory(),
                    time: sched.action_time(),
                };
                let a = oracle.act(&input);
                state = step(&state, &a, &step_cfg, &scene).unwrap();
                match sched.tick(&mut state, dt) {
                    TickEvent::Advanced(i) => {
                        prop_assert_eq!(i, idx);
                        prop_assert_eq!(sched.overlap(), 0.0);
                        transitions += 1;
                    }
                    TickEvent::Done => transitions += 1,
                    _ => {}
                }
                ticks += 1;
                prop_assert!(ticks < 10_000);
            }
            if sched.status() == Status::Done {
                prop_assert_eq!(transitions, plan.len());
            }
            Ok(())
        },
    )
}

// ---- eval

fn eval_summary_from_csv(cases: u32) -> Result<(), String> {
    let row = (any::<bool>(), 0.0f64..30.0, 0.0f64..2.0).prop_map(|(success, time_s, error_m)| {
        TrialResult {
            trial: 0,
            success,
            time_s,
            error_m,
            termination: if success {
                Termination::Iet
            } else {
                Termination::Timeout
            },
        }
    });
    run(cases, prop::collection::vec(row, 1..50), |mut rows| {
        for (i, r) in rows.iter_mut().enumerate() {
            r.trial = i;
        }
        let mut buf = Vec::new();
        write_trials_csv(&rows, &mut buf).unwrap();
        let back = read_trials_csv(buf.as_slice()).unwrap();
        let s = summarize(&rows);
        prop_assert_eq!(summarize(&back), s);
        prop_assert!((0.0..=100.0).contains(&s.success_rate));
        Ok(())
    })
}
