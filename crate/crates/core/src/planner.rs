//! Grid A* search and the fixed-rate trajectories consumed by the
//! trajectory-following controller.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};
use std::io::{Read, Write};

use crate::error::PlanError;
use crate::geom::{heading_dir, Pose2D, Vec2};
use crate::scene::{Bounds, OccupancyGrid};

/// Time between consecutive trajectory points, seconds.
pub const TRAJ_DT: f64 = 0.1;
/// Number of look-ahead points fed to the follow policy.
pub const WINDOW_LEN: usize = 10;

pub type Cell = (usize, usize);

/// 2D points sampled every [`TRAJ_DT`] seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    points: Vec<Vec2>,
}

impl Trajectory {
    pub fn new(points: Vec<Vec2>) -> Result<Self, PlanError> {
        if points.len() < 2 {
            return Err(PlanError::TooShort);
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn duration(&self) -> f64 {
        (self.points.len() - 1) as f64 * TRAJ_DT
    }

    pub fn start(&self) -> Vec2 {
        self.points[0]
    }

    pub fn end(&self) -> Vec2 {
        *self.points.last().expect("at least two points")
    }

    /// Linear interpolation between stored points, clamped to the ends.
    pub fn position_at(&self, t: f64) -> Vec2 {
        if !(t > 0.0) {
            return self.points[0];
        }
        let u = t / TRAJ_DT;
        let last = self.points.len() - 1;
        let k = u.round();
        if (u - k).abs() < 1e-9 {
            return self.points[(k as usize).min(last)];
        }
        let i = u.floor() as usize;
        if i >= last {
            return self.points[last];
        }
        let frac = u - i as f64;
        self.points[i] * (1.0 - frac) + self.points[i + 1] * frac
    }

    /// Ten positions at `t, t + 0.1, …, t + 0.9` seconds.
    pub fn query_window(&self, t: f64) -> [Vec2; WINDOW_LEN] {
        std::array::from_fn(|k| self.position_at(t + k as f64 * TRAJ_DT))
    }

    pub fn max_spacing(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .fold(0.0, f64::max)
    }

    /// Resamples arbitrary timestamped points onto the fixed 0.1 s grid.
    pub fn from_timed_points(samples: &[(f64, Vec2)]) -> Result<Self, PlanError> {
        if samples.len() < 2 {
            return Err(PlanError::TooShort);
        }
        if samples[0].0.abs() > 1e-9 || samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(PlanError::BadTimestamps);
        }
        let total = samples.last().unwrap().0;
        let n = (total / TRAJ_DT + 1e-9).floor() as usize;
        let mut out = Vec::with_capacity(n + 2);
        let mut j = 0;
        for k in 0..=n {
            let t = k as f64 * TRAJ_DT;
            while j + 1 < samples.len() - 1 && samples[j + 1].0 < t {
                j += 1;
            }
            let (t0, p0) = samples[j];
            let (t1, p1) = samples[j + 1];
            let f = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            out.push(p0 * (1.0 - f) + p1 * f);
        }
        if out.len() < 2 {
            out.push(samples.last().unwrap().1);
        }
        Self::new(out)
    }

    /// Writes `t,x,y` rows with a header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), PlanError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "x", "y"])?;
        for (i, p) in self.points.iter().enumerate() {
            wr.write_record(&[
                format!("{:.1}", i as f64 * TRAJ_DT),
                p.x.to_string(),
                p.y.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, PlanError> {
        let mut rd = csv::Reader::from_reader(r);
        let mut samples = Vec::new();
        for rec in rd.deserialize::<(f64, f64, f64)>() {
            let (t, x, y) = rec?;
            samples.push((t, Vec2::new(x, y)));
        }
        Self::from_timed_points(&samples)
    }
}

/// 8-connected cell sequence with its move counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridPath {
    pub cells: Vec<Cell>,
    pub straight_moves: usize,
    pub diagonal_moves: usize,
}

impl GridPath {
    pub fn cost(&self) -> f64 {
        self.straight_moves as f64 + self.diagonal_moves as f64 * SQRT_2
    }
}

/// Admissible, consistent distance on an 8-connected grid with unit and √2 moves.
pub fn octile(a: Cell, b: Cell) -> f64 {
    let dx = a.0.abs_diff(b.0) as f64;
    let dy = a.1.abs_diff(b.1) as f64;
    dx.max(dy) + (SQRT_2 - 1.0) * dx.min(dy)
}

/// Moves from `cell` that stay on free cells. Diagonal moves require both
/// orthogonally adjacent cells to be free (no corner cutting).
pub fn free_moves(grid: &OccupancyGrid, cell: Cell) -> impl Iterator<Item = (Cell, bool)> + '_ {
    crate::scene::NEIGHBOURS
        .iter()
        .filter_map(move |&(dx, dy)| {
            let nx = cell.0 as i64 + dx;
            let ny = cell.1 as i64 + dy;
            if !grid.in_bounds(nx, ny) || grid.is_blocked((nx as usize, ny as usize)) {
                return None;
            }
            let diagonal = dx != 0 && dy != 0;
            if diagonal
                && (grid.is_blocked(((cell.0 as i64 + dx) as usize, cell.1))
                    || grid.is_blocked((cell.0, (cell.1 as i64 + dy) as usize)))
            {
                return None;
            }
            Some(((nx as usize, ny as usize), diagonal))
        })
}

#[derive(PartialEq)]
struct OpenNode {
    f: f64,
    h: f64,
    index: usize,
}

impl Eq for OpenNode {}

impl Ord for OpenNode {
    // BinaryHeap is a max-heap: reverse so the smallest (f, h, index) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimal-cost 8-connected path with the octile heuristic. Ties are broken
/// by `(f, h, cell index)`.
pub fn astar(grid: &OccupancyGrid, start: Cell, goal: Cell) -> Result<GridPath, PlanError> {
    for c in [start, goal] {
        if !grid.in_bounds(c.0 as i64, c.1 as i64) || grid.is_blocked(c) {
            return Err(PlanError::InvalidEndpoint((c.0 as i64, c.1 as i64)));
        }
    }
    let n = grid.width * grid.height;
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let start_i = grid.index(start);
    let goal_i = grid.index(goal);
    g[start_i] = 0.0;
    let mut open = BinaryHeap::new();
    let h0 = octile(start, goal);
    open.push(OpenNode {
        f: h0,
        h: h0,
        index: start_i,
    });
    while let Some(node) = open.pop() {
        if closed[node.index] {
            continue;
        }
        closed[node.index] = true;
        if node.index == goal_i {
            return Ok(reconstruct(grid, &parent, start_i, goal_i));
        }
        let cell = (node.index % grid.width, node.index / grid.width);
        for (next, diagonal) in free_moves(grid, cell) {
            let ni = grid.index(next);
            if closed[ni] {
                continue;
            }
            let tentative = g[node.index] + if diagonal { SQRT_2 } else { 1.0 };
            if tentative < g[ni] {
                g[ni] = tentative;
                parent[ni] = node.index;
                let h = octile(next, goal);
                open.push(OpenNode {
                    f: tentative + h,
                    h,
                    index: ni,
                });
            }
        }
    }
    Err(PlanError::NoPath {
        from: start,
        to: goal,
    })
}

fn reconstruct(grid: &OccupancyGrid, parent: &[usize], start: usize, goal: usize) -> GridPath {
    let mut idx = vec![goal];
    let mut cur = goal;
    while cur != start {
        cur = parent[cur];
        idx.push(cur);
    }
    idx.reverse();
    let cells: Vec<Cell> = idx
        .iter()
        .map(|&i| (i % grid.width, i / grid.width))
        .collect();
    let diagonal_moves = cells
        .windows(2)
        .filter(|w| w[0].0 != w[1].0 && w[0].1 != w[1].1)
        .count();
    GridPath {
        straight_moves: cells.len() - 1 - diagonal_moves,
        diagonal_moves,
        cells,
    }
}

/// One corner-cutting pass; endpoints are kept.
pub fn chaikin(points: &[Vec2]) -> Vec<Vec2> {
    if points.len() < 3 {
        return points.to_vec();
    }
    let mut out = Vec::with_capacity(points.len() * 2);
    out.push(points[0]);
    for w in points.windows(2) {
        out.push(w[0] * 0.75 + w[1] * 0.25);
        out.push(w[0] * 0.25 + w[1] * 0.75);
    }
    out.push(*points.last().unwrap());
    out
}

pub fn polyline_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Points every `spacing` meters of arc length; the endpoint is appended when
/// the length is not an exact multiple of the spacing.
pub fn resample_by_arc_length(points: &[Vec2], spacing: f64) -> Vec<Vec2> {
    let total = polyline_length(points);
    let steps = (total / spacing + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(steps + 2);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 0..=steps {
        let s = (k as f64 * spacing).min(total);
        while seg + 1 < points.len() - 1 && seg_start + (points[seg + 1] - points[seg]).norm() < s {
            seg_start += (points[seg + 1] - points[seg]).norm();
            seg += 1;
        }
        let len = (points[seg + 1] - points[seg]).norm();
        let f = if len > 0.0 {
            ((s - seg_start) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(points[seg] * (1.0 - f) + points[seg + 1] * f);
    }
    let end = *points.last().unwrap();
    if total - steps as f64 * spacing > 1e-9 {
        out.push(end);
    }
    if out.len() < 2 {
        out.push(end);
    }
    out
}

fn polyline_is_free(points: &[Vec2], grid: &OccupancyGrid) -> bool {
    let step = grid.cell_size / 4.0;
    points.windows(2).all(|w| {
        let len = (w[1] - w[0]).norm();
        let n = (len / step).ceil().max(1.0) as usize;
        (0..=n).all(|i| !grid.is_blocked_at(w[0] + (w[1] - w[0]) * (i as f64 / n as f64)))
    })
}

/// Smooths a free polyline (two Chaikin passes, reverted if the result touches
/// a blocked cell) and resamples it at `speed · 0.1 s`.
pub fn polyline_to_trajectory(
    points: &[Vec2],
    speed: f64,
    grid: &OccupancyGrid,
) -> Result<Trajectory, PlanError> {
    if !(speed > 0.0) || !speed.is_finite() {
        return Err(PlanError::BadSpeed(speed));
    }
    if points.is_empty() {
        return Err(PlanError::TooShort);
    }
    let smoothed = chaikin(&chaikin(points));
    let line = if polyline_is_free(&smoothed, grid) {
        smoothed
    } else {
        points.to_vec()
    };
    let line = if line.len() == 1 {
        vec![line[0], line[0]]
    } else {
        line
    };
    Trajectory::new(resample_by_arc_length(&line, speed * TRAJ_DT))
}

/// Cell centers → smoothed, fixed-rate trajectory.
pub fn path_to_trajectory(
    path: &GridPath,
    speed: f64,
    grid: &OccupancyGrid,
) -> Result<Trajectory, PlanError> {
    let pts: Vec<Vec2> = path.cells.iter().map(|&c| grid.cell_center(c)).collect();
    polyline_to_trajectory(&pts, speed, grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryGenConfig {
    pub speed_range: (f64, f64),
    pub duration_range: (f64, f64),
    pub waypoint_range: (usize, usize),
    pub max_turn: f64,
}

impl Default for TrajectoryGenConfig {
    fn default() -> Self {
        Self {
            speed_range: (1.0, 1.5),
            duration_range: (8.0, 12.0),
            waypoint_range: (3, 6),
            max_turn: FRAC_PI_2,
        }
    }
}

/// Random smooth path starting at `start`, roughly along its heading, with
/// constant speed and spacing `speed · 0.1 s`.
pub fn generate_training_trajectory<R: Rng + ?Sized>(
    rng: &mut R,
    start: Pose2D,
    bounds: &Bounds,
    cfg: &TrajectoryGenConfig,
) -> Result<Trajectory, PlanError> {
    const ATTEMPTS: usize = 200;
    let draw = |rng: &mut R, (lo, hi): (f64, f64)| {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    for _ in 0..ATTEMPTS {
        let speed = draw(rng, cfg.speed_range);
        let duration = draw(rng, cfg.duration_range);
        let steps = (duration / TRAJ_DT).round() as usize;
        let needed = speed * TRAJ_DT * steps as f64;
        let n_wp =
            rng.random_range(cfg.waypoint_range.0..=cfg.waypoint_range.1.max(cfg.waypoint_range.0));
        let mut heading = start.heading() + rng.random_range(-FRAC_PI_4..=FRAC_PI_4);
        let mut pts = vec![start.position];
        let mean_seg = needed * 1.3 / n_wp as f64;
        for i in 0..n_wp {
            if i > 0 {
                heading += rng.random_range(-cfg.max_turn..=cfg.max_turn);
            }
            let len = mean_seg * rng.random_range(0.7..1.3);
            let next = *pts.last().unwrap() + heading_dir(heading) * len;
            pts.push(next);
        }
        let smooth = chaikin(&chaikin(&pts));
        let mut res = resample_by_arc_length(&smooth, speed * TRAJ_DT);
        if res.len() < steps + 1 {
            continue;
        }
        res.truncate(steps + 1);
        if res.iter().all(|p| bounds.contains(*p)) {
            return Trajectory::new(res);
        }
    }
    Err(PlanError::GenerationFailed(ATTEMPTS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trivial_paths() {
        let g = OccupancyGrid::new(Vec2::zeros(), 1.0, 10, 10);
        let p = astar(&g, (3, 3), (3, 3)).unwrap();
        assert_eq!(p.cells, vec![(3, 3)]);
        assert_eq!(p.cost(), 0.0);
        let p = astar(&g, (0, 0), (9, 9)).unwrap();
        assert!((p.cost() - 9.0 * SQRT_2).abs() < 1e-12);
        assert_eq!(p.diagonal_moves, 9);
    }

    #[test]
    fn endpoint_errors() {
        let g = OccupancyGrid::from_ascii(&["..#", "###", "..."], 1.0);
        assert!(matches!(
            astar(&g, (2, 0), (0, 0)),
            Err(PlanError::InvalidEndpoint(_))
        ));
        assert!(matches!(
            astar(&g, (0, 0), (0, 2)),
            Err(PlanError::NoPath { .. })
        ));
    }

    #[test]
    fn path_cells_are_adjacent_and_free() {
        let g = OccupancyGrid::from_ascii(
            &[
                "..........",
                "..#####...",
                "......#...",
                "..##..#...",
                "..........",
            ],
            1.0,
        );
        let p = astar(&g, (0, 0), (9, 4)).unwrap();
        for w in p.cells.windows(2) {
            assert!(w[0].0.abs_diff(w[1].0) <= 1 && w[0].1.abs_diff(w[1].1) <= 1);
        }
        assert!(p.cells.iter().all(|c| !g.is_blocked(*c)));
    }

    #[test]
    fn straight_segment_resampling() {
        let g = OccupancyGrid::new(Vec2::new(-1.0, -1.0), 0.5, 30, 4);
        let t = polyline_to_trajectory(&[Vec2::zeros(), Vec2::new(10.0, 0.0)], 1.25, &g).unwrap();
        assert_eq!(t.points().len(), 81);
        for w in t.points().windows(2) {
            assert!(((w[1] - w[0]).norm() - 0.125).abs() < 1e-9);
        }
        assert!((t.duration() - 8.0).abs() < 1e-9);
    }

    #[test]
    fn smoothing_respects_obstacles() {
        // an L-shaped corridor where corner cutting would enter the wall
        let g = OccupancyGrid::from_ascii(&["...", ".##", ".##"], 1.0);
        let p = astar(&g, (2, 0), (0, 2)).unwrap();
        let t = path_to_trajectory(&p, 1.0, &g).unwrap();
        assert!(t.points().iter().all(|q| !g.is_blocked_at(*q)));
        assert!((t.start() - g.cell_center((2, 0))).norm() < g.cell_size);
        assert!((t.end() - g.cell_center((0, 2))).norm() < g.cell_size);
    }

    #[test]
    fn window_queries() {
        let t = Trajectory::new((0..20).map(|i| Vec2::new(i as f64 * 0.1, 0.0)).collect()).unwrap();
        assert_eq!(t.query_window(0.3)[0], t.points()[3]);
        let w = t.query_window(0.05);
        assert!((w[0] - (t.points()[0] + t.points()[1]) / 2.0).norm() < 1e-12);
        let w = t.query_window(100.0);
        assert!(w.iter().all(|p| *p == t.end()));
        assert_eq!(w.len(), WINDOW_LEN);
    }

    #[test]
    fn csv_round_trip() {
        let t = Trajectory::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(0.1, 0.2),
            Vec2::new(0.3, 0.1),
        ])
        .unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf.clone()).unwrap();
        assert!(s.starts_with("t,x,y\n0.0,0,0\n"));
        assert_eq!(Trajectory::read_csv(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn imported_points_are_retimed() {
        let t = Trajectory::from_timed_points(&[(0.0, Vec2::zeros()), (1.0, Vec2::new(2.0, 0.0))])
            .unwrap();
        assert_eq!(t.points().len(), 11);
        assert!((t.points()[5] - Vec2::new(1.0, 0.0)).norm() < 1e-12);
        assert!(
            Trajectory::from_timed_points(&[(0.5, Vec2::zeros()), (1.0, Vec2::zeros())]).is_err()
        );
    }

    #[test]
    fn generated_trajectories_respect_invariants() {
        let cfg = TrajectoryGenConfig::default();
        let bounds = Bounds::square(20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let start = Pose2D::new(
                Vec2::new(rng.random_range(-2.0..2.0), 0.0),
                rng.random_range(-3.0..3.0),
            );
            let t = generate_training_trajectory(&mut rng, start, &bounds, &cfg).unwrap();
            assert!(t.duration() >= 8.0 - 1e-9 && t.duration() <= 12.0 + 1e-9);
            assert!(t.max_spacing() <= 1.5 * TRAJ_DT + 1e-9);
            let sp = (t.points()[1] - t.points()[0]).norm();
            assert!(sp >= 1.0 * TRAJ_DT - 1e-9);
            assert!(t.points().iter().all(|p| bounds.contains(*p)));
            assert_eq!(t.start(), start.position);
        }
        let a = generate_training_trajectory(
            &mut ChaCha8Rng::seed_from_u64(1),
            Pose2D::identity(),
            &bounds,
            &cfg,
        );
        let b = generate_training_trajectory(
            &mut ChaCha8Rng::seed_from_u64(1),
            Pose2D::identity(),
            &bounds,
            &cfg,
        );
        assert_eq!(a.unwrap(), b.unwrap());
    }
}
