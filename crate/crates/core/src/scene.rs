//! Interactable objects, static obstacles and the occupancy grid used for
//! planning.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use crate::error::SceneError;
use crate::geom::{heading_dir, normalize_angle, OrientedBox, Vec2, Vec3};

/// Height of the sit target above the seat surface.
pub const SIT_TARGET_LIFT: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectCategory {
    Chair,
    Stool,
    Sofa,
    Bed,
}

impl ObjectCategory {
    pub const ALL: [ObjectCategory; 4] = [Self::Chair, Self::Stool, Self::Sofa, Self::Bed];

    /// Nominal `(depth, width, height, seat_height)` in meters. Depth runs
    /// along the facing direction.
    pub fn nominal_size(self) -> (f64, f64, f64, f64) {
        match self {
            Self::Chair => (0.50, 0.50, 0.90, 0.45),
            Self::Stool => (0.40, 0.40, 0.40, 0.40),
            Self::Sofa => (0.90, 1.80, 0.80, 0.42),
            Self::Bed => (2.00, 1.60, 0.55, 0.50),
        }
    }
}

/// An object the character can sit or lie on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: String,
    pub category: ObjectCategory,
    pub bbox: OrientedBox,
    pub facing: Vec2,
    pub seat_height: f64,
    pub sit_target: Vec3,
}

impl ObjectInstance {
    /// `extents` are full sizes `(depth, width, height)`; the box rests on the floor.
    pub fn new(
        id: impl Into<String>,
        category: ObjectCategory,
        center: Vec2,
        yaw: f64,
        extents: Vec3,
        seat_height: f64,
    ) -> Result<Self, SceneError> {
        let bbox = OrientedBox::new(
            Vec3::new(center.x, center.y, extents.z / 2.0),
            yaw,
            extents / 2.0,
        )?;
        if !(seat_height > 0.0 && seat_height <= extents.z) {
            return Err(SceneError::Geom(crate::error::GeomError::NonFinite));
        }
        let mut obj = Self {
            id: id.into(),
            category,
            bbox,
            facing: heading_dir(bbox.yaw),
            seat_height,
            sit_target: Vec3::zeros(),
        };
        obj.refresh_target();
        Ok(obj)
    }

    /// Nominal-size object of a category.
    pub fn nominal(
        id: impl Into<String>,
        category: ObjectCategory,
        center: Vec2,
        yaw: f64,
    ) -> Self {
        let (d, w, h, s) = category.nominal_size();
        Self::new(id, category, center, yaw, Vec3::new(d, w, h), s)
            .expect("nominal sizes are valid")
    }

    fn refresh_target(&mut self) {
        self.facing = heading_dir(self.bbox.yaw);
        self.sit_target = Vec3::new(
            self.bbox.center.x,
            self.bbox.center.y,
            self.seat_height + SIT_TARGET_LIFT,
        );
    }

    pub fn center_xy(&self) -> Vec2 {
        self.bbox.center_xy()
    }

    pub fn yaw(&self) -> f64 {
        self.bbox.yaw
    }

    pub fn extents(&self) -> Vec3 {
        self.bbox.half_extents * 2.0
    }

    /// Same object moved and turned.
    pub fn placed(&self, center: Vec2, yaw: f64) -> Self {
        let mut o = self.clone();
        o.bbox.center.x = center.x;
        o.bbox.center.y = center.y;
        o.bbox.yaw = normalize_angle(yaw);
        o.refresh_target();
        o
    }

    /// Standing point in front of the object used as an approach goal.
    pub fn approach_point(&self, distance: f64) -> Vec2 {
        self.center_xy() + self.facing * distance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Self {
            min: [min.x, min.y],
            max: [max.x, max.y],
        }
    }

    pub fn square(half: f64) -> Self {
        Self::new(Vec2::new(-half, -half), Vec2::new(half, half))
    }

    pub fn min(&self) -> Vec2 {
        Vec2::new(self.min[0], self.min[1])
    }

    pub fn max(&self) -> Vec2 {
        Vec2::new(self.max[0], self.max[1])
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.max[0] > self.min[0] && self.max[1] > self.min[1])
            || !self
                .min
                .iter()
                .chain(self.max.iter())
                .all(|v| v.is_finite())
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min[0] && p.x <= self.max[0] && p.y >= self.min[1] && p.y <= self.max[1]
    }

    pub fn contains_box(&self, b: &OrientedBox) -> bool {
        let (lo, hi) = b.footprint_aabb();
        self.contains(lo) && self.contains(hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scene {
    objects: Vec<ObjectInstance>,
    obstacles: Vec<OrientedBox>,
    bounds: Bounds,
}

impl Scene {
    pub fn new(
        objects: Vec<ObjectInstance>,
        obstacles: Vec<OrientedBox>,
        bounds: Bounds,
    ) -> Result<Self, SceneError> {
        if bounds.is_degenerate() {
            return Err(SceneError::DegenerateBounds);
        }
        let mut seen = HashSet::new();
        for o in &objects {
            if !seen.insert(o.id.as_str()) {
                return Err(SceneError::DuplicateId(o.id.clone()));
            }
            if !bounds.contains_box(&o.bbox) {
                return Err(SceneError::OutOfBounds(o.id.clone()));
            }
        }
        Ok(Self {
            objects,
            obstacles,
            bounds,
        })
    }

    /// Unbounded-looking open floor without objects.
    pub fn empty(bounds: Bounds) -> Self {
        Self {
            objects: Vec::new(),
            obstacles: Vec::new(),
            bounds,
        }
    }

    pub fn objects(&self) -> &[ObjectInstance] {
        &self.objects
    }

    pub fn obstacles(&self) -> &[OrientedBox] {
        &self.obstacles
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn object(&self, id: &str) -> Option<&ObjectInstance> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn from_json_str(s: &str) -> Result<Self, SceneError> {
        let file: SceneFile = serde_json::from_str(s)?;
        file.into_scene()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_file(&self) -> SceneFile {
        SceneFile {
            bounds: self.bounds,
            objects: self
                .objects
                .iter()
                .map(|o| {
                    let e = o.extents();
                    ObjectSpec {
                        id: o.id.clone(),
                        category: o.category,
                        center: [o.bbox.center.x, o.bbox.center.y],
                        yaw: o.yaw(),
                        extents: [e.x, e.y, e.z],
                        seat_height: o.seat_height,
                    }
                })
                .collect(),
            obstacles: self
                .obstacles
                .iter()
                .map(|b| ObstacleSpec {
                    center: [b.center.x, b.center.y],
                    yaw: b.yaw,
                    extents: [
                        b.half_extents.x * 2.0,
                        b.half_extents.y * 2.0,
                        b.half_extents.z * 2.0,
                    ],
                })
                .collect(),
        }
    }
}

/// On-disk scene layout. Unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub bounds: Bounds,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: String,
    pub category: ObjectCategory,
    pub center: [f64; 2],
    pub yaw: f64,
    pub extents: [f64; 3],
    pub seat_height: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub center: [f64; 2],
    pub yaw: f64,
    pub extents: [f64; 3],
}

impl SceneFile {
    pub fn into_scene(self) -> Result<Scene, SceneError> {
        let objects = self
            .objects
            .into_iter()
            .map(|o| {
                ObjectInstance::new(
                    o.id,
                    o.category,
                    Vec2::new(o.center[0], o.center[1]),
                    o.yaw,
                    Vec3::new(o.extents[0], o.extents[1], o.extents[2]),
                    o.seat_height,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let obstacles = self
            .obstacles
            .into_iter()
            .map(|o| {
                OrientedBox::new(
                    Vec3::new(o.center[0], o.center[1], o.extents[2] / 2.0),
                    o.yaw,
                    Vec3::new(o.extents[0], o.extents[1], o.extents[2]) / 2.0,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Scene::new(objects, obstacles, self.bounds)
    }
}

/// Boolean occupancy raster, row-major with `x` as the fast index.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub cell_size: f64,
    pub origin: Vec2,
    pub width: usize,
    pub height: usize,
    cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(origin: Vec2, cell_size: f64, width: usize, height: usize) -> Self {
        Self {
            cell_size,
            origin,
            width,
            height,
            cells: vec![false; width * height],
        }
    }

    /// Grid from rows of `'#'` (blocked) and `'.'` (free); row 0 is `y = 0`.
    pub fn from_ascii(rows: &[&str], cell_size: f64) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut g = Self::new(Vec2::zeros(), cell_size, width, height);
        for (y, row) in rows.iter().enumerate() {
            for (x, ch) in row.chars().enumerate() {
                g.set_blocked((x, y), ch == '#');
            }
        }
        g
    }

    pub fn index(&self, (x, y): (usize, usize)) -> usize {
        y * self.width + x
    }

    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn is_blocked(&self, cell: (usize, usize)) -> bool {
        self.cells[self.index(cell)]
    }

    pub fn set_blocked(&mut self, cell: (usize, usize), blocked: bool) {
        let i = self.index(cell);
        self.cells[i] = blocked;
    }

    pub fn cell_center(&self, (x, y): (usize, usize)) -> Vec2 {
        self.origin
            + Vec2::new(
                (x as f64 + 0.5) * self.cell_size,
                (y as f64 + 0.5) * self.cell_size,
            )
    }

    /// Signed cell coordinates of a world point (may be outside the grid).
    pub fn cell_coords(&self, p: Vec2) -> (i64, i64) {
        let rel = (p - self.origin) / self.cell_size;
        (rel.x.floor() as i64, rel.y.floor() as i64)
    }

    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let (x, y) = self.cell_coords(p);
        self.in_bounds(x, y).then_some((x as usize, y as usize))
    }

    pub fn is_blocked_at(&self, p: Vec2) -> bool {
        self.cell_of(p).is_none_or(|c| self.is_blocked(c))
    }

    pub fn blocked_count(&self) -> usize {
        self.cells.iter().filter(|b| **b).count()
    }

    /// Nearest free cell by breadth-first search over 8-neighbours.
    pub fn nearest_free(&self, start: (usize, usize)) -> Option<(usize, usize)> {
        if !self.is_blocked(start) {
            return Some(start);
        }
        let mut seen = vec![false; self.cells.len()];
        let mut queue = std::collections::VecDeque::from([start]);
        seen[self.index(start)] = true;
        let mut best: Option<((usize, usize), f64)> = None;
        let target = self.cell_center(start);
        while let Some(c) = queue.pop_front() {
            if !self.is_blocked(c) {
                let d = (self.cell_center(c) - target).norm();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((c, d));
                }
                continue;
            }
            if best.is_some() {
                continue;
            }
            for (dx, dy) in NEIGHBOURS {
                let (nx, ny) = (c.0 as i64 + dx, c.1 as i64 + dy);
                if self.in_bounds(nx, ny) {
                    let n = (nx as usize, ny as usize);
                    let i = self.index(n);
                    if !seen[i] {
                        seen[i] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        best.map(|(c, _)| c)
    }
}

pub(crate) const NEIGHBOURS: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Marks every cell whose center lies within `inflation` of an obstacle or
/// object footprint. Objects whose id appears in `exclude` do not block.
pub fn rasterize(
    scene: &Scene,
    cell_size: f64,
    inflation: f64,
    exclude: &[&str],
) -> Result<OccupancyGrid, SceneError> {
    if !(cell_size > 0.0) {
        return Err(SceneError::BadCellSize(cell_size));
    }
    let b = scene.bounds();
    if b.is_degenerate() {
        return Err(SceneError::DegenerateBounds);
    }
    let span = b.max() - b.min();
    let width = (span.x / cell_size).ceil().max(1.0) as usize;
    let height = (span.y / cell_size).ceil().max(1.0) as usize;
    let mut grid = OccupancyGrid::new(b.min(), cell_size, width, height);
    let blockers = scene.obstacles().iter().chain(
        scene
            .objects()
            .iter()
            .filter(|o| !exclude.contains(&o.id.as_str()))
            .map(|o| &o.bbox),
    );
    for bx in blockers {
        let (lo, hi) = bx.footprint_aabb();
        let (x0, y0) = grid.cell_coords(lo - Vec2::repeat(inflation));
        let (x1, y1) = grid.cell_coords(hi + Vec2::repeat(inflation));
        for y in y0.max(0)..=y1.min(height as i64 - 1) {
            for x in x0.max(0)..=x1.min(width as i64 - 1) {
                let cell = (x as usize, y as usize);
                if bx.distance_xy(grid.cell_center(cell)) <= inflation {
                    grid.set_blocked(cell, true);
                }
            }
        }
    }
    Ok(grid)
}

/// Moves `obj` to a uniformly drawn distance from `character` in a uniformly
/// drawn direction. With `full_yaw` the object's own yaw is also drawn
/// uniformly. Draws are repeated until the footprint fits inside `bounds`.
pub fn randomize_object<R: Rng + ?Sized>(
    obj: &ObjectInstance,
    character: Vec2,
    rng: &mut R,
    distance_range: (f64, f64),
    full_yaw: bool,
    bounds: Option<&Bounds>,
) -> Result<ObjectInstance, SceneError> {
    let (lo, hi) = distance_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(SceneError::BadDistanceRange(lo, hi));
    }
    const ATTEMPTS: usize = 1000;
    for _ in 0..ATTEMPTS {
        let d = if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
        let dir = rng.random_range(-PI..PI);
        let yaw = if full_yaw {
            rng.random_range(-PI..PI)
        } else {
            obj.yaw()
        };
        let placed = obj.placed(character + heading_dir(dir) * d, yaw);
        if bounds.is_none_or(|b| b.contains_box(&placed.bbox)) {
            return Ok(placed);
        }
    }
    Err(SceneError::PlacementFailed(ATTEMPTS))
}

/// Procedural object sets, split per category into training and testing
/// subsets (30 / 10 by default).
#[derive(Debug, Clone)]
pub struct ObjectCatalog {
    pub train: Vec<ObjectInstance>,
    pub test: Vec<ObjectInstance>,
}

impl ObjectCatalog {
    pub fn generate(
        categories: &[ObjectCategory],
        per_category: usize,
        train_count: usize,
        seed: u64,
    ) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for &cat in categories {
            let (d, w, h, s) = cat.nominal_size();
            for i in 0..per_category {
                let jitter =
                    |rng: &mut rand_chacha::ChaCha8Rng, v: f64| v * rng.random_range(0.85..1.15);
                let depth = jitter(&mut rng, d);
                let width = jitter(&mut rng, w);
                let seat = jitter(&mut rng, s).min(h);
                let height = jitter(&mut rng, h).max(seat);
                let id = format!("{cat:?}-{i:02}").to_lowercase();
                let obj = ObjectInstance::new(
                    id,
                    cat,
                    Vec2::zeros(),
                    0.0,
                    Vec3::new(depth, width, height),
                    seat,
                )
                .expect("catalog sizes are valid");
                if i < train_count {
                    train.push(obj);
                } else {
                    test.push(obj);
                }
            }
        }
        Self { train, test }
    }

    /// Chairs, stools and sofas: 40 each, 30 for training.
    pub fn sit_default(seed: u64) -> Self {
        Self::generate(
            &[
                ObjectCategory::Chair,
                ObjectCategory::Stool,
                ObjectCategory::Sofa,
            ],
            40,
            30,
            seed,
        )
    }

    /// Beds: 40, 30 for training.
    pub fn lie_default(seed: u64) -> Self {
        Self::generate(&[ObjectCategory::Bed], 40, 30, seed)
    }

    /// Default catalog for the objects a task interacts with. Follow has no
    /// object and gets the sit catalog.
    pub fn for_task(kind: crate::tasks::TaskKind, seed: u64) -> Self {
        match kind.posture_mode() {
            crate::character::PostureMode::Lie => Self::lie_default(seed),
            crate::character::PostureMode::Sit => Self::sit_default(seed),
        }
    }
}
