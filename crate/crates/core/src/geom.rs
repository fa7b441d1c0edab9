//! Planar frames, oriented boxes and the yaw-only 6D rotation encoding.
//!
//! Horizontal quantities are expressed in the character's local frame while
//! heights (z) always stay in world coordinates.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::GeomError;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(angle: f64) -> f64 {
    if !angle.is_finite() || (angle > -PI && angle <= PI) {
        return angle;
    }
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Rotates a 2D vector counter-clockwise by `angle`.
pub fn rotate2(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Unit vector pointing along `heading`.
pub fn heading_dir(heading: f64) -> Vec2 {
    let (s, c) = heading.sin_cos();
    Vec2::new(c, s)
}

/// Root-centric reference frame: planar position plus heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub position: Vec2,
    heading: f64,
}

impl Pose2D {
    pub fn new(position: Vec2, heading: f64) -> Self {
        Self {
            position,
            heading: normalize_angle(heading),
        }
    }

    pub fn identity() -> Self {
        Self::new(Vec2::zeros(), 0.0)
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    /// World point into this frame. Only the horizontal part is translated
    /// and rotated; z passes through unchanged.
    pub fn to_local(&self, world: Vec3) -> Vec3 {
        let xy = rotate2(Vec2::new(world.x, world.y) - self.position, -self.heading);
        Vec3::new(xy.x, xy.y, world.z)
    }

    pub fn to_world(&self, local: Vec3) -> Vec3 {
        let xy = rotate2(Vec2::new(local.x, local.y), self.heading) + self.position;
        Vec3::new(xy.x, xy.y, local.z)
    }

    pub fn point_to_local(&self, world: Vec2) -> Vec2 {
        rotate2(world - self.position, -self.heading)
    }

    /// Free vector (direction, velocity) into this frame.
    pub fn dir_to_local(&self, world: Vec2) -> Vec2 {
        rotate2(world, -self.heading)
    }
}

/// Free function form of [`Pose2D::to_local`].
pub fn to_local_frame(world_point: Vec3, frame: &Pose2D) -> Vec3 {
    frame.to_local(world_point)
}

/// First two columns of a rotation matrix, column-major:
/// `(r00, r10, r20, r01, r11, r21)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation6D(pub [f64; 6]);

impl Rotation6D {
    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Rotation6D([c, s, 0.0, -s, c, 0.0])
    }

    /// Gram-Schmidt reconstruction of the full rotation matrix.
    pub fn to_matrix(&self) -> Result<Matrix3<f64>, GeomError> {
        let a = Vec3::new(self.0[0], self.0[1], self.0[2]);
        let b = Vec3::new(self.0[3], self.0[4], self.0[5]);
        let na = a.norm();
        if !(na > 1e-9) {
            return Err(GeomError::DegenerateRotation);
        }
        let c0 = a / na;
        let b_perp = b - c0 * c0.dot(&b);
        let nb = b_perp.norm();
        if !(nb > 1e-9) {
            return Err(GeomError::DegenerateRotation);
        }
        let c1 = b_perp / nb;
        let c2 = c0.cross(&c1);
        Ok(Matrix3::from_columns(&[c0, c1, c2]))
    }

    pub fn to_yaw(&self) -> Result<f64, GeomError> {
        let m = self.to_matrix()?;
        Ok(normalize_angle(m[(1, 0)].atan2(m[(0, 0)])))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn rotation6d_encode(yaw: f64) -> Rotation6D {
    Rotation6D::from_yaw(yaw)
}

pub fn rotation6d_decode(r: &Rotation6D) -> Result<f64, GeomError> {
    r.to_yaw()
}

/// Box rotated about the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vec3,
    pub yaw: f64,
    pub half_extents: Vec3,
}

impl OrientedBox {
    pub fn new(center: Vec3, yaw: f64, half_extents: Vec3) -> Result<Self, GeomError> {
        if !(half_extents.iter().all(|h| *h > 0.0 && h.is_finite())) {
            return Err(GeomError::NonPositiveExtent(half_extents.into()));
        }
        if !center.iter().all(|c| c.is_finite()) || !yaw.is_finite() {
            return Err(GeomError::NonFinite);
        }
        Ok(Self {
            center,
            yaw: normalize_angle(yaw),
            half_extents,
        })
    }

    /// Corner `i` has sign `-` on axis k when bit k of `i` is clear, `+` when set
    /// (bit 0 = local x, bit 1 = local y, bit 2 = z).
    pub fn vertices(&self) -> [Vec3; 8] {
        let mut out = [Vec3::zeros(); 8];
        for (i, v) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            let local = Vec2::new(sx * self.half_extents.x, sy * self.half_extents.y);
            let xy = rotate2(local, self.yaw);
            *v = Vec3::new(
                self.center.x + xy.x,
                self.center.y + xy.y,
                self.center.z + sz * self.half_extents.z,
            );
        }
        out
    }

    pub fn center_xy(&self) -> Vec2 {
        Vec2::new(self.center.x, self.center.y)
    }

    pub fn top(&self) -> f64 {
        self.center.z + self.half_extents.z
    }

    /// Closest point of the footprint rectangle to `p` and the distance to it
    /// (zero when `p` is inside).
    pub fn closest_xy(&self, p: Vec2) -> (Vec2, f64) {
        let local = rotate2(p - self.center_xy(), -self.yaw);
        let clamped = Vec2::new(
            local.x.clamp(-self.half_extents.x, self.half_extents.x),
            local.y.clamp(-self.half_extents.y, self.half_extents.y),
        );
        let world = rotate2(clamped, self.yaw) + self.center_xy();
        (world, (local - clamped).norm())
    }

    pub fn distance_xy(&self, p: Vec2) -> f64 {
        self.closest_xy(p).1
    }

    pub fn contains_xy(&self, p: Vec2) -> bool {
        let local = rotate2(p - self.center_xy(), -self.yaw);
        local.x.abs() <= self.half_extents.x && local.y.abs() <= self.half_extents.y
    }

    /// Outward unit normal and depth for a point inside the footprint, using
    /// the face with the smallest penetration.
    pub fn exit_xy(&self, p: Vec2) -> (Vec2, f64) {
        let local = rotate2(p - self.center_xy(), -self.yaw);
        let dx = self.half_extents.x - local.x.abs();
        let dy = self.half_extents.y - local.y.abs();
        let (n_local, depth) = if dx <= dy {
            (Vec2::new(local.x.signum_or_one(), 0.0), dx)
        } else {
            (Vec2::new(0.0, local.y.signum_or_one()), dy)
        };
        (rotate2(n_local, self.yaw), depth)
    }

    /// Axis-aligned extent of the footprint: `(min, max)`.
    pub fn footprint_aabb(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for v in self.vertices().iter().take(4) {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        (lo, hi)
    }

    pub fn translated(&self, delta: Vec2) -> Self {
        let mut b = *self;
        b.center.x += delta.x;
        b.center.y += delta.y;
        b
    }
}

trait SignumOrOne {
    fn signum_or_one(self) -> f64;
}

impl SignumOrOne for f64 {
    fn signum_or_one(self) -> f64 {
        if self < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

pub fn box_vertices(b: &OrientedBox) -> [Vec3; 8] {
    b.vertices()
}
