use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

/// Planar position or displacement in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn distance_sq(self, other: Vec2) -> f64 {
        let d = self - other;
        d.x * d.x + d.y * d.y
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

/// Axis-aligned rectangle, closed on all sides.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        debug_assert!(min.x <= max.x && min.y <= max.y);
        Self { min, max }
    }

    pub fn from_bounds(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(Vec2::new(x0.min(x1), y0.min(y1)), Vec2::new(x0.max(x1), y0.max(y1)))
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// True when the interiors overlap (shared edges do not count).
    pub fn overlaps_interior(&self, other: &Rect) -> bool {
        self.min.x < other.max.x && other.min.x < self.max.x && self.min.y < other.max.y && other.min.y < self.max.y
    }

    /// Slab test for the closed segment `a -> b` against the closed rectangle.
    pub fn intersects_segment(&self, a: Vec2, b: Vec2) -> bool {
        // Cheap bounding-box reject first; most building tests end here.
        if a.x.max(b.x) < self.min.x
            || a.x.min(b.x) > self.max.x
            || a.y.max(b.y) < self.min.y
            || a.y.min(b.y) > self.max.y
        {
            return false;
        }
        let d = b - a;
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        for (origin, delta, lo, hi) in [(a.x, d.x, self.min.x, self.max.x), (a.y, d.y, self.min.y, self.max.y)] {
            if delta.abs() < 1e-12 {
                if origin < lo || origin > hi {
                    return false;
                }
            } else {
                let inv = 1.0 / delta;
                let (mut ta, mut tb) = ((lo - origin) * inv, (hi - origin) * inv);
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }
}

/// Smallest absolute difference between two headings in degrees, in `[0, 180]`.
pub fn heading_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_rect_cases() {
        let r = Rect::from_bounds(0.0, 0.0, 10.0, 10.0);
        assert!(r.intersects_segment(Vec2::new(-5.0, 5.0), Vec2::new(15.0, 5.0)));
        assert!(r.intersects_segment(Vec2::new(1.0, 1.0), Vec2::new(2.0, 2.0)));
        assert!(!r.intersects_segment(Vec2::new(-5.0, 11.0), Vec2::new(15.0, 11.0)));
        // Diagonal passing just outside the corner.
        assert!(!r.intersects_segment(Vec2::new(-1.0, 9.0), Vec2::new(9.0, 21.0)));
        // Touching the corner counts as blocked.
        assert!(r.intersects_segment(Vec2::new(-1.0, 9.0), Vec2::new(3.0, 13.0)));
        // Vertical segment inside the x-slab.
        assert!(r.intersects_segment(Vec2::new(5.0, -3.0), Vec2::new(5.0, 30.0)));
        assert!(!r.intersects_segment(Vec2::new(11.0, -3.0), Vec2::new(11.0, 30.0)));
    }

    #[test]
    fn circular_heading() {
        assert!((heading_difference(359.0, 2.0) - 3.0).abs() < 1e-12);
        assert!((heading_difference(10.0, 350.0) - 20.0).abs() < 1e-12);
        assert!((heading_difference(0.0, 180.0) - 180.0).abs() < 1e-12);
        assert_eq!(heading_difference(90.0, 90.0), 0.0);
    }

    #[test]
    fn interior_overlap_ignores_shared_edges() {
        let a = Rect::from_bounds(0.0, 0.0, 1.0, 1.0);
        let b = Rect::from_bounds(1.0, 0.0, 2.0, 1.0);
        assert!(!a.overlaps_interior(&b));
        assert!(a.overlaps_interior(&Rect::from_bounds(0.5, 0.5, 2.0, 2.0)));
    }
}
