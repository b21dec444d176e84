//! Segment vs. axis-aligned box tests (slab method), boxes closed.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|k| self.min[k] < self.max[k])
    }

    /// Whether the closed segment `p0 -> p1` touches the closed box.
    pub fn intersects_segment(&self, p0: [f64; 3], p1: [f64; 3]) -> bool {
        let mut t_enter = 0.0f64;
        let mut t_exit = 1.0f64;
        for k in 0..3 {
            let d = p1[k] - p0[k];
            if d == 0.0 {
                if p0[k] < self.min[k] || p0[k] > self.max[k] {
                    return false;
                }
                continue;
            }
            let (mut t0, mut t1) = ((self.min[k] - p0[k]) / d, (self.max[k] - p0[k]) / d);
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_enter = t_enter.max(t0);
            t_exit = t_exit.min(t1);
            if t_enter > t_exit {
                return false;
            }
        }
        true
    }
}

/// First collision along a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Collision {
    pub segment: usize,
    pub obstacle: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(z_max: f64) -> Aabb {
        Aabb::new([0.0, 0.0, 0.0], [1.0, 1.0, z_max])
    }

    #[test]
    fn pass_through_and_over() {
        let a = [-1.0, 0.5, 1.6];
        let b = [2.0, 0.5, 1.6];
        assert!(unit_box(3.0).intersects_segment(a, b));
        assert!(!unit_box(1.0).intersects_segment(a, b));
    }

    #[test]
    fn grazing_counts() {
        // along the y = 1 face
        assert!(unit_box(3.0).intersects_segment([-1.0, 1.0, 1.6], [2.0, 1.0, 1.6]));
        // touching a corner edge diagonally
        assert!(unit_box(3.0).intersects_segment([2.0, 0.0, 1.0], [1.0, 1.0, 1.0]));
        // ending exactly on a face
        assert!(unit_box(3.0).intersects_segment([-1.0, 0.5, 1.0], [0.0, 0.5, 1.0]));
        assert!(!unit_box(3.0).intersects_segment([-1.0, 0.5, 1.0], [-1e-9, 0.5, 1.0]));
    }

    #[test]
    fn parallel_outside_and_short_segments() {
        assert!(!unit_box(3.0).intersects_segment([-1.0, 1.5, 1.0], [2.0, 1.5, 1.0]));
        assert!(!unit_box(3.0).intersects_segment([2.0, 0.5, 1.0], [3.0, 0.5, 1.0]));
        assert!(unit_box(3.0).intersects_segment([0.2, 0.5, 1.0], [0.4, 0.5, 1.0]));
    }

    #[test]
    fn validity() {
        assert!(unit_box(1.0).is_valid());
        assert!(!Aabb::new([0.0; 3], [1.0, 0.0, 1.0]).is_valid());
    }
}
