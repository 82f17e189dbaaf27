use alloc::vec;
use alloc::vec::Vec;

use super::layout::{LayoutSpec, Obstacle};
use crate::geometry::{Ray, Rect, Segment, Vec2};

/// Collision and ray-query view of a layout.
#[derive(Debug, Clone)]
pub struct World {
    pub walls: Vec<Segment>,
    pub obstacles: Vec<Obstacle>,
    pub rooms: Vec<Rect>,
}

impl World {
    pub fn new(layout: &LayoutSpec) -> Self {
        Self { walls: layout.walls(), obstacles: layout.obstacles.clone(), rooms: layout.rooms.clone() }
    }

    /// Distance along the ray to the first wall or obstacle, capped at `max_range`.
    pub fn raycast(&self, origin: Vec2, theta: f64, max_range: f64) -> f64 {
        let ray = Ray::new(origin, theta);
        let mut best = max_range;
        for w in &self.walls {
            if let Some(t) = ray.hit_segment(w) {
                best = best.min(t);
            }
        }
        for o in &self.obstacles {
            let hit = match *o {
                Obstacle::Box { .. } => ray.hit_rect(&o.bounds()),
                Obstacle::Cylinder { center, radius } => ray.hit_circle(center, radius),
            };
            if let Some(t) = hit {
                best = best.min(t);
            }
        }
        best
    }

    /// Smallest distance from `p` to any wall or obstacle.
    pub fn clearance(&self, p: Vec2) -> f64 {
        let mut best = f64::INFINITY;
        for w in &self.walls {
            best = best.min(w.distance(p));
        }
        for o in &self.obstacles {
            best = best.min(o.distance(p));
        }
        best
    }

    pub fn inside_rooms(&self, p: Vec2) -> bool {
        self.rooms.iter().any(|r| r.contains(p))
    }

    /// Whether a disc of `radius` at `p` touches geometry or leaves the rooms.
    pub fn disc_collides(&self, p: Vec2, radius: f64) -> bool {
        !self.inside_rooms(p) || self.clearance(p) < radius
    }
}

/// Occupancy grid over a layout's bounding box; a cell is blocked when its
/// center lies within `inflation` of a wall or obstacle, or outside every room.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    pub origin: Vec2,
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
    pub blocked: Vec<bool>,
}

impl OccupancyGrid {
    pub fn build(world: &World, cell: f64, inflation: f64) -> Self {
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for r in &world.rooms {
            min = Vec2::new(min.x.min(r.min.x), min.y.min(r.min.y));
            max = Vec2::new(max.x.max(r.max.x), max.y.max(r.max.y));
        }
        if world.rooms.is_empty() {
            return Self { origin: Vec2::ZERO, cell, nx: 0, ny: 0, blocked: Vec::new() };
        }
        let nx = (libm::ceil((max.x - min.x) / cell) as usize).max(1);
        let ny = (libm::ceil((max.y - min.y) / cell) as usize).max(1);
        let mut blocked = vec![true; nx * ny];
        let mut g = Self { origin: min, cell, nx, ny, blocked: Vec::new() };
        // free the room interiors, then stamp geometry over its bounding boxes
        for r in &world.rooms {
            g.for_cells_in(r, |idx, _| blocked[idx] = false);
        }
        for w in &world.walls {
            let bb = Rect::new(
                Vec2::new(w.a.x.min(w.b.x) - inflation, w.a.y.min(w.b.y) - inflation),
                Vec2::new(w.a.x.max(w.b.x) + inflation, w.a.y.max(w.b.y) + inflation),
            );
            g.for_cells_in(&bb, |idx, c| {
                if w.distance(c) < inflation {
                    blocked[idx] = true;
                }
            });
        }
        for o in &world.obstacles {
            let b = o.bounds();
            let bb = Rect::new(b.min - Vec2::new(inflation, inflation), b.max + Vec2::new(inflation, inflation));
            g.for_cells_in(&bb, |idx, c| {
                if o.distance(c) < inflation.max(1e-12) {
                    blocked[idx] = true;
                }
            });
        }
        g.blocked = blocked;
        g
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Vec2 {
        Vec2::new(self.origin.x + (ix as f64 + 0.5) * self.cell, self.origin.y + (iy as f64 + 0.5) * self.cell)
    }

    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let fx = libm::floor((p.x - self.origin.x) / self.cell);
        let fy = libm::floor((p.y - self.origin.y) / self.cell);
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    fn for_cells_in(&self, r: &Rect, mut f: impl FnMut(usize, Vec2)) {
        let x0 = libm::floor((r.min.x - self.origin.x) / self.cell).max(0.0) as usize;
        let y0 = libm::floor((r.min.y - self.origin.y) / self.cell).max(0.0) as usize;
        let x1 = (libm::ceil((r.max.x - self.origin.x) / self.cell).max(0.0) as usize).min(self.nx);
        let y1 = (libm::ceil((r.max.y - self.origin.y) / self.cell).max(0.0) as usize).min(self.ny);
        for iy in y0..y1 {
            for ix in x0..x1 {
                let c = self.cell_center(ix, iy);
                if r.contains(c) {
                    f(iy * self.nx + ix, c);
                }
            }
        }
    }

    /// 4-connected flood fill from the cell containing `from`; whether it reaches `to`.
    pub fn connected(&self, from: Vec2, to: Vec2) -> bool {
        let (Some(a), Some(b)) = (self.cell_of(from), self.cell_of(to)) else {
            return false;
        };
        let start = a.1 * self.nx + a.0;
        let goal = b.1 * self.nx + b.0;
        if self.blocked[start] || self.blocked[goal] {
            return false;
        }
        let mut seen = vec![false; self.blocked.len()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            if i == goal {
                return true;
            }
            let (ix, iy) = (i % self.nx, i / self.nx);
            let mut visit = |j: usize| {
                if !seen[j] && !self.blocked[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if ix > 0 {
                visit(i - 1);
            }
            if ix + 1 < self.nx {
                visit(i + 1);
            }
            if iy > 0 {
                visit(i - self.nx);
            }
            if iy + 1 < self.ny {
                visit(i + self.nx);
            }
        }
        false
    }
}
