//! Scripted driver for demonstrations: shortest paths on an inflated occupancy
//! grid, tracked by steering the unicycle controller at a lookahead point.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::env::{LayoutSpec, OccupancyGrid, World};
use crate::geometry::{wrap_angle, Pose2D, Vec2};
use crate::policy::unicycle_base;
use crate::sim::WheelCommand;

const CELL: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct ExpertPlanner {
    grid: OccupancyGrid,
    /// Path length to the goal per cell; infinite when unreachable.
    cost: Vec<f64>,
    goal: Vec2,
    lookahead: f64,
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl ExpertPlanner {
    /// Plans with obstacles inflated by `robot_radius + margin`.
    pub fn new(layout: &LayoutSpec, robot_radius: f64, margin: f64) -> Self {
        let world = World::new(layout);
        let grid = OccupancyGrid::build(&world, CELL, robot_radius + margin);
        let mut planner = Self { cost: vec![f64::INFINITY; grid.blocked.len()], grid, goal: layout.goal_position, lookahead: 0.4 };
        planner.flood();
        planner
    }

    fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (nx, ny) = (self.grid.nx as isize, self.grid.ny as isize);
        let (x, y) = ((i % self.grid.nx) as isize, (i / self.grid.nx) as isize);
        const D: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
        D.iter().filter_map(move |&(dx, dy)| {
            let (a, b) = (x + dx, y + dy);
            if a < 0 || b < 0 || a >= nx || b >= ny {
                return None;
            }
            let j = (b * nx + a) as usize;
            if self.grid.blocked[j] {
                return None;
            }
            // no corner cutting between blocked cells
            if dx != 0 && dy != 0 {
                let c1 = (y * nx + a) as usize;
                let c2 = (b * nx + x) as usize;
                if self.grid.blocked[c1] || self.grid.blocked[c2] {
                    return None;
                }
            }
            Some((j, if dx != 0 && dy != 0 { core::f64::consts::SQRT_2 } else { 1.0 } * CELL))
        })
    }

    fn nearest_free(&self, p: Vec2) -> Option<usize> {
        let (cx, cy) = self.grid.cell_of(p)?;
        for r in 0..12isize {
            let mut best: Option<(f64, usize)> = None;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx.abs() != r && dy.abs() != r {
                        continue;
                    }
                    let (x, y) = (cx as isize + dx, cy as isize + dy);
                    if x < 0 || y < 0 || x >= self.grid.nx as isize || y >= self.grid.ny as isize {
                        continue;
                    }
                    let j = y as usize * self.grid.nx + x as usize;
                    if !self.grid.blocked[j] && self.cost[j].is_finite() {
                        let d = self.grid.cell_center(x as usize, y as usize).distance(p);
                        if best.is_none_or(|b| d < b.0) {
                            best = Some((d, j));
                        }
                    }
                }
            }
            if let Some((_, j)) = best {
                return Some(j);
            }
        }
        None
    }

    fn flood(&mut self) {
        let Some((gx, gy)) = self.grid.cell_of(self.goal) else { return };
        let start = gy * self.grid.nx + gx;
        let mut heap = BinaryHeap::new();
        self.cost[start] = 0.0;
        heap.push(Entry(0.0, start));
        while let Some(Entry(c, i)) = heap.pop() {
            if c > self.cost[i] {
                continue;
            }
            let next: Vec<(usize, f64)> = self.neighbors(i).collect();
            for (j, w) in next {
                let nc = c + w;
                if nc < self.cost[j] {
                    self.cost[j] = nc;
                    heap.push(Entry(nc, j));
                }
            }
        }
    }

    /// Path length from `p` to the goal along the grid, if reachable.
    pub fn path_length(&self, p: Vec2) -> Option<f64> {
        self.nearest_free(p).map(|i| self.cost[i])
    }

    /// Point about `lookahead` meters down the shortest path from `p`.
    pub fn lookahead_point(&self, p: Vec2) -> Vec2 {
        let Some(mut i) = self.nearest_free(p) else { return self.goal };
        let mut travelled = 0.0;
        while travelled < self.lookahead && self.cost[i] > 0.0 {
            let Some((j, w)) = self.neighbors(i).min_by(|a, b| self.cost[a.0].total_cmp(&self.cost[b.0])) else {
                break;
            };
            if self.cost[j] >= self.cost[i] {
                break;
            }
            travelled += w;
            i = j;
        }
        if self.cost[i] == 0.0 || p.distance(self.goal) <= self.lookahead {
            return self.goal;
        }
        self.grid.cell_center(i % self.grid.nx, i / self.grid.nx)
    }

    pub fn command(&self, pose: &Pose2D) -> WheelCommand {
        let target = self.lookahead_point(pose.position());
        let d = target - pose.position();
        let alpha = wrap_angle(libm::atan2(d.y, d.x) - pose.theta);
        let base = unicycle_base(alpha);
        WheelCommand::new(base.v_l, base.v_r)
    }
}
